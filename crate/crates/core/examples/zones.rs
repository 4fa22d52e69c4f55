//! Splits the bundled grid into feeder control zones and prints the result.
//!
//!     cargo run --example zones [-- TOPOLOGY.json]

use gridmpv::grid_model::{partition_zones, validate_radial, GridTopology};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/grid15.json").to_string());
    let grid = GridTopology::load(&path)?;
    let report = validate_radial(&grid);
    if !report.is_ok() {
        anyhow::bail!("{path}: {report}");
    }
    let zones = partition_zones(&grid)?;
    println!("{}: {} buses, backbone {:?}", grid.name, grid.n_buses(), zones.backbone);
    for z in &zones.zones {
        let far = z.buses.iter().map(|&b| zones.distance[b]).fold(0.0, f64::max);
        println!(
            "zone {}: attached at bus {}, head {}, buses {:?}, electrical depth {far:.3} pu",
            z.id, z.attach_bus, z.head_bus, z.buses
        );
    }
    Ok(())
}
