//! Regenerates the bundled profile CSVs under `data/`:
//! a 100-day summer set and one cloudless high-generation day.
//!
//!     cargo run --example export_profiles [-- OUT_DIR]

use std::path::PathBuf;

use gridmpv::profiles::{synthetic, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data"));
    std::fs::create_dir_all(&out)?;

    let summer = synthetic(&SyntheticSpec::summer(100, 2024));
    summer.save(&out.join("summer_profiles.csv"))?;

    let mut day = SyntheticSpec::summer(1, 7);
    day.clear_sky = true;
    let day = synthetic(&day);
    day.save(&out.join("high_pv_day.csv"))?;

    for (name, p) in [("summer_profiles.csv", &summer), ("high_pv_day.csv", &day)] {
        let pv = p.column("pv_z0").unwrap_or(&[]);
        let peak = pv.iter().copied().fold(0.0, f64::max);
        println!("{name}: {} rows, {} columns, pv_z0 peak {peak:.3}", p.len(), p.names().len());
    }
    Ok(())
}
