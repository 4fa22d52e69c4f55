//! Solves one operating point on the bundled 15-bus grid and on a single line,
//! and checks the single line against its closed-form voltage.
//!
//!     cargo run --example power_flow

use gridmpv::grid_model::{Bus, BusKind, GridTopology, Line};
use gridmpv::power_flow::{total_loss, BusInjection, NodalInjection, PowerFlowModel};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/grid15.json");
    let grid = GridTopology::load(path)?;
    let model = PowerFlowModel::new(&grid)?;

    // evening peak: 6 kW per household, no generation
    let mut evening = NodalInjection::zeros(grid.n_buses());
    for b in 5..grid.n_buses() {
        evening.buses[b] = BusInjection { p_load: 6.0, q_load: 1.2, ..Default::default() };
    }
    // noon: 12 kW of PV per household against 1 kW of load
    let mut noon = NodalInjection::zeros(grid.n_buses());
    for b in 5..grid.n_buses() {
        noon.buses[b] = BusInjection { p_load: 1.0, q_load: 0.2, p_pv: 12.0, ..Default::default() };
    }

    for (label, inj) in [("evening", &evening), ("noon", &noon)] {
        let sol = model.solve(inj, 1.0)?;
        println!(
            "{label:8} v in [{:.4}, {:.4}] pu, slack {:+.1} kW, losses {:.2} kW, {} iterations",
            sol.v_min(),
            sol.v_max(),
            grid.bases.pu_to_kw(sol.slack_p),
            grid.bases.pu_to_kw(total_loss(&sol, &grid)),
            sol.iterations
        );
    }

    let (r, x, p_load) = (0.05, 0.02, 0.2);
    let line = GridTopology::new(
        vec![Bus::new(0, BusKind::Slack), Bus::new(1, BusKind::LoadCapable)],
        vec![Line::new(0, 1, r, x, 400.0)],
        None,
    );
    let sol = PowerFlowModel::new(&line)?.solve_pu(&[0.0, -p_load], &[0.0, 0.0], 1.0)?;
    // V^4 + (2 r P - 1) V^2 + (r^2 + x^2) P^2 = 0
    let b = 2.0 * r * p_load - 1.0;
    let c = (r * r + x * x) * p_load * p_load;
    let exact = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt();
    println!("two-bus  v = {:.12} pu, closed form {exact:.12}", sol.v[1]);
    Ok(())
}
