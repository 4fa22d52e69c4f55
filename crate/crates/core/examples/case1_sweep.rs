//! Sensitivity of the grid metrics to MPV concentration and size: sweeps beta
//! for every (gamma1, gamma2) pair and prints the trend per pair.
//!
//!     cargo run --release --example case1_sweep [-- STEPS]

use gridmpv::engine::{sweep, SweepAxes};
use gridmpv::scenario::{Scenario, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(960);
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/case1.toml"))?;
    let base = Scenario::build(cfg)?.with_horizon(steps);
    let points = sweep(&base, &SweepAxes::standard(), None)?;

    println!("gamma1 gamma2  alpha@1  VM(0) -> VM(1)      TL % (0 -> 1)   LL % (0 -> 1)");
    for chunk in points.chunks(11) {
        let first = chunk[0].summary.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?;
        let last = chunk[10].summary.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?;
        println!(
            "{:>6} {:>6} {:>8.3}  {:.5} -> {:.5}  {:>6.2} -> {:>6.2}  {:>6.2} -> {:>6.2}",
            last.gamma1,
            last.gamma2,
            last.alpha.unwrap_or(f64::NAN),
            first.metrics.vm_mean,
            last.metrics.vm_mean,
            first.metrics.tl_mean,
            last.metrics.tl_mean,
            first.metrics.ll_mean,
            last.metrics.ll_mean
        );
    }
    Ok(())
}
