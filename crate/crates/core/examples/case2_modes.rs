//! Compares the reactive control modes on the high-generation day and writes
//! the per-step voltage series next to the summary.
//!
//!     cargo run --example case2_modes [-- OUT_DIR]

use std::fs::File;

use gridmpv::engine::compare_modes;
use gridmpv::report::write_compare_series;
use gridmpv::scenario::{Scenario, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/case2.toml"))?;
    let scenario = Scenario::build(cfg)?;
    let limits = scenario.config.grid.limits;
    let runs = compare_modes(&scenario, &scenario.config.compare_modes(), None)?;

    println!("{:<13} {:>8} {:>8} {:>10} {:>8}", "mode", "VM", "max V", "band steps", "LL %");
    for r in &runs {
        let s = &r.output.summary;
        println!(
            "{:<13} {:>8.5} {:>8.4} {:>10} {:>8.2}",
            r.mode.name(),
            s.metrics.vm_mean,
            s.v_max,
            s.band_violation_steps,
            s.metrics.ll_mean
        );
    }
    println!("band [{:.2}, {:.2}] pu", limits.v_ref - limits.epsilon_v, limits.v_ref + limits.epsilon_v);

    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir)?;
        write_compare_series(File::create(format!("{dir}/compare_series.csv"))?, &runs)?;
    }
    Ok(())
}
