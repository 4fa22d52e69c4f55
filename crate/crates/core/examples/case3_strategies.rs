//! Storage strategies on the high-generation day: state of charge over the
//! morning for the local and zone self-consumption rules, then the day-night
//! cycle with its line loading split by activity.
//!
//!     cargo run --example case3_strategies

use gridmpv::engine::{run, RunOutput};
use gridmpv::scenario::{Scenario, ScenarioConfig};

fn load(name: &str) -> anyhow::Result<RunOutput> {
    let path = format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"));
    Ok(run(&Scenario::build(ScenarioConfig::load(path)?)?)?)
}

fn min_soc(out: &RunOutput, minute: u32) -> f64 {
    out.records
        .iter()
        .find(|r| r.minute_of_day == minute)
        .map(|r| r.bes.iter().map(|b| b.soc).fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN)
}

fn main() -> anyhow::Result<()> {
    let names = ["case3_strategy1.toml", "case3_strategy2.toml", "case3_strategy3.toml"];
    let runs: Vec<RunOutput> = names.iter().map(|n| load(n)).collect::<Result<_, _>>()?;
    println!("min SoC     {}", runs.iter().map(|r| format!("{:>28}", r.summary.strategy)).collect::<String>());
    for h in 6..=14 {
        let row: String = runs.iter().map(|r| format!("{:>28.3}", min_soc(r, h * 60))).collect();
        println!("{h:02}:00 {row}");
    }

    let dnc = load("case3_dnc.toml")?;
    let (mut active, mut idle) = (Vec::new(), Vec::new());
    for r in &dnc.records {
        let busy = r.bes.iter().any(|b| b.p_cha != 0.0 || b.p_dis != 0.0);
        if busy { &mut active } else { &mut idle }.push(r.metrics.ll_mean);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "day-night cycle: mean LL {:.2} % over {} active steps, {:.2} % over {} idle steps",
        mean(&active),
        active.len(),
        mean(&idle),
        idle.len()
    );
    Ok(())
}
