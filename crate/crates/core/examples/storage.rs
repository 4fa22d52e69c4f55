//! Runs one BES through a synthetic day under the local self-consumption rule
//! and under the day-night cycle, printing the hourly state of charge.
//!
//!     cargo run --example storage

use gridmpv::der::{bes_step, sample_efficiencies, split_power, BesState, BesUnit};
use gridmpv::profiles::{synthetic, SyntheticSpec};
use gridmpv::strategies::{dispatch_bes_dnc, dispatch_pvbes_decentralized, DncWindows};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut spec = SyntheticSpec::summer(1, 3);
    spec.clear_sky = true;
    let day = synthetic(&spec);
    let pv = day.column("pv_z0").expect("pv column");
    let load = day.column("h0_1").expect("load column");
    let unit = BesUnit::new(1, 10.0, 5.0);
    let windows = DncWindows::default();
    let dt = 0.25;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut local = BesState::initial(&unit);
    let mut dnc = BesState::initial(&unit);
    println!("hour   pv kW  load kW  local p / soc    dnc p / soc");
    for t in 0..day.len() {
        let eff = sample_efficiencies(&unit, &mut rng);
        local.set_efficiencies(eff);
        dnc.set_efficiencies(eff);
        let (p_pv, p_load) = (8.0 * pv[t], 1.5 * load[t]);
        let p_local = dispatch_pvbes_decentralized(&unit, &local, p_pv, p_load, dt);
        let p_dnc = dispatch_bes_dnc(&unit, &dnc, &windows, day.minute_of_day(t), dt);
        let (c, d) = split_power(p_local);
        local = bes_step(&unit, &local, c, d, dt)?.state;
        let (c, d) = split_power(p_dnc);
        dnc = bes_step(&unit, &dnc, c, d, dt)?.state;
        if t % 4 == 0 {
            println!(
                "{:>4} {p_pv:>7.2} {p_load:>8.2} {p_local:>8.2} / {:.3} {p_dnc:>8.2} / {:.3}",
                t / 4,
                local.soc,
                dnc.soc
            );
        }
    }
    Ok(())
}
