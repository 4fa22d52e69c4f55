//! Tabulates the reactive set points of the four control modes for one PV
//! inverter across voltage and active power.
//!
//!     cargo run --example control_curves

use gridmpv::control::{apply_mode, CosPhiCurve, ControlMode, DerRatings, Excitation, QmaxSource, QvCurve};

fn main() -> anyhow::Result<()> {
    let modes = [
        ControlMode::NoControl,
        ControlMode::QofV { curve: QvCurve::default(), q_max: QmaxSource::Capability },
        ControlMode::QofP { curve: CosPhiCurve::default(), excitation: Excitation::Under },
        ControlMode::FixedCosPhi { cos_phi: 0.95, excitation: Excitation::Under, p_threshold: 0.0 },
    ];
    let s_pv = 11.0;

    println!("Q(V) at 5 kW output, kvar");
    print!("{:>6}", "v");
    for m in &modes {
        print!("{:>14}", m.name());
    }
    println!();
    for k in 0..=12 {
        let v = 0.91 + 0.015 * k as f64;
        let r = DerRatings { s_pv, p_pv: 5.0, ..Default::default() };
        print!("{v:>6.3}");
        for m in &modes {
            print!("{:>14.3}", apply_mode(m, v, &r)?);
        }
        println!();
    }

    println!("\nset point at v = 1.08 pu against PV output, kvar");
    for p in [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 11.0] {
        let r = DerRatings { s_pv, p_pv: p, ..Default::default() };
        let q: Vec<String> = modes.iter().map(|m| apply_mode(m, 1.08, &r).map(|q| format!("{q:>8.3}"))).collect::<Result<_, _>>()?;
        println!("p = {p:>4.1} kW: {}", q.join(" "));
    }
    Ok(())
}
