//! CSV and JSON writers for run, sweep and comparison results. Column order is
//! part of the file format; the `*_HEADER` constants pin it.

use std::io::Write;

use serde::Serialize;

use crate::engine::{ModeRun, RunSummary, StepRecord, SweepPoint};
use crate::power_flow::NodalInjection;

pub type CsvResult = Result<(), csv::Error>;

const TS: &str = "%Y-%m-%dT%H:%M:%S";

pub const STEPS_HEADER: &[&str] = &[
    "t",
    "timestamp",
    "vm_mean_pu",
    "v_min_pu",
    "v_max_pu",
    "gl_mw",
    "tl_pct",
    "ll_mean_pct",
    "ll_max_pct",
    "slack_p_kw",
    "slack_q_kvar",
    "load_kw",
    "pv_kw",
    "mpv_kw",
    "bes_kw",
    "q_der_kvar",
    "band_violations",
    "iterations",
];

pub const BES_HEADER: &[&str] = &[
    "t",
    "timestamp",
    "bus",
    "p_cha_kw",
    "p_dis_kw",
    "soc",
    "energy_kwh",
    "eta_cha",
    "eta_dis",
    "eta_self",
    "self_loss_kwh",
];

pub const DISPATCH_HEADER: &[&str] = &[
    "t", "timestamp", "bus", "load_kw", "pv_kw", "mpv_kw", "bes_kw", "exchange_kw", "q_kvar",
];

pub const INJECTION_HEADER: &[&str] = &[
    "t", "bus", "p_load", "q_load", "p_pv", "q_pv", "p_mpv", "p_bes", "q_bes",
];

pub const SWEEP_HEADER: &[&str] = &[
    "index",
    "beta",
    "gamma1_w",
    "gamma2_w",
    "seed",
    "n_mpv",
    "alpha",
    "vm_mean_pu",
    "gl_total_mw",
    "gl_energy_mwh",
    "tl_mean_pct",
    "ll_mean_pct",
    "ll_max_pct",
    "v_max_pu",
    "status",
];

pub const COMPARE_HEADER: &[&str] = &[
    "mode",
    "vm_mean_pu",
    "vm_max_pu",
    "v_max_pu",
    "v_min_pu",
    "gl_energy_mwh",
    "tl_mean_pct",
    "ll_mean_pct",
    "band_violation_steps",
    "q_energy_kvarh",
];

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

pub fn write_steps<W: Write>(w: W, records: &[StepRecord]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    let n = records.first().map_or(0, |r| r.metrics.voltages.len());
    let mut header: Vec<String> = STEPS_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|b| format!("v_{b}")));
    out.write_record(&header)?;
    for r in records {
        let s = &r.solution;
        let m = &r.metrics;
        let sum = |g: fn(&crate::power_flow::BusInjection) -> f64| r.injection.buses.iter().map(g).sum::<f64>();
        let mut row = vec![
            r.t.to_string(),
            r.timestamp.format(TS).to_string(),
            f(m.vm_mean),
            f(s.v_min),
            f(s.v_max),
            f(m.gl_total),
            f(m.tl_mean),
            f(m.ll_mean),
            f(m.line_loadings.iter().copied().fold(0.0, f64::max)),
            f(s.slack_p_kw),
            f(s.slack_q_kvar),
            f(sum(|b| b.p_load)),
            f(sum(|b| b.p_pv)),
            f(sum(|b| b.p_mpv)),
            f(r.bes_total()),
            f(r.q_total()),
            r.band_violations.to_string(),
            s.iterations.to_string(),
        ];
        row.extend(m.voltages.iter().map(|&v| f(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_bes<W: Write>(w: W, records: &[StepRecord]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BES_HEADER)?;
    for r in records {
        let ts = r.timestamp.format(TS).to_string();
        for b in &r.bes {
            out.write_record([
                r.t.to_string(),
                ts.clone(),
                b.bus.to_string(),
                f(b.p_cha),
                f(b.p_dis),
                f(b.soc),
                f(b.energy),
                f(b.eta_cha),
                f(b.eta_dis),
                f(b.eta_self),
                f(b.self_loss),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_dispatch<W: Write>(w: W, records: &[StepRecord]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DISPATCH_HEADER)?;
    for r in records {
        let ts = r.timestamp.format(TS).to_string();
        for (bus, b) in r.injection.buses.iter().enumerate() {
            if b.p_load == 0.0 && b.p_pv == 0.0 && b.p_mpv == 0.0 && b.p_bes == 0.0 && r.q_der[bus] == 0.0 {
                continue;
            }
            out.write_record([
                r.t.to_string(),
                ts.clone(),
                bus.to_string(),
                f(b.p_load),
                f(b.p_pv),
                f(b.p_mpv),
                f(b.p_bes),
                f(r.dispatch.bus_exchange[bus] + b.p_mpv),
                f(r.q_der[bus]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_injections<W: Write>(w: W, records: &[StepRecord]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(INJECTION_HEADER)?;
    for r in records {
        write_injection_rows(&mut out, Some(r.t), &r.injection)?;
    }
    out.flush()?;
    Ok(())
}

fn write_injection_rows<W: Write>(out: &mut csv::Writer<W>, t: Option<usize>, inj: &NodalInjection) -> CsvResult {
    for (bus, b) in inj.buses.iter().enumerate() {
        let mut row = vec![t.map(|t| t.to_string()).unwrap_or_default(), bus.to_string()];
        row.extend(crate::engine::injection_row(b).iter().map(|&x| f(x)));
        out.write_record(&row)?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for p in points {
        let mut row = vec![
            p.index.to_string(),
            f(p.params.beta),
            f(p.params.gamma1),
            f(p.params.gamma2),
            p.seed.to_string(),
        ];
        match &p.summary {
            Ok(s) => {
                let m = &s.metrics;
                row.extend([
                    s.n_mpv.to_string(),
                    opt(s.alpha),
                    f(m.vm_mean),
                    f(m.gl_total_mw),
                    f(m.gl_energy_mwh),
                    f(m.tl_mean),
                    f(m.ll_mean),
                    f(m.ll_max),
                    f(s.v_max),
                    "ok".into(),
                ]);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(format!("error: {e}"));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format behind the sensitivity figure: one row per
/// (panel gamma2, series gamma1, beta, metric).
pub fn write_sweep_plot<W: Write>(w: W, points: &[SweepPoint]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["panel_gamma2_w", "series_gamma1_w", "beta", "metric", "value"])?;
    for p in points {
        let Ok(s) = &p.summary else { continue };
        let m = &s.metrics;
        for (name, v) in [
            ("vm_mean_pu", m.vm_mean),
            ("gl_total_mw", m.gl_total_mw),
            ("tl_mean_pct", m.tl_mean),
            ("ll_mean_pct", m.ll_mean),
        ] {
            out.write_record([f(p.params.gamma2), f(p.params.gamma1), f(p.params.beta), name.into(), f(v)])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_compare<W: Write>(w: W, runs: &[ModeRun], dt: f64) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COMPARE_HEADER)?;
    for r in runs {
        let s = &r.output.summary;
        let m = &s.metrics;
        let q_energy: f64 = r.output.records.iter().map(StepRecord::q_total).sum::<f64>() * dt;
        out.write_record([
            s.mode.clone(),
            f(m.vm_mean),
            f(m.vm_max),
            f(s.v_max),
            f(s.v_min),
            f(m.gl_energy_mwh),
            f(m.tl_mean),
            f(m.ll_mean),
            s.band_violation_steps.to_string(),
            f(q_energy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Aligned per-step VM, maximum voltage and reactive power of every mode.
pub fn write_compare_series<W: Write>(w: W, runs: &[ModeRun]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "timestamp".to_string()];
    for r in runs {
        let m = r.mode.name();
        header.extend([format!("{m}_vm_mean_pu"), format!("{m}_v_max_pu"), format!("{m}_q_kvar")]);
    }
    out.write_record(&header)?;
    let steps = runs.iter().map(|r| r.output.records.len()).min().unwrap_or(0);
    for t in 0..steps {
        let first = &runs[0].output.records[t];
        let mut row = vec![t.to_string(), first.timestamp.format(TS).to_string()];
        for r in runs {
            let rec = &r.output.records[t];
            row.extend([f(rec.metrics.vm_mean), f(rec.solution.v_max), f(rec.q_total())]);
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format of the comparison: one row per (mode, step, metric).
pub fn write_compare_plot<W: Write>(w: W, runs: &[ModeRun]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "t", "timestamp", "metric", "value"])?;
    for r in runs {
        for rec in &r.output.records {
            let ts = rec.timestamp.format(TS).to_string();
            for (name, v) in [
                ("vm_mean_pu", rec.metrics.vm_mean),
                ("v_max_pu", rec.solution.v_max),
                ("q_kvar", rec.q_total()),
            ] {
                out.write_record([r.mode.name().to_string(), rec.t.to_string(), ts.clone(), name.into(), f(v)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Long format of a single run: per-step metrics and per-BES SoC and power.
pub fn write_run_plot<W: Write>(w: W, label: &str, records: &[StepRecord]) -> CsvResult {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "t", "timestamp", "element", "metric", "value"])?;
    for rec in records {
        let ts = rec.timestamp.format(TS).to_string();
        for (name, v) in [
            ("vm_mean_pu", rec.metrics.vm_mean),
            ("ll_mean_pct", rec.metrics.ll_mean),
            ("tl_pct", rec.metrics.tl_mean),
        ] {
            out.write_record([label.into(), rec.t.to_string(), ts.clone(), "grid".into(), name.into(), f(v)])?;
        }
        for b in &rec.bes {
            let el = format!("bes_{}", b.bus);
            out.write_record([label.into(), rec.t.to_string(), ts.clone(), el.clone(), "soc".into(), f(b.soc)])?;
            out.write_record([label.into(), rec.t.to_string(), ts.clone(), el, "p_kw".into(), f(b.p_cha + b.p_dis)])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
}

/// Summary plus the command context, as stored in `summary.json`.
#[derive(Debug, Serialize)]
pub struct SummaryDocument<'a> {
    pub command: &'a str,
    pub config: String,
    pub seed: u64,
    pub summary: &'a RunSummary,
}

/// One-line digest printed after a run.
pub fn digest(s: &RunSummary) -> String {
    format!(
        "mean VM {:.4} pu | GL {:.6} MWh | max LL {:.2} % | band violations {} | SoC violations {}",
        s.metrics.vm_mean, s.metrics.gl_energy_mwh, s.metrics.ll_max, s.band_violation_steps, s.soc_violations
    )
}
