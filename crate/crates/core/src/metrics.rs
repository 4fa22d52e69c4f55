//! Run metrics: mean voltage magnitude (VM), grid losses (GL), transformer
//! loading (TL) and line loading (LL).

use serde::Serialize;

use crate::grid_model::{BranchKind, GridTopology};
use crate::power_flow::{total_loss, BranchFlowSolution};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricOptions {
    /// Include the slack bus in the VM average.
    pub include_slack_in_vm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub vm_mean: f64,
    /// Active losses of lines and transformer, MW.
    pub gl_total: f64,
    pub tl_mean: f64,
    pub ll_mean: f64,
    pub line_loadings: Vec<f64>,
    pub voltages: Vec<f64>,
}

impl MetricsSnapshot {
    pub fn compute(solution: &BranchFlowSolution, topology: &GridTopology, options: &MetricOptions) -> Self {
        let (ll_mean, line_loadings) = ll(solution, topology);
        Self {
            vm_mean: vm(solution, options),
            gl_total: gl(solution, topology),
            tl_mean: tl(solution, topology),
            ll_mean,
            line_loadings,
            voltages: solution.v.clone(),
        }
    }
}

/// Average bus voltage magnitude, pu.
pub fn vm(solution: &BranchFlowSolution, options: &MetricOptions) -> f64 {
    let skip = usize::from(!options.include_slack_in_vm && solution.v.len() > 1);
    let v = &solution.v[skip..];
    v.iter().sum::<f64>() / v.len() as f64
}

/// Grid losses in MW.
pub fn gl(solution: &BranchFlowSolution, topology: &GridTopology) -> f64 {
    total_loss(solution, topology) * topology.bases.s_base_mva
}

/// Transformer loading in percent of its rating; zero without a transformer.
pub fn tl(solution: &BranchFlowSolution, topology: &GridTopology) -> f64 {
    let Some(t) = &topology.transformer else {
        return 0.0;
    };
    let f = &solution.branches[0];
    let s_kva = topology.bases.pu_to_kw(f.p.hypot(f.q));
    s_kva / t.s_rated * 100.0
}

/// Loading of a single line in percent.
pub fn line_loading(i_from: f64, i_to: f64, i_thermal_max: f64) -> f64 {
    i_from.max(i_to) / i_thermal_max * 100.0
}

/// Mean line loading and the per-line values (transformer excluded).
pub fn ll(solution: &BranchFlowSolution, topology: &GridTopology) -> (f64, Vec<f64>) {
    let loadings: Vec<f64> = topology
        .branches()
        .iter()
        .zip(&solution.branches)
        .filter_map(|(br, f)| match br.kind {
            BranchKind::Line(i) => Some(line_loading(
                f.current_from,
                f.current_to,
                topology.lines[i].i_thermal_max,
            )),
            BranchKind::Transformer => None,
        })
        .collect();
    let mean = if loadings.is_empty() {
        0.0
    } else {
        loadings.iter().sum::<f64>() / loadings.len() as f64
    };
    (mean, loadings)
}

/// Time aggregates of per-step metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricAggregate {
    pub steps: usize,
    pub vm_mean: f64,
    pub vm_max: f64,
    pub vm_min: f64,
    /// Sum of per-step losses, MW.
    pub gl_total_mw: f64,
    /// Loss energy over the horizon, MWh.
    pub gl_energy_mwh: f64,
    pub tl_mean: f64,
    pub tl_max: f64,
    pub ll_mean: f64,
    pub ll_max: f64,
}

impl MetricAggregate {
    pub fn from_snapshots<'a>(snapshots: impl IntoIterator<Item = &'a MetricsSnapshot>, dt: f64) -> Self {
        let mut agg = MetricAggregate {
            vm_max: f64::NEG_INFINITY,
            vm_min: f64::INFINITY,
            ..Default::default()
        };
        for s in snapshots {
            agg.steps += 1;
            agg.vm_mean += s.vm_mean;
            agg.vm_max = agg.vm_max.max(s.vm_mean);
            agg.vm_min = agg.vm_min.min(s.vm_mean);
            agg.gl_total_mw += s.gl_total;
            agg.tl_mean += s.tl_mean;
            agg.tl_max = agg.tl_max.max(s.tl_mean);
            agg.ll_mean += s.ll_mean;
            agg.ll_max = agg.ll_max.max(s.line_loadings.iter().copied().fold(0.0, f64::max));
        }
        if agg.steps == 0 {
            return MetricAggregate::default();
        }
        let n = agg.steps as f64;
        agg.vm_mean /= n;
        agg.tl_mean /= n;
        agg.ll_mean /= n;
        agg.gl_energy_mwh = agg.gl_total_mw * dt;
        agg
    }
}
