//! Branch-flow (DistFlow) power flow for radial grids, solved by backward/forward
//! sweeps.
//!
//! Per branch `(i, j)` oriented away from the slack the solver keeps the sending
//! end flows `P_ij`, `Q_ij` and the squared current `l_ij`:
//!
//! ```text
//! P_ij = sum_k P_jk + r_ij l_ij - p_j
//! Q_ij = sum_k Q_jk + x_ij l_ij - q_j
//! V_j^2 = V_i^2 - 2 (r_ij P_ij + x_ij Q_ij) + (r_ij^2 + x_ij^2) l_ij
//! l_ij = (P_ij^2 + Q_ij^2) / V_i^2
//! ```
//!
//! `p_j`, `q_j` are net injections (generation positive). Everything inside the
//! solver is per unit; [`NodalInjection`] carries device powers in kW/kvar.

use serde::Serialize;
use thiserror::Error;

use crate::grid_model::{
    parent_child_maps, Bases, Branch, BranchKind, BusId, GridTopology, Line, TopologyError,
};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (last update {residual:.3e} pu)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("squared voltage at bus {bus} dropped to {v_squared:.3e} in iteration {iteration}")]
    InfeasibleVoltage {
        bus: BusId,
        iteration: usize,
        v_squared: f64,
    },
    #[error("slack voltage {0} pu outside [0.9, 1.1]")]
    SlackVoltage(f64),
    #[error("expected {expected} bus injections, got {got}")]
    InjectionLength { expected: usize, got: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Device powers at one bus, kW and kvar. Loads are consumption-positive;
/// PV, MPV and BES are injection-positive (BES charging is negative).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BusInjection {
    pub p_load: f64,
    pub q_load: f64,
    pub p_pv: f64,
    pub q_pv: f64,
    /// Mini-PV units only deliver active power.
    pub p_mpv: f64,
    pub p_bes: f64,
    pub q_bes: f64,
}

impl BusInjection {
    pub fn p_der(&self) -> f64 {
        self.p_mpv + self.p_pv + self.p_bes
    }

    pub fn q_der(&self) -> f64 {
        self.q_pv + self.q_bes
    }

    pub fn p_net(&self) -> f64 {
        self.p_der() - self.p_load
    }

    pub fn q_net(&self) -> f64 {
        self.q_der() - self.q_load
    }

    /// Injection with only the net powers set (used by snapshot input).
    pub fn net(p_kw: f64, q_kvar: f64) -> Self {
        let mut out = Self::default();
        if p_kw >= 0.0 {
            out.p_pv = p_kw;
        } else {
            out.p_load = -p_kw;
        }
        out.q_pv = q_kvar;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalInjection {
    pub buses: Vec<BusInjection>,
}

impl NodalInjection {
    pub fn zeros(n: usize) -> Self {
        Self {
            buses: vec![BusInjection::default(); n],
        }
    }

    pub fn net_pu(&self, bases: &Bases) -> (Vec<f64>, Vec<f64>) {
        let p = self.buses.iter().map(|b| bases.kw_to_pu(b.p_net())).collect();
        let q = self.buses.iter().map(|b| bases.kw_to_pu(b.q_net())).collect();
        (p, q)
    }

    pub fn total_load_kw(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }

    pub fn total_der_kw(&self) -> f64 {
        self.buses.iter().map(|b| b.p_der()).sum()
    }
}

/// Voltage band around the reference, with the hard disconnection limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct VoltageLimits {
    pub v_ref: f64,
    pub epsilon_v: f64,
    pub hard_band: [f64; 2],
}

impl Default for VoltageLimits {
    fn default() -> Self {
        Self {
            v_ref: 1.0,
            epsilon_v: 0.05,
            hard_band: [0.85, 1.10],
        }
    }
}

impl VoltageLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon_v > 0.0 && self.epsilon_v < 0.15) {
            return Err(format!("epsilon_v {} outside (0, 0.15)", self.epsilon_v));
        }
        let (lo, hi) = (self.v_ref - self.epsilon_v, self.v_ref + self.epsilon_v);
        if !(self.hard_band[0] <= lo && hi <= self.hard_band[1]) {
            return Err(format!(
                "hard band [{}, {}] must contain [{lo}, {hi}]",
                self.hard_band[0], self.hard_band[1]
            ));
        }
        Ok(())
    }

    pub fn within(&self, v: f64) -> bool {
        v >= self.v_ref - self.epsilon_v && v <= self.v_ref + self.epsilon_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when the largest voltage update falls below this (pu).
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchFlow {
    /// Sending (slack-side) bus.
    pub from: BusId,
    pub to: BusId,
    pub p: f64,
    pub q: f64,
    /// Squared current magnitude, pu.
    pub l: f64,
    pub current_from: f64,
    pub current_to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFlowSolution {
    /// Voltage magnitude per bus, pu.
    pub v: Vec<f64>,
    /// One entry per branch in [`GridTopology::branches`] order.
    pub branches: Vec<BranchFlow>,
    pub slack_p: f64,
    pub slack_q: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BranchFlowSolution {
    pub fn v_min(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn v_max(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Precomputed radial structure for repeated solves on one topology.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    bases: Bases,
    branches: Vec<Branch>,
    order: Vec<BusId>,
    parent: Vec<Option<BusId>>,
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<BusId>>,
    options: SolverOptions,
}

impl PowerFlowModel {
    pub fn new(topology: &GridTopology) -> Result<Self, PowerFlowError> {
        let radial = parent_child_maps(topology)?;
        Ok(Self {
            bases: topology.bases,
            branches: topology.branches(),
            order: radial.order,
            parent: radial.parent,
            parent_branch: radial.parent_branch,
            children: radial.children,
            options: SolverOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn n_buses(&self) -> usize {
        self.order.len()
    }

    pub fn bases(&self) -> &Bases {
        &self.bases
    }

    pub fn solve(
        &self,
        injections: &NodalInjection,
        slack_v: f64,
    ) -> Result<BranchFlowSolution, PowerFlowError> {
        let (p, q) = injections.net_pu(&self.bases);
        self.solve_pu(&p, &q, slack_v)
    }

    /// Solves with net injections already in per unit.
    pub fn solve_pu(
        &self,
        p: &[f64],
        q: &[f64],
        slack_v: f64,
    ) -> Result<BranchFlowSolution, PowerFlowError> {
        let n = self.n_buses();
        if p.len() != n || q.len() != n {
            return Err(PowerFlowError::InjectionLength {
                expected: n,
                got: p.len().min(q.len()),
            });
        }
        if !(0.9..=1.1).contains(&slack_v) {
            return Err(PowerFlowError::SlackVoltage(slack_v));
        }
        let nb = self.branches.len();
        let mut v2 = vec![slack_v * slack_v; n];
        let mut v = vec![slack_v; n];
        let mut flow_p = vec![0.0; nb];
        let mut flow_q = vec![0.0; nb];
        let mut l = vec![0.0; nb];
        let mut sum_p = vec![0.0; n];
        let mut sum_q = vec![0.0; n];
        let mut last_update = f64::INFINITY;

        for iteration in 1..=self.options.max_iterations {
            sum_p.iter_mut().for_each(|s| *s = 0.0);
            sum_q.iter_mut().for_each(|s| *s = 0.0);
            for &j in self.order.iter().rev() {
                let (Some(i), Some(b)) = (self.parent[j], self.parent_branch[j]) else {
                    continue;
                };
                let br = &self.branches[b];
                flow_p[b] = sum_p[j] + br.r * l[b] - p[j];
                flow_q[b] = sum_q[j] + br.x * l[b] - q[j];
                sum_p[i] += flow_p[b];
                sum_q[i] += flow_q[b];
            }
            for &j in &self.order {
                let (Some(i), Some(b)) = (self.parent[j], self.parent_branch[j]) else {
                    continue;
                };
                let br = &self.branches[b];
                let z2 = br.r * br.r + br.x * br.x;
                let next = v2[i] - 2.0 * (br.r * flow_p[b] + br.x * flow_q[b]) + z2 * l[b];
                if !(next > 0.0) {
                    return Err(PowerFlowError::InfeasibleVoltage {
                        bus: j,
                        iteration,
                        v_squared: next,
                    });
                }
                v2[j] = next;
            }
            let mut update: f64 = 0.0;
            for j in 0..n {
                let vj = v2[j].sqrt();
                update = update.max((vj - v[j]).abs());
                v[j] = vj;
            }
            for &j in &self.order {
                if let (Some(i), Some(b)) = (self.parent[j], self.parent_branch[j]) {
                    l[b] = (flow_p[b] * flow_p[b] + flow_q[b] * flow_q[b]) / v2[i];
                }
            }
            last_update = update;
            if update <= self.options.tolerance {
                return Ok(self.assemble(v, &flow_p, &flow_q, &l, p, q, iteration));
            }
        }
        Err(PowerFlowError::NonConvergence {
            iterations: self.options.max_iterations,
            residual: last_update,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        v: Vec<f64>,
        flow_p: &[f64],
        flow_q: &[f64],
        l: &[f64],
        p: &[f64],
        q: &[f64],
        iterations: usize,
    ) -> BranchFlowSolution {
        let i_base = self.bases.i_base_a();
        let mut branches = vec![
            BranchFlow {
                from: 0,
                to: 0,
                p: 0.0,
                q: 0.0,
                l: 0.0,
                current_from: 0.0,
                current_to: 0.0,
            };
            self.branches.len()
        ];
        for &j in &self.order {
            if let (Some(i), Some(b)) = (self.parent[j], self.parent_branch[j]) {
                let amps = l[b].sqrt() * i_base;
                branches[b] = BranchFlow {
                    from: i,
                    to: j,
                    p: flow_p[b],
                    q: flow_q[b],
                    l: l[b],
                    current_from: amps,
                    current_to: amps,
                };
            }
        }
        let root_children = &self.children[0];
        let out_p: f64 = root_children
            .iter()
            .filter_map(|&c| self.parent_branch[c])
            .map(|b| flow_p[b])
            .sum();
        let out_q: f64 = root_children
            .iter()
            .filter_map(|&c| self.parent_branch[c])
            .map(|b| flow_q[b])
            .sum();
        BranchFlowSolution {
            v,
            branches,
            slack_p: out_p - p[0],
            slack_q: out_q - q[0],
            converged: true,
            iterations,
        }
    }

    /// Largest residual of the four branch-flow relations at `solution`.
    pub fn residuals(&self, solution: &BranchFlowSolution, p: &[f64], q: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for &j in &self.order {
            let mut out_p = 0.0;
            let mut out_q = 0.0;
            for &k in &self.children[j] {
                let b = self.parent_branch[k].expect("child has a branch");
                out_p += solution.branches[b].p;
                out_q += solution.branches[b].q;
            }
            match self.parent_branch[j] {
                Some(b) => {
                    let br = &self.branches[b];
                    let f = &solution.branches[b];
                    worst = worst.max((p[j] - (br.r * f.l - f.p + out_p)).abs());
                    worst = worst.max((q[j] - (br.x * f.l - f.q + out_q)).abs());
                }
                None => {
                    worst = worst.max((out_p - p[j] - solution.slack_p).abs());
                    worst = worst.max((out_q - q[j] - solution.slack_q).abs());
                }
            }
            if let (Some(i), Some(b)) = (self.parent[j], self.parent_branch[j]) {
                let br = &self.branches[b];
                let f = &solution.branches[b];
                let vi2 = solution.v[i] * solution.v[i];
                let vj2 = solution.v[j] * solution.v[j];
                let drop = vi2 - 2.0 * (br.r * f.p + br.x * f.q) + (br.r * br.r + br.x * br.x) * f.l;
                worst = worst.max((vj2 - drop).abs());
                worst = worst.max((f.l * vi2 - (f.p * f.p + f.q * f.q)).abs());
            }
        }
        worst
    }

    pub fn branch(&self, index: usize) -> &Branch {
        &self.branches[index]
    }

    pub fn branch_list(&self) -> &[Branch] {
        &self.branches
    }
}

/// One-shot solve; builds the radial structure on every call.
pub fn solve(
    topology: &GridTopology,
    injections: &NodalInjection,
    slack_v: f64,
) -> Result<BranchFlowSolution, PowerFlowError> {
    PowerFlowModel::new(topology)?.solve(injections, slack_v)
}

/// Linearised voltage drop across the line feeding bus `j`, pu. Positive means
/// the voltage falls towards `j`. Powers are per unit.
pub fn voltage_drop_approx(line: &Line, at_j: &BusInjectionPu, v_j: f64) -> f64 {
    (line.r * (at_j.p_load - at_j.p_der) + line.x * (at_j.q_load - at_j.q_der)) / v_j
}

/// Loss of the line feeding bus `j` from its local net demand, in the units of
/// the inputs (pu in, pu out).
pub fn line_loss(line: &Line, at_j: &BusInjectionPu, v_i: f64) -> f64 {
    let dp = at_j.p_load - at_j.p_der;
    let dq = at_j.q_load - at_j.q_der;
    (dp * dp + dq * dq) / (v_i * v_i) * line.r
}

/// Local load and DER powers at a bus in per unit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BusInjectionPu {
    pub p_load: f64,
    pub q_load: f64,
    pub p_der: f64,
    pub q_der: f64,
}

impl BusInjectionPu {
    pub fn from_injection(inj: &BusInjection, bases: &Bases) -> Self {
        Self {
            p_load: bases.kw_to_pu(inj.p_load),
            q_load: bases.kw_to_pu(inj.q_load),
            p_der: bases.kw_to_pu(inj.p_der()),
            q_der: bases.kw_to_pu(inj.q_der()),
        }
    }
}

/// Total active loss `sum r_ij l_ij` over lines and the transformer, pu.
pub fn total_loss(solution: &BranchFlowSolution, topology: &GridTopology) -> f64 {
    topology
        .branches()
        .iter()
        .zip(&solution.branches)
        .map(|(br, f)| br.r * f.l)
        .sum()
}

/// Loss of the transformer branch alone, pu.
pub fn transformer_loss(solution: &BranchFlowSolution, topology: &GridTopology) -> f64 {
    topology
        .branches()
        .iter()
        .zip(&solution.branches)
        .filter(|(br, _)| br.kind == BranchKind::Transformer)
        .map(|(br, f)| br.r * f.l)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::{Bus, BusKind};

    fn two_bus(r: f64, x: f64) -> GridTopology {
        GridTopology::new(
            vec![Bus::new(0, BusKind::Slack), Bus::new(1, BusKind::LoadCapable)],
            vec![Line::new(0, 1, r, x, 100.0)],
            None,
        )
    }

    fn two_bus_closed_form(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
        let b = 2.0 * (r * p + x * q) - v0 * v0;
        let c = (r * r + x * x) * (p * p + q * q);
        ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
    }

    #[test]
    fn two_bus_matches_quadratic_root() {
        let g = two_bus(0.01, 0.01);
        let model = PowerFlowModel::new(&g).unwrap();
        let sol = model.solve_pu(&[0.0, -0.1], &[0.0, 0.0], 1.0).unwrap();
        let expect = two_bus_closed_form(1.0, 0.01, 0.01, 0.1, 0.0);
        assert!((sol.v[1] - expect).abs() < 1e-10, "{} vs {}", sol.v[1], expect);
        let loss = total_loss(&sol, &g);
        assert!((loss - 0.01 * sol.branches[0].l).abs() < 1e-15);
        let l_expect = 0.1f64.powi(2) / 1.0;
        let f = &sol.branches[0];
        assert!((f.l - (f.p * f.p + f.q * f.q)).abs() < 1e-12);
        assert!(sol.branches[0].l > 0.99 * l_expect);
    }

    #[test]
    fn no_load_is_flat() {
        let g = two_bus(0.05, 0.02);
        let sol = solve(&g, &NodalInjection::zeros(2), 1.03).unwrap();
        assert_eq!(sol.v, vec![1.03, 1.03]);
        assert_eq!(sol.branches[0].p, 0.0);
        assert_eq!(total_loss(&sol, &g), 0.0);
        assert_eq!(sol.slack_p, 0.0);
    }

    #[test]
    fn slack_out_of_range() {
        let g = two_bus(0.01, 0.01);
        assert!(matches!(
            solve(&g, &NodalInjection::zeros(2), 1.2),
            Err(PowerFlowError::SlackVoltage(_))
        ));
    }

    #[test]
    fn overload_is_infeasible() {
        let g = two_bus(0.5, 0.5);
        let model = PowerFlowModel::new(&g).unwrap();
        let err = model.solve_pu(&[0.0, -5.0], &[0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(
            err,
            PowerFlowError::InfeasibleVoltage { .. } | PowerFlowError::NonConvergence { .. }
        ));
    }

    #[test]
    fn voltage_drop_examples() {
        let line = Line::new(0, 1, 0.01, 0.01, 100.0);
        assert_eq!(voltage_drop_approx(&line, &BusInjectionPu::default(), 1.0), 0.0);
        let inj = BusInjectionPu {
            p_load: 0.1,
            ..Default::default()
        };
        assert!((voltage_drop_approx(&line, &inj, 1.0) - 0.001).abs() < 1e-15);
        let export = BusInjectionPu {
            p_load: 0.05,
            p_der: 0.2,
            ..Default::default()
        };
        assert!(voltage_drop_approx(&line, &export, 1.0) < 0.0);
    }

    #[test]
    fn line_loss_is_quadratic() {
        let line = Line::new(0, 1, 0.02, 0.01, 100.0);
        assert_eq!(line_loss(&line, &BusInjectionPu::default(), 1.0), 0.0);
        let a = BusInjectionPu {
            p_load: 0.1,
            q_load: 0.03,
            ..Default::default()
        };
        let b = BusInjectionPu {
            p_load: 0.2,
            q_load: 0.06,
            ..Default::default()
        };
        let ratio = line_loss(&line, &b, 1.0) / line_loss(&line, &a, 1.0);
        assert!((ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn voltage_limits_validation() {
        assert!(VoltageLimits::default().validate().is_ok());
        let bad = VoltageLimits {
            epsilon_v: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
