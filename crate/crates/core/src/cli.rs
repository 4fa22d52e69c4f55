//! Command-line front end: `validate`, `simulate`, `sweep`, `compare`, `pf`.
//!
//! Exit codes: 0 success, 1 runtime or solver failure, 2 invalid config.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::engine::{self, parse_list, parse_range, SweepAxes};
use crate::grid_model::{validate_radial, GridTopology};
use crate::power_flow::{total_loss, BusInjection, NodalInjection, PowerFlowModel};
use crate::report;
use crate::scenario::{check, Scenario, ScenarioConfig, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gridmpv", version, about = "Quasi-static LV grid simulation with mini-PV, PV and storage")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario document (TOML or JSON).
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(short = 'o', long = "out", default_value = "out")]
    pub out: PathBuf,
    /// Master seed; defaults to the config's `run.seed` (42 unless set).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and comparisons; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write long-format CSVs for plotting.
    #[arg(long)]
    pub emit_plots: bool,
    /// Override the number of simulated steps.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario document and everything it references.
    Validate {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
    },
    /// Single time-series run.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the per-step nodal injections (injections.csv).
        #[arg(long)]
        dump_injections: bool,
    },
    /// Sensitivity sweep over beta, gamma1 and gamma2.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concentration axis as start:end:step.
        #[arg(long)]
        beta: Option<String>,
        /// Inverter limits in W, comma separated.
        #[arg(long)]
        gamma1: Option<String>,
        /// Module peak powers in W, comma separated.
        #[arg(long)]
        gamma2: Option<String>,
    },
    /// Same scenario under several reactive control modes.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Mode names to keep from the configured list, comma separated.
        #[arg(long)]
        modes: Option<String>,
    },
    /// One power-flow solve for a snapshot of nodal injections.
    Pf {
        /// Topology JSON.
        topology: PathBuf,
        /// CSV with columns bus,p_load,q_load,p_pv,q_pv,p_mpv,p_bes,q_bes
        /// (kW / kvar) and an optional leading t column.
        injections: PathBuf,
        /// Step to pick when the CSV holds several.
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        slack_v: f64,
        /// Write pf.csv into this directory.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<engine::EngineError> for Failure {
    fn from(e: engine::EngineError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("GRIDMPV_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            f.code()
        }
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => validate(&config),
        Command::Simulate { common, dump_injections } => simulate(&common, dump_injections),
        Command::Sweep {
            common,
            beta,
            gamma1,
            gamma2,
        } => sweep(&common, beta, gamma1, gamma2),
        Command::Compare { common, modes } => compare(&common, modes),
        Command::Pf {
            topology,
            injections,
            step,
            slack_v,
            out,
        } => pf(&topology, &injections, step, slack_v, out.as_deref()),
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(path)?;
    let (report, _) = check(&cfg);
    if report.is_ok() {
        println!("{}: ok", path.display());
        Ok(())
    } else {
        for v in &report.violations {
            println!("{v}");
        }
        Err(Failure::Config(format!("{} violation(s)", report.violations.len())))
    }
}

fn load_scenario(common: &Common) -> Result<Scenario, Failure> {
    let cfg = ScenarioConfig::load(&common.config)?;
    let mut s = Scenario::build(cfg)?;
    if let Some(seed) = common.seed {
        s = s.with_seed(seed);
    }
    if let Some(h) = common.horizon {
        if h == 0 {
            return Err(Failure::Config("--horizon must be at least 1".into()));
        }
        s = s.with_horizon(h);
    }
    info!("scenario {}: {} steps, seed {}", common.config.display(), s.horizon, s.seed);
    Ok(s)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn simulate(common: &Common, dump_injections: bool) -> Result<(), Failure> {
    let scenario = load_scenario(common)?;
    let out = engine::run(&scenario)?;
    std::fs::create_dir_all(&common.out)?;
    report::write_steps(create(&common.out, "steps.csv")?, &out.records)?;
    report::write_bes(create(&common.out, "bes.csv")?, &out.records)?;
    report::write_dispatch(create(&common.out, "dispatch.csv")?, &out.records)?;
    if dump_injections {
        report::write_injections(create(&common.out, "injections.csv")?, &out.records)?;
    }
    if common.emit_plots {
        report::write_run_plot(create(&common.out, "plot_run.csv")?, out.summary.strategy.as_str(), &out.records)?;
    }
    let doc = report::SummaryDocument {
        command: "simulate",
        config: common.config.display().to_string(),
        seed: scenario.seed,
        summary: &out.summary,
    };
    report::write_json(create(&common.out, "summary.json")?, &doc)?;
    if out.summary.soc_violations > 0 {
        warn!("{} SoC band violations", out.summary.soc_violations);
    }
    println!("{}", report::digest(&out.summary));
    Ok(())
}

fn sweep(common: &Common, beta: Option<String>, gamma1: Option<String>, gamma2: Option<String>) -> Result<(), Failure> {
    let scenario = load_scenario(common)?;
    let std_axes = SweepAxes::standard();
    let axes = SweepAxes {
        beta: beta.map(|b| parse_range(&b)).transpose().map_err(Failure::Config)?.unwrap_or(std_axes.beta),
        gamma1: gamma1.map(|g| parse_list(&g)).transpose().map_err(Failure::Config)?.unwrap_or(std_axes.gamma1),
        gamma2: gamma2.map(|g| parse_list(&g)).transpose().map_err(Failure::Config)?.unwrap_or(std_axes.gamma2),
    };
    if axes.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(Failure::Config("beta axis must stay within [0, 1]".into()));
    }
    if axes.gamma1.iter().chain(&axes.gamma2).any(|g| !(*g > 0.0)) {
        return Err(Failure::Config("gamma values must be positive".into()));
    }
    let points = engine::sweep(&scenario, &axes, common.jobs).map_err(|e| Failure::Config(e.to_string()))?;
    std::fs::create_dir_all(&common.out)?;
    report::write_sweep(create(&common.out, "sweep.csv")?, &points)?;
    if common.emit_plots {
        report::write_sweep_plot(create(&common.out, "plot_sweep.csv")?, &points)?;
    }
    let failed = points.iter().filter(|p| p.summary.is_err()).count();
    println!(
        "{} points ({} failed), seed {}, {} steps each",
        points.len(),
        failed,
        scenario.seed,
        scenario.horizon
    );
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} sweep point(s) failed")));
    }
    Ok(())
}

fn compare(common: &Common, modes: Option<String>) -> Result<(), Failure> {
    let scenario = load_scenario(common)?;
    let mut list = scenario.config.compare_modes();
    if let Some(names) = modes {
        let wanted: Vec<&str> = names.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        for w in &wanted {
            if !list.iter().any(|m| m.name() == *w) {
                return Err(Failure::Config(format!("mode {w:?} is not in the compare list")));
            }
        }
        list.retain(|m| wanted.contains(&m.name()));
    }
    let runs = engine::compare_modes(&scenario, &list, common.jobs).map_err(|e| match e {
        engine::EngineError::TooFewModes(_) => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    })?;
    std::fs::create_dir_all(&common.out)?;
    report::write_compare(create(&common.out, "compare.csv")?, &runs, scenario.dt())?;
    report::write_compare_series(create(&common.out, "compare_series.csv")?, &runs)?;
    if common.emit_plots {
        report::write_compare_plot(create(&common.out, "plot_compare.csv")?, &runs)?;
    }
    let summaries: Vec<_> = runs.iter().map(|r| &r.output.summary).collect();
    report::write_json(create(&common.out, "summary.json")?, &summaries)?;
    for r in &runs {
        println!("{:<13} {}", r.mode.name(), report::digest(&r.output.summary));
    }
    Ok(())
}

/// Reads one snapshot of nodal injections (kW / kvar) for `n` buses.
pub fn read_injections(path: &Path, n: usize, step: Option<usize>) -> Result<NodalInjection, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let bus_col = idx("bus").ok_or("missing column \"bus\"")?;
    let t_col = idx("t");
    let fields = ["p_load", "q_load", "p_pv", "q_pv", "p_mpv", "p_bes", "q_bes"];
    let cols: Vec<Option<usize>> = fields.iter().map(|f| idx(f)).collect();
    let mut inj = NodalInjection::zeros(n);
    let mut chosen: Option<usize> = step;
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |c: usize| -> Result<f64, String> {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                return Ok(0.0);
            }
            raw.parse::<f64>().map_err(|_| format!("row {}: bad number {raw:?}", line + 1))
        };
        if let Some(tc) = t_col {
            let raw = rec.get(tc).unwrap_or("");
            if !raw.is_empty() {
                let t = raw.parse::<usize>().map_err(|_| format!("row {}: bad step {raw:?}", line + 1))?;
                match chosen {
                    None => chosen = Some(t),
                    Some(c) if c != t => continue,
                    _ => {}
                }
            }
        }
        let bus = num(bus_col)? as usize;
        if bus >= n {
            return Err(format!("row {}: bus {bus} not in topology", line + 1));
        }
        let mut v = [0.0; 7];
        for (k, c) in cols.iter().enumerate() {
            if let Some(c) = c {
                v[k] = num(*c)?;
            }
        }
        let b = &mut inj.buses[bus];
        *b = BusInjection {
            p_load: b.p_load + v[0],
            q_load: b.q_load + v[1],
            p_pv: b.p_pv + v[2],
            q_pv: b.q_pv + v[3],
            p_mpv: b.p_mpv + v[4],
            p_bes: b.p_bes + v[5],
            q_bes: b.q_bes + v[6],
        };
        rows += 1;
    }
    if rows == 0 {
        return Err("no injection rows selected".into());
    }
    Ok(inj)
}

fn pf(topology: &Path, injections: &Path, step: Option<usize>, slack_v: f64, out: Option<&Path>) -> Result<(), Failure> {
    let topo = GridTopology::load(topology).map_err(|e| Failure::Config(e.to_string()))?;
    let report = validate_radial(&topo);
    if !report.is_ok() {
        return Err(Failure::Config(report.to_string()));
    }
    let inj = read_injections(injections, topo.n_buses(), step).map_err(Failure::Config)?;
    let model = PowerFlowModel::new(&topo).map_err(|e| Failure::Config(e.to_string()))?;
    let sol = model
        .solve(&inj, slack_v)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut rows = vec![vec!["bus".to_string(), "v_pu".to_string()]];
    for (b, v) in sol.v.iter().enumerate() {
        rows.push(vec![b.to_string(), format!("{v}")]);
    }
    for r in &rows {
        println!("{}", r.join(","));
    }
    let loss_kw = topo.bases.pu_to_kw(total_loss(&sol, &topo));
    eprintln!(
        "converged in {} iterations, slack {:.4} kW, losses {:.4} kW",
        sol.iterations,
        topo.bases.pu_to_kw(sol.slack_p),
        loss_kw
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(create(dir, "pf.csv")?);
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}
