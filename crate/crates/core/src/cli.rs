//! The `qsdlab` command line: subcommands, exit codes and bundle assembly.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bundle::ResultBundle;
use crate::config::ExperimentConfig;
use crate::flow::{self, AttractorOptions, AttractorReport, VectorField};
use crate::kernel::TransitionKernel;
use crate::ldp::{self, CostGraphOptions, RateFunctional};
use crate::qsd::{self, QsdError, QsdOptions, QsdSolution};
use crate::recurrence::{self, RecurrenceAtlas};
use crate::report;
use crate::simplex::{self, SimplexGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const DIAGNOSTIC: &str = "diagnostic.json";

#[derive(Debug, Parser)]
#[command(name = "qsdlab", version, about = "Quasi-stationary distributions of finite-population imitation dynamics")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(short = 'c', long = "config", global = true)]
    pub config: Option<PathBuf>,
    /// Population size; replaces `grid.N` and `grid.N_list`.
    #[arg(long = "N", global = true)]
    pub n: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; replaces `output.directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 lets rayon decide).
    #[arg(long, global = true, env = "QSDLAB_THREADS")]
    pub threads: Option<usize>,
    /// Solve for a QSD even when the protocol has no interior noise.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print state counts of the grid.
    Grid {
        #[arg(long)]
        d: Option<usize>,
    },
    /// Check a config and print its normalized form.
    Validate,
    /// QSD at a single N.
    Qsd,
    /// QSD over `grid.N_list` with a decay fit.
    Sweep {
        /// Solve the N values concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Mean-field trajectory and attractor report.
    Flow,
    /// Deviation from the mean field and absorption-time sampling.
    Simulate,
    /// Cost graph, L-classes and quasipotentials.
    Ldp,
    /// Pseudo-orbit recurrence classes.
    Apchains,
    /// Match L-classes against pseudo-orbit classes.
    Compare,
    /// All plots in one bundle.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Grid { .. } => "grid",
            Command::Validate => "validate",
            Command::Qsd => "qsd",
            Command::Sweep { .. } => "sweep",
            Command::Flow => "flow",
            Command::Simulate => "simulate",
            Command::Ldp => "ldp",
            Command::Apchains => "apchains",
            Command::Compare => "compare",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical { message: String, detail: Value },
    Io(std::io::Error),
}

impl Failure {
    fn numerical(e: impl std::fmt::Display) -> Self {
        Failure::Numerical {
            message: e.to_string(),
            detail: Value::Null,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn qsd_failure(e: QsdError) -> Failure {
    let detail = match &e {
        QsdError::NoConvergence { last, .. } => json!({ "last_iterate": last }),
        _ => Value::Null,
    };
    Failure::Numerical {
        message: e.to_string(),
        detail,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    pool.install(|| execute(&cli))
}

fn execute(cli: &Cli) -> i32 {
    let command = cli.command.name();
    let config = match load(cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_CONFIG;
        }
    };
    let out = out_dir(cli, config.as_ref());
    match dispatch(cli, config.as_ref(), &out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Numerical { message, detail }) => {
            eprintln!("numerical failure: {message}");
            let diag = json!({
                "command": command,
                "error": message,
                "detail": detail,
                "config_hash": config.as_ref().map(ExperimentConfig::hash),
            });
            let path = out.join(DIAGNOSTIC);
            let written = fs::create_dir_all(&out)
                .and_then(|_| fs::write(&path, serde_json::to_string_pretty(&diag).unwrap_or_default() + "\n"));
            match written {
                Ok(()) => eprintln!("diagnostic written to {}", path.display()),
                Err(e) => eprintln!("could not write diagnostic: {e}"),
            }
            EXIT_NUMERICAL
        }
    }
}

fn load(cli: &Cli) -> Result<Option<ExperimentConfig>, String> {
    let Some(path) = &cli.common.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| format!("error: cannot read {}: {e}", path.display()))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| format!("{}:\n{e}", path.display()))?;
    // --out stays out of the echoed config so bundles do not depend on where they land
    let cfg = cfg
        .with_overrides(cli.common.n, cli.common.seed, None)
        .map_err(|e| format!("after command-line overrides:\n{e}"))?;
    Ok(Some(cfg))
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(o) = &cli.common.out {
        return o.clone();
    }
    cfg.and_then(|c| c.raw.output.directory.clone())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("qsdlab-out"))
}

fn dispatch(cli: &Cli, cfg: Option<&ExperimentConfig>, out: &Path) -> Result<(), Failure> {
    if let Command::Grid { d } = &cli.command {
        return grid_counts(*d, cli.common.n, cfg);
    }
    let cfg = cfg.ok_or_else(|| Failure::Config(format!("`{}` needs a config file (-c)", cli.command.name())))?;
    let mut bundle = ResultBundle::new(out, cli.command.name());
    match &cli.command {
        Command::Grid { .. } => unreachable!(),
        Command::Validate => {
            print!("{}", cfg.normalized());
            return Ok(());
        }
        Command::Qsd => cmd_qsd(cfg, cli.common.force, &mut bundle)?,
        Command::Sweep { parallel } => cmd_sweep(cfg, cli.common.force, *parallel, &mut bundle)?,
        Command::Flow => cmd_flow(cfg, &mut bundle)?,
        Command::Simulate => cmd_simulate(cfg, cli.common.force, &mut bundle)?,
        Command::Ldp => cmd_ldp(cfg, &mut bundle)?,
        Command::Apchains => cmd_apchains(cfg, &mut bundle)?,
        Command::Compare => cmd_compare(cfg, &mut bundle)?,
        Command::Report => cmd_report(cfg, cli.common.force, &mut bundle)?,
    }
    let path = bundle.write(Some(cfg))?;
    println!("bundle: {}", path.display());
    Ok(())
}

fn grid_counts(d: Option<usize>, n: Option<u32>, cfg: Option<&ExperimentConfig>) -> Result<(), Failure> {
    let d = d
        .or(cfg.map(ExperimentConfig::d))
        .ok_or_else(|| Failure::Config("`grid` needs --d or a config".into()))?;
    let n = n
        .or(cfg.map(ExperimentConfig::n))
        .ok_or_else(|| Failure::Config("`grid` needs --N or a config".into()))?;
    if d < 2 {
        return Err(Failure::Config(format!("d must be at least 2, got {d}")));
    }
    println!(
        "states={} interior={}",
        simplex::state_count(d, n),
        simplex::interior_count(d, n)
    );
    Ok(())
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

fn coord_header(d: usize) -> String {
    (1..=d).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",")
}

fn check_noise(cfg: &ExperimentConfig, force: bool) -> Result<(), Failure> {
    if !cfg.protocol.interior_noisy() && !force {
        return Err(Failure::Config(format!(
            "protocol `{}` can vanish at interior states, so a QSD may not exist; pass --force to solve anyway",
            cfg.protocol.label()
        )));
    }
    Ok(())
}

fn kernel_at(cfg: &ExperimentConfig, n: u32) -> Result<TransitionKernel, Failure> {
    let grid = SimplexGrid::with_cap(cfg.d(), n, cfg.raw.grid.cap.expect("filled")).map_err(|e| Failure::Config(e.to_string()))?;
    TransitionKernel::assemble(&cfg.protocol, &grid).map_err(Failure::numerical)
}

fn qsd_options(cfg: &ExperimentConfig) -> QsdOptions {
    QsdOptions {
        tol: cfg.raw.qsd.tol.expect("filled"),
        max_iter: cfg.raw.qsd.max_iter.expect("filled"),
    }
}

fn solve_at(cfg: &ExperimentConfig, n: u32) -> Result<(TransitionKernel, QsdSolution), Failure> {
    let kernel = kernel_at(cfg, n)?;
    let sol = qsd::solve_qsd(kernel.interior(), qsd_options(cfg)).map_err(qsd_failure)?;
    Ok((kernel, sol))
}

fn mu_csv(grid: &SimplexGrid, sol: &QsdSolution) -> String {
    let mut s = format!("rank,{},mu\n", coord_header(grid.d()));
    for (pos, &r) in grid.interior_ranks().iter().enumerate() {
        let _ = writeln!(s, "{r},{},{:e}", fmt_point(&grid.coords(r)), sol.mu[pos]);
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct QsdRecord {
    #[serde(rename = "N")]
    n: u32,
    rho: f64,
    one_minus_rho: f64,
    theta: f64,
    #[serde(rename = "expected_T0")]
    expected_t0: f64,
    qsd_mass_eps: f64,
    residual: f64,
    iterations: usize,
    gap_estimate: f64,
    warning: Option<String>,
}

fn record(cfg: &ExperimentConfig, grid: &SimplexGrid, n: u32, sol: &QsdSolution) -> QsdRecord {
    QsdRecord {
        n,
        rho: sol.rho,
        one_minus_rho: sol.one_minus_rho,
        theta: sol.theta,
        expected_t0: sol.expected_t0,
        qsd_mass_eps: qsd::qsd_mass_near(sol, grid, &cfg.target(), cfg.raw.qsd.eps.expect("filled")),
        residual: sol.residual,
        iterations: sol.iterations,
        gap_estimate: sol.gap_estimate,
        warning: sol.warning.clone(),
    }
}

fn qsd_plot(grid: &SimplexGrid, sol: &QsdSolution, target: &[f64], eps: f64) -> String {
    let title = format!("QSD at N = {}", grid.n());
    if grid.d() == 2 {
        let bars: Vec<(f64, f64)> = grid
            .interior_ranks()
            .iter()
            .zip(&sol.mu)
            .map(|(&r, &m)| (grid.coords(r)[0], m))
            .collect();
        let lo = target[0] - eps / 2f64.sqrt();
        let hi = target[0] + eps / 2f64.sqrt();
        report::bar_plot(&title, "x1", "mass", &bars, &[(lo.max(0.0), hi.min(1.0))])
    } else {
        let pts: Vec<(Vec<f64>, f64)> = grid
            .interior_ranks()
            .iter()
            .zip(&sol.mu)
            .map(|(&r, &m)| (grid.coords(r), m))
            .collect();
        report::ternary_heatmap(&title, &pts, grid.n())
    }
}

fn cmd_qsd(cfg: &ExperimentConfig, force: bool, bundle: &mut ResultBundle) -> Result<(), Failure> {
    check_noise(cfg, force)?;
    let n = cfg.n();
    let (kernel, sol) = solve_at(cfg, n)?;
    let grid = kernel.grid();
    let rec = record(cfg, grid, n, &sol);
    println!(
        "N={n} rho={:e} one_minus_rho={:e} residual={:e} iterations={}",
        sol.rho, sol.one_minus_rho, sol.residual, sol.iterations
    );
    if let Some(w) = &sol.warning {
        eprintln!("warning: {w}");
    }
    if cfg.wants("json") {
        bundle.add_json("qsd.json", &rec);
    }
    if cfg.wants("csv") {
        bundle.add("mu.csv", mu_csv(grid, &sol));
    }
    if cfg.wants("svg") {
        bundle.add("qsd.svg", qsd_plot(grid, &sol, &cfg.target(), cfg.raw.qsd.eps.expect("filled")));
    }
    bundle.note("qsd", &rec);
    Ok(())
}

struct SweepOutcome {
    records: Vec<QsdRecord>,
    seconds: Vec<f64>,
    fit: Option<qsd::DecayFit>,
}

fn sweep(cfg: &ExperimentConfig, parallel: bool) -> Result<SweepOutcome, Failure> {
    let one = |n: u32| -> Result<(QsdRecord, f64), Failure> {
        let clock = Instant::now();
        let (kernel, sol) = solve_at(cfg, n)?;
        let rec = record(cfg, kernel.grid(), n, &sol);
        Ok((rec, clock.elapsed().as_secs_f64()))
    };
    let list = cfg.n_list();
    let rows: Vec<(QsdRecord, f64)> = if parallel {
        list.par_iter().map(|&n| one(n)).collect::<Result<_, _>>()?
    } else {
        list.iter().map(|&n| one(n)).collect::<Result<_, _>>()?
    };
    let (records, seconds): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.n as f64, r.one_minus_rho)).collect();
    let fit = if pairs.len() >= 3 {
        Some(qsd::decay_fit(&pairs).map_err(Failure::numerical)?)
    } else {
        None
    };
    Ok(SweepOutcome { records, seconds, fit })
}

fn decay_plot(records: &[QsdRecord]) -> String {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.n as f64, r.one_minus_rho.ln())).collect();
    report::line_plot("Absorption rate against population size", "N", "log(1 - rho_N)", &[("log(1 - rho_N)", pts)])
}

fn strictly(values: &[f64], cmp: impl Fn(f64, f64) -> bool) -> bool {
    values.windows(2).all(|w| cmp(w[0], w[1]))
}

fn cmd_sweep(cfg: &ExperimentConfig, force: bool, parallel: bool, bundle: &mut ResultBundle) -> Result<(), Failure> {
    check_noise(cfg, force)?;
    let outcome = sweep(cfg, parallel)?;
    let mut csv = String::from("N,rho,one_minus_rho,theta,expected_T0,qsd_mass_eps,residual,iterations,seconds\n");
    for (r, s) in outcome.records.iter().zip(&outcome.seconds) {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:.3}",
            r.n, r.rho, r.one_minus_rho, r.theta, r.expected_t0, r.qsd_mass_eps, r.residual, r.iterations, s
        );
        println!("N={} one_minus_rho={:e} qsd_mass_eps={:.4}", r.n, r.one_minus_rho, r.qsd_mass_eps);
    }
    let gaps: Vec<f64> = outcome.records.iter().map(|r| r.one_minus_rho).collect();
    let mass: Vec<f64> = outcome.records.iter().map(|r| r.qsd_mass_eps).collect();
    let summary = json!({
        "records": outcome.records,
        "fit": outcome.fit.map(|f| json!({
            "gamma_hat": f.gamma_hat,
            "intercept": f.intercept,
            "r_squared": f.r_squared,
        })),
        "one_minus_rho_strictly_decreasing": strictly(&gaps, |a, b| b < a),
        "qsd_mass_strictly_increasing": strictly(&mass, |a, b| b > a),
    });
    if let Some(f) = outcome.fit {
        println!("gamma_hat={:e} r_squared={:.6}", f.gamma_hat, f.r_squared);
    }
    if cfg.wants("csv") {
        bundle.add("sweep.csv", csv);
    }
    if cfg.wants("json") {
        bundle.add_json("sweep.json", &summary);
    }
    if cfg.wants("svg") {
        bundle.add("decay.svg", decay_plot(&outcome.records));
    }
    bundle.note("sweep", summary);
    Ok(())
}

fn start_point(cfg: &ExperimentConfig, preferred: Option<&Vec<f64>>) -> Vec<f64> {
    preferred
        .cloned()
        .or_else(|| cfg.raw.flow.x0.clone())
        .unwrap_or_else(|| vec![1.0 / cfg.d() as f64; cfg.d()])
}

fn attractor(cfg: &ExperimentConfig, x0: &[f64]) -> Result<(SimplexGrid, AttractorReport), Failure> {
    let grid = SimplexGrid::new(cfg.d(), cfg.raw.ldp.m.expect("filled")).map_err(|e| Failure::Config(e.to_string()))?;
    let opts = AttractorOptions {
        transient_t: cfg.raw.flow.transient_t.expect("filled"),
        window_t: cfg.raw.flow.window_t.expect("filled"),
        sample_dt: cfg.raw.flow.h.expect("filled"),
    };
    let rep = flow::find_attractor(&cfg.protocol, &[x0.to_vec()], &grid, opts).map_err(Failure::numerical)?;
    Ok((grid, rep))
}

fn field_samples(cfg: &ExperimentConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>, Failure> {
    let m = if cfg.d() == 2 { 50 } else { 14 };
    let grid = SimplexGrid::new(cfg.d(), m).map_err(|e| Failure::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(grid.len());
    let mut f = vec![0.0; cfg.d()];
    for r in 0..grid.len() {
        let x = grid.coords(r);
        cfg.protocol.eval(&x, &mut f).map_err(Failure::numerical)?;
        out.push((x, f.clone()));
    }
    Ok(out)
}

fn cmd_flow(cfg: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<(), Failure> {
    let x0 = start_point(cfg, None);
    let traj = flow::integrate(
        &cfg.protocol,
        &x0,
        cfg.raw.flow.t.expect("filled"),
        cfg.raw.flow.h.expect("filled"),
    )
    .map_err(Failure::numerical)?;
    let (grid, rep) = attractor(cfg, &x0)?;
    let cells: Vec<Vec<f64>> = rep.attractor_cells.iter().map(|&r| grid.coords(r)).collect();
    let summary = json!({
        "x0": x0,
        "terminal": traj.terminal(),
        "resolution_M": grid.n(),
        "attractor_cells": rep.attractor_cells,
        "attractor_points": cells,
        "fundamental_neighborhood_size": rep.fundamental_neighborhood.len(),
        "uniform_convergence_profile": rep.uniform_convergence_profile,
        "interior": rep.interior_flag,
    });
    println!(
        "terminal=({}) attractor_cells={} interior={}",
        fmt_point(traj.terminal()),
        rep.attractor_cells.len(),
        rep.interior_flag
    );
    if cfg.wants("csv") {
        bundle.add("trajectory.csv", traj.to_csv());
    }
    if cfg.wants("json") {
        bundle.add_json("attractor.json", &summary);
    }
    if cfg.wants("svg") {
        bundle.add("phase.svg", report::phase_portrait("Mean-field flow", cfg.d(), &field_samples(cfg)?, &cells));
    }
    bundle.note("flow", summary);
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, force: bool, bundle: &mut ResultBundle) -> Result<(), Failure> {
    check_noise(cfg, force)?;
    let seed = cfg.seed();
    let (kernel, sol) = solve_at(cfg, cfg.n())?;
    let grid = kernel.grid();
    let x0 = start_point(cfg, cfg.raw.sim.x0.as_ref());
    let start = grid.nearest(&x0);
    let dev = flow::deviation_statistic(
        &kernel,
        start,
        cfg.raw.sim.t.expect("filled"),
        cfg.raw.sim.n_paths.expect("filled"),
        seed,
    )
    .map_err(Failure::numerical)?;
    // absorption draws use the next seed so their streams differ from the paths
    let abs = kernel
        .absorption_time_samples(
            &sol.mu,
            cfg.raw.sim.n_samples.expect("filled"),
            seed.wrapping_add(1),
            cfg.raw.sim.step_cap.expect("filled"),
        )
        .map_err(Failure::numerical)?;
    let (mean, se) = abs.mean_and_se();
    let exceed: Vec<Value> = cfg
        .raw
        .sim
        .eps
        .as_ref()
        .expect("filled")
        .iter()
        .map(|&e| json!({ "eps": e, "probability": dev.exceedance(e) }))
        .collect();
    let summary = json!({
        "N": grid.n(),
        "seed": seed,
        "x0": grid.coords(start),
        "deviation": {
            "horizon": cfg.raw.sim.t,
            "paths": dev.samples.len(),
            "median": dev.median(),
            "exceedance": exceed,
        },
        "absorption": {
            "samples": abs.len(),
            "censored": abs.censored_count(),
            "mean": mean,
            "standard_error": se,
            "median": abs.median(),
            "expected_T0": sol.expected_t0,
            "survival_5": abs.survival(5),
            "rho_5": sol.rho.powi(5),
        },
    });
    println!(
        "deviation median={:e} absorption mean={:e} se={:e} expected_T0={:e}",
        dev.median(),
        mean,
        se,
        sol.expected_t0
    );
    if cfg.wants("csv") {
        let mut d = String::from("path,D\n");
        for (k, v) in dev.samples.iter().enumerate() {
            let _ = writeln!(d, "{k},{v:e}");
        }
        bundle.add("deviation.csv", d);
        let mut a = String::from("sample,T0,censored\n");
        for (k, (t, c)) in abs.samples.iter().zip(&abs.censored).enumerate() {
            let _ = writeln!(a, "{k},{t},{c}");
        }
        bundle.add("absorption.csv", a);
    }
    if cfg.wants("json") {
        bundle.add_json("simulate.json", &summary);
    }
    bundle.note("simulate", summary);
    Ok(())
}

fn l_atlas(cfg: &ExperimentConfig, m: u32) -> Result<(ldp::CostGraph, RecurrenceAtlas), Failure> {
    let rf = RateFunctional::new(&cfg.protocol);
    let tb = cfg.raw.ldp.tau_bounds.expect("filled");
    let opts = CostGraphOptions {
        tau_bounds: (tb[0], tb[1]),
        alpha_margin: cfg.raw.ldp.alpha_margin,
    };
    let graph = ldp::build_cost_graph(&rf, m, opts).map_err(Failure::numerical)?;
    let eps = cfg.raw.ldp.eps_class.unwrap_or_else(|| graph.default_eps_class());
    let atlas = ldp::l_classes(&graph, eps);
    Ok((graph, atlas))
}

fn ap_atlas(cfg: &ExperimentConfig, m: u32) -> Result<RecurrenceAtlas, Failure> {
    let grid = SimplexGrid::new(cfg.d(), m).map_err(|e| Failure::Config(e.to_string()))?;
    let r = &cfg.raw.recurrence;
    let delta = r.delta.expect("filled") * grid.cell_width();
    let graph = recurrence::ap_graph(&cfg.protocol, m, delta, r.t.expect("filled"), r.t_max.expect("filled"))
        .map_err(Failure::numerical)?;
    Ok(recurrence::ap_classes(&graph))
}

fn class_points(atlas: &RecurrenceAtlas) -> Result<Vec<Vec<Vec<f64>>>, Failure> {
    let grid = SimplexGrid::new(atlas.d, atlas.m).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(atlas
        .classes
        .iter()
        .map(|c| c.iter().map(|&r| grid.coords(r)).collect())
        .collect())
}

fn class_map(title: &str, atlas: &RecurrenceAtlas) -> Result<String, Failure> {
    Ok(report::class_map(title, atlas.d, atlas.m, &class_points(atlas)?, &atlas.quasi_attractor))
}

fn atlas_line(atlas: &RecurrenceAtlas) -> String {
    let flags: usize = atlas.quasi_attractor.iter().filter(|f| **f).count();
    format!("{:?} classes={} quasi_attractors={}", atlas.flavor, atlas.classes.len(), flags)
}

fn cmd_ldp(cfg: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<(), Failure> {
    let m = cfg.raw.ldp.m.expect("filled");
    let (graph, atlas) = l_atlas(cfg, m)?;
    let k = atlas.classes.len();
    let mut qp = String::from("from,to,B\n");
    let mut table = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            if a != b {
                table[a][b] = graph.quasipotential(&atlas.classes[a], &atlas.classes[b]);
                let _ = writeln!(qp, "{a},{b},{:e}", table[a][b]);
            }
        }
    }
    let mut summary = json!({
        "M": m,
        "nodes": graph.nodes().len(),
        "edges": graph.edges().len(),
        "atlas": &atlas,
        "quasipotential": table,
    });
    if cfg.raw.ldp.refine.expect("filled") {
        let (_, fine) = l_atlas(cfg, 2 * m)?;
        summary["refined"] = json!({
            "M": 2 * m,
            "classes": fine.classes.len(),
            "class_count_changed": fine.classes.len() != atlas.classes.len(),
        });
    }
    println!("{}", atlas_line(&atlas));
    if cfg.wants("csv") {
        bundle.add("cost_edges.csv", graph.to_csv());
        bundle.add("quasipotential.csv", qp);
    }
    if cfg.wants("json") {
        bundle.add_json("l_atlas.json", &atlas);
        bundle.add_json("ldp.json", &summary);
    }
    if cfg.wants("svg") {
        bundle.add("l_classes.svg", class_map("L-classes", &atlas)?);
    }
    summary.as_object_mut().expect("object").remove("quasipotential");
    bundle.note("ldp", summary);
    Ok(())
}

fn cmd_apchains(cfg: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<(), Failure> {
    let atlas = ap_atlas(cfg, cfg.raw.ldp.m.expect("filled"))?;
    println!("{}", atlas_line(&atlas));
    if cfg.wants("json") {
        bundle.add_json("ap_atlas.json", &atlas);
    }
    if cfg.wants("svg") {
        bundle.add("ap_classes.svg", class_map("ap-classes", &atlas)?);
    }
    bundle.note("apchains", &atlas);
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<(), Failure> {
    let m = cfg.raw.ldp.m.expect("filled");
    let (graph, l) = l_atlas(cfg, m)?;
    let ap = ap_atlas(cfg, m)?;
    let rep = recurrence::compare_atlases(&l, &ap, graph.alpha_margin).map_err(Failure::numerical)?;
    let kernel = kernel_at(cfg, cfg.n())?;
    let points = class_points(&ap)?;
    let mut exits = Vec::new();
    for (k, pts) in points.iter().enumerate() {
        if !ap.quasi_attractor[k] || pts.iter().any(|x| x.iter().any(|&v| v < graph.alpha_margin)) {
            continue;
        }
        let s = recurrence::exit_time_samples(
            &kernel,
            pts,
            cfg.raw.recurrence.eta.expect("filled"),
            cfg.raw.sim.n_samples.expect("filled"),
            cfg.seed(),
            cfg.raw.sim.step_cap.expect("filled"),
        )
        .map_err(Failure::numerical)?;
        exits.push(json!({
            "ap_class": k,
            "start": s.start,
            "median_exit": s.median(),
            "censored": s.censored.iter().filter(|c| **c).count(),
        }));
    }
    let summary = json!({
        "M": m,
        "L": { "classes": l.classes.len(), "quasi_attractor": l.quasi_attractor },
        "AP": { "classes": ap.classes.len(), "quasi_attractor": ap.quasi_attractor },
        "match": &rep,
        "exit_times": exits,
    });
    println!("{} | {} | agree={}", atlas_line(&l), atlas_line(&ap), rep.agree);
    if cfg.wants("json") {
        bundle.add_json("compare.json", &summary);
        bundle.add_json("l_atlas.json", &l);
        bundle.add_json("ap_atlas.json", &ap);
    }
    if cfg.wants("svg") {
        bundle.add("l_classes.svg", class_map("L-classes", &l)?);
        bundle.add("ap_classes.svg", class_map("ap-classes", &ap)?);
    }
    bundle.note("compare", summary);
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, force: bool, bundle: &mut ResultBundle) -> Result<(), Failure> {
    check_noise(cfg, force)?;
    let outcome = sweep(cfg, false)?;
    bundle.add("decay.svg", decay_plot(&outcome.records));
    let (kernel, sol) = solve_at(cfg, cfg.n())?;
    bundle.add(
        "qsd.svg",
        qsd_plot(kernel.grid(), &sol, &cfg.target(), cfg.raw.qsd.eps.expect("filled")),
    );
    let x0 = start_point(cfg, None);
    let (grid, rep) = attractor(cfg, &x0)?;
    let cells: Vec<Vec<f64>> = rep.attractor_cells.iter().map(|&r| grid.coords(r)).collect();
    bundle.add("phase.svg", report::phase_portrait("Mean-field flow", cfg.d(), &field_samples(cfg)?, &cells));
    let m = cfg.raw.ldp.m.expect("filled");
    let (_, l) = l_atlas(cfg, m)?;
    let ap = ap_atlas(cfg, m)?;
    bundle.add("l_classes.svg", class_map("L-classes", &l)?);
    bundle.add("ap_classes.svg", class_map("ap-classes", &ap)?);
    let plots = bundle.file_names().len();
    bundle.note("plots", plots);
    println!("{plots} plots");
    Ok(())
}
