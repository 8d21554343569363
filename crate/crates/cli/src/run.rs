//! Experiment orchestration: runs a validated config, writes artifacts,
//! and collects pass/fail verdicts.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use collapse_core::composite::{eigenstate_persistence_run, pointer_scenario, purity_extras};
use collapse_core::ensemble::{
    born_test, born_test_with_targets, decorrelation_check, martingale_test, run_ensemble, run_ensemble_scheduled,
    variance_decay_check, EnsembleOptions, EnsembleResult,
};
use collapse_core::geometry::geometry_check;
use collapse_core::lindblad::{
    analytic_energy_basis_solution, diagnostics, entropy_monotonicity_audit, integrate_lindblad, max_entry_gap,
    LindbladSeries, MixedState,
};
use collapse_core::linalg::{comm, pure_density, random_density, variance, HermitianOperator, StateVector};
use collapse_core::sde::{evolve_trajectory, trajectory_seed, SdeConfig};
use collapse_core::Error as CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{is_eigenstate, ConfigError, Experiment, Prepared, RunConfig};
use crate::estimate::evaluate;
use crate::output::{born_table, moments_table, purity_table, terminals_table, write_json, OutputError, Table};

/// Absolute floor for the ensemble-vs-master-equation comparison, covering
/// entries whose standard error vanishes (the initial state, conserved
/// populations).
pub const BRIDGE_FLOOR: f64 = 1e-9;
/// Largest entry gap accepted between RK4 and the closed-form solution.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Purity defect allowed for a slot that starts in an eigenstate.
pub const PERSISTENCE_TOL: f64 = 1e-6;
/// Variance below which a subsystem state counts as an eigenstate.
const EIGENSTATE_VARIANCE_TOL: f64 = 1e-14;

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Enabled but not applicable to this run.
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub detail: Value,
}

impl Verdict {
    fn new(name: impl Into<String>, pass: bool, detail: Value) -> Self {
        Self {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    fn skipped(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            detail: json!({ "reason": reason.into() }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub verdicts: Vec<Verdict>,
    pub files: Vec<String>,
    /// Lines worth showing on the terminal.
    pub report: Vec<String>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("output error: {0}")]
    Output(#[from] OutputError),
}

impl RunError {
    /// 2 for runtime failures, 3 for configuration errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 3,
            _ => 2,
        }
    }
}

/// Exit code of a finished run: 0 if every verdict passed, 1 otherwise.
pub fn exit_code(result: &Result<Outcome, RunError>) -> u8 {
    match result {
        Ok(o) if o.pass() => 0,
        Ok(_) => 1,
        Err(e) => e.exit_code(),
    }
}

/// Applies overrides, runs the experiment and writes artifacts plus
/// `manifest.json`. The manifest is written whenever the output directory
/// can be created, including on failure.
pub fn run(config: &RunConfig, overrides: &Overrides) -> Result<Outcome, RunError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut cfg = config.clone();
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(t) = overrides.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    let out_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|source| OutputError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let result = cfg
        .validate()
        .map_err(RunError::from)
        .and_then(|prepared| execute(&cfg, &prepared, &out_dir, overrides.quiet));
    let (status, error) = match &result {
        Ok(o) if o.pass() => ("pass", None),
        Ok(_) => ("fail", None),
        Err(RunError::Config(e)) => ("config_error", Some(e.to_string())),
        Err(e) => ("runtime_error", Some(e.to_string())),
    };
    let mut files = result.as_ref().map(|o| o.files.clone()).unwrap_or_default();
    files.push("manifest.json".into());
    let manifest = json!({
        "tool": "collapse-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": collapse_core::VERSION,
        "experiment": cfg.experiment.to_string(),
        "master_seed": cfg.seed,
        "threads": cfg.threads,
        "started_unix": started_unix,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "status": status,
        "error": error,
        "files": files,
        "config": serde_json::to_value(&cfg).expect("config serializes"),
    });
    write_json(&out_dir, "manifest.json", &manifest)?;
    let mut outcome = result?;
    outcome.files = files;
    Ok(outcome)
}

/// Manifest for a config file that could not be parsed, written when the
/// output directory is known from the command line.
pub fn write_config_error_manifest(dir: &Path, config: &Path, error: &ConfigError) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = json!({
        "tool": "collapse-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": collapse_core::VERSION,
        "config_path": config.display().to_string(),
        "status": "config_error",
        "error": error.to_string(),
        "files": ["manifest.json"],
    });
    write_json(dir, "manifest.json", &manifest).map(|_| ())
}

struct Artifacts<'a> {
    dir: &'a Path,
    files: Vec<String>,
    verdicts: Vec<Verdict>,
    report: Vec<String>,
    quiet: bool,
}

impl Artifacts<'_> {
    fn table(&mut self, t: Table) -> Result<(), RunError> {
        self.files.push(t.write(self.dir)?);
        Ok(())
    }

    fn verdict(&mut self, v: Verdict) {
        let mark = match v.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skipped => "skip",
        };
        self.report.push(format!("[{mark}] {}", v.name));
        self.verdicts.push(v);
    }

    fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn execute(cfg: &RunConfig, prepared: &Prepared, dir: &Path, quiet: bool) -> Result<Outcome, RunError> {
    let mut art = Artifacts {
        dir,
        files: Vec::new(),
        verdicts: Vec::new(),
        report: Vec::new(),
        quiet,
    };
    art.progress(&format!("running {} (seed {})", cfg.experiment, cfg.seed));
    let mut summary = serde_json::Map::new();
    match cfg.experiment {
        Experiment::Collapse => collapse(cfg, prepared, &mut art, &mut summary)?,
        Experiment::Lindblad => lindblad(cfg, prepared, &mut art)?,
        Experiment::GeometryCheck => geometry(cfg, &mut art)?,
        Experiment::Composite => composite(cfg, prepared, &mut art, &mut summary)?,
        Experiment::Zurek => zurek(cfg, &mut art, &mut summary)?,
        Experiment::Estimate => estimates(cfg, &mut art)?,
    }
    let pass = art.verdicts.iter().all(|v| v.status != Status::Fail);
    summary.insert("experiment".into(), json!(cfg.experiment.to_string()));
    summary.insert("master_seed".into(), json!(cfg.seed));
    summary.insert("pass".into(), json!(pass));
    summary.insert("verdicts".into(), serde_json::to_value(&art.verdicts).expect("verdicts serialize"));
    art.files.push(write_json(dir, "summary.json", &Value::Object(summary))?);
    Ok(Outcome {
        out_dir: dir.to_path_buf(),
        verdicts: art.verdicts,
        files: art.files,
        report: art.report,
    })
}

fn sde_config(cfg: &RunConfig, ops: Vec<HermitianOperator>) -> SdeConfig {
    let mut sde = SdeConfig::new(cfg.sigma, cfg.dt, cfg.t_max).with_collapse_ops(ops);
    if let Some(eps) = cfg.stop_variance_epsilon {
        sde = sde.with_stop_epsilon(eps);
    }
    sde
}

fn ensemble_options(cfg: &RunConfig) -> EnsembleOptions {
    EnsembleOptions {
        stride: cfg.stride,
        threads: cfg.threads,
        ..Default::default()
    }
}

fn ensemble_summary(result: &EnsembleResult, summary: &mut serde_json::Map<String, Value>) {
    summary.insert("n_traj".into(), json!(result.terminals.len()));
    summary.insert("completed".into(), json!(result.n));
    summary.insert("failures".into(), json!(result.failures));
    summary.insert("classified_fraction".into(), json!(result.classified_fraction()));
    summary.insert("class_counts".into(), json!(result.class_counts()));
    summary.insert("stop_epsilon".into(), json!(result.epsilon));
}

fn commutes(a: &HermitianOperator, b: &HermitianOperator) -> bool {
    let scale = (a.frobenius_norm() * b.frobenius_norm()).max(1.0);
    comm(a.matrix(), b.matrix()).norm() < 1e-10 * scale
}

/// Born verdict (with its CSV) and the classified-fraction gate.
fn born_verdicts(
    art: &mut Artifacts<'_>,
    result: &EnsembleResult,
    targets: Option<&[f64]>,
    min_classified: f64,
) -> Result<(), RunError> {
    let report = match targets {
        Some(t) => born_test_with_targets(result, t),
        None => born_test(result),
    };
    match report {
        Ok(rep) => {
            art.table(born_table(&rep))?;
            let rows: Vec<Value> = rep
                .rows
                .iter()
                .map(|r| json!({"group": r.group, "p": r.p, "p_hat": r.p_hat, "se": r.se, "pass": r.pass}))
                .collect();
            art.verdict(Verdict::new(
                "born",
                rep.pass,
                json!({"rows": rows, "chi_square": rep.chi_square, "dof": rep.dof, "p_value": rep.p_value}),
            ));
        }
        Err(CoreError::InsufficientClassification {
            classified,
            total,
            required,
        }) => art.verdict(Verdict::new(
            "born",
            false,
            json!({"reason": "too few classified trajectories", "classified": classified, "total": total, "required_percent": required}),
        )),
        Err(e) => return Err(e.into()),
    }
    let frac = result.classified_fraction();
    art.verdict(Verdict::new(
        "classified_fraction",
        frac >= min_classified,
        json!({"fraction": frac, "required": min_classified}),
    ));
    Ok(())
}

fn martingale_verdict(art: &mut Artifacts<'_>, result: &EnsembleResult, column: &str, g: &HermitianOperator) -> Result<(), RunError> {
    let name = format!("martingale_{column}");
    match martingale_test(result, column, g) {
        Ok(rep) => {
            let worst = rep.checks.iter().map(|c| c.deviation.abs()).fold(0.0, f64::max);
            art.verdict(Verdict::new(
                name,
                rep.pass,
                json!({"initial": rep.initial, "max_abs_deviation": worst, "max_z": rep.max_z, "times_checked": rep.checks.len()}),
            ));
        }
        Err(CoreError::NotConserved(norm)) => {
            art.verdict(Verdict::skipped(name, format!("not conserved (commutator norm {norm:.3e})")))
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Martingale, variance-decay and decorrelation verdicts for a run under a
/// constant Hamiltonian.
fn ensemble_verdicts(art: &mut Artifacts<'_>, cfg: &RunConfig, result: &EnsembleResult) -> Result<(), RunError> {
    let h = &result.hamiltonian;
    if cfg.checks.martingale {
        if result.collapse_ops.iter().all(|a| commutes(a, h)) {
            martingale_verdict(art, result, "H", h)?;
            for (k, p) in result.classifiers.clone().iter().enumerate() {
                martingale_verdict(art, result, &format!("Pi_{k}"), p)?;
            }
        } else {
            art.verdict(Verdict::skipped("martingale", "H does not commute with the collapse operators"));
        }
    }
    if cfg.checks.variance_decay {
        if result.collapse_ops.len() == 1 && result.collapse_ops[0] == *h {
            let rep = variance_decay_check(result, &[result.t_max / 2.0, result.t_max])?;
            let budget: Vec<Value> = rep
                .budget
                .iter()
                .map(|b| json!({"t": b.time, "mean": b.mean_budget, "target": b.target, "se": b.se, "pass": b.pass}))
                .collect();
            art.verdict(Verdict::new(
                "variance_decay",
                rep.pass,
                json!({
                    "monotone_violations": rep.monotone_violations,
                    "budget": budget,
                    "max_classified_final_variance": rep.max_classified_final_variance,
                    "terminal_pass": rep.terminal_pass,
                }),
            ));
        } else {
            art.verdict(Verdict::skipped("variance_decay", "needs the single collapse operator H"));
        }
    }
    if cfg.checks.decorrelation && result.collapse_ops.len() >= 2 {
        let rep = decorrelation_check(result)?;
        let pairs: Vec<Value> = rep
            .pairs
            .iter()
            .map(|p| json!({"column": p.column, "mean": p.mean, "se": p.se, "pass": p.pass}))
            .collect();
        art.verdict(Verdict::new("decorrelation", rep.pass, json!({ "pairs": pairs })));
    }
    Ok(())
}

/// `lindblad.csv` plus the entropy audit for one master-equation integration.
fn lindblad_outputs(
    art: &mut Artifacts<'_>,
    cfg: &RunConfig,
    series: &LindbladSeries,
    h: &HermitianOperator,
    a: &HermitianOperator,
    every: usize,
) -> Result<(), RunError> {
    let rows = diagnostics(series, h, a, cfg.sigma, every)?;
    let mut t = Table::new("lindblad.csv", ["t", "S", "TrRho2", "offdiag_norm", "rhs_norm"]);
    for r in &rows {
        t.row().num(r.t).num(r.entropy).num(r.purity).num(r.offdiag_norm).num(r.rhs_norm);
    }
    art.table(t)?;
    if cfg.checks.entropy {
        let audit = entropy_monotonicity_audit(series, h, a, cfg.sigma, cfg.checks.entropy_spots)?;
        let worst = audit
            .spot_checks
            .iter()
            .map(|s| (s.finite_difference - s.formula).abs())
            .fold(0.0, f64::max);
        art.verdict(Verdict::new(
            "entropy",
            audit.pass,
            json!({
                "max_decrease": audit.max_decrease,
                "monotone": audit.monotone,
                "spot_checks": audit.spot_checks.len(),
                "max_spot_gap": worst,
            }),
        ));
    }
    Ok(())
}

fn collapse(
    cfg: &RunConfig,
    p: &Prepared,
    art: &mut Artifacts<'_>,
    summary: &mut serde_json::Map<String, Value>,
) -> Result<(), RunError> {
    let h = p.hamiltonian.as_ref().expect("validated");
    let z0 = p.z0.as_ref().expect("validated");
    let sde = sde_config(cfg, p.collapse_ops.clone());
    let mut opts = ensemble_options(cfg);
    opts.record_density = cfg.checks.lindblad_bridge;
    let result = run_ensemble(z0, h, &sde, cfg.n_traj, cfg.seed, &opts)?;
    art.progress(&format!("{} trajectories done", result.terminals.len()));
    ensemble_summary(&result, summary);
    art.table(moments_table(&result))?;
    art.table(terminals_table(&result))?;
    if cfg.checks.born {
        born_verdicts(art, &result, None, cfg.checks.min_classified_fraction)?;
    }
    ensemble_verdicts(art, cfg, &result)?;
    if cfg.checks.lindblad_bridge {
        bridge(art, cfg, &result, z0)?;
    }
    if let Some(dump) = &cfg.state_dump {
        let stride = dump.stride.unwrap_or(cfg.stride);
        for i in 0..dump.trajectories {
            let traj = evolve_trajectory(z0, h, &sde, trajectory_seed(cfg.seed, i as u64), stride)?;
            art.table(state_table(&format!("states_{i}.csv"), h, &traj.times, &traj.states)?)?;
        }
    }
    Ok(())
}

fn state_table(name: &str, h: &HermitianOperator, times: &[f64], states: &[StateVector]) -> Result<Table, RunError> {
    let d = h.dim();
    let mut header = vec!["t".to_string()];
    for k in 0..d {
        header.push(format!("re_z{k}"));
        header.push(format!("im_z{k}"));
    }
    header.push("variance".into());
    let mut t = Table::new(name, header);
    for (&time, z) in times.iter().zip(states) {
        let mut row = t.row().num(time);
        for c in z.amplitudes() {
            row = row.num(c.re).num(c.im);
        }
        row.num(variance(h, z)?);
    }
    Ok(t)
}

/// Ensemble-mean `|z⟩⟨z|` against the RK4 master equation at evenly spaced
/// grid times, entry by entry within 4·SE.
fn bridge(art: &mut Artifacts<'_>, cfg: &RunConfig, result: &EnsembleResult, z0: &StateVector) -> Result<(), RunError> {
    let h = &result.hamiltonian;
    let a = &result.collapse_ops[0];
    let rk_dt = cfg.lindblad.as_ref().map_or(cfg.dt, |l| l.dt);
    let series = integrate_lindblad(&MixedState::from(&pure_density(z0)), h, a, cfg.sigma, rk_dt, result.t_max)?;
    let every = ((cfg.stride as f64 * cfg.dt / rk_dt).round() as usize).max(1);
    lindblad_outputs(art, cfg, &series, h, a, every)?;
    let d = h.dim();
    let last = result.times.len() - 1;
    let samples = cfg.checks.bridge_samples.min(last.max(1));
    let mut worst_z: f64 = 0.0;
    let mut failures = Vec::new();
    let mut times = Vec::new();
    for s in 1..=samples {
        let g = ((s * last) as f64 / samples as f64).round() as usize;
        let t = result.times[g];
        times.push(t);
        let oracle = series.at(t).matrix();
        for i in 0..d {
            for j in 0..d {
                for (part, want) in [("re", oracle[(i, j)].re), ("im", oracle[(i, j)].im)] {
                    let col = result.column(&format!("rho_{part}_{i}_{j}")).expect("density recorded");
                    let (mean, se) = (result.mean(col, g), result.se(col, g));
                    let dev = (mean - want).abs();
                    if se > 0.0 {
                        worst_z = worst_z.max(dev / se);
                    }
                    if dev > 4.0 * se + BRIDGE_FLOOR {
                        failures.push(json!({"t": t, "entry": format!("{part}({i},{j})"), "mean": mean, "oracle": want, "se": se}));
                    }
                }
            }
        }
    }
    art.verdict(Verdict::new(
        "lindblad_bridge",
        failures.is_empty(),
        json!({"times": times, "max_z": worst_z, "failures": failures}),
    ));
    Ok(())
}

fn lindblad(cfg: &RunConfig, p: &Prepared, art: &mut Artifacts<'_>) -> Result<(), RunError> {
    let h = p.hamiltonian.as_ref().expect("validated");
    let a = &p.collapse_ops[0];
    let l = cfg.lindblad.as_ref().expect("validated");
    let rho0 = if l.random_initial {
        MixedState::from(&random_density(h.dim(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)))
    } else {
        MixedState::from(&pure_density(p.z0.as_ref().expect("validated")))
    };
    let series = integrate_lindblad(&rho0, h, a, cfg.sigma, l.dt, cfg.t_max)?;
    lindblad_outputs(art, cfg, &series, h, a, l.every.unwrap_or(cfg.stride))?;
    if cfg.checks.analytic && !l.check_times.is_empty() {
        if a == h {
            let mut gaps = Vec::new();
            for &t in &l.check_times {
                let exact = analytic_energy_basis_solution(h, &rho0, cfg.sigma, t)?;
                gaps.push(json!({"t": t, "gap": max_entry_gap(series.at(t), &exact)}));
            }
            let pass = gaps.iter().all(|g| g["gap"].as_f64().is_some_and(|x| x <= ANALYTIC_TOL));
            art.verdict(Verdict::new("analytic", pass, json!({"tolerance": ANALYTIC_TOL, "gaps": gaps})));
        } else {
            art.verdict(Verdict::skipped("analytic", "closed form needs the collapse operator H"));
        }
    }
    Ok(())
}

fn geometry(cfg: &RunConfig, art: &mut Artifacts<'_>) -> Result<(), RunError> {
    let g = cfg.geometry.as_ref().expect("validated");
    let mut t = Table::new("residuals.csv", ["dim", "identity", "max_residual", "mean_residual", "tolerance", "pass"]);
    for &d in &g.dims {
        let rows = geometry_check(d, g.samples, cfg.seed.wrapping_add(d as u64))?;
        for r in &rows {
            t.row()
                .int(d)
                .text(r.identity)
                .num(r.max_residual)
                .num(r.mean_residual)
                .num(r.tolerance)
                .int(r.pass);
        }
        let detail: serde_json::Map<String, Value> =
            rows.iter().map(|r| (r.identity.to_string(), json!(r.max_residual))).collect();
        art.verdict(Verdict::new(format!("geometry_d{d}"), rows.iter().all(|r| r.pass), Value::Object(detail)));
    }
    art.table(t)
}

fn composite(
    cfg: &RunConfig,
    p: &Prepared,
    art: &mut Artifacts<'_>,
    summary: &mut serde_json::Map<String, Value>,
) -> Result<(), RunError> {
    let c = p.composite.as_ref().expect("validated");
    let section = cfg.composite.as_ref().expect("validated");
    let sde = sde_config(cfg, p.collapse_ops.clone());
    let mut opts = ensemble_options(cfg);
    let result = if c.spec.interactions.is_empty() {
        let rep = eigenstate_persistence_run(
            &c.spec,
            &c.states,
            &sde,
            cfg.n_traj,
            cfg.seed,
            &opts,
            section.entangled_threshold,
        )?;
        summary.insert("min_purity".into(), json!(rep.min_purity));
        summary.insert("entangled_fraction".into(), json!(rep.entangled_fraction));
        if cfg.checks.persistence {
            for (k, (h, z)) in c.spec.hamiltonians.iter().zip(&c.states).enumerate() {
                if is_eigenstate(h, z, EIGENSTATE_VARIANCE_TOL) {
                    art.verdict(Verdict::new(
                        format!("persistence_slot_{k}"),
                        rep.min_purity[k] >= 1.0 - PERSISTENCE_TOL,
                        json!({"min_purity": rep.min_purity[k], "tolerance": PERSISTENCE_TOL}),
                    ));
                } else if let Some(min) = cfg.checks.entangled_fraction_min {
                    art.verdict(Verdict::new(
                        format!("entangling_slot_{k}"),
                        rep.entangled_fraction[k] >= min,
                        json!({"fraction": rep.entangled_fraction[k], "required": min, "threshold": section.entangled_threshold}),
                    ));
                }
            }
        }
        rep.result
    } else {
        if cfg.checks.persistence {
            art.verdict(Verdict::skipped("persistence", "subsystems interact"));
        }
        opts.extras = Some(purity_extras(&c.dims));
        let h = p.hamiltonian.as_ref().expect("validated");
        run_ensemble(p.z0.as_ref().expect("validated"), h, &sde, cfg.n_traj, cfg.seed, &opts)?
    };
    art.progress(&format!("{} trajectories done", result.terminals.len()));
    ensemble_summary(&result, summary);
    art.table(moments_table(&result))?;
    art.table(terminals_table(&result))?;
    art.table(purity_table(&result))?;
    if cfg.checks.born {
        born_verdicts(art, &result, None, cfg.checks.min_classified_fraction)?;
    }
    ensemble_verdicts(art, cfg, &result)
}

fn zurek(cfg: &RunConfig, art: &mut Artifacts<'_>, summary: &mut serde_json::Map<String, Value>) -> Result<(), RunError> {
    let params = cfg.pointer.as_ref().expect("validated");
    let setup = pointer_scenario(params)?;
    let sde = sde_config(cfg, vec![setup.collapse_op.clone()]);
    let mut opts = ensemble_options(cfg);
    opts.classifiers = Some(setup.pointer_projectors.clone());
    let result = run_ensemble_scheduled(&setup.z0, &setup.schedule, &sde, cfg.n_traj, cfg.seed, &opts)?;
    art.progress(&format!("{} trajectories done", result.terminals.len()));
    ensemble_summary(&result, summary);
    summary.insert("targets".into(), json!(setup.targets));
    art.table(moments_table(&result))?;
    art.table(terminals_table(&result))?;
    if cfg.checks.born {
        born_verdicts(art, &result, Some(&setup.targets), cfg.checks.min_classified_fraction)?;
    }
    if cfg.checks.martingale {
        for (k, op) in setup.pointer_projectors.iter().enumerate() {
            martingale_verdict(art, &result, &format!("Pi_{k}"), op)?;
        }
    }
    Ok(())
}

fn estimates(cfg: &RunConfig, art: &mut Artifacts<'_>) -> Result<(), RunError> {
    let mut t = Table::new("estimates.csv", ["index", "mode", "quantity", "value", "unit", "pass"]);
    for (i, e) in cfg.estimate.iter().enumerate() {
        let v = evaluate(e)?;
        let mode = crate::config::mode_name(e.mode.expect("validated"));
        let pass = e.expect.is_none_or(|[lo, hi]| (lo..=hi).contains(&v.value));
        t.row().int(i).text(mode).text(v.quantity).num(v.value).text(v.unit).int(pass);
        art.report.push(format!("{}   ({})", v.line(), v.note));
        if let Some(range) = e.expect {
            art.verdict(Verdict::new(
                format!("estimate_{i}_{mode}"),
                pass,
                json!({"value": v.value, "unit": v.unit, "expected": range}),
            ));
        }
    }
    art.table(t)
}
