//! Monte Carlo ensembles of collapse trajectories and the statistical
//! verdicts run on them.
//!
//! Trajectory `i` is seeded with [`trajectory_seed`]`(master, i)`. Moments are
//! accumulated per fixed block of trajectories in index order and the blocks
//! are merged in block order, so results are bit-identical for any number of
//! worker threads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{comm, expectation, HermitianOperator, StateVector, C64};
use crate::sde::{trajectory_seed, Engine, HamiltonianSchedule, Op, SdeConfig, Workspace};

/// Trajectories per accumulation block.
pub const BLOCK_SIZE: usize = 64;
/// Classified fraction required by [`born_test`].
pub const MIN_CLASSIFIED_FRACTION: f64 = 0.95;
/// Largest failed fraction tolerated by [`run_ensemble`].
pub const MAX_FAILED_FRACTION: f64 = 0.01;

/// Named scalar functions of the (unit-norm) state, evaluated on the grid.
#[derive(Clone)]
pub struct Extras {
    pub names: Vec<String>,
    pub eval: Arc<dyn Fn(&[C64]) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for Extras {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Extras").field("names", &self.names).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleOptions {
    /// Steps between grid points.
    pub stride: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Record `Re ρ_ij` and `Im ρ_ij` columns.
    pub record_density: bool,
    /// Extra expectation columns.
    pub tracked: Vec<(String, HermitianOperator)>,
    pub extras: Option<Extras>,
    /// Classification projectors; `None` uses the joint eigenprojectors of
    /// the collapse operators.
    pub classifiers: Option<Vec<HermitianOperator>>,
    pub keep_final_states: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            stride: 10,
            threads: None,
            record_density: false,
            tracked: Vec::new(),
            extras: None,
            classifiers: None,
            keep_final_states: false,
        }
    }
}

/// Per-trajectory outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalRecord {
    pub index: usize,
    pub seed: u64,
    pub class: Option<usize>,
    pub nearest: usize,
    pub final_variance: f64,
    pub steps: usize,
    pub max_norm_drift: f64,
    /// Smallest and largest value of each extra over the grid.
    pub extra_min: Vec<f64>,
    pub extra_max: Vec<f64>,
    pub final_state: Option<StateVector>,
    pub error: Option<String>,
}

/// Running mean and sum of squared deviations for a fixed-size row.
#[derive(Clone, Debug)]
struct Accumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let delta = x - *m;
            *m += delta * inv;
            *s += delta * (x - *m);
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
    }
}

/// Ensemble moments on the sampling grid plus terminal records.
#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    /// Trajectories contributing to the moments.
    pub n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    pub terminals: Vec<TerminalRecord>,
    pub failures: usize,
    pub z0: StateVector,
    pub hamiltonian: HermitianOperator,
    pub collapse_ops: Vec<HermitianOperator>,
    pub classifiers: Vec<HermitianOperator>,
    pub sigma: f64,
    pub dt: f64,
    pub t_max: f64,
    pub epsilon: f64,
    pub master_seed: u64,
    /// Time at which the Hamiltonian schedule reaches its final segment.
    pub schedule_end: f64,
    pub extra_names: Vec<String>,
}

impl EnsembleResult {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::InvalidParameter {
            name: "column",
            reason: format!("no column named `{name}`"),
        })
    }

    pub fn mean(&self, col: usize, g: usize) -> f64 {
        self.mean[g * self.columns.len() + col]
    }

    /// Standard error of the mean (zero for a single trajectory).
    pub fn se(&self, col: usize, g: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let var = self.m2[g * self.columns.len() + col] / (self.n - 1) as f64;
        (var.max(0.0) / self.n as f64).sqrt()
    }

    /// `(mean, se)` of a named column across the grid.
    pub fn series(&self, name: &str) -> Result<Vec<(f64, f64)>> {
        let c = self.require(name)?;
        Ok((0..self.times.len()).map(|g| (self.mean(c, g), self.se(c, g))).collect())
    }

    /// Grid index whose time is closest to `t`.
    pub fn grid_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (g, &tg) in self.times.iter().enumerate() {
            if (tg - t).abs() < (self.times[best] - t).abs() {
                best = g;
            }
        }
        best
    }

    pub fn classified(&self) -> usize {
        self.terminals.iter().filter(|t| t.class.is_some()).count()
    }

    /// Classified fraction among the trajectories that ran to completion.
    pub fn classified_fraction(&self) -> f64 {
        self.classified() as f64 / self.n.max(1) as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classifiers.len()];
        for t in &self.terminals {
            if let Some(c) = t.class {
                counts[c] += 1;
            }
        }
        counts
    }
}

struct Layout {
    columns: Vec<String>,
    m: usize,
    density: bool,
    dim: usize,
}

fn layout(dim: usize, n_class: usize, m: usize, opts: &EnsembleOptions) -> Layout {
    let mut columns = vec!["H".to_string(), "V".to_string()];
    columns.extend((0..n_class).map(|k| format!("Pi_{k}")));
    if m > 1 {
        columns.extend((0..m).map(|j| format!("V_{j}")));
        for j in 0..m {
            for k in j + 1..m {
                columns.push(format!("C_{j}_{k}"));
            }
        }
    }
    columns.push("budget".into());
    columns.extend(opts.tracked.iter().map(|(n, _)| n.clone()));
    if opts.record_density {
        for i in 0..dim {
            for j in 0..dim {
                columns.push(format!("rho_re_{i}_{j}"));
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                columns.push(format!("rho_im_{i}_{j}"));
            }
        }
    }
    if let Some(e) = &opts.extras {
        columns.extend(e.names.iter().cloned());
    }
    Layout {
        columns,
        m,
        density: opts.record_density,
        dim,
    }
}

struct RowContext<'a> {
    engine: &'a Engine,
    h: Op,
    tracked: Vec<Op>,
    extras: Option<&'a Extras>,
    layout: &'a Layout,
}

impl RowContext<'_> {
    fn fill(&self, z: &[C64], ws: &Workspace, budget: f64, scratch: &mut [C64], out: &mut [f64]) -> Vec<f64> {
        let n2: f64 = z.iter().map(|c| c.norm_sqr()).sum();
        let mut k = 0;
        self.h.apply(z, scratch);
        let mean_h = z.iter().zip(scratch.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / n2;
        let var_h = scratch
            .iter()
            .zip(z)
            .map(|(hz, zi)| (hz - zi * mean_h).norm_sqr())
            .sum::<f64>()
            / n2;
        out[0] = mean_h;
        out[1] = var_h;
        k += 2;
        for p in &self.engine.classifiers {
            out[k] = p.quad(z, scratch) / n2;
            k += 1;
        }
        let total: f64 = ws.variances.iter().sum();
        if self.layout.m > 1 {
            for j in 0..self.layout.m {
                out[k] = ws.variances[j];
                k += 1;
            }
            for j in 0..self.layout.m {
                for l in j + 1..self.layout.m {
                    out[k] = ws.covariance(j, l) / n2;
                    k += 1;
                }
            }
        }
        out[k] = total + budget;
        k += 1;
        for t in &self.tracked {
            out[k] = t.quad(z, scratch) / n2;
            k += 1;
        }
        if self.layout.density {
            let d = self.layout.dim;
            for i in 0..d {
                for j in 0..d {
                    out[k + i * d + j] = (z[i] * z[j].conj()).re / n2;
                    out[k + d * d + i * d + j] = (z[i] * z[j].conj()).im / n2;
                }
            }
            k += 2 * d * d;
        }
        let mut extra_vals = Vec::new();
        if let Some(e) = self.extras {
            let unit: Vec<C64> = z.iter().map(|c| c / n2.sqrt()).collect();
            extra_vals = (e.eval)(&unit);
            for &v in &extra_vals {
                out[k] = v;
                k += 1;
            }
        }
        debug_assert_eq!(k, self.layout.columns.len());
        extra_vals
    }
}

/// Runs `n_traj` trajectories from `z0` under a constant Hamiltonian.
pub fn run_ensemble(
    z0: &StateVector,
    h: &HermitianOperator,
    cfg: &SdeConfig,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    run_ensemble_scheduled(z0, &HamiltonianSchedule::constant(h.clone()), cfg, n_traj, master_seed, opts)
}

pub fn run_ensemble_scheduled(
    z0: &StateVector,
    schedule: &HamiltonianSchedule,
    cfg: &SdeConfig,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter {
            name: "n_traj",
            reason: "need at least one trajectory".into(),
        });
    }
    let engine = Engine::new(schedule, cfg, opts.classifiers.as_deref())?;
    if z0.dim() != engine.dim {
        return Err(Error::DimensionMismatch {
            expected: engine.dim,
            found: z0.dim(),
        });
    }
    for (_, op) in &opts.tracked {
        if op.dim() != engine.dim {
            return Err(Error::DimensionMismatch {
                expected: engine.dim,
                found: op.dim(),
            });
        }
    }
    let stride = opts.stride.max(1);
    let ops = cfg.resolved_ops(&schedule.final_h)?;
    let classifiers = match &opts.classifiers {
        Some(c) => c.clone(),
        None => crate::linalg::joint_projectors(&ops)?,
    };
    let lay = layout(engine.dim, classifiers.len(), ops.len(), opts);
    let n_grid = engine.n_steps / stride + 1;
    let ncol = lay.columns.len();
    let ctx = RowContext {
        engine: &engine,
        h: Op::new(&schedule.final_h),
        tracked: opts.tracked.iter().map(|(_, o)| Op::new(o)).collect(),
        extras: opts.extras.as_ref(),
        layout: &lay,
    };
    let n_extra = opts.extras.as_ref().map_or(0, |e| e.names.len());

    let run_block = |b: usize| -> (Accumulator, Vec<TerminalRecord>) {
        let mut acc = Accumulator::new(n_grid * ncol);
        let mut records = Vec::new();
        let mut buf = vec![0.0; n_grid * ncol];
        let mut scratch = vec![C64::new(0.0, 0.0); engine.dim];
        for index in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n_traj) {
            let seed = trajectory_seed(master_seed, index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = z0.amplitudes().to_vec();
            let mut emin = vec![f64::INFINITY; n_extra];
            let mut emax = vec![f64::NEG_INFINITY; n_extra];
            let mut row_scratch = vec![C64::new(0.0, 0.0); engine.dim];
            let outcome = engine.run(&mut z, &mut rng, stride, true, |g, s, ws, budget| {
                let extra = ctx.fill(s, ws, budget, &mut row_scratch, &mut buf[g * ncol..(g + 1) * ncol]);
                for (i, v) in extra.into_iter().enumerate() {
                    emin[i] = emin[i].min(v);
                    emax[i] = emax[i].max(v);
                }
            });
            let mut record = TerminalRecord {
                index,
                seed,
                class: None,
                nearest: 0,
                final_variance: f64::NAN,
                steps: 0,
                max_norm_drift: f64::NAN,
                extra_min: emin,
                extra_max: emax,
                final_state: None,
                error: None,
            };
            match outcome {
                Ok(end) => {
                    let (nearest, _) = engine.classify(&z, &mut scratch);
                    record.nearest = nearest;
                    record.class = end.stopped.then_some(nearest);
                    record.final_variance = end.final_variance;
                    record.steps = end.steps;
                    record.max_norm_drift = end.max_norm_drift;
                    if opts.keep_final_states {
                        let n = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                        record.final_state = Some(StateVector::from_raw(nalgebra::DVector::from_iterator(
                            z.len(),
                            z.iter().map(|c| c / n),
                        )));
                    }
                    acc.push(&buf);
                }
                Err(e) => {
                    record.steps = match &e {
                        Error::IntegratorAbort { step, .. } => *step,
                        _ => 0,
                    };
                    record.error = Some(e.to_string());
                }
            }
            records.push(record);
        }
        (acc, records)
    };

    let n_blocks = n_traj.div_ceil(BLOCK_SIZE);
    let execute = || -> (Accumulator, Vec<TerminalRecord>) {
        let wave = rayon::current_num_threads().max(1) * 2;
        let mut total = Accumulator::new(n_grid * ncol);
        let mut terminals = Vec::with_capacity(n_traj);
        let mut start = 0;
        while start < n_blocks {
            let end = (start + wave).min(n_blocks);
            let results: Vec<_> = (start..end).into_par_iter().map(run_block).collect();
            for (acc, recs) in results {
                total.merge(&acc);
                terminals.extend(recs);
            }
            start = end;
        }
        (total, terminals)
    };
    let (acc, terminals) = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "threads",
                reason: e.to_string(),
            })?
            .install(execute),
        None => execute(),
    };

    let failures = terminals.iter().filter(|t| t.error.is_some()).count();
    if failures > 0 && (failures as f64 >= MAX_FAILED_FRACTION * n_traj as f64 || acc.n == 0) {
        let first = terminals
            .iter()
            .find_map(|t| t.error.clone())
            .unwrap_or_default();
        return Err(Error::EnsembleFailure {
            failed: failures,
            total: n_traj,
            first,
        });
    }
    let schedule_end = schedule.segments.last().map_or(0.0, |s| {
        ((s.0 / cfg.dt).round() as usize).min(engine.n_steps) as f64 * cfg.dt
    });
    Ok(EnsembleResult {
        columns: lay.columns,
        times: (0..n_grid).map(|g| (g * stride) as f64 * cfg.dt).collect(),
        n: acc.n,
        mean: acc.mean,
        m2: acc.m2,
        terminals,
        failures,
        z0: z0.clone(),
        hamiltonian: schedule.final_h.clone(),
        collapse_ops: ops,
        classifiers,
        sigma: cfg.sigma,
        dt: cfg.dt,
        t_max: engine.n_steps as f64 * cfg.dt,
        epsilon: engine.epsilon,
        master_seed,
        schedule_end,
        extra_names: opts.extras.as_ref().map_or_else(Vec::new, |e| e.names.clone()),
    })
}

/// One eigengroup row of a Born-rule comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct BornRow {
    pub group: usize,
    /// Initial `(Π_e)`.
    pub p: f64,
    /// Observed terminal frequency among classified trajectories.
    pub p_hat: f64,
    /// Binomial standard error `√(p(1−p)/N)`.
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BornReport {
    pub rows: Vec<BornRow>,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub classified: usize,
    pub total: usize,
    pub pass: bool,
}

/// Terminal class frequencies against `p_e = (Π_e)(z0)`: every
/// `|P̂_e − p_e| ≤ 4·√(p_e(1−p_e)/N)` and chi-square p-value above 0.001.
pub fn born_test(result: &EnsembleResult) -> Result<BornReport> {
    let ps: Vec<f64> = result
        .classifiers
        .iter()
        .map(|p| expectation(p, &result.z0))
        .collect::<Result<_>>()?;
    born_test_with_targets(result, &ps)
}

/// Born test against explicit target probabilities, one per classifier.
pub fn born_test_with_targets(result: &EnsembleResult, targets: &[f64]) -> Result<BornReport> {
    if targets.len() != result.classifiers.len() {
        return Err(Error::DimensionMismatch {
            expected: result.classifiers.len(),
            found: targets.len(),
        });
    }
    let ps = targets.to_vec();
    let total = result.n;
    let classified = result.classified();
    if (classified as f64) < MIN_CLASSIFIED_FRACTION * total as f64 || classified == 0 {
        return Err(Error::InsufficientClassification {
            classified,
            total,
            required: 100.0 * MIN_CLASSIFIED_FRACTION,
        });
    }
    let sum: f64 = ps.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter {
            name: "classifiers",
            reason: format!("initial probabilities sum to {sum}, not 1"),
        });
    }
    let counts = result.class_counts();
    let n = classified as f64;
    let mut rows = Vec::new();
    let mut chi_square = 0.0;
    let mut support = 0;
    for (group, (&p, &c)) in ps.iter().zip(&counts).enumerate() {
        let p = p.clamp(0.0, 1.0);
        let p_hat = c as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let diff = p_hat - p;
        let z = if se > 0.0 {
            diff / se
        } else if diff.abs() < 1e-12 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        if p > 1e-12 {
            support += 1;
            chi_square += (c as f64 - n * p).powi(2) / (n * p);
        } else if c > 0 {
            chi_square = f64::INFINITY;
        }
        rows.push(BornRow {
            group,
            p,
            p_hat,
            se,
            z,
            pass: diff.abs() <= 4.0 * se + 1e-12,
        });
    }
    let dof = support.max(1) - 1;
    let p_value = if chi_square.is_infinite() {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::InvalidParameter {
                name: "dof",
                reason: e.to_string(),
            })?
            .sf(chi_square)
    };
    let pass = rows.iter().all(|r| r.pass) && p_value > 0.001;
    Ok(BornReport {
        rows,
        chi_square,
        dof,
        p_value,
        classified,
        total,
        pass,
    })
}

/// Mean of one column compared with its value at a reference time.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCheck {
    pub time: f64,
    pub mean: f64,
    pub se: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleReport {
    pub column: String,
    pub initial: f64,
    pub checks: Vec<SeriesCheck>,
    /// Largest `|deviation| / SE` over the checked times (0 when SE vanishes).
    pub max_z: f64,
    pub pass: bool,
}

fn conservation_scale(g: &HermitianOperator, h: &HermitianOperator) -> f64 {
    (g.frobenius_norm() * h.frobenius_norm()).max(1.0)
}

/// Checks that the ensemble mean of `(G)` (stored in `column`) stays within
/// 4·SE of its value when the final Hamiltonian takes over. `G` must commute
/// with that Hamiltonian and with every collapse operator.
pub fn martingale_test(result: &EnsembleResult, column: &str, g: &HermitianOperator) -> Result<MartingaleReport> {
    for other in std::iter::once(&result.hamiltonian).chain(result.collapse_ops.iter()) {
        if g.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: other.dim(),
                found: g.dim(),
            });
        }
        let c = comm(g.matrix(), other.matrix()).norm();
        if c >= 1e-10 * conservation_scale(g, other) {
            return Err(Error::NotConserved(c));
        }
    }
    let col = result.require(column)?;
    let g0 = result.grid_index(result.schedule_end).max(
        result
            .times
            .iter()
            .position(|&t| t >= result.schedule_end - 1e-12)
            .unwrap_or(0),
    );
    let initial = if g0 == 0 {
        expectation(g, &result.z0)?
    } else {
        result.mean(col, g0)
    };
    let se0 = if g0 == 0 { 0.0 } else { result.se(col, g0) };
    let floor = 1e-12 * initial.abs().max(1.0);
    let mut checks = Vec::new();
    let mut max_z: f64 = 0.0;
    for g in g0..result.times.len() {
        let mean = result.mean(col, g);
        let se = (result.se(col, g).powi(2) + se0 * se0).sqrt();
        let deviation = mean - initial;
        if se > 0.0 {
            max_z = max_z.max(deviation.abs() / se);
        }
        checks.push(SeriesCheck {
            time: result.times[g],
            mean,
            se,
            deviation,
            pass: deviation.abs() <= 4.0 * se + floor,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(MartingaleReport {
        column: column.to_string(),
        initial,
        checks,
        max_z,
        pass,
    })
}

/// Budget `V(t) + σ²∫₀ᵗ V² ds` at one time against `V(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetCheck {
    pub time: f64,
    pub mean_budget: f64,
    pub target: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceDecayReport {
    /// Grid times where `mean V` rose by more than 2·SE.
    pub monotone_violations: Vec<f64>,
    pub budget: Vec<BudgetCheck>,
    /// Largest final variance among classified trajectories.
    pub max_classified_final_variance: f64,
    pub terminal_pass: bool,
    pub pass: bool,
}

/// Variance decay checks for a run whose only collapse operator is `H`:
/// monotone mean within 2·SE, the integrated budget within 5·SE at
/// `check_times`, and terminal variances below the stop threshold.
///
/// The integral is accumulated per trajectory (left-point rule on every
/// step), so its standard error comes directly from the ensemble.
pub fn variance_decay_check(result: &EnsembleResult, check_times: &[f64]) -> Result<VarianceDecayReport> {
    if result.collapse_ops.len() != 1 || result.collapse_ops[0] != result.hamiltonian {
        return Err(Error::InvalidParameter {
            name: "collapse_ops",
            reason: "variance decay budget needs the single collapse operator H".into(),
        });
    }
    let v = result.series("V")?;
    let budget = result.series("budget")?;
    let mut monotone_violations = Vec::new();
    for g in 1..v.len() {
        if v[g].0 > v[g - 1].0 + 2.0 * v[g].1 {
            monotone_violations.push(result.times[g]);
        }
    }
    let target = v[0].0;
    let floor = 1e-12 * target.abs().max(1.0);
    let checks: Vec<BudgetCheck> = check_times
        .iter()
        .map(|&t| {
            let g = result.grid_index(t);
            let (mean_budget, se) = budget[g];
            BudgetCheck {
                time: result.times[g],
                mean_budget,
                target,
                se,
                pass: (mean_budget - target).abs() <= 5.0 * se + floor,
            }
        })
        .collect();
    let max_final = result
        .terminals
        .iter()
        .filter(|t| t.class.is_some())
        .map(|t| t.final_variance)
        .fold(0.0, f64::max);
    let terminal_pass = result.terminals.iter().filter(|t| t.class.is_some()).all(|t| t.final_variance < result.epsilon);
    let pass = monotone_violations.is_empty() && checks.iter().all(|c| c.pass) && terminal_pass;
    Ok(VarianceDecayReport {
        monotone_violations,
        budget: checks,
        max_classified_final_variance: max_final,
        terminal_pass,
        pass,
    })
}

/// Final value of one covariance (or variance) column.
#[derive(Clone, Debug, PartialEq)]
pub struct PairCheck {
    pub column: String,
    pub mean: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecorrelationReport {
    pub pairs: Vec<PairCheck>,
    pub pass: bool,
}

/// `|mean C_kj(t_max)| ≤ 4·SE` for every pair (and `V_j` for `k = j`).
///
/// Values below the stop threshold ε are numerically zero: stopped
/// trajectories hold covariances of size up to ε, so ε is used as an
/// absolute floor.
pub fn decorrelation_check(result: &EnsembleResult) -> Result<DecorrelationReport> {
    if result.collapse_ops.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "collapse_ops",
            reason: "decorrelation needs at least two collapse operators".into(),
        });
    }
    let last = result.times.len() - 1;
    let pairs: Vec<PairCheck> = result
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("C_") || c.starts_with("V_"))
        .map(|(i, c)| {
            let mean = result.mean(i, last);
            let se = result.se(i, last);
            PairCheck {
                column: c.clone(),
                mean,
                se,
                pass: mean.abs() <= 4.0 * se + result.epsilon,
            }
        })
        .collect();
    let pass = pairs.iter().all(|p| p.pass);
    Ok(DecorrelationReport { pairs, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn born_cfg() -> SdeConfig {
        SdeConfig::new(1.0, 0.01, 60.0)
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let data: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 * 0.13 - 3.0).collect();
        let mut seq = Accumulator::new(1);
        for &x in &data {
            seq.push(&[x]);
        }
        let mut a = Accumulator::new(1);
        let mut b = Accumulator::new(1);
        for &x in &data[..15] {
            a.push(&[x]);
        }
        for &x in &data[15..] {
            b.push(&[x]);
        }
        a.merge(&b);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let m2: f64 = data.iter().map(|x| (x - mean).powi(2)).sum();
        assert!((a.mean[0] - mean).abs() < 1e-13 && (seq.mean[0] - mean).abs() < 1e-13);
        assert!((a.m2[0] - m2).abs() < 1e-10 && (seq.m2[0] - m2).abs() < 1e-10);
    }

    #[test]
    fn single_trajectory_moments_equal_its_values() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let z = StateVector::uniform(3).unwrap();
        let cfg = born_cfg();
        let res = run_ensemble(&z, &h, &cfg, 1, 5, &EnsembleOptions::default()).unwrap();
        let traj = crate::sde::evolve_trajectory(&z, &h, &cfg, trajectory_seed(5, 0), 10).unwrap();
        let col = res.column("H").unwrap();
        for (g, s) in traj.states.iter().enumerate().take(traj.times.len() - 1) {
            assert!((res.mean(col, g) - expectation(&h, s).unwrap()).abs() < 1e-14);
            assert_eq!(res.se(col, g), 0.0);
        }
        assert_eq!(res.terminals[0].class, traj.terminal.class);
    }

    #[test]
    fn zero_sigma_keeps_variance_flat() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let z = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let cfg = SdeConfig::new(0.0, 0.01, 5.0);
        let res = run_ensemble(&z, &h, &cfg, 4, 1, &EnsembleOptions::default()).unwrap();
        let v = res.series("V").unwrap();
        for (m, _) in &v {
            assert!((m - v[0].0).abs() < 1e-2);
        }
        assert_eq!(res.classified(), 0);
    }

    #[test]
    fn eigenstate_start_gives_certain_outcome() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let z = StateVector::basis(3, 1).unwrap();
        let res = run_ensemble(&z, &h, &born_cfg(), 50, 2, &EnsembleOptions::default()).unwrap();
        let report = born_test(&res).unwrap();
        assert_eq!(report.rows[1].p_hat, 1.0);
        assert!(report.pass);
    }

    #[test]
    fn insufficient_classification_is_an_error() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let z = StateVector::uniform(2).unwrap();
        let cfg = SdeConfig::new(1.0, 0.01, 0.5);
        let res = run_ensemble(&z, &h, &cfg, 20, 3, &EnsembleOptions::default()).unwrap();
        assert!(matches!(born_test(&res), Err(Error::InsufficientClassification { .. })));
    }

    #[test]
    fn non_conserved_observable_is_rejected() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let z = StateVector::uniform(2).unwrap();
        let opts = EnsembleOptions {
            tracked: vec![("X".into(), crate::linalg::random_hermitian(2, &mut ChaCha8Rng::seed_from_u64(1)))],
            ..Default::default()
        };
        let res = run_ensemble(&z, &h, &SdeConfig::new(1.0, 0.01, 1.0), 4, 3, &opts).unwrap();
        let x = opts.tracked[0].1.clone();
        assert!(matches!(martingale_test(&res, "X", &x), Err(Error::NotConserved(_))));
    }

    #[test]
    fn identity_martingale_is_exact() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let z = StateVector::uniform(3).unwrap();
        let opts = EnsembleOptions {
            tracked: vec![("I".into(), HermitianOperator::identity(3))],
            ..Default::default()
        };
        let res = run_ensemble(&z, &h, &SdeConfig::new(1.0, 0.01, 10.0), 100, 4, &opts).unwrap();
        let rep = martingale_test(&res, "I", &HermitianOperator::identity(3)).unwrap();
        assert!(rep.pass);
        for c in &rep.checks {
            assert!((c.mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_means_sum_to_one() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0, 2.0, 3.0]);
        let z = StateVector::uniform(4).unwrap();
        let res = run_ensemble(&z, &h, &SdeConfig::new(1.0, 0.01, 10.0), 200, 6, &EnsembleOptions::default()).unwrap();
        let cols: Vec<usize> = (0..4).map(|k| res.column(&format!("Pi_{k}")).unwrap()).collect();
        for g in 0..res.times.len() {
            let s: f64 = cols.iter().map(|&c| res.mean(c, g)).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn decorrelation_needs_several_operators() {
        let h = HermitianOperator::diagonal(&[0.0, 1.0]);
        let z = StateVector::uniform(2).unwrap();
        let res = run_ensemble(&z, &h, &SdeConfig::new(1.0, 0.01, 1.0), 2, 3, &EnsembleOptions::default()).unwrap();
        assert!(decorrelation_check(&res).is_err());
    }
}
