//! Itô integrators for the collapse dynamics in state-vector, density-matrix
//! and projective form, plus the trajectory driver.
//!
//! All steppers are Euler–Maruyama. They take the Wiener increments as input,
//! so every formulation can be driven by the same noise path.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{self, fubini_study_metric, ProjectivePoint};
use crate::linalg::{
    comm, eigh, expectation, hermitian_part, joint_projectors, max_abs, unitary_exp, CMatrix, DensityMatrix,
    HermitianOperator, StateVector, C64,
};

/// Distance of `Tr ρ²` from 1 beyond which the density stepper projects back
/// onto a pure state.
pub const PURITY_REPAIR_TOL: f64 = 1e-8;
/// Largest `|t^j|` tolerated before the projective stepper changes chart.
pub const RECHART_THRESHOLD: f64 = 4.0;
/// Relative tolerance for mutual commutativity of collapse operators.
pub const COMMUTING_TOL: f64 = 1e-10;

/// Parameters of one stochastic integration.
#[derive(Clone, Debug)]
pub struct SdeConfig {
    pub sigma: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Mutually commuting collapse operators; empty means `[H]`.
    pub collapse_ops: Vec<HermitianOperator>,
    /// Early-stop threshold on `Σ_j V_j`; `None` means `1e-10 ·` (largest
    /// spectral range of the collapse operators)².
    pub stop_variance_epsilon: Option<f64>,
    pub renormalize_each_step: bool,
}

impl SdeConfig {
    pub fn new(sigma: f64, dt: f64, t_max: f64) -> Self {
        Self {
            sigma,
            dt,
            t_max,
            collapse_ops: Vec::new(),
            stop_variance_epsilon: None,
            renormalize_each_step: true,
        }
    }

    pub fn with_collapse_ops(mut self, ops: Vec<HermitianOperator>) -> Self {
        self.collapse_ops = ops;
        self
    }

    pub fn with_stop_epsilon(mut self, eps: f64) -> Self {
        self.stop_variance_epsilon = Some(eps);
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    fn validate_numbers(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive and finite, got {}", self.dt),
            });
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: format!("must be finite and at least dt, got {}", self.t_max),
            });
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be nonnegative and finite, got {}", self.sigma),
            });
        }
        if let Some(eps) = self.stop_variance_epsilon {
            if !(eps >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "stop_variance_epsilon",
                    reason: format!("must be nonnegative, got {eps}"),
                });
            }
        }
        Ok(())
    }

    /// Collapse operators with the default applied, checked against `h`.
    pub fn resolved_ops(&self, h: &HermitianOperator) -> Result<Vec<HermitianOperator>> {
        let ops = if self.collapse_ops.is_empty() {
            vec![h.clone()]
        } else {
            self.collapse_ops.clone()
        };
        for op in &ops {
            if op.dim() != h.dim() {
                return Err(Error::DimensionMismatch {
                    expected: h.dim(),
                    found: op.dim(),
                });
            }
        }
        check_commuting(&ops)?;
        Ok(ops)
    }

    /// Stop threshold with the default applied.
    pub fn resolved_epsilon(&self, ops: &[HermitianOperator]) -> Result<f64> {
        if let Some(eps) = self.stop_variance_epsilon {
            return Ok(eps);
        }
        let mut range: f64 = 0.0;
        for op in ops {
            range = range.max(op.spectral_range()?);
        }
        Ok(if range > 0.0 { 1e-10 * range * range } else { 1e-10 })
    }
}

/// Rejects families with `‖[A_i, A_j]‖_F ≥ 1e-10 · max(‖A_i‖_F ‖A_j‖_F, 1)`,
/// naming the first offending pair.
pub fn check_commuting(ops: &[HermitianOperator]) -> Result<()> {
    for i in 0..ops.len() {
        for j in i + 1..ops.len() {
            let c = comm(ops[i].matrix(), ops[j].matrix()).norm();
            let scale = (ops[i].frobenius_norm() * ops[j].frobenius_norm()).max(1.0);
            if c >= COMMUTING_TOL * scale {
                return Err(Error::NonCommuting {
                    first: i,
                    second: j,
                    norm: c,
                });
            }
        }
    }
    Ok(())
}

/// `m` independent `N(0, dt)` draws.
pub fn wiener_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, m: usize) -> Vec<f64> {
    let s = dt.sqrt();
    (0..m).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Seed of trajectory `index` under `master` (SplitMix64 finalizer over both).
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index))
}

/// Operator in the representation used by the hot loop.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

impl Op {
    pub(crate) fn new(h: &HermitianOperator) -> Self {
        match h.as_diagonal() {
            Some(d) => Op::Diagonal(d),
            None => Op::Dense(h.matrix().clone()),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, x: &[C64], out: &mut [C64]) {
        match self {
            Op::Diagonal(d) => {
                for ((o, &xi), &di) in out.iter_mut().zip(x).zip(d) {
                    *o = xi * di;
                }
            }
            Op::Dense(m) => {
                let n = x.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for c in 0..n {
                        acc += m[(r, c)] * x[c];
                    }
                    *o = acc;
                }
            }
        }
    }

    /// `⟨x|Op|x⟩` (real part).
    pub(crate) fn quad(&self, x: &[C64], scratch: &mut [C64]) -> f64 {
        self.apply(x, scratch);
        x.iter().zip(scratch.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

/// Scratch space and per-operator quantities for the state stepper.
pub(crate) struct Workspace {
    hz: Vec<C64>,
    /// `(A_j − (A_j)) z` for the current state.
    u: Vec<Vec<C64>>,
    w: Vec<C64>,
    pub(crate) means: Vec<f64>,
    pub(crate) variances: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(d: usize, m: usize) -> Self {
        Self {
            hz: vec![C64::new(0.0, 0.0); d],
            u: vec![vec![C64::new(0.0, 0.0); d]; m],
            w: vec![C64::new(0.0, 0.0); d],
            means: vec![0.0; m],
            variances: vec![0.0; m],
        }
    }

    /// Fills `u`, `means` and `variances` for `z`; returns `Σ_j V_j`.
    pub(crate) fn prepare(&mut self, ops: &[Op], z: &[C64]) -> f64 {
        let n2 = norm_sqr(z);
        let mut total = 0.0;
        for (j, op) in ops.iter().enumerate() {
            let u = &mut self.u[j];
            op.apply(z, u);
            let mean = z.iter().zip(u.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / n2;
            for (ui, &zi) in u.iter_mut().zip(z) {
                *ui -= zi * mean;
            }
            let v = norm_sqr(u) / n2;
            self.means[j] = mean;
            self.variances[j] = v;
            total += v;
        }
        total
    }

    /// `Re ⟨u_j|u_l⟩`.
    pub(crate) fn covariance(&self, j: usize, l: usize) -> f64 {
        self.u[j].iter().zip(&self.u[l]).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// One Euler–Maruyama step using the quantities from the last `prepare`.
    pub(crate) fn step(&mut self, h: &Op, ops: &[Op], sigma: f64, dt: f64, dw: &[f64], z: &mut [C64]) {
        h.apply(z, &mut self.hz);
        let damp = sigma * sigma * dt / 8.0;
        for (i, zi) in z.iter_mut().enumerate() {
            let hz = self.hz[i];
            *zi += C64::new(hz.im * dt, -hz.re * dt);
        }
        for (j, op) in ops.iter().enumerate() {
            op.apply(&self.u[j], &mut self.w);
            let mean = self.means[j];
            let kick = 0.5 * sigma * dw[j];
            for i in 0..z.len() {
                let u = self.u[j][i];
                let w = self.w[i] - u * mean;
                z[i] += u * kick - w * damp;
            }
        }
    }
}

/// Piecewise-constant Hamiltonian: `segments[i] = (t_end, H)` in order, then
/// `final_h` until the end of the run. Boundaries snap to the step grid.
#[derive(Clone, Debug)]
pub struct HamiltonianSchedule {
    pub segments: Vec<(f64, HermitianOperator)>,
    pub final_h: HermitianOperator,
}

impl HamiltonianSchedule {
    pub fn constant(h: HermitianOperator) -> Self {
        Self {
            segments: Vec::new(),
            final_h: h,
        }
    }

    pub fn dim(&self) -> usize {
        self.final_h.dim()
    }

    fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for (t, h) in &self.segments {
            if h.dim() != self.final_h.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.final_h.dim(),
                    found: h.dim(),
                });
            }
            if !(*t > prev) {
                return Err(Error::InvalidParameter {
                    name: "schedule",
                    reason: format!("segment end times must increase (got {t} after {prev})"),
                });
            }
            prev = *t;
        }
        Ok(())
    }
}

/// Everything the hot loop needs, resolved once per run.
pub(crate) struct Engine {
    pub(crate) dim: usize,
    segments: Vec<(usize, Op)>,
    final_h: Op,
    pub(crate) ops: Vec<Op>,
    pub(crate) sigma: f64,
    pub(crate) dt: f64,
    pub(crate) n_steps: usize,
    pub(crate) epsilon: f64,
    renormalize: bool,
    stop_from_step: usize,
    pub(crate) classifiers: Vec<Op>,
}

/// What the engine reports about one path.
#[derive(Clone, Debug)]
pub(crate) struct PathEnd {
    pub(crate) steps: usize,
    pub(crate) stopped: bool,
    pub(crate) final_variance: f64,
    pub(crate) max_norm_drift: f64,
}

impl Engine {
    pub(crate) fn new(
        schedule: &HamiltonianSchedule,
        cfg: &SdeConfig,
        classifiers: Option<&[HermitianOperator]>,
    ) -> Result<Self> {
        cfg.validate_numbers()?;
        schedule.validate()?;
        let ops = cfg.resolved_ops(&schedule.final_h)?;
        let epsilon = cfg.resolved_epsilon(&ops)?;
        let n_steps = cfg.n_steps();
        let segments: Vec<(usize, Op)> = schedule
            .segments
            .iter()
            .map(|(t, h)| (((t / cfg.dt).round() as usize).min(n_steps), Op::new(h)))
            .collect();
        let stop_from_step = segments.last().map_or(0, |s| s.0);
        let classifiers = match classifiers {
            Some(c) => c.to_vec(),
            None => joint_projectors(&ops)?,
        };
        for c in &classifiers {
            if c.dim() != schedule.dim() {
                return Err(Error::DimensionMismatch {
                    expected: schedule.dim(),
                    found: c.dim(),
                });
            }
        }
        Ok(Self {
            dim: schedule.dim(),
            segments,
            final_h: Op::new(&schedule.final_h),
            ops: ops.iter().map(Op::new).collect(),
            sigma: cfg.sigma,
            dt: cfg.dt,
            n_steps,
            epsilon,
            renormalize: cfg.renormalize_each_step,
            stop_from_step,
            classifiers: classifiers.iter().map(Op::new).collect(),
        })
    }

    fn hamiltonian_at(&self, step: usize) -> &Op {
        self.segments
            .iter()
            .find(|(end, _)| step < *end)
            .map_or(&self.final_h, |(_, h)| h)
    }

    pub(crate) fn workspace(&self) -> Workspace {
        Workspace::new(self.dim, self.ops.len())
    }

    /// Index of the classifier with the largest expectation, and that value.
    pub(crate) fn classify(&self, z: &[C64], scratch: &mut [C64]) -> (usize, f64) {
        let n2 = norm_sqr(z);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, p) in self.classifiers.iter().enumerate() {
            let v = p.quad(z, scratch) / n2;
            if v > best.1 {
                best = (k, v);
            }
        }
        best
    }

    /// Integrates one path in place. `observe(grid_index, state, workspace,
    /// budget_integral)` is called at step 0 and every `stride` steps; with
    /// `hold`, a path that stops early is reported unchanged on the remaining
    /// grid points.
    pub(crate) fn run<F>(
        &self,
        z: &mut [C64],
        rng: &mut ChaCha8Rng,
        stride: usize,
        hold: bool,
        mut observe: F,
    ) -> Result<PathEnd>
    where
        F: FnMut(usize, &[C64], &Workspace, f64),
    {
        let stride = stride.max(1);
        let m = self.ops.len();
        let mut ws = self.workspace();
        let mut dw = vec![0.0; m];
        let sqrt_dt = self.dt.sqrt();
        let mut total = ws.prepare(&self.ops, z);
        let mut budget = 0.0;
        let mut max_drift: f64 = 0.0;
        observe(0, z, &ws, budget);
        let mut steps = 0;
        let mut stopped = false;
        while steps < self.n_steps {
            for d in dw.iter_mut() {
                *d = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            }
            budget += self.sigma * self.sigma * total * total * self.dt;
            ws.step(self.hamiltonian_at(steps), &self.ops, self.sigma, self.dt, &dw, z);
            steps += 1;
            let n2 = norm_sqr(z);
            if !n2.is_finite() || n2 == 0.0 {
                return Err(Error::IntegratorAbort {
                    step: steps,
                    time: steps as f64 * self.dt,
                    reason: "non-finite or vanishing state norm".into(),
                    last_state: z.to_vec(),
                });
            }
            let n = n2.sqrt();
            max_drift = max_drift.max((n - 1.0).abs());
            if self.renormalize {
                let inv = 1.0 / n;
                for zi in z.iter_mut() {
                    *zi *= inv;
                }
            }
            total = ws.prepare(&self.ops, z);
            if steps % stride == 0 {
                observe(steps / stride, z, &ws, budget);
            }
            if steps >= self.stop_from_step && total < self.epsilon {
                stopped = true;
                break;
            }
        }
        if hold && stopped {
            let last = self.n_steps / stride;
            for g in steps / stride + 1..=last {
                observe(g, z, &ws, budget);
            }
        }
        Ok(PathEnd {
            steps,
            stopped,
            final_variance: total,
            max_norm_drift: max_drift,
        })
    }
}

/// Result of one state-vector step.
#[derive(Clone, Debug)]
pub struct StateStep {
    pub state: StateVector,
    /// `|‖z′‖ − 1|` before renormalization.
    pub norm_drift: f64,
}

fn check_dw(dw: &[f64], m: usize) -> Result<()> {
    if dw.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: dw.len(),
        });
    }
    Ok(())
}

/// `z′ = z + (α dt + Σ_j β_j dW^j) z` with `α = −iH − (σ²/8) Σ_j (A_j − (A_j))²`
/// and `β_j = (σ/2)(A_j − (A_j))`, renormalized unless disabled.
pub fn step_state(z: &StateVector, h: &HermitianOperator, cfg: &SdeConfig, dw: &[f64]) -> Result<StateStep> {
    cfg.validate_numbers()?;
    if z.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: z.dim(),
        });
    }
    let ops: Vec<Op> = cfg.resolved_ops(h)?.iter().map(Op::new).collect();
    check_dw(dw, ops.len())?;
    let mut ws = Workspace::new(z.dim(), ops.len());
    let mut v: Vec<C64> = z.amplitudes().to_vec();
    ws.prepare(&ops, &v);
    ws.step(&Op::new(h), &ops, cfg.sigma, cfg.dt, dw, &mut v);
    let n = norm_sqr(&v).sqrt();
    if !n.is_finite() || n == 0.0 {
        return Err(Error::IntegratorAbort {
            step: 1,
            time: cfg.dt,
            reason: "non-finite or vanishing state norm".into(),
            last_state: v,
        });
    }
    let raw = DVector::from_vec(v);
    let state = if cfg.renormalize_each_step {
        StateVector::from_raw(raw / C64::new(n, 0.0))
    } else {
        StateVector::from_raw(raw)
    };
    Ok(StateStep {
        state,
        norm_drift: (n - 1.0).abs(),
    })
}

fn check_pure_input(rho: &DensityMatrix, h: &HermitianOperator, a: &HermitianOperator) -> Result<()> {
    if rho.dim() != h.dim() || a.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: if rho.dim() != h.dim() { rho.dim() } else { a.dim() },
        });
    }
    let p = rho.purity();
    if (p - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDensity(format!("stepper needs a pure state, purity is {p}")));
    }
    Ok(())
}

fn dominant_projector(m: &CMatrix) -> Result<CMatrix> {
    let (_, vecs) = eigh(&hermitian_part(m))?;
    let v = vecs.column(m.nrows() - 1).into_owned();
    Ok(&v * v.adjoint())
}

/// `dρ = −i[H,ρ]dt − (σ²/8)[A,[A,ρ]]dt + (σ/2)[ρ,[ρ,A]]dW` without any repair.
pub fn density_increment(rho: &CMatrix, h: &HermitianOperator, a: &HermitianOperator, sigma: f64, dt: f64, dw: f64) -> CMatrix {
    let am = a.matrix();
    let i = C64::new(0.0, 1.0);
    let drift = comm(h.matrix(), rho) * (-i) - comm(am, &comm(am, rho)) * C64::new(sigma * sigma / 8.0, 0.0);
    let noise = comm(rho, &comm(rho, am)) * C64::new(0.5 * sigma, 0.0);
    drift * C64::new(dt, 0.0) + noise * C64::new(dw, 0.0)
}

/// [`density_increment`] followed by a projection onto the dominant
/// eigenvector when `Tr ρ²` leaves 1 by more than [`PURITY_REPAIR_TOL`].
pub fn step_density(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    a: &HermitianOperator,
    cfg: &SdeConfig,
    dw: f64,
) -> Result<DensityMatrix> {
    cfg.validate_numbers()?;
    check_pure_input(rho, h, a)?;
    let r = rho.matrix();
    let next = hermitian_part(&(r + density_increment(r, h, a, cfg.sigma, cfg.dt, dw)));
    if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::IntegratorAbort {
            step: 1,
            time: cfg.dt,
            reason: "non-finite density entry".into(),
            last_state: Vec::new(),
        });
    }
    let purity = crate::linalg::purity(&next);
    let next = if (purity - 1.0).abs() > PURITY_REPAIR_TOL {
        dominant_projector(&next)?
    } else {
        next
    };
    Ok(DensityMatrix::from_matrix_unchecked(next))
}

/// `ρ′ = e^{dK} ρ e^{dK†}` with
/// `dK = [−iH − (σ²/8)[A² − 2AρA, ρ]]dt − (σ/2)[ρ,A]dW`.
pub fn step_density_unitary(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    a: &HermitianOperator,
    cfg: &SdeConfig,
    dw: f64,
) -> Result<DensityMatrix> {
    cfg.validate_numbers()?;
    check_pure_input(rho, h, a)?;
    let r = rho.matrix();
    let am = a.matrix();
    let i = C64::new(0.0, 1.0);
    let inner = am * am - am * r * am * C64::new(2.0, 0.0);
    let dk = (h.matrix() * (-i) - comm(&inner, r) * C64::new(cfg.sigma * cfg.sigma / 8.0, 0.0))
        * C64::new(cfg.dt, 0.0)
        - comm(r, am) * C64::new(0.5 * cfg.sigma * dw, 0.0);
    let skew = max_abs(&(&dk + dk.adjoint()));
    debug_assert!(skew <= 1e-10 * max_abs(&dk).max(1.0), "dK not anti-self-adjoint: {skew:e}");
    // e^{dK} = e^{−iM} with M = i·dK Hermitian.
    let u = unitary_exp(&(dk * i), 1.0)?;
    let next = &u * r * u.adjoint();
    Ok(DensityMatrix::from_matrix_unchecked(hermitian_part(&next)))
}

/// `dx^a = [2Ω^{ab}∂_b(H) − ¼σ² g^{ab}∂_b V]dt + σ g^{ab}∂_b(H) dW`, with a
/// change to the dominant-amplitude chart once some `|t^j|` exceeds
/// [`RECHART_THRESHOLD`].
///
/// The equation is covariant; written as an Itô equation in chart
/// coordinates its drift also carries `−½σ² Γ^a_{bc} ∇^b(H) ∇^c(H)`, without
/// which it would not match the state-vector dynamics.
pub fn step_projective(p: &ProjectivePoint, h: &HermitianOperator, cfg: &SdeConfig, dw: f64) -> Result<ProjectivePoint> {
    cfg.validate_numbers()?;
    if !cfg.collapse_ops.is_empty() && (cfg.collapse_ops.len() != 1 || cfg.collapse_ops[0] != *h) {
        return Err(Error::InvalidParameter {
            name: "collapse_ops",
            reason: "the projective stepper supports only the single collapse operator H".into(),
        });
    }
    let grad = geometry::grad_expectation(h, p)?;
    let dv = geometry::variance_covector(h, p);
    let md = fubini_study_metric(p);
    let s2 = cfg.sigma * cfg.sigma;
    let conn = geometry::connection_contraction(p, grad.vector.as_slice());
    let drift = &md.omega_upper * &grad.covector * 2.0 - &md.g_inv * dv * (0.25 * s2) - conn * (0.5 * s2);
    let dx = drift * cfg.dt + &grad.vector * (cfg.sigma * dw);
    let coords: Vec<f64> = p.coords.iter().zip(dx.iter()).map(|(x, d)| x + d).collect();
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::IntegratorAbort {
            step: 1,
            time: cfg.dt,
            reason: "non-finite chart coordinate".into(),
            last_state: Vec::new(),
        });
    }
    let next = ProjectivePoint::new(p.chart, coords)?;
    if next.max_modulus() > RECHART_THRESHOLD {
        geometry::to_chart(&geometry::from_chart(&next))
    } else {
        Ok(next)
    }
}

/// Itô drift and diffusion coefficients of `(G)`: `d(G) = μ dt + κ dW`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drift {
    pub mu: f64,
    pub kappa: f64,
}

/// `μ = (−i[G,H]) − (σ²/8)([A,[A,G]])`, `κ = (σ/2)({G, A − (A)})`.
pub fn expectation_drift(
    g: &HermitianOperator,
    z: &StateVector,
    h: &HermitianOperator,
    a: &HermitianOperator,
    sigma: f64,
) -> Result<Drift> {
    for d in [g.dim(), h.dim(), a.dim()] {
        if d != z.dim() {
            return Err(Error::DimensionMismatch {
                expected: z.dim(),
                found: d,
            });
        }
    }
    let zv = z.as_dvector();
    let ev = |m: &CMatrix| zv.dotc(&(m * zv)) / C64::new(zv.norm_squared(), 0.0);
    let gm = g.matrix();
    let am = a.matrix();
    let mu = (ev(&comm(gm, h.matrix())) * C64::new(0.0, -1.0)).re
        - sigma * sigma / 8.0 * ev(&comm(am, &comm(am, gm))).re;
    let mean_a = expectation(a, z)?;
    let mean_g = expectation(g, z)?;
    let anti = ev(&(gm * am + am * gm)).re - 2.0 * mean_a * mean_g;
    Ok(Drift {
        mu,
        kappa: 0.5 * sigma * anti,
    })
}

/// How a trajectory ended.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    /// Classification group, `None` when `t_max` was reached with `Σ V_j ≥ ε`.
    pub class: Option<usize>,
    /// Group with the largest `(Π)` regardless of convergence.
    pub nearest: usize,
    pub final_variance: f64,
    pub steps: usize,
    pub seed: u64,
    /// Largest `|‖z‖ − 1|` seen before renormalization.
    pub max_norm_drift: f64,
    pub final_state: StateVector,
}

/// Sampled path of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub terminal: Terminal,
}

fn unit_state(z: &[C64]) -> StateVector {
    let n = norm_sqr(z).sqrt();
    StateVector::from_raw(DVector::from_iterator(z.len(), z.iter().map(|c| c / n)))
}

/// Integrates from `z0` until `t_max` or until `Σ_j V_j < ε`, recording every
/// `stride` steps and the final state.
pub fn evolve_trajectory(
    z0: &StateVector,
    h: &HermitianOperator,
    cfg: &SdeConfig,
    seed: u64,
    stride: usize,
) -> Result<Trajectory> {
    evolve_scheduled(z0, &HamiltonianSchedule::constant(h.clone()), cfg, seed, stride)
}

/// [`evolve_trajectory`] under a piecewise-constant Hamiltonian. Early
/// stopping is only considered once the last segment has ended.
pub fn evolve_scheduled(
    z0: &StateVector,
    schedule: &HamiltonianSchedule,
    cfg: &SdeConfig,
    seed: u64,
    stride: usize,
) -> Result<Trajectory> {
    let engine = Engine::new(schedule, cfg, None)?;
    if z0.dim() != engine.dim {
        return Err(Error::DimensionMismatch {
            expected: engine.dim,
            found: z0.dim(),
        });
    }
    let stride = stride.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = z0.amplitudes().to_vec();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let end = engine.run(&mut z, &mut rng, stride, false, |g, s, _, _| {
        times.push((g * stride) as f64 * cfg.dt);
        states.push(unit_state(s));
    })?;
    if end.steps % stride != 0 {
        times.push(end.steps as f64 * cfg.dt);
        states.push(unit_state(&z));
    }
    let mut scratch = vec![C64::new(0.0, 0.0); engine.dim];
    let (nearest, _) = engine.classify(&z, &mut scratch);
    Ok(Trajectory {
        times,
        states,
        terminal: Terminal {
            class: end.stopped.then_some(nearest),
            nearest,
            final_variance: end.final_variance,
            steps: end.steps,
            seed,
            max_norm_drift: end.max_norm_drift,
            final_state: unit_state(&z),
        },
    })
}

/// Pairwise sums of a Wiener path: the same path sampled at twice the step.
pub fn coarsen_increments(dw: &[f64]) -> Vec<f64> {
    dw.chunks(2).map(|c| c.iter().sum()).collect()
}

/// Agreement of the three single-operator formulations driven by one path.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossFormulationReport {
    pub dt: f64,
    pub steps: usize,
    /// Largest operator-norm distance between `|z⟩⟨z|` and the density stepper.
    pub max_gap: f64,
    /// Largest eigenvalue change of the unitary stepper's `ρ`.
    pub max_spectrum_drift: f64,
}

/// Runs the state-vector, density and unitary-exponential steppers from the
/// same pure state with collapse operator `H` and the increments `dw`.
pub fn cross_formulation(z0: &StateVector, h: &HermitianOperator, sigma: f64, dt: f64, dw: &[f64]) -> Result<CrossFormulationReport> {
    let cfg = SdeConfig::new(sigma, dt, dt * dw.len() as f64).with_collapse_ops(vec![h.clone()]);
    cfg.validate_numbers()?;
    let rho0 = crate::linalg::pure_density(z0);
    let (spec0, _) = eigh(rho0.matrix())?;
    let mut z = z0.clone();
    let mut rho = rho0.clone();
    let mut rho_u = rho0;
    let mut max_gap = 0.0f64;
    let mut max_drift = 0.0f64;
    for &w in dw {
        z = step_state(&z, h, &cfg, &[w])?.state;
        rho = step_density(&rho, h, h, &cfg, w)?;
        rho_u = step_density_unitary(&rho_u, h, h, &cfg, w)?;
        let diff = crate::linalg::pure_density(&z).into_matrix() - rho.matrix();
        let (ev, _) = eigh(&hermitian_part(&diff))?;
        max_gap = max_gap.max(ev.iter().fold(0.0f64, |m, e| m.max(e.abs())));
        let (ev, _) = eigh(rho_u.matrix())?;
        max_drift = max_drift.max(ev.iter().zip(&spec0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
    }
    Ok(CrossFormulationReport {
        dt,
        steps: dw.len(),
        max_gap,
        max_spectrum_drift: max_drift,
    })
}
