//! Projective Hilbert space in real chart coordinates: Fubini–Study metric,
//! complex structure, expectation gradients and numerical certification of
//! the gradient/commutator identities.
//!
//! A chart `k` uses the inhomogeneous coordinates `t^j = z^j / z^k` for
//! `j ≠ k` (ascending), packed as `x = (Re t¹, Im t¹, Re t², Im t², …)`.
//! The complex structure is constant in these holomorphic coordinates,
//! `J_a^b = ω_ab`, with `ω` the block matrix `[[0, 1], [−1, 0]]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    anticomm, comm, expectation, random_hermitian, random_state, CMatrix, HermitianOperator, StateVector, C64,
};

/// Step for finite-difference Hessians and Christoffel symbols.
pub const FD_STEP: f64 = 1e-4;

/// Tolerance for the algebraic identities (commutator and anticommutator forms).
pub const ALGEBRAIC_TOL: f64 = 1e-9;
/// Tolerance for identities that go through finite-difference connections.
pub const FINITE_DIFFERENCE_TOL: f64 = 1e-5;
/// Tolerance for the closed-form values at the chart origin.
pub const ORIGIN_TOL: f64 = 1e-12;

/// A point of projective space in chart `chart`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectivePoint {
    pub chart: usize,
    pub coords: Vec<f64>,
}

impl ProjectivePoint {
    pub fn new(chart: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(Error::InvalidParameter {
                name: "coords",
                reason: format!("need an even, nonzero number of coordinates (got {})", coords.len()),
            });
        }
        if chart > coords.len() / 2 {
            return Err(Error::InvalidParameter {
                name: "chart",
                reason: format!("chart {chart} out of range for n = {}", coords.len() / 2),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "coords",
                reason: "non-finite coordinate".into(),
            });
        }
        Ok(Self { chart, coords })
    }

    /// Complex projective dimension `n`.
    pub fn n(&self) -> usize {
        self.coords.len() / 2
    }

    /// Hilbert-space dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n() + 1
    }

    /// Largest `|t^j|`.
    pub fn max_modulus(&self) -> f64 {
        self.coords
            .chunks(2)
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max)
    }

    fn with_coords(&self, coords: Vec<f64>) -> Self {
        Self {
            chart: self.chart,
            coords,
        }
    }

    /// Unnormalized representative with `z^chart = 1`.
    pub fn representative(&self) -> DVector<C64> {
        let d = self.dim();
        let mut v = DVector::from_element(d, C64::new(0.0, 0.0));
        let mut j = 0;
        for alpha in 0..d {
            if alpha == self.chart {
                v[alpha] = C64::new(1.0, 0.0);
            } else {
                v[alpha] = C64::new(self.coords[2 * j], self.coords[2 * j + 1]);
                j += 1;
            }
        }
        v
    }
}

/// Chart of the largest-modulus amplitude (lowest index on ties).
pub fn to_chart(z: &StateVector) -> Result<ProjectivePoint> {
    let mut best = 0;
    for (k, a) in z.amplitudes().iter().enumerate() {
        if a.norm() > z.amplitudes()[best].norm() {
            best = k;
        }
    }
    to_chart_in(z, best)
}

/// Coordinates of `z` in a prescribed chart.
pub fn to_chart_in(z: &StateVector, chart: usize) -> Result<ProjectivePoint> {
    let a = z.amplitudes();
    if chart >= a.len() {
        return Err(Error::InvalidParameter {
            name: "chart",
            reason: format!("chart {chart} out of range for dimension {}", a.len()),
        });
    }
    let pivot = a[chart];
    if pivot.norm() == 0.0 {
        return Err(Error::InvalidParameter {
            name: "chart",
            reason: format!("amplitude {chart} vanishes; chart does not contain the state"),
        });
    }
    let mut coords = Vec::with_capacity(2 * (a.len() - 1));
    for (alpha, &za) in a.iter().enumerate() {
        if alpha != chart {
            let t = za / pivot;
            coords.push(t.re);
            coords.push(t.im);
        }
    }
    ProjectivePoint::new(chart, coords)
}

/// Unit-norm representative with `z^chart` real and positive.
pub fn from_chart(p: &ProjectivePoint) -> StateVector {
    StateVector::from_raw(p.representative()).normalized()
}

/// The constant numerical tensor `ω` (`ω_{2j−1,2j} = 1`, `ω_{2j,2j−1} = −1`).
pub fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        w[(2 * j, 2 * j + 1)] = 1.0;
        w[(2 * j + 1, 2 * j)] = -1.0;
    }
    w
}

/// Metric, inverse metric and `Ω^{ab} = g^{ac} J_c^b` at a point.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub omega_upper: DMatrix<f64>,
}

fn metric_lower(x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let xv = DVector::from_column_slice(x);
    let y = omega(m / 2) * &xv;
    let s = 1.0 + xv.norm_squared();
    let mut g = DMatrix::identity(m, m) * s - (&xv * xv.transpose() + &y * y.transpose());
    g *= 4.0 / (s * s);
    g
}

pub fn fubini_study_metric(p: &ProjectivePoint) -> MetricData {
    let m = p.coords.len();
    let xv = DVector::from_column_slice(&p.coords);
    let w = omega(p.n());
    let y = &w * &xv;
    let s = 1.0 + xv.norm_squared();
    let g = metric_lower(&p.coords);
    let g_inv = (DMatrix::identity(m, m) + &xv * xv.transpose() + &y * y.transpose()) * (s / 4.0);
    let omega_upper = &g_inv * &w;
    MetricData { g, g_inv, omega_upper }
}

/// Squared Fubini–Study length `g_ab dx^a dx^b` of a chart displacement.
pub fn line_element(p: &ProjectivePoint, dx: &[f64]) -> Result<f64> {
    if dx.len() != p.coords.len() {
        return Err(Error::DimensionMismatch {
            expected: p.coords.len(),
            found: dx.len(),
        });
    }
    let g = metric_lower(&p.coords);
    let v = DVector::from_column_slice(dx);
    Ok((v.transpose() * g * &v)[(0, 0)])
}

/// Covector `∂_a(F)` and vector `∇^a(F) = g^{ab} ∂_b(F)`.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub covector: DVector<f64>,
    pub vector: DVector<f64>,
}

fn expectation_covector(f: &CMatrix, p: &ProjectivePoint) -> (f64, DVector<f64>) {
    let z = p.representative();
    let nz = z.norm_squared();
    let fz = f * &z;
    let mean = z.dotc(&fz).re / nz;
    let w = (fz - &z * C64::new(mean, 0.0)) / C64::new(nz, 0.0);
    let mut cov = DVector::zeros(p.coords.len());
    let mut j = 0;
    for alpha in 0..p.dim() {
        if alpha == p.chart {
            continue;
        }
        cov[2 * j] = 2.0 * w[alpha].re;
        cov[2 * j + 1] = 2.0 * w[alpha].im;
        j += 1;
    }
    (mean, cov)
}

fn check_point_dim(f: &HermitianOperator, p: &ProjectivePoint) -> Result<()> {
    if f.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: f.dim(),
        });
    }
    Ok(())
}

/// Analytic chart gradient of the expectation field `x ↦ (F)`.
pub fn grad_expectation(f: &HermitianOperator, p: &ProjectivePoint) -> Result<Gradient> {
    check_point_dim(f, p)?;
    let (_, covector) = expectation_covector(f.matrix(), p);
    let vector = fubini_study_metric(p).g_inv * &covector;
    Ok(Gradient { covector, vector })
}

/// `∂_a [(F²) − (F)²]`.
pub(crate) fn variance_covector(f: &HermitianOperator, p: &ProjectivePoint) -> DVector<f64> {
    let (mean, d1) = expectation_covector(f.matrix(), p);
    let (_, d2) = expectation_covector(&(f.matrix() * f.matrix()), p);
    d2 - d1 * (2.0 * mean)
}

/// Christoffel symbols `Γ^c_{ab}` (indexed `[c][(a, b)]`) from central
/// differences of the metric.
pub fn christoffel(p: &ProjectivePoint, h: f64) -> Vec<DMatrix<f64>> {
    let m = p.coords.len();
    let dg: Vec<DMatrix<f64>> = (0..m)
        .map(|c| {
            let mut xp = p.coords.clone();
            let mut xm = p.coords.clone();
            xp[c] += h;
            xm[c] -= h;
            (metric_lower(&xp) - metric_lower(&xm)) / (2.0 * h)
        })
        .collect();
    let g_inv = fubini_study_metric(p).g_inv;
    (0..m)
        .map(|c| {
            DMatrix::from_fn(m, m, |a, b| {
                0.5 * (0..m)
                    .map(|d| g_inv[(c, d)] * (dg[a][(d, b)] + dg[b][(d, a)] - dg[d][(a, b)]))
                    .sum::<f64>()
            })
        })
        .collect()
}

/// `Γ^a_{bc} v^b v^c` in closed form. With `V^j = v^{2j} + i v^{2j+1}` the
/// holomorphic connection gives `Γ(V, V)^j = −2 (Σ_k t̄_k V^k) V^j / (1 + |t|²)`.
pub fn connection_contraction(p: &ProjectivePoint, v: &[f64]) -> DVector<f64> {
    let n = p.n();
    let t: Vec<C64> = (0..n).map(|j| C64::new(p.coords[2 * j], p.coords[2 * j + 1])).collect();
    let vc: Vec<C64> = (0..n).map(|j| C64::new(v[2 * j], v[2 * j + 1])).collect();
    let s = 1.0 + t.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let tv: C64 = t.iter().zip(&vc).map(|(a, b)| a.conj() * b).sum();
    let mut out = DVector::zeros(2 * n);
    for j in 0..n {
        let c = tv * vc[j] * (-2.0 / s);
        out[2 * j] = c.re;
        out[2 * j + 1] = c.im;
    }
    out
}

/// `∂_a ∂_b (F)` from central differences of the analytic gradient.
fn fd_hessian(f: &CMatrix, p: &ProjectivePoint, h: f64) -> DMatrix<f64> {
    let m = p.coords.len();
    let mut hess = DMatrix::zeros(m, m);
    for a in 0..m {
        let mut xp = p.coords.clone();
        let mut xm = p.coords.clone();
        xp[a] += h;
        xm[a] -= h;
        let (_, gp) = expectation_covector(f, &p.with_coords(xp));
        let (_, gm) = expectation_covector(f, &p.with_coords(xm));
        let col = (gp - gm) / (2.0 * h);
        hess.set_row(a, &col.transpose());
    }
    (&hess + hess.transpose()) * 0.5
}

/// Covariant Hessian `∇_a ∇_b (F) = ∂_a ∂_b (F) − Γ^c_{ab} ∂_c (F)`.
pub fn covariant_hessian(f: &HermitianOperator, p: &ProjectivePoint, h: f64) -> Result<DMatrix<f64>> {
    check_point_dim(f, p)?;
    let (_, grad) = expectation_covector(f.matrix(), p);
    let gamma = christoffel(p, h);
    let mut hess = fd_hessian(f.matrix(), p, h);
    for (c, gc) in gamma.iter().enumerate() {
        hess -= gc * grad[c];
    }
    Ok(hess)
}

fn expect_matrix(m: &CMatrix, z: &DVector<C64>) -> C64 {
    z.dotc(&(m * z)) / z.norm_squared()
}

/// Absolute residuals of the four certified identities at one point.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityResiduals {
    /// `(−i[F,G])` vs `2 Ω^{ab} ∇_a(F) ∇_b(G)`.
    pub commutator: f64,
    /// `({F,G}) − 2(F)(G)` vs `2 g^{ab} ∇_a(F) ∇_b(G)`.
    pub anticommutator: f64,
    /// `D` vs `−¼([F,[F,G]])`.
    pub double_commutator: f64,
    /// Largest component of `∇_c ξ^a + ∇^a ξ_c` for `ξ^a = Ω^{ab} ∇_b(F)`.
    pub killing: f64,
}

pub fn identity_residuals(f: &HermitianOperator, g: &HermitianOperator, p: &ProjectivePoint) -> Result<IdentityResiduals> {
    check_point_dim(f, p)?;
    check_point_dim(g, p)?;
    let z = p.representative();
    let metric = fubini_study_metric(p);
    let (mean_f, df) = expectation_covector(f.matrix(), p);
    let (mean_g, dg) = expectation_covector(g.matrix(), p);
    let up_f = &metric.g_inv * &df;
    let up_g = &metric.g_inv * &dg;

    let lhs_i = (expect_matrix(&comm(f.matrix(), g.matrix()), &z) * C64::new(0.0, -1.0)).re;
    let rhs_i = 2.0 * (df.transpose() * &metric.omega_upper * &dg)[(0, 0)];

    let lhs_ii = expect_matrix(&anticomm(f.matrix(), g.matrix()), &z).re - 2.0 * mean_f * mean_g;
    let rhs_ii = 2.0 * df.dot(&up_g);

    let cov_hess_g = covariant_hessian(g, p, FD_STEP)?;
    let dvar_f = variance_covector(f, p);
    let d = (up_f.transpose() * &cov_hess_g * &up_f)[(0, 0)] - 0.5 * dvar_f.dot(&up_g);
    let double = comm(f.matrix(), &comm(f.matrix(), g.matrix()));
    let rhs_iii = -0.25 * expect_matrix(&double, &z).re;

    // ξ_c = g_{ca} Ω^{ab} ∂_b(F) = ω_{cb} ∂_b(F) since J = ω in these coordinates.
    let w = omega(p.n());
    let xi_lower = &w * &df;
    let hess_f = fd_hessian(f.matrix(), p, FD_STEP);
    let gamma = christoffel(p, FD_STEP);
    let m = p.coords.len();
    // ∇_c ξ_a = ω_{ab} ∂_c ∂_b(F) − Γ^e_{ca} ξ_e
    let nabla_xi = DMatrix::from_fn(m, m, |c, a| {
        let partial: f64 = (0..m).map(|b| w[(a, b)] * hess_f[(c, b)]).sum();
        let conn: f64 = (0..m).map(|e| gamma[e][(c, a)] * xi_lower[e]).sum();
        partial - conn
    });
    let sym = &nabla_xi + nabla_xi.transpose();
    let raised = &sym * &metric.g_inv;

    Ok(IdentityResiduals {
        commutator: (lhs_i - rhs_i).abs(),
        anticommutator: (lhs_ii - rhs_ii).abs(),
        double_commutator: (d - rhs_iii).abs(),
        killing: raised.amax(),
    })
}

/// Deviations of the chart-origin metric, inverse metric and `Ω^{ab}` from
/// `4δ`, `δ/4` and `ω/4`.
pub fn origin_residual(n: usize) -> f64 {
    let p = ProjectivePoint {
        chart: 0,
        coords: vec![0.0; 2 * n],
    };
    let md = fubini_study_metric(&p);
    let id = DMatrix::<f64>::identity(2 * n, 2 * n);
    let w = omega(n);
    [
        (md.g - &id * 4.0).amax(),
        (md.g_inv - &id * 0.25).amax(),
        (md.omega_upper - w * 0.25).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// One row of the geometry residual table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub identity: &'static str,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualRow {
    fn from_samples(identity: &'static str, samples: &[f64], tolerance: f64) -> Self {
        let max = samples.iter().copied().fold(0.0, f64::max);
        let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
        Self {
            identity,
            max_residual: max,
            mean_residual: mean,
            tolerance,
            pass: max < tolerance,
        }
    }
}

/// Random `(F, G, point)` draws in Hilbert dimension `dim`; one summary row
/// per identity plus the chart-origin check.
pub fn geometry_check(dim: usize, samples: usize, seed: u64) -> Result<Vec<ResidualRow>> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall(dim));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "need at least one sample".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..samples {
        let f = random_hermitian(dim, &mut rng);
        let g = random_hermitian(dim, &mut rng);
        let p = to_chart(&random_state(dim, &mut rng))?;
        let r = identity_residuals(&f, &g, &p)?;
        res[0].push(r.commutator);
        res[1].push(r.anticommutator);
        res[2].push(r.double_commutator);
        res[3].push(r.killing);
    }
    Ok(vec![
        ResidualRow::from_samples("origin_values", &[origin_residual(dim - 1)], ORIGIN_TOL),
        ResidualRow::from_samples("commutator", &res[0], ALGEBRAIC_TOL),
        ResidualRow::from_samples("anticommutator", &res[1], ALGEBRAIC_TOL),
        ResidualRow::from_samples("double_commutator", &res[2], FINITE_DIFFERENCE_TOL),
        ResidualRow::from_samples("killing", &res[3], FINITE_DIFFERENCE_TOL),
    ])
}

/// Variance of `F` via the gradient norm `g^{ab} ∂_a(F) ∂_b(F)`.
pub fn gradient_norm(f: &HermitianOperator, p: &ProjectivePoint) -> Result<f64> {
    let grad = grad_expectation(f, p)?;
    Ok(grad.covector.dot(&grad.vector))
}

/// Variance computed directly at the state represented by `p`.
pub fn variance_at(f: &HermitianOperator, p: &ProjectivePoint) -> Result<f64> {
    crate::linalg::variance(f, &from_chart(p))
}

/// Expectation at the state represented by `p`.
pub fn expectation_at(f: &HermitianOperator, p: &ProjectivePoint) -> Result<f64> {
    expectation(f, &from_chart(p))
}
