//! Dense complex linear algebra: states, Hermitian operators, density
//! matrices, expectations, spectral decomposition and tensor products.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Largest composite dimension built by [`tensor_embed`] unless overridden.
pub const DEFAULT_MAX_DIM: usize = 4096;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// A (not necessarily normalized) state vector `|z⟩` in a Hilbert space of
/// dimension `d ≥ 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(amplitudes))
    }

    pub fn from_dvector(amps: DVector<C64>) -> Result<Self> {
        if amps.len() < 2 {
            return Err(Error::DimensionTooSmall(amps.len()));
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: "non-finite amplitude".into(),
            });
        }
        if amps.norm_squared() == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self { amps })
    }

    /// Real amplitudes, e.g. `(√0.5, √0.3, √0.2)`.
    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    /// Basis vector `|k⟩`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("basis index {k} out of range for dimension {dim}"),
            });
        }
        let mut v = vec![ZERO; dim];
        v[k] = ONE;
        Self::new(v)
    }

    /// Equal-weight superposition of all basis states, unit norm.
    pub fn uniform(dim: usize) -> Result<Self> {
        let a = 1.0 / (dim as f64).sqrt();
        Self::new(vec![C64::new(a, 0.0); dim])
    }

    pub(crate) fn from_raw(amps: DVector<C64>) -> Self {
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        self.amps.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(&self) -> Self {
        Self {
            amps: &self.amps / C64::new(self.norm(), 0.0),
        }
    }

    pub fn scaled(&self, c: C64) -> Result<Self> {
        Self::from_dvector(&self.amps * c)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amps.dotc(&other.amps))
    }

    /// Ray fidelity `|⟨z|z′⟩|² / (⟨z|z⟩⟨z′|z′⟩)`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        let ip = self.inner(other)?;
        Ok(ip.norm_sqr() / (self.amps.norm_squared() * other.amps.norm_squared()))
    }
}

/// A self-adjoint `d × d` complex matrix. Construction always symmetrizes
/// `M ← (M + M†)/2`, so the stored entries are exactly Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    m: CMatrix,
}

impl HermitianOperator {
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "matrix",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { m: hermitian_part(&m) })
    }

    /// Like [`from_matrix`](Self::from_matrix) but rejects input whose
    /// anti-Hermitian part exceeds `tol · max(1, |M|_F)`.
    pub fn from_matrix_checked(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() == m.ncols() {
            let dev = max_abs(&(&m - m.adjoint()));
            if dev > tol * m.norm().max(1.0) {
                return Err(Error::NotHermitian(dev));
            }
        }
        Self::from_matrix(m)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = values.len();
        Self {
            m: CMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    C64::new(values[i], 0.0)
                } else {
                    ZERO
                }
            }),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub(crate) fn from_hermitian_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    /// `F²`, which is again Hermitian.
    pub fn square(&self) -> Self {
        Self::from_hermitian_unchecked(hermitian_part(&(&self.m * &self.m)))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_hermitian_unchecked(&self.m * C64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self::from_hermitian_unchecked(&self.m + &other.m))
    }

    /// The real diagonal if every off-diagonal entry is exactly zero.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        for j in 0..d {
            for i in 0..d {
                if i != j && self.m[(i, j)] != ZERO {
                    return None;
                }
            }
        }
        Some((0..d).map(|i| self.m[(i, i)].re).collect())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(eigh(&self.m)?.0)
    }

    /// `max λ − min λ`.
    pub fn spectral_range(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        Ok(ev[ev.len() - 1] - ev[0])
    }

    /// Largest |λ|.
    pub fn spectral_norm(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        Ok(ev[0].abs().max(ev[ev.len() - 1].abs()))
    }
}

/// Pure or mixed density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-12), trace (1e-10) and eigenvalues (≥ −1e-10).
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        validate_density(&m, 1e-12, 1e-10, 1e-10)?;
        Ok(Self {
            m: hermitian_part(&m),
        })
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        purity(&self.m)
    }

    pub fn is_pure(&self, tol: f64) -> bool {
        (self.purity() - 1.0).abs() <= tol
    }

    /// `Tr(ρ F)`.
    pub fn expectation(&self, f: &HermitianOperator) -> Result<f64> {
        check_dim(self.dim(), f.dim())?;
        Ok(trace_product(&self.m, f.matrix()).re)
    }
}

pub(crate) fn validate_density(m: &CMatrix, herm_tol: f64, trace_tol: f64, psd_tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let dev = max_abs(&(m - m.adjoint()));
    if dev > herm_tol {
        return Err(Error::InvalidDensity(format!("not Hermitian (deviation {dev:e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
        return Err(Error::InvalidDensity(format!("trace {tr} differs from 1")));
    }
    let (ev, _) = eigh(&hermitian_part(m))?;
    if ev[0] < -psd_tol {
        return Err(Error::InvalidDensity(format!("negative eigenvalue {:e}", ev[0])));
    }
    Ok(())
}

/// One eigenvalue cluster of a Hermitian operator.
#[derive(Clone, Debug)]
pub struct SpectralGroup {
    pub eigenvalue: f64,
    pub multiplicity: usize,
    pub projector: HermitianOperator,
}

/// Eigenvalue groups with their eigenspace projectors, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub groups: Vec<SpectralGroup>,
    pub tolerance: f64,
}

impl Spectrum {
    pub fn projectors(&self) -> Vec<HermitianOperator> {
        self.groups.iter().map(|g| g.projector.clone()).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.eigenvalue).collect()
    }

    /// `Σ e Π_e`.
    pub fn reconstruct(&self) -> CMatrix {
        let d = self.groups[0].projector.dim();
        self.groups.iter().fold(CMatrix::zeros(d, d), |acc, g| {
            acc + g.projector.matrix() * C64::new(g.eigenvalue, 0.0)
        })
    }
}

/// Default degeneracy tolerance: `1e-9 ·` spectral range (or `1e-9` for a
/// multiple of the identity).
pub fn default_degeneracy_tol(h: &HermitianOperator) -> Result<f64> {
    let range = h.spectral_range()?;
    Ok(if range > 0.0 { 1e-9 * range } else { 1e-9 })
}

/// Hermitian eigendecomposition, eigenvalues ascending and eigenvectors as
/// matching columns.
pub fn eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenNonConvergence)?;
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

pub fn spectral_decompose(h: &HermitianOperator, eps_deg: f64) -> Result<Spectrum> {
    if !(eps_deg > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps_deg",
            reason: format!("must be positive, got {eps_deg}"),
        });
    }
    let (values, vectors) = eigh(h.matrix())?;
    let d = h.dim();
    let mut groups = Vec::new();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && values[end] - values[end - 1] <= eps_deg {
            end += 1;
        }
        let mut basis: Vec<DVector<C64>> = Vec::with_capacity(end - start);
        for c in start..end {
            let mut v = vectors.column(c).into_owned();
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
            let n = v.norm();
            basis.push(v / C64::new(n, 0.0));
        }
        let mut p = CMatrix::zeros(d, d);
        for b in &basis {
            p += b * b.adjoint();
        }
        let mean = values[start..end].iter().sum::<f64>() / (end - start) as f64;
        groups.push(SpectralGroup {
            eigenvalue: mean,
            multiplicity: end - start,
            projector: HermitianOperator::from_hermitian_unchecked(hermitian_part(&p)),
        });
        start = end;
    }
    Ok(Spectrum {
        groups,
        tolerance: eps_deg,
    })
}

/// Joint eigenprojectors of a family of mutually commuting Hermitian
/// operators: the nonzero products `Π¹_{e1} Π²_{e2} …`.
pub fn joint_projectors(ops: &[HermitianOperator]) -> Result<Vec<HermitianOperator>> {
    let d = ops.first().map(|o| o.dim()).ok_or(Error::InvalidParameter {
        name: "ops",
        reason: "empty operator family".into(),
    })?;
    let mut current = vec![HermitianOperator::identity(d)];
    for op in ops {
        check_dim(d, op.dim())?;
        let spec = spectral_decompose(op, default_degeneracy_tol(op)?)?;
        let mut next = Vec::new();
        for p in &current {
            for g in &spec.groups {
                let prod = p.matrix() * g.projector.matrix();
                if prod.trace().re > 0.5 {
                    next.push(HermitianOperator::from_matrix(prod)?);
                }
            }
        }
        current = next;
    }
    Ok(current)
}

/// `exp(−i M t)` for Hermitian `M`, built from its eigendecomposition so the
/// result is unitary to rounding.
pub fn unitary_exp(m: &CMatrix, t: f64) -> Result<CMatrix> {
    let (values, vectors) = eigh(&hermitian_part(m))?;
    let d = m.nrows();
    let phases = DVector::from_iterator(d, values.iter().map(|&l| C64::from_polar(1.0, -l * t)));
    let scaled = CMatrix::from_fn(d, d, |r, c| vectors[(r, c)] * phases[c]);
    Ok(scaled * vectors.adjoint())
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for k in 0..d {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn purity(m: &CMatrix) -> f64 {
    trace_product(m, m).re
}

/// `⟨z|F|z⟩ / ⟨z|z⟩`. The imaginary residue must stay below `1e-10 · max(|F|_F, 1)`.
pub fn expectation(f: &HermitianOperator, z: &StateVector) -> Result<f64> {
    check_dim(f.dim(), z.dim())?;
    let fz = f.matrix() * z.as_dvector();
    let num = z.as_dvector().dotc(&fz);
    let den = z.as_dvector().norm_squared();
    if den == 0.0 {
        return Err(Error::ZeroVector);
    }
    let val = num / den;
    let tolerance = 1e-10 * f.frobenius_norm().max(1.0);
    if val.im.abs() > tolerance {
        return Err(Error::ImaginaryResidue {
            residue: val.im.abs(),
            tolerance,
        });
    }
    Ok(val.re)
}

/// `(F²) − (F)²`, evaluated as `|(F − (F))z|² / |z|²` so it is nonnegative.
pub fn variance(f: &HermitianOperator, z: &StateVector) -> Result<f64> {
    let mean = expectation(f, z)?;
    let mut dz = f.matrix() * z.as_dvector();
    dz -= z.as_dvector() * C64::new(mean, 0.0);
    Ok((dz.norm_squared() / z.as_dvector().norm_squared()).max(0.0))
}

/// `ρ = |z⟩⟨z| / ⟨z|z⟩`.
pub fn pure_density(z: &StateVector) -> DensityMatrix {
    let v = z.as_dvector();
    let m = v * v.adjoint() / C64::new(v.norm_squared(), 0.0);
    DensityMatrix::from_matrix_unchecked(hermitian_part(&m))
}

/// `[A, B] = AB − BA` for raw matrices.
pub fn comm(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `{A, B} = AB + BA` for raw matrices.
pub fn anticomm(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// `FG − GF`, anti-self-adjoint.
pub fn commutator(f: &HermitianOperator, g: &HermitianOperator) -> Result<CMatrix> {
    check_dim(f.dim(), g.dim())?;
    Ok(comm(f.matrix(), g.matrix()))
}

/// `FG + GF`, self-adjoint.
pub fn anticommutator(f: &HermitianOperator, g: &HermitianOperator) -> Result<HermitianOperator> {
    check_dim(f.dim(), g.dim())?;
    Ok(HermitianOperator::from_hermitian_unchecked(hermitian_part(&anticomm(
        f.matrix(),
        g.matrix(),
    ))))
}

/// Kronecker product of a list of matrices, left factor most significant.
pub fn kron_all(factors: &[&CMatrix]) -> CMatrix {
    factors
        .iter()
        .fold(CMatrix::identity(1, 1), |acc, f| acc.kronecker(*f))
}

fn checked_product(dims: &[usize], max_dim: usize) -> Result<usize> {
    let mut product: usize = 1;
    for &d in dims {
        product = product.checked_mul(d).ok_or(Error::DimensionOverflow {
            product: usize::MAX,
            max: max_dim,
        })?;
    }
    if product > max_dim {
        return Err(Error::DimensionOverflow { product, max: max_dim });
    }
    Ok(product)
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` in position `slot`.
pub fn tensor_embed(op: &HermitianOperator, slot: usize, dims: &[usize]) -> Result<HermitianOperator> {
    tensor_embed_with_max(op, slot, dims, DEFAULT_MAX_DIM)
}

pub fn tensor_embed_with_max(
    op: &HermitianOperator,
    slot: usize,
    dims: &[usize],
    max_dim: usize,
) -> Result<HermitianOperator> {
    if slot >= dims.len() {
        return Err(Error::InvalidParameter {
            name: "slot",
            reason: format!("slot {slot} out of range for {} subsystems", dims.len()),
        });
    }
    check_dim(dims[slot], op.dim())?;
    checked_product(dims, max_dim)?;
    let identities: Vec<CMatrix> = dims.iter().map(|&d| CMatrix::identity(d, d)).collect();
    let factors: Vec<&CMatrix> = (0..dims.len())
        .map(|i| if i == slot { op.matrix() } else { &identities[i] })
        .collect();
    Ok(HermitianOperator::from_hermitian_unchecked(kron_all(&factors)))
}

/// Embeds an operator acting on the joint factor of `slots` (in the listed
/// order) into the full tensor-product space.
pub fn embed_on_slots(
    op: &HermitianOperator,
    slots: &[usize],
    dims: &[usize],
    max_dim: usize,
) -> Result<HermitianOperator> {
    let total = checked_product(dims, max_dim)?;
    let mut seen = vec![false; dims.len()];
    for &s in slots {
        if s >= dims.len() || seen[s] {
            return Err(Error::InvalidParameter {
                name: "slots",
                reason: format!("invalid or repeated slot {s}"),
            });
        }
        seen[s] = true;
    }
    let sub: usize = slots.iter().map(|&s| dims[s]).product();
    check_dim(sub, op.dim())?;

    let digits = |mut idx: usize| {
        let mut out = vec![0usize; dims.len()];
        for k in (0..dims.len()).rev() {
            out[k] = idx % dims[k];
            idx /= dims[k];
        }
        out
    };
    let sub_index = |dig: &[usize]| slots.iter().fold(0usize, |acc, &s| acc * dims[s] + dig[s]);
    let all_digits: Vec<Vec<usize>> = (0..total).map(digits).collect();
    let mut m = CMatrix::zeros(total, total);
    for i in 0..total {
        for j in 0..total {
            let (di, dj) = (&all_digits[i], &all_digits[j]);
            if (0..dims.len()).all(|k| seen[k] || di[k] == dj[k]) {
                m[(i, j)] = op.matrix()[(sub_index(di), sub_index(dj))];
            }
        }
    }
    Ok(HermitianOperator::from_hermitian_unchecked(m))
}

/// Where a Hermitian matrix comes from in a structured-text config: a
/// diagonal shorthand, real/imaginary `d × d` arrays, or a separate file
/// containing either of those.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Diagonal {
        diagonal: Vec<f64>,
    },
    Dense {
        real: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        imag: Option<Vec<Vec<f64>>>,
    },
    File {
        file: PathBuf,
    },
}

/// Tolerance (relative to `max(1, |M|_F)`) for accepting file-loaded matrices
/// as Hermitian before symmetrization.
pub const LOAD_HERMITIAN_TOL: f64 = 1e-9;

impl MatrixSource {
    /// Builds the operator, resolving relative file paths against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<HermitianOperator> {
        match self {
            MatrixSource::Diagonal { diagonal } => {
                if diagonal.is_empty() || diagonal.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Source("diagonal must be a non-empty list of finite numbers".into()));
                }
                Ok(HermitianOperator::diagonal(diagonal))
            }
            MatrixSource::Dense { real, imag } => {
                let d = real.len();
                if d == 0 || real.iter().any(|r| r.len() != d) {
                    return Err(Error::Source(format!("`real` must be a square array (got {d} rows)")));
                }
                if let Some(im) = imag {
                    if im.len() != d || im.iter().any(|r| r.len() != d) {
                        return Err(Error::Source("`imag` must match the shape of `real`".into()));
                    }
                }
                let m = CMatrix::from_fn(d, d, |i, j| {
                    C64::new(real[i][j], imag.as_ref().map_or(0.0, |im| im[i][j]))
                });
                HermitianOperator::from_matrix_checked(m, LOAD_HERMITIAN_TOL)
            }
            MatrixSource::File { file } => {
                let path = match base_dir {
                    Some(b) if file.is_relative() => b.join(file),
                    _ => file.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Source(format!("{}: {e}", path.display())))?;
                let inner: MatrixSource =
                    toml::from_str(&text).map_err(|e| Error::Source(format!("{}: {e}", path.display())))?;
                if let MatrixSource::File { .. } = inner {
                    return Err(Error::Source(format!("{}: nested file reference", path.display())));
                }
                inner.load(path.parent())
            }
        }
    }

    /// Exports an operator as real/imaginary arrays.
    pub fn from_operator(op: &HermitianOperator) -> Self {
        let d = op.dim();
        let m = op.matrix();
        MatrixSource::Dense {
            real: (0..d).map(|i| (0..d).map(|j| m[(i, j)].re).collect()).collect(),
            imag: Some((0..d).map(|i| (0..d).map(|j| m[(i, j)].im).collect()).collect()),
        }
    }
}

/// Normally distributed complex state, normalized.
pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> StateVector {
    let v = DVector::from_fn(dim, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    StateVector::from_raw(v).normalized()
}

/// GUE-like Hermitian matrix with entries of order `1/√d`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> HermitianOperator {
    let s = 1.0 / (2.0 * dim as f64).sqrt();
    let m = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * s
    });
    HermitianOperator::from_hermitian_unchecked(hermitian_part(&m))
}

/// Random mixed state `M M† / Tr(M M†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let m = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let p = &m * m.adjoint();
    let tr = p.trace();
    DensityMatrix::from_matrix_unchecked(hermitian_part(&(p / tr)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pauli_x() -> HermitianOperator {
        HermitianOperator::from_matrix(CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])).unwrap()
    }

    fn pauli_y() -> HermitianOperator {
        HermitianOperator::from_matrix(CMatrix::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]))
            .unwrap()
    }

    #[test]
    fn expectation_of_identity_is_one() {
        let mut r = rng();
        for d in 2..6 {
            let z = random_state(d, &mut r).scaled(c(3.0, -2.0)).unwrap();
            let e = expectation(&HermitianOperator::identity(d), &z).unwrap();
            assert!((e - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_level_half_superposition() {
        let f = HermitianOperator::diagonal(&[0.0, 1.0]);
        let z = StateVector::uniform(2).unwrap();
        assert!((expectation(&f, &z).unwrap() - 0.5).abs() < 1e-15);
        assert!((variance(&f, &z).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn expectation_matches_double_loop() {
        let mut r = rng();
        let f = random_hermitian(4, &mut r);
        let z = random_state(4, &mut r).scaled(c(0.3, 1.7)).unwrap();
        let a = z.amplitudes();
        let mut num = ZERO;
        let mut den = 0.0;
        for al in 0..4 {
            for be in 0..4 {
                num += a[al].conj() * f.matrix()[(al, be)] * a[be];
            }
            den += a[al].norm_sqr();
        }
        assert!((expectation(&f, &z).unwrap() - num.re / den).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_composition() {
        let mut r = rng();
        for _ in 0..20 {
            let f = random_hermitian(4, &mut r);
            let z = random_state(4, &mut r);
            let e = expectation(&f, &z).unwrap();
            let e2 = expectation(&f.square(), &z).unwrap();
            assert!((variance(&f, &z).unwrap() - (e2 - e * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenstate_has_zero_variance() {
        let mut r = rng();
        let f = random_hermitian(5, &mut r);
        let (_, vecs) = eigh(f.matrix()).unwrap();
        let z = StateVector::from_dvector(vecs.column(2).into_owned()).unwrap();
        assert!(variance(&f, &z).unwrap() < 1e-20);
    }

    #[test]
    fn errors_on_mismatch_and_zero() {
        let f = HermitianOperator::identity(3);
        let z = StateVector::uniform(2).unwrap();
        assert!(matches!(expectation(&f, &z), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(StateVector::new(vec![ZERO, ZERO]), Err(Error::ZeroVector)));
        assert!(matches!(StateVector::new(vec![ONE]), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn construction_symmetrizes() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.5), c(2.0, 1.0), c(0.0, 0.0), c(3.0, 0.0)]);
        let h = HermitianOperator::from_matrix(m.clone()).unwrap();
        assert_eq!(h.matrix()[(0, 1)], h.matrix()[(1, 0)].conj());
        assert_eq!(h.matrix()[(0, 0)].im, 0.0);
        assert!(matches!(
            HermitianOperator::from_matrix_checked(m, 1e-9),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn spectral_decompose_diagonal_cases() {
        let s = spectral_decompose(&HermitianOperator::diagonal(&[0.0, 1.0, 2.0]), 1e-9).unwrap();
        assert_eq!(s.groups.len(), 3);
        for (k, g) in s.groups.iter().enumerate() {
            assert_eq!(g.multiplicity, 1);
            assert!((g.eigenvalue - k as f64).abs() < 1e-14);
            let mut expect = vec![0.0; 3];
            expect[k] = 1.0;
            let diff = g.projector.matrix() - HermitianOperator::diagonal(&expect).matrix();
            assert!(max_abs(&diff) < 1e-12);
        }
        let s = spectral_decompose(&HermitianOperator::diagonal(&[1.0, 1.0, 2.0]), 1e-9).unwrap();
        let mult: Vec<usize> = s.groups.iter().map(|g| g.multiplicity).collect();
        assert_eq!(mult, vec![2, 1]);
    }

    #[test]
    fn spectral_reconstruction_and_projector_algebra() {
        let mut r = rng();
        for _ in 0..10 {
            let h = random_hermitian(5, &mut r);
            let s = spectral_decompose(&h, default_degeneracy_tol(&h).unwrap()).unwrap();
            assert!(max_abs(&(s.reconstruct() - h.matrix())) < 1e-10);
            let mut sum = CMatrix::zeros(5, 5);
            for (i, a) in s.groups.iter().enumerate() {
                sum += a.projector.matrix();
                for (j, b) in s.groups.iter().enumerate() {
                    let prod = a.projector.matrix() * b.projector.matrix();
                    let target = if i == j { a.projector.matrix().clone() } else { CMatrix::zeros(5, 5) };
                    assert!(max_abs(&(prod - target)) < 1e-10);
                }
            }
            assert!(max_abs(&(sum - CMatrix::identity(5, 5))) < 1e-10);
        }
    }

    #[test]
    fn degenerate_spectrum_after_rotation() {
        let mut r = rng();
        let z = random_state(4, &mut r);
        let (_, u) = eigh(random_hermitian(4, &mut r).matrix()).unwrap();
        let d = HermitianOperator::diagonal(&[0.5, 0.5, 0.5, 2.0]);
        let h = HermitianOperator::from_matrix(&u * d.matrix() * u.adjoint()).unwrap();
        let s = spectral_decompose(&h, default_degeneracy_tol(&h).unwrap()).unwrap();
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[0].multiplicity, 3);
        assert!((s.groups[0].projector.matrix().trace().re - 3.0).abs() < 1e-10);
        let total: f64 = s.groups.iter().map(|g| expectation(&g.projector, &z).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pure_density_cases() {
        let rho = pure_density(&StateVector::basis(2, 0).unwrap());
        assert!(max_abs(&(rho.matrix() - HermitianOperator::diagonal(&[1.0, 0.0]).matrix())) < 1e-15);
        let rho = pure_density(&StateVector::uniform(2).unwrap());
        assert!(rho.matrix().iter().all(|e| (e - c(0.5, 0.0)).norm() < 1e-15));

        let mut r = rng();
        let z = random_state(4, &mut r);
        let a = pure_density(&z);
        let b = pure_density(&z.scaled(c(7.0, 3.0)).unwrap());
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-14);
        assert!(max_abs(&(a.matrix() * a.matrix() - a.matrix())) < 1e-10);
        assert!((a.trace() - 1.0).abs() < 1e-14);
        assert!(DensityMatrix::from_matrix(a.matrix().clone()).is_ok());
    }

    #[test]
    fn density_validation_rejects_bad_input() {
        let bad_trace = HermitianOperator::diagonal(&[1.0, 1.0]).into_matrix();
        assert!(DensityMatrix::from_matrix(bad_trace).is_err());
        let negative = HermitianOperator::diagonal(&[1.5, -0.5]).into_matrix();
        assert!(DensityMatrix::from_matrix(negative).is_err());
    }

    #[test]
    fn commutator_examples() {
        let mut r = rng();
        let f = random_hermitian(3, &mut r);
        assert!(max_abs(&commutator(&f, &f).unwrap()) < 1e-15);

        // [σx, σy] = 2iσz, by hand: σxσy = iσz and σyσx = −iσz.
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 2.0), ZERO, ZERO, c(0.0, -2.0)]);
        assert!(max_abs(&(commutator(&pauli_x(), &pauli_y()).unwrap() - expected)) < 1e-15);

        let g = random_hermitian(3, &mut r);
        let cm = commutator(&f, &g).unwrap();
        assert!(cm.trace().norm() < 1e-12);
        assert!(max_abs(&(&cm + cm.adjoint())) < 1e-14);
        let ac = anticommutator(&f, &g).unwrap();
        assert!(max_abs(&(ac.matrix() - ac.matrix().adjoint())) == 0.0);
    }

    #[test]
    fn tensor_embed_examples() {
        let id = tensor_embed(&HermitianOperator::identity(2), 1, &[3, 2, 2]).unwrap();
        assert!(max_abs(&(id.matrix() - CMatrix::identity(12, 12))) == 0.0);

        let e = tensor_embed(&HermitianOperator::diagonal(&[0.0, 1.0]), 0, &[2, 2]).unwrap();
        assert!(max_abs(&(e.matrix() - HermitianOperator::diagonal(&[0.0, 0.0, 1.0, 1.0]).matrix())) == 0.0);

        let mut r = rng();
        let a = tensor_embed(&random_hermitian(2, &mut r), 0, &[2, 3]).unwrap();
        let b = tensor_embed(&random_hermitian(3, &mut r), 1, &[2, 3]).unwrap();
        assert!(max_abs(&commutator(&a, &b).unwrap()) < 1e-14);

        assert!(matches!(
            tensor_embed(&HermitianOperator::identity(2), 0, &[2, 4096]),
            Err(Error::DimensionOverflow { .. })
        ));
        assert!(tensor_embed(&HermitianOperator::identity(2), 2, &[2, 2]).is_err());
    }

    #[test]
    fn embed_on_slots_matches_kronecker() {
        let mut r = rng();
        let a = random_hermitian(2, &mut r);
        let b = random_hermitian(3, &mut r);
        let joint = HermitianOperator::from_matrix(a.matrix().kronecker(b.matrix())).unwrap();
        let dims = [2, 2, 3];
        let embedded = embed_on_slots(&joint, &[0, 2], &dims, DEFAULT_MAX_DIM).unwrap();
        let direct = kron_all(&[a.matrix(), &CMatrix::identity(2, 2), b.matrix()]);
        assert!(max_abs(&(embedded.matrix() - direct)) < 1e-14);

        // Reversed slot order means the joint operator's first factor acts on slot 2.
        let joint_rev = HermitianOperator::from_matrix(b.matrix().kronecker(a.matrix())).unwrap();
        let embedded = embed_on_slots(&joint_rev, &[2, 0], &dims, DEFAULT_MAX_DIM).unwrap();
        let direct = kron_all(&[a.matrix(), &CMatrix::identity(2, 2), b.matrix()]);
        assert!(max_abs(&(embedded.matrix() - direct)) < 1e-14);
    }

    #[test]
    fn unitary_exp_is_unitary() {
        let mut r = rng();
        let h = random_hermitian(4, &mut r);
        let u = unitary_exp(h.matrix(), 0.7).unwrap();
        assert!(max_abs(&(&u * u.adjoint() - CMatrix::identity(4, 4))) < 1e-13);
        let d = unitary_exp(HermitianOperator::diagonal(&[0.0, 1.0]).matrix(), std::f64::consts::PI).unwrap();
        assert!((d[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matrix_source_loading() {
        let src: MatrixSource = toml::from_str("diagonal = [0.0, 1.0, 2.0]").unwrap();
        assert_eq!(src.load(None).unwrap(), HermitianOperator::diagonal(&[0.0, 1.0, 2.0]));

        let src: MatrixSource = toml::from_str("real = [[0.0, 1.0], [1.0, 0.0]]\nimag = [[0.0, -0.5], [0.5, 0.0]]").unwrap();
        let h = src.load(None).unwrap();
        assert_eq!(h.matrix()[(0, 1)], c(1.0, -0.5));

        let bad: MatrixSource = toml::from_str("real = [[0.0, 1.0], [2.0, 0.0]]").unwrap();
        assert!(matches!(bad.load(None), Err(Error::NotHermitian(_))));

        let dir = std::env::temp_dir().join(format!("collapse-core-src-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("h.toml"), "diagonal = [1.0, 3.0]").unwrap();
        let file: MatrixSource = toml::from_str("file = \"h.toml\"").unwrap();
        assert_eq!(file.load(Some(&dir)).unwrap(), HermitianOperator::diagonal(&[1.0, 3.0]));
        std::fs::remove_dir_all(&dir).ok();

        let round = MatrixSource::from_operator(&h);
        assert_eq!(round.load(None).unwrap(), h);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state_strategy(d: usize) -> impl Strategy<Value = StateVector> {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d)
                .prop_filter_map("nonzero", |v| StateVector::new(v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).ok())
        }

        proptest! {
            #[test]
            fn expectation_is_ray_invariant(z in state_strategy(4), seed in 0u64..1000, re in -5.0f64..5.0, im in -5.0f64..5.0) {
                prop_assume!(re * re + im * im > 1e-3);
                let f = random_hermitian(4, &mut ChaCha8Rng::seed_from_u64(seed));
                let a = expectation(&f, &z).unwrap();
                let b = expectation(&f, &z.scaled(C64::new(re, im)).unwrap()).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn pure_density_reproduces_expectation(z in state_strategy(3), seed in 0u64..1000) {
                let h = random_hermitian(3, &mut ChaCha8Rng::seed_from_u64(seed));
                let rho = pure_density(&z);
                prop_assert!((rho.expectation(&h).unwrap() - expectation(&h, &z).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn zero_variance_iff_eigenvector(seed in 0u64..500, mix in 0.0f64..1.0) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let f = random_hermitian(3, &mut r);
                let (_, vecs) = eigh(f.matrix()).unwrap();
                // Mixing two eigenvectors: variance vanishes only at the endpoints.
                let v = vecs.column(0) * C64::new(mix.sqrt(), 0.0) + vecs.column(1) * C64::new((1.0 - mix).sqrt(), 0.0);
                let z = StateVector::from_dvector(v).unwrap();
                let mean = expectation(&f, &z).unwrap();
                let resid = (f.matrix() * z.as_dvector() - z.as_dvector() * C64::new(mean, 0.0)).norm() / z.norm();
                let var = variance(&f, &z).unwrap();
                prop_assert_eq!(var < 1e-16, resid < 1e-8);
            }
        }
    }
}
