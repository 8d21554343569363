//! Tensor-product systems: composite Hamiltonians, product states, reduced
//! purities, the entangling term of the product-state density dynamics, and
//! the system–apparatus–environment pointer scenario.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ensemble::{born_test_with_targets, martingale_test, run_ensemble_scheduled, BornReport, EnsembleOptions, EnsembleResult, Extras, MartingaleReport};
use crate::error::{Error, Result};
use crate::linalg::{
    comm, embed_on_slots, kron_all, tensor_embed_with_max, CMatrix, HermitianOperator, StateVector, C64, DEFAULT_MAX_DIM,
};
use crate::sde::{HamiltonianSchedule, SdeConfig};

/// An operator acting on the joint factor of `slots` (in the listed order).
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub slots: Vec<usize>,
    pub op: HermitianOperator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSpec {
    pub dims: Vec<usize>,
    pub hamiltonians: Vec<HermitianOperator>,
    pub interactions: Vec<Interaction>,
    pub max_dim: usize,
}

impl CompositeSpec {
    pub fn new(hamiltonians: Vec<HermitianOperator>) -> Self {
        Self {
            dims: hamiltonians.iter().map(|h| h.dim()).collect(),
            hamiltonians,
            interactions: Vec::new(),
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }
}

/// `Σ_ℓ I⊗…⊗H_ℓ⊗…⊗I + Σ interactions`.
pub fn build_composite(spec: &CompositeSpec) -> Result<(HermitianOperator, Vec<usize>)> {
    if spec.dims.is_empty() || spec.dims.len() != spec.hamiltonians.len() {
        return Err(Error::InvalidParameter {
            name: "subsystems",
            reason: format!("{} dims for {} Hamiltonians", spec.dims.len(), spec.hamiltonians.len()),
        });
    }
    let mut total: Option<HermitianOperator> = None;
    for (slot, h) in spec.hamiltonians.iter().enumerate() {
        let term = tensor_embed_with_max(h, slot, &spec.dims, spec.max_dim)?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    let mut total = total.expect("at least one subsystem");
    for it in &spec.interactions {
        total = total.add(&embed_on_slots(&it.op, &it.slots, &spec.dims, spec.max_dim)?)?;
    }
    Ok((total, spec.dims.clone()))
}

/// Kronecker product of subsystem states, renormalized.
pub fn product_state(states: &[StateVector]) -> Result<StateVector> {
    if states.is_empty() {
        return Err(Error::InvalidParameter {
            name: "states",
            reason: "need at least one factor".into(),
        });
    }
    let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
    for s in states {
        v = v.kronecker(s.as_dvector());
    }
    StateVector::from_dvector(v)
}

fn check_slot(dims: &[usize], slot: usize, len: usize) -> Result<(usize, usize)> {
    if slot >= dims.len() {
        return Err(Error::InvalidParameter {
            name: "keep_slot",
            reason: format!("slot {slot} out of range for {} subsystems", dims.len()),
        });
    }
    let total: usize = dims.iter().product();
    if total != len {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: len,
        });
    }
    let stride: usize = dims[slot + 1..].iter().product();
    Ok((stride, dims[slot]))
}

/// Partial trace of `|z⟩⟨z|/⟨z|z⟩` onto `keep_slot`.
pub fn reduced_density_of_amplitudes(z: &[C64], dims: &[usize], keep_slot: usize) -> Result<CMatrix> {
    let (stride, d) = check_slot(dims, keep_slot, z.len())?;
    let n2: f64 = z.iter().map(|c| c.norm_sqr()).sum();
    let mut r = CMatrix::zeros(d, d);
    for (i, zi) in z.iter().enumerate() {
        let a = (i / stride) % d;
        let base = i - a * stride;
        for b in 0..d {
            r[(a, b)] += zi * z[base + b * stride].conj();
        }
    }
    Ok(r / C64::new(n2, 0.0))
}

pub fn reduced_density(z: &StateVector, dims: &[usize], keep_slot: usize) -> Result<CMatrix> {
    reduced_density_of_amplitudes(z.amplitudes(), dims, keep_slot)
}

/// Partial trace of a joint density matrix onto `keep_slot`.
pub fn reduced_density_of_matrix(rho: &CMatrix, dims: &[usize], keep_slot: usize) -> Result<CMatrix> {
    let (stride, d) = check_slot(dims, keep_slot, rho.nrows())?;
    let mut r = CMatrix::zeros(d, d);
    for i in 0..rho.nrows() {
        let a = (i / stride) % d;
        let base = i - a * stride;
        for b in 0..d {
            r[(a, b)] += rho[(i, base + b * stride)];
        }
    }
    Ok(r)
}

/// `Tr ρ_keep²`; 1 for unentangled slots, at least `1/d_keep` always.
pub fn reduced_purity(z: &StateVector, dims: &[usize], keep_slot: usize) -> Result<f64> {
    let r = reduced_density(z, dims, keep_slot)?;
    Ok(crate::linalg::purity(&r))
}

pub fn reduced_purity_of_matrix(rho: &CMatrix, dims: &[usize], keep_slot: usize) -> Result<f64> {
    let r = reduced_density_of_matrix(rho, dims, keep_slot)?;
    Ok(crate::linalg::purity(&r))
}

/// `−(σ²/4) [H₁,ρ₁] ⊗ [H₂,ρ₂]`, the coefficient of `dt` in the joint density
/// increment of a product state that is not accounted for by the two local
/// increments.
pub fn entangling_term(
    rho1: &CMatrix,
    rho2: &CMatrix,
    h1: &HermitianOperator,
    h2: &HermitianOperator,
    sigma: f64,
) -> Result<CMatrix> {
    for (r, h) in [(rho1, h1), (rho2, h2)] {
        if r.nrows() != h.dim() || r.ncols() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                found: r.nrows(),
            });
        }
    }
    let c1 = comm(h1.matrix(), rho1);
    let c2 = comm(h2.matrix(), rho2);
    Ok(kron_all(&[&c1, &c2]) * C64::new(-0.25 * sigma * sigma, 0.0))
}

/// Extras evaluating the reduced purity of every slot.
pub fn purity_extras(dims: &[usize]) -> Extras {
    let dims = dims.to_vec();
    Extras {
        names: (0..dims.len()).map(|k| format!("purity_slot_{k}")).collect(),
        eval: Arc::new(move |z: &[C64]| {
            (0..dims.len())
                .map(|k| {
                    reduced_density_of_amplitudes(z, &dims, k)
                        .map(|r| crate::linalg::purity(&r))
                        .unwrap_or(f64::NAN)
                })
                .collect()
        }),
    }
}

#[derive(Clone, Debug)]
pub struct PersistenceReport {
    /// Smallest purity of each slot over all trajectories and grid times.
    pub min_purity: Vec<f64>,
    /// Per slot: fraction of trajectories whose purity fell below
    /// `1 − entangled_threshold` at some grid time.
    pub entangled_fraction: Vec<f64>,
    /// Per slot: smallest terminal purity among classified trajectories.
    pub min_terminal_purity: Vec<f64>,
    pub result: EnsembleResult,
}

/// Collapse ensemble from a product of subsystem states without
/// interactions, tracking every slot's reduced purity.
pub fn eigenstate_persistence_run(
    spec: &CompositeSpec,
    states: &[StateVector],
    cfg: &SdeConfig,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
    entangled_threshold: f64,
) -> Result<PersistenceReport> {
    if !spec.interactions.is_empty() {
        return Err(Error::InvalidParameter {
            name: "interactions",
            reason: "eigenstate persistence is defined for non-interacting subsystems".into(),
        });
    }
    let (h, dims) = build_composite(spec)?;
    let z0 = product_state(states)?;
    if z0.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: z0.dim(),
        });
    }
    let mut opts = opts.clone();
    opts.extras = Some(purity_extras(&dims));
    opts.keep_final_states = true;
    let result = run_ensemble_scheduled(&z0, &HamiltonianSchedule::constant(h), cfg, n_traj, master_seed, &opts)?;
    let k = dims.len();
    let mut min_purity = vec![f64::INFINITY; k];
    let mut below = vec![0usize; k];
    let mut min_terminal = vec![f64::INFINITY; k];
    let mut ok = 0usize;
    for t in result.terminals.iter().filter(|t| t.error.is_none()) {
        ok += 1;
        for s in 0..k {
            min_purity[s] = min_purity[s].min(t.extra_min[s]);
            if t.extra_min[s] < 1.0 - entangled_threshold {
                below[s] += 1;
            }
            if let (Some(_), Some(z)) = (t.class, &t.final_state) {
                min_terminal[s] = min_terminal[s].min(reduced_purity(z, &dims, s)?);
            }
        }
    }
    Ok(PersistenceReport {
        min_purity,
        entangled_fraction: below.iter().map(|&b| b as f64 / ok.max(1) as f64).collect(),
        min_terminal_purity: min_terminal,
        result,
    })
}

/// System ⊗ apparatus ⊗ environment measurement model.
///
/// `H_SA = g (|0⟩⟨0|_S ⊗ σz_A + |1⟩⟨1|_S ⊗ σx_A)` acts for `window`; with
/// `g·window = π/2` it maps `|1⟩_S|A₀⟩` to `|1⟩_S|A₁⟩` and only rephases
/// `|0⟩_S|A₀⟩`. Since `H_SA² = g²`, a discretized step inflates the norm
/// equally in both system sectors and renormalization does not shift the
/// pointer weights. `H_AE = λ |A₁⟩⟨A₁| ⊗ diag(env_levels)` acts throughout,
/// all other terms vanish, and the collapse operator is `H_AE`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerParams {
    /// Real system amplitudes on `|0⟩_S, |1⟩_S` (normalized internally).
    pub system_amplitudes: Vec<f64>,
    #[serde(default = "default_coupling")]
    pub lambda: f64,
    #[serde(default = "default_env_levels")]
    pub env_levels: Vec<f64>,
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_coupling() -> f64 {
    1.0
}

fn default_env_levels() -> Vec<f64> {
    vec![1.0, 2.0]
}

fn default_window() -> f64 {
    0.02
}

impl Default for PointerParams {
    fn default() -> Self {
        Self {
            system_amplitudes: vec![0.5f64.sqrt(), 0.5f64.sqrt()],
            lambda: default_coupling(),
            env_levels: default_env_levels(),
            window: default_window(),
        }
    }
}

/// Everything needed to run the pointer scenario.
#[derive(Clone, Debug)]
pub struct PointerSetup {
    pub dims: Vec<usize>,
    pub schedule: HamiltonianSchedule,
    pub collapse_op: HermitianOperator,
    /// `I ⊗ |A_p⟩⟨A_p| ⊗ I`.
    pub pointer_projectors: Vec<HermitianOperator>,
    pub z0: StateVector,
    /// Ideal pointer weights `|α_p|²` after the entangling window.
    pub targets: Vec<f64>,
}

pub fn pointer_scenario(params: &PointerParams) -> Result<PointerSetup> {
    if params.system_amplitudes.len() != 2 {
        return Err(Error::InvalidParameter {
            name: "system_amplitudes",
            reason: format!("need 2 amplitudes, got {}", params.system_amplitudes.len()),
        });
    }
    if !(params.window > 0.0) || !(params.lambda > 0.0) || !params.lambda.is_finite() {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: "window and lambda must be positive".into(),
        });
    }
    let ne = params.env_levels.len();
    if ne < 2 {
        return Err(Error::DimensionTooSmall(ne));
    }
    let dims = vec![2, 2, ne];
    let system = StateVector::from_real(&params.system_amplitudes)?;
    let z0 = product_state(&[system.clone(), StateVector::basis(2, 0)?, StateVector::uniform(ne)?])?;

    let g = std::f64::consts::FRAC_PI_2 / params.window;
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let sx = CMatrix::from_row_slice(2, 2, &[zero, one, one, zero]);
    let sz = CMatrix::from_row_slice(2, 2, &[one, zero, zero, -one]);
    let p0 = HermitianOperator::diagonal(&[1.0, 0.0]);
    let p1 = HermitianOperator::diagonal(&[0.0, 1.0]);
    let h_sa = HermitianOperator::from_matrix(
        (kron_all(&[p0.matrix(), &sz]) + kron_all(&[p1.matrix(), &sx])) * C64::new(g, 0.0),
    )?;
    let env = HermitianOperator::diagonal(&params.env_levels);
    let h_ae = HermitianOperator::from_matrix(kron_all(&[p1.matrix(), env.matrix()]) * C64::new(params.lambda, 0.0))?;
    let spec = CompositeSpec {
        dims: dims.clone(),
        hamiltonians: dims.iter().map(|&d| HermitianOperator::zeros(d)).collect(),
        interactions: vec![
            Interaction {
                slots: vec![1, 2],
                op: h_ae.clone(),
            },
        ],
        max_dim: DEFAULT_MAX_DIM,
    };
    let (h_final, _) = build_composite(&spec)?;
    let h_window = h_final.add(&embed_on_slots(&h_sa, &[0, 1], &dims, DEFAULT_MAX_DIM)?)?;
    let pointer_projectors = (0..2)
        .map(|p| {
            let mut d = [0.0; 2];
            d[p] = 1.0;
            tensor_embed_with_max(&HermitianOperator::diagonal(&d), 1, &dims, DEFAULT_MAX_DIM)
        })
        .collect::<Result<Vec<_>>>()?;
    let amps = system.amplitudes();
    Ok(PointerSetup {
        dims,
        schedule: HamiltonianSchedule {
            segments: vec![(params.window, h_window)],
            final_h: h_final.clone(),
        },
        collapse_op: h_final,
        pointer_projectors,
        z0,
        targets: vec![amps[0].norm_sqr(), amps[1].norm_sqr()],
    })
}

#[derive(Clone, Debug)]
pub struct PointerReport {
    pub born: BornReport,
    pub martingales: Vec<MartingaleReport>,
    pub pass: bool,
    pub result: EnsembleResult,
}

/// Runs the pointer scenario and checks terminal pointer frequencies against
/// the ideal weights, plus conservation of each mean `(Π_p)` after the window.
pub fn run_pointer_scenario(
    params: &PointerParams,
    cfg: &SdeConfig,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<PointerReport> {
    let setup = pointer_scenario(params)?;
    let cfg = cfg.clone().with_collapse_ops(vec![setup.collapse_op.clone()]);
    let mut opts = opts.clone();
    opts.classifiers = Some(setup.pointer_projectors.clone());
    let result = run_ensemble_scheduled(&setup.z0, &setup.schedule, &cfg, n_traj, master_seed, &opts)?;
    let born = born_test_with_targets(&result, &setup.targets)?;
    let martingales = setup
        .pointer_projectors
        .iter()
        .enumerate()
        .map(|(p, op)| martingale_test(&result, &format!("Pi_{p}"), op))
        .collect::<Result<Vec<_>>>()?;
    let pass = born.pass && martingales.iter().all(|m| m.pass);
    Ok(PointerReport {
        born,
        martingales,
        pass,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_state, variance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_level() -> HermitianOperator {
        HermitianOperator::diagonal(&[0.0, 1.0])
    }

    #[test]
    fn kronecker_sum_of_two_levels() {
        let (h, dims) = build_composite(&CompositeSpec::new(vec![two_level(), two_level()])).unwrap();
        assert_eq!(dims, vec![2, 2]);
        assert_eq!(h.as_diagonal().unwrap(), vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let mut spec = CompositeSpec::new(vec![two_level(), two_level(), two_level()]);
        spec.max_dim = 4;
        assert!(matches!(build_composite(&spec), Err(Error::DimensionOverflow { product: 8, max: 4 })));
    }

    #[test]
    fn expectation_and_variance_add_on_product_states() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let hs: Vec<HermitianOperator> = [2, 3, 2].iter().map(|&d| crate::linalg::random_hermitian(d, &mut r)).collect();
        let (h, _) = build_composite(&CompositeSpec::new(hs.clone())).unwrap();
        let zs: Vec<StateVector> = [2, 3, 2].iter().map(|&d| random_state(d, &mut r)).collect();
        let z = product_state(&zs).unwrap();
        let e: f64 = hs.iter().zip(&zs).map(|(h, z)| crate::linalg::expectation(h, z).unwrap()).sum();
        let v: f64 = hs.iter().zip(&zs).map(|(h, z)| variance(h, z).unwrap()).sum();
        assert!((crate::linalg::expectation(&h, &z).unwrap() - e).abs() < 1e-12);
        assert!((variance(&h, &z).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn product_state_examples() {
        let e0 = StateVector::basis(2, 0).unwrap();
        let z = product_state(&[e0.clone(), e0]).unwrap();
        assert_eq!(z, StateVector::basis(4, 0).unwrap());
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let a = [random_state(2, &mut r), random_state(3, &mut r)];
        let b = [random_state(2, &mut r), random_state(3, &mut r)];
        let za = product_state(&a).unwrap();
        let zb = product_state(&b).unwrap();
        assert!((za.norm() - 1.0).abs() < 1e-12);
        let f = a[0].fidelity(&b[0]).unwrap() * a[1].fidelity(&b[1]).unwrap();
        assert!((za.fidelity(&zb).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn reduced_purity_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let z = product_state(&[random_state(2, &mut r), random_state(3, &mut r)]).unwrap();
        for slot in 0..2 {
            assert!((reduced_purity(&z, &[2, 3], slot).unwrap() - 1.0).abs() < 1e-12);
        }
        let bell = StateVector::from_real(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((reduced_purity(&bell, &[2, 2], 0).unwrap() - 0.5).abs() < 1e-15);
        for _ in 0..20 {
            let z = random_state(6, &mut r);
            for (slot, d) in [(0, 2.0), (1, 3.0)] {
                let p = reduced_purity(&z, &[2, 3], slot).unwrap();
                assert!(p >= 1.0 / d - 1e-12 && p <= 1.0 + 1e-12);
            }
            let rho = crate::linalg::pure_density(&z);
            let a = reduced_density(&z, &[2, 3], 1).unwrap();
            let b = reduced_density_of_matrix(rho.matrix(), &[2, 3], 1).unwrap();
            assert!(crate::linalg::max_abs(&(a - b)) < 1e-14);
        }
        assert!(reduced_purity(&bell, &[2, 2], 2).is_err());
    }

    #[test]
    fn entangling_term_vanishes_for_eigenstates() {
        let rho1 = crate::linalg::pure_density(&StateVector::basis(2, 1).unwrap());
        let rho2 = crate::linalg::pure_density(&StateVector::uniform(2).unwrap());
        let t = entangling_term(rho1.matrix(), rho2.matrix(), &two_level(), &two_level(), 1.0).unwrap();
        assert_eq!(crate::linalg::max_abs(&t), 0.0);
        let t = entangling_term(rho2.matrix(), rho2.matrix(), &two_level(), &two_level(), 1.0).unwrap();
        assert!(t.norm() > 0.01);
    }

    #[test]
    fn pointer_setup_is_consistent() {
        let setup = pointer_scenario(&PointerParams {
            system_amplitudes: vec![0.7f64.sqrt(), 0.3f64.sqrt()],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(setup.z0.dim(), 8);
        for p in &setup.pointer_projectors {
            assert!(comm(p.matrix(), setup.collapse_op.matrix()).norm() < 1e-15);
        }
        assert!((setup.targets[0] - 0.7).abs() < 1e-12);
        // The window Hamiltonian alone moves the weight of |1⟩_S onto |A₁⟩.
        let (_, h) = &setup.schedule.segments[0];
        let u = crate::linalg::unitary_exp(h.matrix(), 0.02).unwrap();
        let z = StateVector::from_dvector(u * setup.z0.as_dvector()).unwrap();
        let p1 = crate::linalg::expectation(&setup.pointer_projectors[1], &z).unwrap();
        // H_AE also rotates phases in the A₁ sector but leaves the weight unchanged.
        assert!((p1 - 0.3).abs() < 1e-3, "p1 = {p1}");
    }
}
