use collapse_core::geometry::{from_chart, to_chart};
use collapse_core::linalg::{eigh, pure_density, HermitianOperator, StateVector, C64};
use collapse_core::sde::{coarsen_increments, cross_formulation, step_projective, step_state, wiener_increments, SdeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn op_norm_gap(a: &StateVector, b: &StateVector) -> f64 {
    let d = pure_density(a).into_matrix() - pure_density(b).into_matrix();
    let (ev, _) = eigh(&d).unwrap();
    ev.iter().fold(0.0f64, |m, e| m.max(e.abs()))
}

/// Largest `‖ρ_state − ρ_projective‖` over the path.
fn projective_gap(z0: &StateVector, h: &HermitianOperator, dt: f64, dw: &[f64]) -> f64 {
    let cfg = SdeConfig::new(1.0, dt, dt * dw.len() as f64);
    let mut z = z0.clone();
    let mut p = to_chart(z0).unwrap();
    let mut gap = 0.0f64;
    for &w in dw {
        z = step_state(&z, h, &cfg, &[w]).unwrap().state;
        p = step_projective(&p, h, &cfg, w).unwrap();
        gap = gap.max(op_norm_gap(&z, &from_chart(&p)));
    }
    gap
}

fn two_level() -> (HermitianOperator, StateVector) {
    (HermitianOperator::diagonal(&[0.0, 1.0]), StateVector::new(vec![C64::new(0.8, 0.0), C64::new(0.0, 0.6)]).unwrap())
}

#[test]
fn density_formulations_converge_to_the_state_path() {
    let (h, z) = two_level();
    let (mut coarse, mut fine) = (0.0, 0.0);
    for seed in 0..5 {
        let dw = wiener_increments(&mut ChaCha8Rng::seed_from_u64(seed), 5e-4, 10_000);
        let f = cross_formulation(&z, &h, 1.0, 5e-4, &dw).unwrap();
        let c = cross_formulation(&z, &h, 1.0, 1e-3, &coarsen_increments(&dw)).unwrap();
        assert!(f.max_spectrum_drift < 1e-10 && c.max_spectrum_drift < 1e-10);
        // Strong error budget: a few √dt over t ∈ [0, 5].
        assert!(c.max_gap < 3.0 * 1e-3f64.sqrt(), "gap {}", c.max_gap);
        coarse += c.max_gap;
        fine += f.max_gap;
    }
    assert!(coarse / fine >= 1.3, "ratio {}", coarse / fine);
}

#[test]
fn projective_path_converges_to_the_state_path() {
    let (h, z) = two_level();
    let h3 = HermitianOperator::diagonal(&[0.0, 0.7, 2.0]);
    let z3 = StateVector::from_real(&[0.6, 0.6, 0.52915]).unwrap();
    for (h, z) in [(h, z), (h3, z3)] {
        let (mut coarse, mut fine) = (0.0, 0.0);
        for seed in 0..8 {
            let dw = wiener_increments(&mut ChaCha8Rng::seed_from_u64(100 + seed), 2.5e-4, 20_000);
            let c = projective_gap(&z, &h, 1e-3, &coarsen_increments(&coarsen_increments(&dw)));
            assert!(c < 3.0 * 1e-3f64.sqrt(), "gap {c}");
            coarse += c;
            fine += projective_gap(&z, &h, 2.5e-4, &dw);
        }
        println!("d={} projective gap ratio for dt/4: {:.3}", h.dim(), coarse / fine);
        assert!(coarse / fine >= 1.5);
    }
}
