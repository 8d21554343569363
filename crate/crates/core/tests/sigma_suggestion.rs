use collapse_core::estimates::suggest_sigma;
use collapse_core::linalg::{expectation, variance, HermitianOperator, StateVector};
use collapse_core::sde::{evolve_trajectory, SdeConfig};

/// First grid time at which some eigenprojector expectation reaches 0.9.
fn classification_time(times: &[f64], states: &[StateVector], projectors: &[HermitianOperator]) -> Option<f64> {
    times.iter().zip(states).find_map(|(&t, z)| {
        projectors
            .iter()
            .any(|p| expectation(p, z).unwrap() >= 0.9)
            .then_some(t)
    })
}

#[test]
fn suggested_sigma_reproduces_the_target_timescale() {
    let h = HermitianOperator::diagonal(&[0.0, 1.0]);
    let z = StateVector::uniform(2).unwrap();
    let target = 100.0;
    let sigma = suggest_sigma(target, variance(&h, &z).unwrap()).unwrap();
    assert!((sigma - 0.2).abs() < 1e-12);
    let projectors = [HermitianOperator::diagonal(&[1.0, 0.0]), HermitianOperator::diagonal(&[0.0, 1.0])];
    let cfg = SdeConfig::new(sigma, 0.02, 20.0 * target);
    let mut times: Vec<f64> = (0..201)
        .map(|seed| {
            let traj = evolve_trajectory(&z, &h, &cfg, seed, 10).unwrap();
            classification_time(&traj.times, &traj.states, &projectors).unwrap_or(f64::INFINITY)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    println!("median classification time {median:.1} for target {target}");
    assert!(median <= 3.0 * target && median >= target / 3.0);
}
