use dprp_core::checks::{allocator_equivalence, brute_force_allocation, allocator_instance, run_all, CheckSettings};
use dprp_core::allocator::solve;
use dprp_core::privacy::sensitivity_tail_check;
use dprp_core::{DistributionKind, Error};

#[test]
fn suite_passes_across_root_seeds() {
    for seed in [1, 2, 3, 4, 5] {
        let settings = CheckSettings { seed, trials: 20_000, tolerance_scale: 1.0 };
        let outcomes = run_all(&settings).unwrap();
        let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.to_string()).collect();
        assert!(failed.is_empty(), "seed {seed}:\n{}", failed.join("\n"));
    }
}

#[test]
fn corrupted_tolerance_is_detected() {
    let settings = CheckSettings { seed: 1, trials: 10_000, tolerance_scale: -1.0 };
    let outcomes = allocator_equivalence(&settings, 2).unwrap();
    assert!(outcomes.iter().all(|o| !o.passed));
}

#[test]
fn tail_check_needs_enough_trials() {
    assert!(matches!(
        sensitivity_tail_check(DistributionKind::Gaussian, 10, 32, 0.01, 500, 1),
        Err(Error::TooFewTrials { .. })
    ));
}

#[test]
fn grid_search_never_beats_continuous_solution_by_more_than_rounding() {
    for seed in 0..5 {
        let problem = allocator_instance(seed).unwrap();
        let solved = solve(&problem).unwrap();
        let (r, objective) = brute_force_allocation(&problem, 0.01).unwrap().unwrap();
        assert!(solved.objective <= objective * (1.0 + 1e-9), "{} vs {}", solved.objective, objective);
        assert!(r <= solved.r_star);
    }
}
