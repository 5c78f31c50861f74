use dprp_cli::config::{ExperimentConfig, RGrid};
use dprp_cli::sweeps::{channel_draw, sweep_convergence, sweep_ldp, sweep_tradeoff, to_csv};
use dprp_core::privacy::jl_min_dim;

fn large_coarse() -> ExperimentConfig {
    let mut config = ExperimentConfig::large();
    config.r_grid = RGrid { start: 100, stop: 1000, step: 100 };
    config
}

#[test]
fn channel_draws_are_reproducible_and_aligned() {
    let config = large_coarse();
    let a = channel_draw(&config, 0).unwrap();
    assert_eq!(a, channel_draw(&config, 0).unwrap());
    assert_ne!(a.kappas, channel_draw(&config, 1).unwrap().kappas);
    for ((k, g), zk) in a.kappas.iter().zip(&a.alignment.gamma).zip(&a.zeta_kappas) {
        assert!((g * k - a.alignment.kappa_min).abs() <= 1e-12 * k);
        assert!((zk - k * (1.0 - g)).abs() <= 1e-12 * k);
    }
}

#[test]
fn jl_rows_start_at_the_minimum_dimension() {
    let config = large_coarse();
    let rows = sweep_ldp(&config).unwrap();
    let r_jl = jl_min_dim(config.n, config.eps_jl, config.a).unwrap();
    let jl: Vec<usize> = rows.iter().filter(|r| r.kind == "any").map(|r| r.r).collect();
    assert_eq!(jl, (500..=1000).step_by(100).collect::<Vec<_>>());
    assert!(jl.iter().all(|&r| r >= r_jl));
    assert_eq!(rows.iter().filter(|r| r.kind == "none").count(), 10);
    for row in &rows {
        assert!((row.eps_total - row.eps_iter * config.rounds as f64).abs() <= 1e-9 * row.eps_total);
    }
}

#[test]
fn more_draws_report_a_standard_error() {
    let mut config = large_coarse();
    config.draws = 4;
    let rows = sweep_convergence(&config).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.draws == 4 && r.xi_bound_stderr > 0.0));
}

#[test]
fn tradeoff_covers_every_grid_point() {
    let config = ExperimentConfig::small();
    let rows = sweep_tradeoff(&config).unwrap();
    assert_eq!(rows.len(), config.eps_grid.len() * config.tradeoff_r.len());
    assert!(rows.iter().all(|r| r.relative_gap > 0.0));
}

#[test]
fn csv_has_a_single_header() {
    let rows = sweep_ldp(&large_coarse()).unwrap();
    let text = to_csv(&rows).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
    assert!(text.starts_with("fingerprint,r,kind,eps_iter,eps_total,delta_total,regime,draws,eps_total_stderr\n"));
}
