mod common;

use common::*;
use sdde_core::{EstimatorMethod, TimeGrid};

#[test]
fn every_method_targets_g_squared() {
    for (m, mean) in mean_covariances(100_000, 11) {
        assert!((mean / 0.09 - 1.0).abs() < 0.05, "{m}: {mean}");
    }
}

#[test]
fn single_increment_example() {
    // One increment of 0.02 over 0.01 gives 0.04 for KM.
    let grid = TimeGrid::new(0.0, 0.01, 12).unwrap();
    let states: Vec<f64> = (0..12).map(|i| 0.02 * i as f64).collect();
    let traj = sdde_core::Trajectory::new(grid, states, sdde_core::History::constant(&[0.0], 1.0)).unwrap();
    let c = sdde_core::cov_estimate(EstimatorMethod::Km, &traj, 0, None).unwrap();
    assert!((c[0] - 0.04).abs() < 1e-12);
}
