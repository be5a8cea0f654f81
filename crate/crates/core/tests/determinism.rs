use sdde_core::{benchmark_matrix, simulate_ensemble, ExperimentConfig, MatrixAxes, NoisePlan, TimeGrid};

fn strip_timing(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn repeated_benchmark_gives_identical_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::logistic_default(9);
    cfg.paths = 8;
    cfg.eps = 0.05;
    cfg.grid.t_end = 4.0;
    let mut texts = Vec::new();
    for k in 0..2 {
        cfg.output = Some(dir.path().join(format!("run{k}")));
        benchmark_matrix(&cfg, &MatrixAxes::full()).unwrap();
        texts.push(std::fs::read_to_string(dir.path().join(format!("run{k}/ledger.csv"))).unwrap());
    }
    assert_eq!(strip_timing(&texts[0]), strip_timing(&texts[1]));
    assert_eq!(texts[0].lines().count(), 25);
}

#[test]
fn ensembles_are_reproducible_and_streams_differ() {
    let spec = sdde_core::BenchmarkModel::by_name("logistic").unwrap().spec().unwrap();
    let grid = TimeGrid::new(0.0, 0.01, 300).unwrap();
    let plan = NoisePlan::for_grid(1, 0.01, 0.01, 42).unwrap();
    let a = simulate_ensemble(&spec, &grid, &plan, 4).unwrap();
    let b = simulate_ensemble(&spec, &grid, &plan, 4).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.states(), y.states());
    }
    assert_ne!(a[0].states(), a[1].states());
}
