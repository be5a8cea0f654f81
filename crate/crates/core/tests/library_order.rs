use sdde_core::{polynomial_library, BenchmarkModel};

#[test]
fn scalar_terms_follow_graded_order() {
    let lib = polynomial_library(1, 2, true).unwrap();
    assert_eq!(lib.names(), ["1", "X(t)", "X(t-tau)", "X(t)^2", "X(t)X(t-tau)", "X(t-tau)^2"]);
    assert_eq!(lib.position("X(t)"), Some(1));
    assert_eq!(lib.position("X(t)^2"), Some(3));
    assert_eq!(lib.position("X(t)X(t-tau)"), Some(4));
}

#[test]
fn two_species_cross_terms() {
    let lib = polynomial_library(2, 2, true).unwrap();
    assert_eq!(lib.len(), 15);
    assert_eq!(lib.position("X(t)Y(t-tau)"), Some(8));
    assert_eq!(lib.position("Y(t)X(t-tau)"), Some(10));
}

#[test]
fn truth_terms_live_in_default_libraries() {
    for name in ["logistic", "predator_prey", "option_pricing"] {
        let m = BenchmarkModel::by_name(name).unwrap();
        let (f, g) = m.default_libraries();
        let t = m.truth();
        assert!(t.drift.iter().flat_map(|c| c.keys()).all(|k| f.position(k).is_some()));
        assert!(t.cov.iter().flat_map(|c| c.keys()).all(|k| g.position(k).is_some()));
    }
}
