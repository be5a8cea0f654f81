//! Candidate-function libraries over the augmented state `z = (x, x_tau)`.
//!
//! Polynomial terms are ordered by degree; within a degree, monomials follow
//! the lexicographic order of their non-decreasing variable-index tuples, with
//! current states before delayed states. For one state this gives
//! `1, X, X_tau, X^2, X X_tau, X_tau^2`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::data::AugmentedSample;
use crate::error::{Error, Result};

pub type TermMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A named scalar map on `R^{2n}`. Values outside its domain must be
/// non-finite; evaluation reports them as errors.
#[derive(Clone)]
pub struct CustomTerm {
    pub name: String,
    pub map: TermMap,
}

impl CustomTerm {
    pub fn new(name: impl Into<String>, map: TermMap) -> Self {
        Self {
            name: name.into(),
            map,
        }
    }
}

impl fmt::Debug for CustomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomTerm({})", self.name)
    }
}

/// Monomial in the `2n` augmented variables, optionally multiplied by a
/// custom factor.
#[derive(Clone, Debug)]
pub struct BasisTerm {
    pub name: String,
    pub exponents: Vec<u32>,
    pub factor: Option<CustomTerm>,
}

impl BasisTerm {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_monomial(&self) -> bool {
        self.factor.is_none()
    }

    pub fn kind(&self) -> &'static str {
        match (&self.factor, self.degree()) {
            (None, _) => "monomial",
            (Some(_), 0) => "custom",
            (Some(_), _) => "product",
        }
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut v = 1.0;
        for (x, &e) in z.iter().zip(&self.exponents) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        if let Some(f) = &self.factor {
            v *= (f.map)(z);
        }
        v
    }
}

/// How [`with_custom_terms`] places extra terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// After all existing terms.
    Append,
    /// For each extra term in turn, one copy of every existing monomial
    /// multiplied by it, appended after the existing terms.
    Tensor,
}

#[derive(Clone, Debug)]
pub struct BasisLibrary {
    terms: Vec<BasisTerm>,
    n: usize,
    degree: u32,
    delayed: bool,
}

impl BasisLibrary {
    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// State dimension `n`; samples have length `2n`.
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn uses_delay(&self) -> bool {
        self.delayed
    }

    pub fn names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    /// Zero-based position of the term called `name`.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }

    /// Writes one row of the design matrix. On failure returns the offending
    /// term position.
    #[inline]
    pub fn evaluate_into(&self, z: &[f64], out: &mut [f64]) -> std::result::Result<(), usize> {
        for (j, term) in self.terms.iter().enumerate() {
            let v = term.eval(z);
            if !v.is_finite() {
                return Err(j);
            }
            out[j] = v;
        }
        Ok(())
    }

    pub fn evaluate_point(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_vars() {
            return Err(Error::arg(format!(
                "sample has dimension {}, library expects {}",
                z.len(),
                self.n_vars()
            )));
        }
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(z, &mut out).map_err(|j| Error::Evaluation {
            sample: 0,
            term: self.terms[j].name.clone(),
        })?;
        Ok(out)
    }

    /// Audit dump: `index,name,kind` with 1-based indices.
    pub fn write_description<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,name,kind")?;
        for (j, t) in self.terms.iter().enumerate() {
            writeln!(w, "{},\"{}\",{}", j + 1, t.name, t.kind())?;
        }
        Ok(())
    }
}

fn variable_names(n: usize) -> Vec<String> {
    let base: Vec<String> = match n {
        1 => vec!["X".into()],
        2 => vec!["X".into(), "Y".into()],
        3 => vec!["X".into(), "Y".into(), "Z".into()],
        _ => (1..=n).map(|i| format!("X{i}")).collect(),
    };
    base.iter()
        .map(|b| format!("{b}(t)"))
        .chain(base.iter().map(|b| format!("{b}(t-tau)")))
        .collect()
}

fn monomial_name(exponents: &[u32], vars: &[String]) -> String {
    let mut s = String::new();
    for (v, &e) in vars.iter().zip(exponents) {
        match e {
            0 => {}
            1 => s.push_str(v),
            _ => s.push_str(&format!("{v}^{e}")),
        }
    }
    if s.is_empty() {
        "1".into()
    } else {
        s
    }
}

/// Non-decreasing index tuples of length `k` over `0..vars`, lexicographic.
fn index_tuples(vars: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, vars: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for v in start..vars {
            cur.push(v);
            rec(v, vars, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, vars, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// All monomials of total degree `<= d` in the current states (and the
/// delayed states when `delayed`), in canonical graded order.
pub fn polynomial_library(n: usize, d: u32, delayed: bool) -> Result<BasisLibrary> {
    if n == 0 {
        return Err(Error::arg("state dimension must be at least 1"));
    }
    let vars = variable_names(n);
    let active = if delayed { 2 * n } else { n };
    let mut terms = Vec::new();
    for k in 0..=d as usize {
        for tuple in index_tuples(active, k) {
            let mut exponents = vec![0u32; 2 * n];
            for v in tuple {
                exponents[v] += 1;
            }
            terms.push(BasisTerm {
                name: monomial_name(&exponents, &vars),
                exponents,
                factor: None,
            });
        }
    }
    Ok(BasisLibrary {
        terms,
        n,
        degree: d,
        delayed,
    })
}

/// Adds named custom terms. Term names must stay unique.
pub fn with_custom_terms(lib: &BasisLibrary, extra: &[CustomTerm], placement: Placement) -> Result<BasisLibrary> {
    let mut out = lib.clone();
    match placement {
        Placement::Append => {
            for e in extra {
                out.terms.push(BasisTerm {
                    name: e.name.clone(),
                    exponents: vec![0; lib.n_vars()],
                    factor: Some(e.clone()),
                });
            }
        }
        Placement::Tensor => {
            let monomials: Vec<BasisTerm> = lib.terms.iter().filter(|t| t.is_monomial()).cloned().collect();
            for e in extra {
                for m in &monomials {
                    let name = if m.degree() == 0 {
                        e.name.clone()
                    } else {
                        format!("{} {}", m.name, e.name)
                    };
                    out.terms.push(BasisTerm {
                        name,
                        exponents: m.exponents.clone(),
                        factor: Some(e.clone()),
                    });
                }
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for t in &out.terms {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::arg(format!("duplicate library term `{}`", t.name)));
        }
    }
    Ok(out)
}

/// Design matrix `Theta` with entry `(i, j) = theta_j(z_i)`.
pub fn evaluate_library(lib: &BasisLibrary, samples: &[AugmentedSample]) -> Result<DMatrix<f64>> {
    let p = lib.len();
    let mut theta = DMatrix::zeros(samples.len(), p);
    let mut row = vec![0.0; p];
    for (i, s) in samples.iter().enumerate() {
        if s.z.len() != lib.n_vars() {
            return Err(Error::arg(format!(
                "sample {i} has dimension {}, library expects {}",
                s.z.len(),
                lib.n_vars()
            )));
        }
        lib.evaluate_into(&s.z, &mut row).map_err(|j| Error::Evaluation {
            sample: i,
            term: lib.terms[j].name.clone(),
        })?;
        for j in 0..p {
            theta[(i, j)] = row[j];
        }
    }
    Ok(theta)
}

pub const OPTION_LOG_TERM: &str = "ln(X(t)/X(t-tau))";
pub const OPTION_LOG2_TERM: &str = "X(t)^2 ln^2(X(t)/X(t-tau))";

/// `ln(x / x_tau)` for a scalar state; NaN off the positive quadrant.
pub fn log_ratio_term() -> CustomTerm {
    CustomTerm::new(
        OPTION_LOG_TERM,
        Arc::new(|z| if z[0] > 0.0 && z[1] > 0.0 { (z[0] / z[1]).ln() } else { f64::NAN }),
    )
}

pub fn log_ratio_squared_term() -> CustomTerm {
    CustomTerm::new(
        "ln^2(X(t)/X(t-tau))",
        Arc::new(|z| {
            if z[0] > 0.0 && z[1] > 0.0 {
                let l = (z[0] / z[1]).ln();
                l * l
            } else {
                f64::NAN
            }
        }),
    )
}

/// Degree-1 polynomials in `(X, X_tau)` plus `ln(X / X_tau)`.
pub fn option_drift_library() -> BasisLibrary {
    let base = polynomial_library(1, 1, true).expect("valid degree");
    with_custom_terms(&base, &[log_ratio_term()], Placement::Append).expect("unique names")
}

/// Degree-4 polynomials in `(X, X_tau)` times `{1, ln, ln^2}` of `X / X_tau`.
pub fn option_diffusion_library() -> BasisLibrary {
    let base = polynomial_library(1, 4, true).expect("valid degree");
    with_custom_terms(&base, &[log_ratio_term(), log_ratio_squared_term()], Placement::Tensor)
        .expect("unique names")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn scalar_degree_two_ordering() {
        let lib = polynomial_library(1, 2, true).unwrap();
        assert_eq!(
            lib.names(),
            vec!["1", "X(t)", "X(t-tau)", "X(t)^2", "X(t)X(t-tau)", "X(t-tau)^2"]
        );
        // Table indices are 1-based.
        assert_eq!(lib.position("X(t)"), Some(1));
        assert_eq!(lib.position("X(t)^2"), Some(3));
        assert_eq!(lib.position("X(t)X(t-tau)"), Some(4));
    }

    #[test]
    fn planar_degree_two_ordering() {
        let lib = polynomial_library(2, 2, true).unwrap();
        assert_eq!(lib.len(), 15);
        assert_eq!(lib.position("X(t)Y(t-tau)"), Some(8));
        assert_eq!(lib.position("Y(t)X(t-tau)"), Some(10));
        assert_eq!(lib.position("Y(t)^2"), Some(9));
        assert_eq!(lib.position("X(t)^2"), Some(5));
    }

    #[test]
    fn degree_zero_is_constant() {
        let lib = polynomial_library(3, 0, true).unwrap();
        assert_eq!(lib.names(), vec!["1"]);
    }

    #[test]
    fn term_counts_are_binomial() {
        for n in 1..4u64 {
            for d in 0..5u64 {
                let lib = polynomial_library(n as usize, d as u32, true).unwrap();
                assert_eq!(lib.len() as u64, binom(2 * n + d, d));
                let lib = polynomial_library(n as usize, d as u32, false).unwrap();
                assert_eq!(lib.len() as u64, binom(n + d, d));
            }
        }
    }

    #[test]
    fn evaluation_rows() {
        let lib = polynomial_library(1, 2, true).unwrap();
        let s = vec![
            AugmentedSample::new(0.0, vec![1.0, 1.0]).unwrap(),
            AugmentedSample::new(0.1, vec![2.0, 3.0]).unwrap(),
        ];
        let theta = evaluate_library(&lib, &s).unwrap();
        assert_eq!(theta.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 6]);
        assert_eq!(
            theta.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn option_libraries() {
        let f = option_drift_library();
        assert_eq!(f.names(), vec!["1", "X(t)", "X(t-tau)", OPTION_LOG_TERM]);
        let row = f.evaluate_point(&[100.0, 100.0]).unwrap();
        assert_eq!(row[3], 0.0);

        let g = option_diffusion_library();
        assert_eq!(g.len(), 45);
        assert!(g.position("X(t)^2").is_some());
        let k = g.position(OPTION_LOG2_TERM).unwrap();
        let e = std::f64::consts::E;
        let row = g.evaluate_point(&[2.0 * e, 2.0]).unwrap();
        assert!((row[k] - 4.0 * e * e).abs() < 1e-12);
    }

    #[test]
    fn log_term_domain_violation_names_term_and_sample() {
        let f = option_drift_library();
        let s = vec![
            AugmentedSample::new(0.0, vec![1.0, 1.0]).unwrap(),
            AugmentedSample::new(0.0, vec![-1.0, 1.0]).unwrap(),
        ];
        match evaluate_library(&f, &s) {
            Err(Error::Evaluation { sample, term }) => {
                assert_eq!(sample, 1);
                assert_eq!(term, OPTION_LOG_TERM);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn custom_terms_placement() {
        let base = polynomial_library(1, 1, true).unwrap();
        let same = with_custom_terms(&base, &[], Placement::Append).unwrap();
        assert_eq!(same.names(), base.names());
        let dup = CustomTerm::new("X(t)", Arc::new(|z| z[0]));
        assert!(with_custom_terms(&base, &[dup], Placement::Append).is_err());
    }

    #[test]
    fn description_dump() {
        let lib = polynomial_library(1, 1, true).unwrap();
        let mut buf = Vec::new();
        lib.write_description(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "index,name,kind\n1,\"1\",monomial\n2,\"X(t)\",monomial\n3,\"X(t-tau)\",monomial\n"
        );
    }

    proptest! {
        #[test]
        fn monomials_are_homogeneous(a in 0.1f64..3.0, z in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let lib = polynomial_library(2, 3, true).unwrap();
            let scaled: Vec<f64> = z.iter().map(|v| v * a).collect();
            let r0 = lib.evaluate_point(&z).unwrap();
            let r1 = lib.evaluate_point(&scaled).unwrap();
            for (j, t) in lib.terms().iter().enumerate() {
                let want = r0[j] * a.powi(t.degree() as i32);
                prop_assert!((r1[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}
