//! HMM parameterization with univariate Gaussian emissions.
//!
//! A model is the pair (transition matrix, emission parameters) plus the
//! initial distribution of the chain at step zero. Rows of the transition
//! matrix are source states.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of stochastic vectors and matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Iteration cap for the stationary-distribution power iteration.
pub const STATIONARY_MAX_ITER: usize = 1_000_000;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A probability row vector on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    /// Validates entries and renormalizes when the sum is within
    /// [`STOCHASTIC_TOL`] of one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "distribution entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let sum: f64 = v.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NonFinite(format!("cannot normalize vector with mass {sum}")));
        }
        v.iter_mut().for_each(|x| *x /= sum);
        Ok(Self(v))
    }

    /// Wraps a vector without checks. Callers guarantee the simplex invariant.
    pub(crate) fn from_raw(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl AsRef<[f64]> for StateDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Ordered real-valued observations `y_1..y_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence(Vec<f64>);

impl ObservationSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("observation sequence is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "observation {} is not finite",
                i + 1
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based observation `y_t`.
    pub fn get(&self, t: usize) -> f64 {
        self.0[t - 1]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Hidden Markov model with Gaussian emissions, `θ = {M, μ, σ}` plus `p_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    transition: DMatrix<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    initial: StateDistribution,
}

/// On-disk JSON shape of a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl HmmModel {
    /// Builds a model, rejecting any [`validate`] violation. Rows and the
    /// initial vector within [`STOCHASTIC_TOL`] of summing to one are
    /// renormalized exactly.
    pub fn new(
        transition: DMatrix<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
        initial: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k = means.len();
        let initial = initial.unwrap_or_else(|| vec![1.0 / k.max(1) as f64; k]);
        let model = Self::new_unchecked(transition, means, stds, initial);
        let violations = validate(&model);
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        Ok(model.renormalized())
    }

    /// Skips validation; used for degenerate test fixtures such as `M = I`.
    pub fn new_unchecked(
        transition: DMatrix<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
        initial: Vec<f64>,
    ) -> Self {
        Self {
            transition,
            means,
            stds,
            initial: StateDistribution::from_raw(initial),
        }
    }

    /// Row-major convenience constructor.
    pub fn from_rows(
        rows: &[Vec<f64>],
        means: Vec<f64>,
        stds: Vec<f64>,
        initial: Option<Vec<f64>>,
    ) -> Result<Self> {
        let transition = matrix_from_rows(rows)?;
        Self::new(transition, means, stds, initial)
    }

    /// The three-state example: near-cyclic transitions, means
    /// `[0, 0.5, -0.5]`, unit variances, uniform start.
    pub fn example_three_state() -> Self {
        let rows = [
            vec![0.005, 0.99, 0.005],
            vec![0.01, 0.03, 0.96],
            vec![0.95, 0.005, 0.045],
        ];
        Self::from_rows(&rows, vec![0.0, 0.5, -0.5], vec![1.0, 1.0, 1.0], None)
            .expect("reference model is valid")
    }

    fn renormalized(mut self) -> Self {
        for i in 0..self.transition.nrows() {
            let s: f64 = self.transition.row(i).sum();
            self.transition.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        let s: f64 = self.initial.0.iter().sum();
        self.initial.0.iter_mut().for_each(|x| *x /= s);
        self
    }

    pub fn n_states(&self) -> usize {
        self.means.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn initial(&self) -> &StateDistribution {
        &self.initial
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_initial(&self, initial: StateDistribution) -> Result<Self> {
        if initial.len() != self.n_states() {
            return Err(Error::Dimension {
                expected: self.n_states(),
                actual: initial.len(),
            });
        }
        let mut m = self.clone();
        m.initial = initial;
        Ok(m)
    }

    /// Returns a copy with new emission parameters, re-validated.
    pub fn with_emissions(&self, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            means,
            stds,
            Some(self.initial.0.clone()),
        )
    }

    /// Returns a copy with a new transition matrix, re-validated.
    pub fn with_transition(&self, transition: DMatrix<f64>) -> Result<Self> {
        Self::new(
            transition,
            self.means.clone(),
            self.stds.clone(),
            Some(self.initial.0.clone()),
        )
    }

    pub fn log_emission_density(&self, state: usize, y: f64) -> f64 {
        let z = (y - self.means[state]) / self.stds[state];
        -HALF_LN_2PI - self.stds[state].ln() - 0.5 * z * z
    }

    /// Gaussian density `N(y; μ_state, σ_state)`.
    pub fn emission_density(&self, state: usize, y: f64) -> f64 {
        let sigma = self.stds[state];
        let z = (y - self.means[state]) / sigma;
        (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma)
    }

    /// Writes the diagonal of `D(y)` into `out`.
    pub fn emission_diag_into(&self, y: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.emission_density(j, y);
        }
    }

    pub fn emission_diag(&self, y: f64) -> Vec<f64> {
        let mut d = vec![0.0; self.n_states()];
        self.emission_diag_into(y, &mut d);
        d
    }

    /// `D(y)` as a dense diagonal matrix.
    pub fn emission_matrix(&self, y: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.emission_diag(y)))
    }

    /// Stationary mixture density `f(y) = Σ_j π_j N(y; μ_j, σ_j)`.
    pub fn marginal_density(&self, y: f64) -> Result<f64> {
        let pi = stationary_distribution(&self.transition)?;
        Ok(pi
            .probs()
            .iter()
            .enumerate()
            .map(|(j, p)| p * self.emission_density(j, y))
            .sum())
    }

    /// Errors with [`Error::NotPrimitive`] unless the chain is irreducible
    /// and aperiodic.
    pub fn require_primitive(&self) -> Result<()> {
        if is_primitive(&self.transition)? {
            Ok(())
        } else {
            Err(Error::NotPrimitive)
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            transition: (0..self.transition.nrows())
                .map(|i| self.transition.row(i).iter().copied().collect())
                .collect(),
            means: self.means.clone(),
            stds: self.stds.clone(),
            initial: Some(self.initial.0.clone()),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        Self::from_rows(&file.transition, file.means, file.stds, file.initial)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            expected: ncols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Lists every structural violation of `model`; empty when the model can be
/// filtered, sampled and differentiated.
///
/// Primitivity is checked separately by [`is_primitive`] because sampling
/// and plain filtering remain well defined for reducible chains.
pub fn validate(model: &HmmModel) -> Vec<String> {
    let mut out = Vec::new();
    let k = model.means.len();
    let m = &model.transition;
    if k == 0 {
        out.push("model has no states".to_string());
        return out;
    }
    if m.nrows() != k || m.ncols() != k {
        out.push(format!(
            "transition must be {k}x{k}, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
        return out;
    }
    if model.stds.len() != k {
        out.push(format!("stds has length {}, expected {k}", model.stds.len()));
    }
    if model.initial.len() != k {
        out.push(format!(
            "initial has length {}, expected {k}",
            model.initial.len()
        ));
    }
    for i in 0..k {
        let row = m.row(i);
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
            out.push(format!("row {i} has negative or non-finite entries"));
        } else if (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
            out.push(format!("row {i} not stochastic"));
        }
    }
    for j in 0..k {
        if m.column(j).iter().all(|x| *x == 0.0) {
            out.push(format!("column {j} of transition is all zero"));
        }
    }
    if model.means.iter().any(|x| !x.is_finite()) {
        out.push("means must be finite".to_string());
    }
    if model.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        out.push("stds must be strictly positive".to_string());
    }
    let init = model.initial.probs();
    if init.iter().any(|x| !x.is_finite() || *x < 0.0)
        || (init.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL
    {
        out.push("initial distribution not stochastic".to_string());
    }
    out
}

fn bool_matmul(a: &[bool], b: &[bool], k: usize) -> Vec<bool> {
    let mut c = vec![false; k * k];
    for i in 0..k {
        for l in 0..k {
            if a[i * k + l] {
                for j in 0..k {
                    c[i * k + j] |= b[l * k + j];
                }
            }
        }
    }
    c
}

/// True iff `M^(K²−2K+2)` is entrywise positive (Wielandt bound), evaluated
/// on the zero pattern with boolean arithmetic.
pub fn is_primitive(transition: &DMatrix<f64>) -> Result<bool> {
    let k = transition.nrows();
    if transition.ncols() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: transition.ncols(),
        });
    }
    if k == 0 {
        return Ok(false);
    }
    let pattern: Vec<bool> = (0..k * k)
        .map(|idx| transition[(idx / k, idx % k)] > 0.0)
        .collect();
    let mut exp = k * k + 2 - 2 * k;
    let mut base = pattern;
    let mut acc: Option<Vec<bool>> = None;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => bool_matmul(&a, &base, k),
            });
        }
        exp >>= 1;
        if exp > 0 {
            base = bool_matmul(&base, &base, k);
        }
    }
    Ok(acc.expect("exponent is at least one").into_iter().all(|b| b))
}

/// Left fixed vector `πM = π` by power iteration from the uniform vector.
pub fn stationary_distribution(transition: &DMatrix<f64>) -> Result<StateDistribution> {
    let k = transition.nrows();
    if transition.ncols() != k || k == 0 {
        return Err(Error::Dimension {
            expected: k,
            actual: transition.ncols(),
        });
    }
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for _ in 0..STATIONARY_MAX_ITER {
        for (j, nj) in next.iter_mut().enumerate() {
            *nj = (0..k).map(|i| pi[i] * transition[(i, j)]).sum();
        }
        let residual: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        let s: f64 = next.iter().sum();
        for (p, n) in pi.iter_mut().zip(&next) {
            *p = n / s;
        }
        if residual < 1e-12 {
            return Ok(StateDistribution::from_raw(pi));
        }
    }
    Err(Error::NoConvergence {
        what: "stationary distribution power iteration".into(),
        iterations: STATIONARY_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_model_is_valid() {
        let m = HmmModel::example_three_state();
        assert!(validate(&m).is_empty());
        assert!(is_primitive(m.transition()).unwrap());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let t = matrix_from_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap();
        let m = HmmModel::new_unchecked(t, vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.5]);
        assert_eq!(validate(&m), vec!["row 0 not stochastic".to_string()]);
    }

    #[test]
    fn zero_std_is_reported() {
        let t = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let m = HmmModel::new_unchecked(
            t,
            vec![0.0; 3],
            vec![1.0, 1.0, 0.0],
            vec![1.0 / 3.0; 3],
        );
        assert_eq!(validate(&m), vec!["stds must be strictly positive".to_string()]);
    }

    #[test]
    fn near_stochastic_rows_are_renormalized() {
        let rows = [vec![0.5 + 4e-13, 0.5], vec![0.3, 0.7]];
        let m = HmmModel::from_rows(&rows, vec![0.0, 0.0], vec![1.0, 1.0], None).unwrap();
        assert!((m.transition().row(0).sum() - 1.0).abs() < 1e-15);
        let rows = [vec![0.5 + 1e-9, 0.5], vec![0.3, 0.7]];
        assert!(HmmModel::from_rows(&rows, vec![0.0, 0.0], vec![1.0, 1.0], None).is_err());
    }

    #[test]
    fn primitivity_examples() {
        let swap = matrix_from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!is_primitive(&swap).unwrap());
        assert!(!is_primitive(&DMatrix::identity(3, 3)).unwrap());
        assert!(is_primitive(&DMatrix::from_element(1, 1, 1.0)).unwrap());
        assert!(is_primitive(&DMatrix::zeros(2, 3)).is_err());
    }

    /// Irreducible + aperiodic via reachability and the gcd of cycle lengths.
    fn primitive_by_graph(adj: &[bool], k: usize) -> bool {
        let reach = |s: usize| {
            let mut seen = vec![false; k];
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for v in 0..k {
                    if adj[u * k + v] && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        };
        if !(0..k).all(|s| reach(s).into_iter().all(|b| b)) {
            return false;
        }
        // BFS levels from 0; period = gcd over edges of level(u)+1-level(v)
        let mut level = vec![usize::MAX; k];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..k {
                if adj[u * k + v] && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        let mut g = 0;
        for u in 0..k {
            for v in 0..k {
                if adj[u * k + v] {
                    let d = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                    g = gcd(g, d);
                }
            }
        }
        g == 1
    }

    #[test]
    fn primitivity_matches_graph_oracle_on_all_3x3_patterns() {
        let k = 3;
        for mask in 0u32..(1 << 9) {
            let adj: Vec<bool> = (0..9).map(|b| mask >> b & 1 == 1).collect();
            if (0..k).any(|i| (0..k).all(|j| !adj[i * k + j])) {
                continue;
            }
            let m = DMatrix::from_fn(k, k, |i, j| {
                let cnt = (0..k).filter(|&c| adj[i * k + c]).count() as f64;
                if adj[i * k + j] { 1.0 / cnt } else { 0.0 }
            });
            assert_eq!(
                is_primitive(&m).unwrap(),
                primitive_by_graph(&adj, k),
                "pattern {mask:09b}"
            );
        }
    }

    #[test]
    fn stationary_examples() {
        let ds = matrix_from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.2, 0.5],
        ])
        .unwrap();
        let pi = stationary_distribution(&ds).unwrap();
        for p in pi.probs() {
            assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
        let one = stationary_distribution(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(one.probs(), &[1.0]);
    }

    #[test]
    fn stationary_matches_eigensolver() {
        let m = HmmModel::example_three_state();
        let pi = stationary_distribution(m.transition()).unwrap();
        // Oracle: null space of (Mᵀ − I) via SVD, smallest singular vector.
        let a = m.transition().transpose() - DMatrix::identity(3, 3);
        let svd = a.svd(true, true);
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v = svd.v_t.unwrap().row(idx).transpose();
        let s: f64 = v.sum();
        for j in 0..3 {
            assert_relative_eq!(pi.probs()[j], v[j] / s, epsilon = 1e-10);
        }
        let tm = m.transition();
        for j in 0..3 {
            let r: f64 = (0..3).map(|i| pi.probs()[i] * tm[(i, j)]).sum();
            assert!((r - pi.probs()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_chain_fails_to_converge() {
        let bip = matrix_from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(
            stationary_distribution(&bip),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn density_examples() {
        let rows = [vec![1.0]];
        let m = HmmModel::from_rows(&rows, vec![0.0], vec![1.0], None).unwrap();
        assert_relative_eq!(m.emission_density(0, 0.0), 0.3989422804014327, epsilon = 1e-15);
        let m2 = HmmModel::from_rows(&rows, vec![0.5], vec![1.0], None).unwrap();
        assert_relative_eq!(m2.emission_density(0, 0.5), 0.3989422804014327, epsilon = 1e-15);
        let m3 = HmmModel::from_rows(&rows, vec![0.0], vec![2.0], None).unwrap();
        assert_relative_eq!(m3.emission_density(0, 0.0), 0.19947114020071635, epsilon = 1e-15);
        for y in [-3.0, 0.1, 2.5] {
            assert_relative_eq!(
                m3.log_emission_density(0, y).exp(),
                m3.emission_density(0, y),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn emission_matrix_is_diagonal_and_positive() {
        let m = HmmModel::example_three_state();
        let d = m.emission_matrix(0.0);
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        assert_relative_eq!(d[(0, 0)], phi(0.0), epsilon = 1e-15);
        assert_relative_eq!(d[(1, 1)], phi(0.5), epsilon = 1e-15);
        assert_relative_eq!(d[(2, 2)], phi(0.5), epsilon = 1e-15);
        assert_eq!(d[(0, 1)], 0.0);
        for y in [-30.0, -5.0, 0.0, 7.0, 30.0] {
            assert!(m.emission_diag(y).iter().all(|v| *v > 0.0));
        }
        let same = HmmModel::from_rows(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            None,
        )
        .unwrap();
        let d = same.emission_diag(0.3);
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn marginal_density_integrates_to_one() {
        let m = HmmModel::example_three_state();
        let pi = stationary_distribution(m.transition()).unwrap();
        let y = 0.0;
        let expect: f64 = (0..3).map(|j| pi.probs()[j] * m.emission_density(j, y)).sum();
        assert_relative_eq!(m.marginal_density(y).unwrap(), expect, epsilon = 1e-15);
        // Simpson's rule over [min μ − 8σ, max μ + 8σ]
        let (a, b) = (-0.5 - 8.0, 0.5 + 8.0);
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut s = m.marginal_density(a).unwrap() + m.marginal_density(b).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * m.marginal_density(a + i as f64 * h).unwrap();
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip_and_default_initial() {
        let json = r#"{"transition": [[0.9, 0.1], [0.2, 0.8]], "means": [0, 1], "stds": [1, 2]}"#;
        let m = HmmModel::from_json_str(json).unwrap();
        assert_eq!(m.initial().probs(), &[0.5, 0.5]);
        let back = HmmModel::from_json_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"transition": [[0.9, 0.2], [0.2, 0.8]], "means": [0, 1], "stds": [1, 2]}"#;
        assert!(matches!(HmmModel::from_json_str(bad), Err(Error::InvalidModel(_))));
    }
}
