//! Forgetting rate of the filter as the top Lyapunov exponent of the
//! projected dynamics.
//!
//! The filtered distribution `ρ` is mapped to log-ratio coordinates
//! `r_i = ln(ρ_i / ρ_K)`, where one filter step becomes
//! `r ↦ d(y) + F(r)`: a translation by the emission log-ratios composed with
//! a smooth map that depends on the transition matrix only. The Jacobian of
//! that step does not depend on `y`, and the growth rate of products of
//! Jacobians along a filtered trajectory is `λ₂ − λ₁`.
//!
//! Three independent cross-checks live here as well: a QR-reorthonormalized
//! spectrum of the raw products `M D(y)`, the separation rate of two filters
//! driven by the same observations, and the Birkhoff contraction bound.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filtering::{backward_step_slice, ForwardFilter};
use crate::model::{HmmModel, ObservationSequence, StateDistribution};
use crate::sampling::rng_from_seed;

/// Default number of filter steps discarded before accumulating growth.
pub const DEFAULT_BURN_IN: usize = 100;

/// Floor applied to filtered probabilities before taking log-ratios.
pub const PROB_FLOOR: f64 = 1e-300;

/// Minimum number of accumulated steps required by the estimators.
pub const MIN_ACCUMULATED_STEPS: usize = 1000;

/// Separations below this are indistinguishable from rounding noise.
pub const TRAJECTORY_CUTOFF: f64 = 1e-14;

/// Perturbation size for the renormalized two-trajectory estimate.
const TRAJECTORY_DELTA: f64 = 1e-7;

/// Log-ratio coordinates relative to the last component; `r_K = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioVector(Vec<f64>);

impl LogRatioVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("log-ratio coordinates must be finite".into()));
        }
        Ok(Self(r))
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Add for &LogRatioVector {
    type Output = LogRatioVector;
    fn add(self, rhs: Self) -> LogRatioVector {
        LogRatioVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    JacobianPower,
    Qr,
    Trajectory,
}

impl GapMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GapMethod::JacobianPower => "jacobian_power",
            GapMethod::Qr => "qr",
            GapMethod::Trajectory => "trajectory",
        }
    }
}

/// Which recursion the estimate describes: `ρ` (forward) or `β` (backward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    /// Estimate of `λ₂ − λ₁`; `-inf` when the Jacobian product collapses.
    pub gap: f64,
    /// Steps that contributed to the average.
    pub iterations: usize,
    pub burn_in: usize,
    pub method: GapMethod,
    pub direction: Direction,
    /// Times a probability was floored at [`PROB_FLOOR`] before projecting.
    pub floor_hits: usize,
}

impl GapEstimate {
    pub fn buffer_length(&self, epsilon: f64) -> Result<usize> {
        buffer_length(self.gap, epsilon)
    }
}

/// `r_i = ln(a_i / a_K)`. Every component must be strictly positive.
pub fn project(rho: &StateDistribution) -> Result<LogRatioVector> {
    let a = rho.probs();
    if a.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(
            "projection needs an interior point of the simplex".into(),
        ));
    }
    let last = a[a.len() - 1].ln();
    Ok(LogRatioVector(a[..a.len() - 1].iter().map(|v| v.ln() - last).collect()))
}

/// Projection with components floored at [`PROB_FLOOR`]; counts floor hits.
pub fn project_floored(rho: &[f64], floor_hits: &mut usize) -> LogRatioVector {
    let mut logs = Vec::with_capacity(rho.len());
    for &v in rho {
        if v < PROB_FLOOR {
            *floor_hits += 1;
            logs.push(PROB_FLOOR.ln());
        } else {
            logs.push(v.ln());
        }
    }
    let last = logs.pop().expect("non-empty distribution");
    LogRatioVector(logs.into_iter().map(|l| l - last).collect())
}

/// Softmax of `[r, 0]`, evaluated with the maximum subtracted.
pub fn unproject(r: &LogRatioVector) -> StateDistribution {
    let max = r.0.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut a: Vec<f64> = r.0.iter().map(|v| (v - max).exp()).collect();
    a.push((-max).exp());
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|v| *v /= s);
    StateDistribution::from_raw(a)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `F_i(r) = ln(exp(r)·m_i / exp(r)·m_K)` for the columns `m_i` of `matrix`.
pub fn map_f_matrix(matrix: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
    let k = matrix.ncols();
    let rk = |j: usize| if j + 1 == k { 0.0 } else { r[j] };
    let col_lse = |i: usize| log_sum_exp((0..k).map(move |j| rk(j) + matrix[(j, i)].ln()));
    let last = col_lse(k - 1);
    (0..k - 1).map(|i| col_lse(i) - last).collect()
}

/// The deterministic part of the projected forward step.
pub fn map_f(model: &HmmModel, r: &LogRatioVector) -> LogRatioVector {
    LogRatioVector(map_f_matrix(model.transition(), &r.0))
}

/// `d_i = ln p(y|x=i) − ln p(y|x=K)`, from log-densities.
pub fn translation_d(model: &HmmModel, y: f64) -> LogRatioVector {
    let k = model.n_states();
    let last = model.log_emission_density(k - 1, y);
    LogRatioVector(
        (0..k - 1)
            .map(|i| model.log_emission_density(i, y) - last)
            .collect(),
    )
}

/// `J_ij = e^{r_j} M_ji / (e^r·m_i) − e^{r_j} M_jK / (e^r·m_K)` for `matrix = M`.
pub fn jacobian_matrix(matrix: &DMatrix<f64>, r: &[f64]) -> DMatrix<f64> {
    let k = matrix.ncols();
    let mut jac = DMatrix::zeros(k - 1, k - 1);
    jacobian_into(matrix, r, &mut vec![0.0; k], jac.as_mut_slice());
    jac
}

/// Column-major `(K−1)×(K−1)` Jacobian written into `out`; `w` is scratch of length `K`.
fn jacobian_into(matrix: &DMatrix<f64>, r: &[f64], w: &mut [f64], out: &mut [f64]) {
    let k = matrix.ncols();
    let km = k - 1;
    let max = r.iter().fold(0.0f64, |m, v| m.max(*v));
    for j in 0..k {
        w[j] = (if j < km { r[j] } else { 0.0 } - max).exp();
    }
    let denom_last: f64 = (0..k).map(|l| w[l] * matrix[(l, km)]).sum();
    for i in 0..km {
        let denom: f64 = (0..k).map(|l| w[l] * matrix[(l, i)]).sum();
        for j in 0..km {
            out[i + j * km] = w[j] * matrix[(j, i)] / denom - w[j] * matrix[(j, km)] / denom_last;
        }
    }
}

pub fn jacobian(model: &HmmModel, r: &LogRatioVector) -> DMatrix<f64> {
    jacobian_matrix(model.transition(), &r.0)
}

fn check_gap_inputs(model: &HmmModel, obs: &ObservationSequence, burn_in: usize) -> Result<()> {
    if model.n_states() < 2 {
        return Err(Error::InvalidInput(
            "the gap needs at least two states".into(),
        ));
    }
    model.require_primitive()?;
    if obs.len() < burn_in + MIN_ACCUMULATED_STEPS {
        return Err(Error::InvalidInput(format!(
            "need at least burn_in + {MIN_ACCUMULATED_STEPS} = {} observations, got {}",
            burn_in + MIN_ACCUMULATED_STEPS,
            obs.len()
        )));
    }
    Ok(())
}

fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm2(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Power iteration on the Jacobian cocycle. Pushes `e ← J e`, accumulates
/// `ln‖e‖₂` after `burn_in` steps and renormalizes.
struct JacobianPower {
    e: Vec<f64>,
    next: Vec<f64>,
    jac: Vec<f64>,
    w: Vec<f64>,
    acc: f64,
    counted: usize,
    burn_in: usize,
    seen: usize,
    collapsed: bool,
}

impl JacobianPower {
    fn new(k: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            e: random_unit(k - 1, seed),
            next: vec![0.0; k - 1],
            jac: vec![0.0; (k - 1) * (k - 1)],
            w: vec![0.0; k],
            acc: 0.0,
            counted: 0,
            burn_in,
            seen: 0,
            collapsed: false,
        }
    }

    fn push(&mut self, matrix: &DMatrix<f64>, r: &[f64]) {
        if self.collapsed {
            return;
        }
        let km = self.e.len();
        jacobian_into(matrix, r, &mut self.w, &mut self.jac);
        for i in 0..km {
            self.next[i] = (0..km).map(|j| self.jac[i + j * km] * self.e[j]).sum();
        }
        let n = norm2(&self.next);
        if !(n > 0.0) || !n.is_finite() {
            self.collapsed = true;
            return;
        }
        if self.seen >= self.burn_in {
            self.acc += n.ln();
            self.counted += 1;
        }
        self.seen += 1;
        for (e, x) in self.e.iter_mut().zip(&self.next) {
            *e = x / n;
        }
    }

    fn gap(&self) -> f64 {
        if self.collapsed {
            f64::NEG_INFINITY
        } else {
            self.acc / self.counted as f64
        }
    }
}

/// Estimates the forward forgetting rate `λ₂ − λ₁` by filtering `obs`,
/// projecting every `ρ` and running power iteration on the Jacobian
/// cocycle. A collapsed product (rank-one `M`) yields `gap = -inf`.
pub fn estimate_gap(
    model: &HmmModel,
    obs: &ObservationSequence,
    burn_in: usize,
    seed: u64,
) -> Result<GapEstimate> {
    check_gap_inputs(model, obs, burn_in)?;
    let mut filter = ForwardFilter::new(model);
    let mut power = JacobianPower::new(model.n_states(), burn_in, seed);
    let mut floor_hits = 0;
    for &y in obs.values() {
        filter.step(y)?;
        let r = project_floored(filter.rho(), &mut floor_hits);
        power.push(model.transition(), &r.0);
        if power.collapsed {
            break;
        }
    }
    Ok(GapEstimate {
        gap: power.gap(),
        iterations: power.counted,
        burn_in,
        method: GapMethod::JacobianPower,
        direction: Direction::Forward,
        floor_hits,
    })
}

/// Backward counterpart of [`estimate_gap`]: runs the normalized backward
/// recursion from `y_n` down and iterates the Jacobian of
/// `r ↦ F_{Mᵀ}(r + d(y))`. Burn-in is counted from the end of the sequence.
pub fn estimate_backward_gap(
    model: &HmmModel,
    obs: &ObservationSequence,
    burn_in: usize,
    seed: u64,
) -> Result<GapEstimate> {
    check_gap_inputs(model, obs, burn_in)?;
    let k = model.n_states();
    let mt = model.transition().transpose();
    let mut power = JacobianPower::new(k, burn_in, seed);
    let mut beta = vec![1.0 / k as f64; k];
    let mut out = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    let mut floor_hits = 0;
    for &y in obs.values()[1..].iter().rev() {
        let r = project_floored(&beta, &mut floor_hits);
        let d = translation_d(model, y);
        let s: Vec<f64> = r.0.iter().zip(&d.0).map(|(a, b)| a + b).collect();
        power.push(&mt, &s);
        if power.collapsed {
            break;
        }
        backward_step_slice(model, &beta, y, &mut out, &mut scratch)?;
        std::mem::swap(&mut beta, &mut out);
    }
    Ok(GapEstimate {
        gap: power.gap(),
        iterations: power.counted,
        burn_in,
        method: GapMethod::JacobianPower,
        direction: Direction::Backward,
        floor_hits,
    })
}

/// Buffer length `ceil(ln ε / gap)`.
///
/// Ratios within `1e-9` (relative) of an integer are taken as that integer so
/// that exact cases like `gap = −1, ε = e⁻¹⁰` are not pushed up by rounding.
pub fn buffer_length(gap: f64, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if gap == f64::NEG_INFINITY {
        return Ok(1);
    }
    if !(gap < 0.0) {
        return Err(Error::NoForgetting(gap));
    }
    let ratio = epsilon.ln() / gap;
    let nearest = ratio.round();
    let b = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok((b as usize).max(1))
}

/// Lyapunov spectrum `λ₁ ≥ … ≥ λ_K` of the row-vector products
/// `p_0 M D(y_1) M D(y_2) …` by QR reorthonormalization of a full frame.
pub fn qr_spectrum(
    model: &HmmModel,
    obs: &ObservationSequence,
    burn_in: usize,
) -> Result<Vec<f64>> {
    let k = model.n_states();
    if obs.len() <= burn_in {
        return Err(Error::InvalidInput(format!(
            "need more than burn_in = {burn_in} observations, got {}",
            obs.len()
        )));
    }
    let mt = model.transition().transpose();
    let mut q = DMatrix::<f64>::identity(k, k);
    let mut sums = vec![0.0; k];
    let mut dead = vec![false; k];
    let mut logd = vec![0.0; k];
    for (t, &y) in obs.values().iter().enumerate() {
        let mut shift = f64::NEG_INFINITY;
        for (j, l) in logd.iter_mut().enumerate() {
            *l = model.log_emission_density(j, y);
            shift = shift.max(*l);
        }
        // (M D)ᵀ = D Mᵀ acting on column frames
        let mut z = &mt * &q;
        for j in 0..k {
            let s = (logd[j] - shift).exp();
            z.row_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        let qr = z.qr();
        let r = qr.r();
        q = qr.q();
        if t >= burn_in {
            for i in 0..k {
                let rii = r[(i, i)].abs();
                if rii == 0.0 {
                    if !dead[i] {
                        log::warn!("QR frame column {i} collapsed at step {}", t + 1);
                    }
                    dead[i] = true;
                } else {
                    sums[i] += rii.ln() + shift;
                }
            }
        }
    }
    let steps = (obs.len() - burn_in) as f64;
    let mut spec: Vec<f64> = sums
        .iter()
        .zip(&dead)
        .map(|(s, d)| if *d { f64::NEG_INFINITY } else { s / steps })
        .collect();
    spec.sort_by(|a, b| b.partial_cmp(a).expect("exponents are not NaN"));
    Ok(spec)
}

/// `λ₂ − λ₁` from [`qr_spectrum`].
pub fn qr_gap(model: &HmmModel, obs: &ObservationSequence, burn_in: usize) -> Result<GapEstimate> {
    check_gap_inputs(model, obs, burn_in)?;
    let spec = qr_spectrum(model, obs, burn_in)?;
    Ok(GapEstimate {
        gap: spec[1] - spec[0],
        iterations: obs.len() - burn_in,
        burn_in,
        method: GapMethod::Qr,
        direction: Direction::Forward,
        floor_hits: 0,
    })
}

/// `(1/n) ln‖ρ_n − ρ'_n‖₂` for two filters started at `p0` and `p0_alt` and
/// driven by the same observations. The series stops once the separation
/// drops below [`TRAJECTORY_CUTOFF`].
pub fn trajectory_decay(
    model: &HmmModel,
    obs: &ObservationSequence,
    p0: &StateDistribution,
    p0_alt: &StateDistribution,
) -> Result<Vec<f64>> {
    let dists = trajectory_distances(model, obs, p0, p0_alt)?;
    Ok(dists
        .iter()
        .take_while(|d| **d >= TRAJECTORY_CUTOFF)
        .enumerate()
        .map(|(i, d)| d.ln() / (i + 1) as f64)
        .collect())
}

/// Raw separations `‖ρ_n − ρ'_n‖₂`, `n = 1..len`, without truncation.
pub fn trajectory_distances(
    model: &HmmModel,
    obs: &ObservationSequence,
    p0: &StateDistribution,
    p0_alt: &StateDistribution,
) -> Result<Vec<f64>> {
    let k = model.n_states();
    for p in [p0, p0_alt] {
        if p.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: p.len(),
            });
        }
    }
    let mut a = ForwardFilter::with_start(model, p0.probs().to_vec());
    let mut b = ForwardFilter::with_start(model, p0_alt.probs().to_vec());
    let mut out = Vec::with_capacity(obs.len());
    for &y in obs.values() {
        a.step(y)?;
        b.step(y)?;
        let d = a.rho().iter().zip(b.rho()).map(|(x, z)| (x - z) * (x - z)).sum::<f64>();
        out.push(d.sqrt());
    }
    Ok(out)
}

/// `‖ρ_n − ρ'_n‖₂` without subtracting nearly equal vectors.
///
/// With unnormalized forward vectors `u`, `v`, the difference of the
/// normalized ones is `(Σ_i (u_j v_i − v_j u_i))_j / ((u·𝟙)(v·𝟙))`. The
/// antisymmetric array `u_a v_b − v_a u_b` is propagated directly through
/// the 2×2 minors of `M D(y)`, so separations far below machine epsilon keep
/// their relative precision and the series never collapses to zero.
pub fn separation_distances(
    model: &HmmModel,
    obs: &ObservationSequence,
    p0: &StateDistribution,
    p0_alt: &StateDistribution,
) -> Result<Vec<f64>> {
    let k = model.n_states();
    for p in [p0, p0_alt] {
        if p.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: p.len(),
            });
        }
    }
    let m = model.transition();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .collect();
    let mut u = p0.probs().to_vec();
    let mut v = p0_alt.probs().to_vec();
    let mut w: Vec<f64> = pairs.iter().map(|&(a, b)| u[a] * v[b] - v[a] * u[b]).collect();
    let mut a_mat = vec![0.0; k * k];
    let mut d = vec![0.0; k];
    let mut out = Vec::with_capacity(obs.len());
    for &y in obs.values() {
        let top = (0..k)
            .map(|j| model.log_emission_density(j, y))
            .fold(f64::NEG_INFINITY, f64::max);
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = (model.log_emission_density(j, y) - top).exp();
        }
        for i in 0..k {
            for j in 0..k {
                a_mat[i * k + j] = m[(i, j)] * d[j];
            }
        }
        let a = |i: usize, j: usize| a_mat[i * k + j];
        let nu: Vec<f64> = (0..k).map(|j| (0..k).map(|i| u[i] * a(i, j)).sum()).collect();
        let nv: Vec<f64> = (0..k).map(|j| (0..k).map(|i| v[i] * a(i, j)).sum()).collect();
        let nw: Vec<f64> = pairs
            .iter()
            .map(|&(p, q)| {
                pairs
                    .iter()
                    .zip(&w)
                    .map(|(&(i, j), wij)| wij * (a(i, p) * a(j, q) - a(j, p) * a(i, q)))
                    .sum()
            })
            .collect();
        let su: f64 = nu.iter().sum();
        let sv: f64 = nv.iter().sum();
        if !(su > 0.0 && sv > 0.0 && su.is_finite() && sv.is_finite()) {
            return Err(Error::NonFinite(format!("separation normalizer at observation {y}")));
        }
        u = nu.iter().map(|x| x / su).collect();
        v = nv.iter().map(|x| x / sv).collect();
        w = nw.iter().map(|x| x / (su * sv)).collect();
        let mut diff = vec![0.0; k];
        for (&(p, q), wpq) in pairs.iter().zip(&w) {
            diff[p] += wpq;
            diff[q] -= wpq;
        }
        out.push(norm2(&diff));
    }
    Ok(out)
}

/// Two-trajectory separation rate with per-step renormalization: a shadow
/// filter is kept at distance `1e-7` from the reference filter and the log
/// growth of the separation is averaged after `burn_in` steps. Uses only
/// the forward step, no Jacobians.
pub fn trajectory_gap(
    model: &HmmModel,
    obs: &ObservationSequence,
    burn_in: usize,
    seed: u64,
) -> Result<GapEstimate> {
    check_gap_inputs(model, obs, burn_in)?;
    let k = model.n_states();
    let mut reference = ForwardFilter::new(model);
    // tangent direction on the simplex: zero-sum unit vector
    let mut dir = random_unit(k, seed);
    let mean = dir.iter().sum::<f64>() / k as f64;
    dir.iter_mut().for_each(|v| *v -= mean);
    let nd = norm2(&dir);
    dir.iter_mut().for_each(|v| *v /= nd);

    let mut shadow = vec![0.0; k];
    let mut next = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    let mut acc = 0.0;
    let mut counted = 0;
    let mut delta: Vec<f64> = dir.iter().map(|v| v * TRAJECTORY_DELTA).collect();
    for (t, &y) in obs.values().iter().enumerate() {
        for ((s, r), d) in shadow.iter_mut().zip(reference.rho()).zip(&delta) {
            *s = r + d;
        }
        reference.step(y)?;
        crate::filtering::forward_step_slice(model, &shadow, y, &mut next, &mut scratch)?;
        for ((d, s), r) in delta.iter_mut().zip(&next).zip(reference.rho()) {
            *d = s - r;
        }
        let dist = norm2(&delta);
        if !(dist > 0.0) {
            return Ok(GapEstimate {
                gap: f64::NEG_INFINITY,
                iterations: counted,
                burn_in,
                method: GapMethod::Trajectory,
                direction: Direction::Forward,
                floor_hits: 0,
            });
        }
        if t >= burn_in {
            acc += (dist / TRAJECTORY_DELTA).ln();
            counted += 1;
        }
        delta.iter_mut().for_each(|d| *d *= TRAJECTORY_DELTA / dist);
    }
    Ok(GapEstimate {
        gap: acc / counted as f64,
        iterations: counted,
        burn_in,
        method: GapMethod::Trajectory,
        direction: Direction::Forward,
        floor_hits: 0,
    })
}

/// Hilbert projective distance `ln[(max_i x_i/y_i) / (min_j x_j/y_j)]`.
pub fn hilbert_metric(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("Hilbert metric needs positive vectors".into()));
    }
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in x.iter().zip(y) {
        let q = a.ln() - b.ln();
        hi = hi.max(q);
        lo = lo.min(q);
    }
    Ok((hi - lo).max(0.0))
}

/// Minimum 2×2 cross ratio `M_pq M_rs / (M_rq M_ps)`; zero when any entry is zero.
pub fn birkhoff_phi(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !(*v > 0.0)) {
        return 0.0;
    }
    let (nr, nc) = m.shape();
    let mut phi = 1.0f64;
    for p in 0..nr {
        for r in 0..nr {
            if p == r {
                continue;
            }
            for q in 0..nc {
                for s in 0..nc {
                    if q == s {
                        continue;
                    }
                    phi = phi.min(m[(p, q)] * m[(r, s)] / (m[(r, q)] * m[(p, s)]));
                }
            }
        }
    }
    phi
}

/// Birkhoff contraction coefficient `τ = (1 − √φ)/(1 + √φ)`.
/// Equals one, i.e. a vacuous bound, when `M` has a zero entry.
pub fn birkhoff_tau(m: &DMatrix<f64>) -> f64 {
    let s = birkhoff_phi(m).sqrt();
    (1.0 - s) / (1.0 + s)
}

/// `ln τ(M)`, or `None` when the bound is vacuous.
pub fn tau_bound_log(m: &DMatrix<f64>) -> Option<f64> {
    let tau = birkhoff_tau(m);
    (tau < 1.0).then(|| tau.ln())
}

/// `x·M` for a row vector.
pub fn row_times(x: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let v = DVector::from_column_slice(x);
    (m.transpose() * v).iter().copied().collect()
}
