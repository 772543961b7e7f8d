//! Normalized forward and backward recursions.
//!
//! Both directions renormalize every step. Emission densities enter through
//! their logarithms with the per-step maximum factored out, so an outlying
//! observation never underflows the whole vector.

use crate::error::{Error, Result};
use crate::model::{HmmModel, ObservationSequence, StateDistribution};

/// Scaled emission vector `exp(ln D_jj(y) − max)`; returns the factored-out max.
fn scaled_emissions(model: &HmmModel, y: f64, out: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (j, o) in out.iter_mut().enumerate() {
        *o = model.log_emission_density(j, y);
        max = max.max(*o);
    }
    for o in out.iter_mut() {
        *o = (*o - max).exp();
    }
    max
}

/// `out ∝ prev · M · D(y)`, normalized in place. Returns `ln(u·𝟙)` of the
/// unnormalized product.
pub(crate) fn forward_step_slice(
    model: &HmmModel,
    prev: &[f64],
    y: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<f64> {
    let m = model.transition();
    let k = prev.len();
    let shift = scaled_emissions(model, y, scratch);
    let mut total = 0.0;
    for j in 0..k {
        let mut acc = 0.0;
        for (i, p) in prev.iter().enumerate() {
            acc += p * m[(i, j)];
        }
        out[j] = acc * scratch[j];
        total += out[j];
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite(format!(
            "forward normalizer {total} at observation {y}"
        )));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(total.ln() + shift)
}

/// `out ∝ M · (D(y) ∘ next)`, normalized in place. Returns the log normalizer.
pub(crate) fn backward_step_slice(
    model: &HmmModel,
    next: &[f64],
    y: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<f64> {
    let m = model.transition();
    let k = next.len();
    let shift = scaled_emissions(model, y, scratch);
    for (s, b) in scratch.iter_mut().zip(next) {
        *s *= b;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            acc += m[(i, j)] * scratch[j];
        }
        out[i] = acc;
        total += acc;
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite(format!(
            "backward normalizer {total} at observation {y}"
        )));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(total.ln() + shift)
}

/// One normalized forward update: `u = ρ·M·D(y)`, returns `(u/(u·𝟙), ln(u·𝟙))`.
pub fn forward_step(
    rho_prev: &StateDistribution,
    model: &HmmModel,
    y: f64,
) -> Result<(StateDistribution, f64)> {
    let k = model.n_states();
    if rho_prev.len() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: rho_prev.len(),
        });
    }
    let mut out = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    let ln = forward_step_slice(model, rho_prev.probs(), y, &mut out, &mut scratch)?;
    Ok((StateDistribution::from_raw(out), ln))
}

/// Stateful forward filter holding only the current `ρ` and running
/// log-likelihood, so memory is `O(K)` regardless of sequence length.
#[derive(Debug, Clone)]
pub struct ForwardFilter<'a> {
    model: &'a HmmModel,
    rho: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
    log_likelihood: f64,
    steps: usize,
}

impl<'a> ForwardFilter<'a> {
    pub fn new(model: &'a HmmModel) -> Self {
        Self::with_start(model, model.initial().probs().to_vec())
    }

    pub fn with_start(model: &'a HmmModel, start: Vec<f64>) -> Self {
        let k = model.n_states();
        Self {
            model,
            rho: start,
            next: vec![0.0; k],
            scratch: vec![0.0; k],
            log_likelihood: 0.0,
            steps: 0,
        }
    }

    /// Advances by one observation and returns that step's log normalizer.
    pub fn step(&mut self, y: f64) -> Result<f64> {
        let ln = forward_step_slice(self.model, &self.rho, y, &mut self.next, &mut self.scratch)?;
        std::mem::swap(&mut self.rho, &mut self.next);
        self.log_likelihood += ln;
        self.steps += 1;
        Ok(ln)
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Full forward pass with history.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// `ρ_1..ρ_n`.
    pub rhos: Vec<StateDistribution>,
    pub log_likelihood: f64,
    pub per_step_log_norms: Vec<f64>,
}

/// Streaming forward pass result.
#[derive(Debug, Clone)]
pub struct FilterSummary {
    pub final_rho: StateDistribution,
    pub log_likelihood: f64,
    pub n: usize,
}

pub fn forward_filter(model: &HmmModel, obs: &ObservationSequence) -> Result<FilterRun> {
    let mut f = ForwardFilter::new(model);
    let mut rhos = Vec::with_capacity(obs.len());
    let mut norms = Vec::with_capacity(obs.len());
    for &y in obs.values() {
        norms.push(f.step(y)?);
        rhos.push(StateDistribution::from_raw(f.rho().to_vec()));
    }
    Ok(FilterRun {
        rhos,
        log_likelihood: norms.iter().sum(),
        per_step_log_norms: norms,
    })
}

/// Forward pass keeping only the final filtered distribution.
pub fn forward_filter_streaming(
    model: &HmmModel,
    obs: &ObservationSequence,
) -> Result<FilterSummary> {
    let mut f = ForwardFilter::new(model);
    for &y in obs.values() {
        f.step(y)?;
    }
    Ok(FilterSummary {
        final_rho: StateDistribution::from_raw(f.rho().to_vec()),
        log_likelihood: f.log_likelihood(),
        n: f.steps(),
    })
}

/// Normalized backward vectors.
#[derive(Debug, Clone)]
pub struct BackwardRun {
    /// `β_1..β_n`; `β_n` is uniform.
    pub betas: Vec<StateDistribution>,
}

pub fn backward_filter(model: &HmmModel, obs: &ObservationSequence) -> Result<BackwardRun> {
    let k = model.n_states();
    let n = obs.len();
    let ys = obs.values();
    let mut betas = vec![StateDistribution::uniform(k); n];
    let mut scratch = vec![0.0; k];
    let mut out = vec![0.0; k];
    for i in (1..n).rev() {
        // β_i from β_{i+1} and y_{i+1}
        backward_step_slice(model, betas[i].probs(), ys[i], &mut out, &mut scratch)?;
        betas[i - 1] = StateDistribution::from_raw(out.clone());
    }
    Ok(BackwardRun { betas })
}

/// `p(x_i | y_{1:n}) ∝ ρ_i ∘ β_i`.
pub fn smoothed_posterior(
    rho: &StateDistribution,
    beta: &StateDistribution,
) -> Result<StateDistribution> {
    if rho.len() != beta.len() {
        return Err(Error::Dimension {
            expected: rho.len(),
            actual: beta.len(),
        });
    }
    let prod: Vec<f64> = rho.probs().iter().zip(beta.probs()).map(|(a, b)| a * b).collect();
    if prod.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Domain("forward and backward vectors have disjoint support".into()));
    }
    StateDistribution::normalized(prod)
}

/// Filters `ys` starting from `model.initial`; returns the final `ρ`.
pub(crate) fn filter_window(model: &HmmModel, ys: &[f64]) -> Result<Vec<f64>> {
    let k = model.n_states();
    let mut rho = model.initial().probs().to_vec();
    let mut next = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    for &y in ys {
        forward_step_slice(model, &rho, y, &mut next, &mut scratch)?;
        std::mem::swap(&mut rho, &mut next);
    }
    Ok(rho)
}

/// `normalize(M D(ys[0]) … M D(ys[last]) 𝟙)`; uniform for an empty window.
pub(crate) fn backward_window(model: &HmmModel, ys: &[f64]) -> Result<Vec<f64>> {
    let k = model.n_states();
    let mut beta = vec![1.0 / k as f64; k];
    let mut out = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    for &y in ys.iter().rev() {
        backward_step_slice(model, &beta, y, &mut out, &mut scratch)?;
        std::mem::swap(&mut beta, &mut out);
    }
    Ok(beta)
}

/// 1-based bounds of the left window `[max(1, j−B1), j−1]` as a 0-based slice range.
pub(crate) fn left_window(j: usize, b1: usize) -> std::ops::Range<usize> {
    let start = j.saturating_sub(b1).max(1);
    (start - 1)..(j - 1)
}

/// 1-based bounds of the right window `[j+1, min(n, j+B2)]` as a 0-based slice range.
pub(crate) fn right_window(j: usize, b2: usize, n: usize) -> std::ops::Range<usize> {
    j..(j + b2).min(n)
}

/// Approximate `ρ_{j−1}` from the `B1` observations preceding `y_j`,
/// started at `model.initial`. A window reaching past `y_1` is clipped,
/// which reproduces the exact filter.
pub fn buffered_forward(
    model: &HmmModel,
    obs: &ObservationSequence,
    j: usize,
    b1: usize,
) -> Result<StateDistribution> {
    if j == 0 || j > obs.len() {
        return Err(Error::OutOfRange(format!(
            "index j = {j} outside 1..={}",
            obs.len()
        )));
    }
    let w = left_window(j, b1);
    Ok(StateDistribution::from_raw(filter_window(model, &obs.values()[w])?))
}

/// Approximate `β_j` from `y_{j+1..j+B2}`. A window reaching past `y_n` is
/// clipped, which reproduces the exact backward vector.
pub fn buffered_backward(
    model: &HmmModel,
    obs: &ObservationSequence,
    j: usize,
    b2: usize,
) -> Result<StateDistribution> {
    if j == 0 || j > obs.len() {
        return Err(Error::OutOfRange(format!(
            "index j = {j} outside 1..={}",
            obs.len()
        )));
    }
    let w = right_window(j, b2, obs.len());
    Ok(StateDistribution::from_raw(backward_window(model, &obs.values()[w])?))
}
