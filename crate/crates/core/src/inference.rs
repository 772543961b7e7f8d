//! Likelihood gradients and mini-batch normalized gradient ascent.
//!
//! Free parameters live in unconstrained coordinates: means as-is, standard
//! deviations as `ln σ`, and a free transition row `i` as the `K−1` log-ratios
//! `ln(M_im / M_iK)`, so every iterate is a valid model without projection.
//!
//! The prior is flat, so gradients of the log-posterior and of the
//! log-likelihood coincide.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{
    backward_filter, backward_window, filter_window, forward_filter, left_window, right_window,
    ForwardFilter,
};
use crate::lyapunov::{buffer_length, estimate_backward_gap, estimate_gap, DEFAULT_BURN_IN};
use crate::model::{HmmModel, ObservationSequence};
use crate::sampling::{derive_seed, rng_from_seed};

/// `(∂N/∂μ, ∂N/∂σ)` of the emission density of `state` at `y`.
pub fn d_emission(model: &HmmModel, state: usize, y: f64) -> (f64, f64) {
    let mu = model.means()[state];
    let sigma = model.stds()[state];
    let n = model.emission_density(state, y);
    let z = (y - mu) / sigma;
    (n * z / sigma, n * (z * z - 1.0) / sigma)
}

/// One free parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    Mean(usize),
    /// Optimized as `ln σ`.
    Std(usize),
    /// Optimized as `K−1` log-ratios against the last entry of the row.
    TransitionRow(usize),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Mean(i) => write!(f, "mu{}", i + 1),
            Param::Std(i) => write!(f, "sigma{}", i + 1),
            Param::TransitionRow(i) => write!(f, "row{}", i + 1),
        }
    }
}

impl FromStr for Param {
    type Err = Error;

    /// Parses `mu<i>`, `sigma<i>` or `row<i>` with 1-based `i`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (ctor, rest): (fn(usize) -> Param, &str) = if let Some(r) = s.strip_prefix("sigma") {
            (Param::Std, r)
        } else if let Some(r) = s.strip_prefix("mu") {
            (Param::Mean, r)
        } else if let Some(r) = s.strip_prefix("row") {
            (Param::TransitionRow, r)
        } else {
            return Err(Error::InvalidInput(format!("unknown parameter {s:?}")));
        };
        let i: usize = rest
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad parameter index in {s:?}")))?;
        if i == 0 {
            return Err(Error::InvalidInput(format!("parameter indices are 1-based: {s:?}")));
        }
        Ok(ctor(i - 1))
    }
}

/// Ordered set of free parameters; the order fixes the packing of gradient
/// and parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSelector {
    params: Vec<Param>,
}

impl ParamSelector {
    pub fn new(params: Vec<Param>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidInput("no free parameters selected".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if params[..i].contains(p) {
                return Err(Error::InvalidInput(format!("parameter {p} listed twice")));
            }
        }
        Ok(Self { params })
    }

    /// Comma-separated list such as `mu1,mu2` or `mu1,sigma1,row2`.
    pub fn parse(list: &str) -> Result<Self> {
        Self::new(
            list.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?,
        )
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    fn block_len(p: Param, k: usize) -> usize {
        match p {
            Param::TransitionRow(_) => k - 1,
            _ => 1,
        }
    }

    /// Length of the packed vector for a `k`-state model.
    pub fn dim(&self, k: usize) -> usize {
        self.params.iter().map(|&p| Self::block_len(p, k)).sum()
    }

    /// Column labels of the packed vector.
    pub fn names(&self, k: usize) -> Vec<String> {
        let mut out = Vec::new();
        for &p in &self.params {
            match p {
                Param::TransitionRow(i) => {
                    out.extend((0..k - 1).map(|m| format!("row{}_{}", i + 1, m + 1)))
                }
                _ => out.push(p.to_string()),
            }
        }
        out
    }

    pub fn check(&self, model: &HmmModel) -> Result<()> {
        let k = model.n_states();
        for &p in &self.params {
            let i = match p {
                Param::Mean(i) | Param::Std(i) | Param::TransitionRow(i) => i,
            };
            if i >= k {
                return Err(Error::InvalidInput(format!(
                    "parameter {p} refers to a state beyond K = {k}"
                )));
            }
            if let Param::TransitionRow(i) = p {
                if k < 2 {
                    return Err(Error::InvalidInput(
                        "a one-state chain has no free transition entries".into(),
                    ));
                }
                if (0..k).any(|j| model.transition()[(i, j)] <= 0.0) {
                    return Err(Error::Domain(format!(
                        "row {} has zero entries and no log-ratio coordinates",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Unconstrained coordinates of the free parameters of `model`.
    pub fn pack(&self, model: &HmmModel) -> Result<Vec<f64>> {
        self.check(model)?;
        let k = model.n_states();
        let m = model.transition();
        let mut out = Vec::with_capacity(self.dim(k));
        for &p in &self.params {
            match p {
                Param::Mean(i) => out.push(model.means()[i]),
                Param::Std(i) => out.push(model.stds()[i].ln()),
                Param::TransitionRow(i) => {
                    let last = m[(i, k - 1)].ln();
                    out.extend((0..k - 1).map(|j| m[(i, j)].ln() - last));
                }
            }
        }
        Ok(out)
    }

    /// Model with the free parameters replaced by `theta` (unconstrained).
    pub fn unpack(&self, model: &HmmModel, theta: &[f64]) -> Result<HmmModel> {
        let k = model.n_states();
        if theta.len() != self.dim(k) {
            return Err(Error::Dimension {
                expected: self.dim(k),
                actual: theta.len(),
            });
        }
        let mut means = model.means().to_vec();
        let mut stds = model.stds().to_vec();
        let mut m = model.transition().clone();
        let mut at = 0;
        for &p in &self.params {
            match p {
                Param::Mean(i) => means[i] = theta[at],
                Param::Std(i) => stds[i] = theta[at].exp(),
                Param::TransitionRow(i) => {
                    let z = &theta[at..at + k - 1];
                    let top = z.iter().cloned().fold(0.0f64, f64::max);
                    let w: Vec<f64> = z.iter().chain(std::iter::once(&0.0)).map(|v| (v - top).exp()).collect();
                    let total: f64 = w.iter().sum();
                    for (j, wj) in w.iter().enumerate() {
                        m[(i, j)] = wj / total;
                    }
                }
            }
            at += Self::block_len(p, k);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        HmmModel::new(m, means, stds, Some(model.initial().probs().to_vec()))
    }

    /// Model with the free parameters set from natural-unit `values`
    /// (the layout of [`natural`](Self::natural)); a free row's last entry
    /// is one minus the others.
    pub fn set_natural(&self, model: &HmmModel, values: &[f64]) -> Result<HmmModel> {
        let k = model.n_states();
        if values.len() != self.dim(k) {
            return Err(Error::Dimension {
                expected: self.dim(k),
                actual: values.len(),
            });
        }
        let mut means = model.means().to_vec();
        let mut stds = model.stds().to_vec();
        let mut m = model.transition().clone();
        let mut at = 0;
        for &p in &self.params {
            match p {
                Param::Mean(i) => means[i] = values[at],
                Param::Std(i) => stds[i] = values[at],
                Param::TransitionRow(i) => {
                    let head = &values[at..at + k - 1];
                    for (j, v) in head.iter().enumerate() {
                        m[(i, j)] = *v;
                    }
                    m[(i, k - 1)] = 1.0 - head.iter().sum::<f64>();
                }
            }
            at += Self::block_len(p, k);
        }
        HmmModel::new(m, means, stds, Some(model.initial().probs().to_vec()))
    }

    /// Free parameters in natural units: means, standard deviations, and
    /// the first `K−1` probabilities of each free row.
    pub fn natural(&self, model: &HmmModel) -> Vec<f64> {
        let k = model.n_states();
        let mut out = Vec::with_capacity(self.dim(k));
        for &p in &self.params {
            match p {
                Param::Mean(i) => out.push(model.means()[i]),
                Param::Std(i) => out.push(model.stds()[i]),
                Param::TransitionRow(i) => {
                    out.extend((0..k - 1).map(|j| model.transition()[(i, j)]))
                }
            }
        }
        out
    }
}

/// Precomputed per-observation pieces of one gradient term.
fn term_from_parts(
    model: &HmmModel,
    sel: &ParamSelector,
    y: f64,
    rho_prev: &[f64],
    beta: &[f64],
) -> Result<Vec<f64>> {
    let k = model.n_states();
    let m = model.transition();
    // a = ρ_{j−1} M, d = emission densities scaled by a common factor that cancels
    let a: Vec<f64> = (0..k)
        .map(|j| (0..k).map(|i| rho_prev[i] * m[(i, j)]).sum())
        .collect();
    let logd: Vec<f64> = (0..k).map(|j| model.log_emission_density(j, y)).collect();
    let top = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let db: Vec<f64> = logd.iter().zip(beta).map(|(l, b)| (l - top).exp() * b).collect();
    let den: f64 = a.iter().zip(&db).map(|(u, v)| u * v).sum();
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::Domain(format!(
            "gradient term denominator {den} is not positive"
        )));
    }
    let mut out = Vec::with_capacity(sel.dim(k));
    for &p in sel.params() {
        match p {
            Param::Mean(i) => {
                let (mu, s) = (model.means()[i], model.stds()[i]);
                out.push(a[i] * db[i] * (y - mu) / (s * s) / den);
            }
            Param::Std(i) => {
                // derivative with respect to ln σ
                let z = (y - model.means()[i]) / model.stds()[i];
                out.push(a[i] * db[i] * (z * z - 1.0) / den);
            }
            Param::TransitionRow(i) => {
                let row_mean: f64 = (0..k).map(|l| m[(i, l)] * db[l]).sum();
                for mm in 0..k - 1 {
                    out.push(rho_prev[i] * m[(i, mm)] * (db[mm] - row_mean) / den);
                }
            }
        }
    }
    Ok(out)
}

/// Summand `j` (1-based) of the log-likelihood gradient:
/// `ρ_{j−1} ∂(M D_j) β_j / (ρ_{j−1} M D_j β_j)` in packed coordinates.
pub fn term_gradient(
    model: &HmmModel,
    obs: &ObservationSequence,
    j: usize,
    rho_prev: &[f64],
    beta_j: &[f64],
    sel: &ParamSelector,
) -> Result<Vec<f64>> {
    if j == 0 || j > obs.len() {
        return Err(Error::OutOfRange(format!("j = {j} outside 1..={}", obs.len())));
    }
    let k = model.n_states();
    for v in [rho_prev, beta_j] {
        if v.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: v.len(),
            });
        }
    }
    term_from_parts(model, sel, obs.get(j), rho_prev, beta_j)
}

/// Every exact term `j = 1..n`, from a full forward and backward pass.
pub fn all_terms(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
) -> Result<Vec<Vec<f64>>> {
    sel.check(model)?;
    let fwd = forward_filter(model, obs)?;
    let bwd = backward_filter(model, obs)?;
    (1..=obs.len())
        .map(|j| {
            let rho_prev = if j == 1 {
                model.initial().probs()
            } else {
                fwd.rhos[j - 2].probs()
            };
            term_from_parts(model, sel, obs.get(j), rho_prev, bwd.betas[j - 1].probs())
        })
        .collect()
}

fn sum_terms<'a>(dim: usize, terms: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    for t in terms {
        for (a, b) in g.iter_mut().zip(t) {
            *a += b;
        }
    }
    g
}

/// Exact gradient of `ln p(y_{1:n} | θ)` in packed coordinates.
pub fn full_gradient(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
) -> Result<Vec<f64>> {
    let terms = all_terms(model, obs, sel)?;
    Ok(sum_terms(sel.dim(model.n_states()), terms.iter()))
}

/// Exact sum of terms over the 1-based inclusive range `lo..=hi`.
pub fn range_gradient(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    lo: usize,
    hi: usize,
) -> Result<Vec<f64>> {
    if lo == 0 || hi > obs.len() || lo > hi {
        return Err(Error::OutOfRange(format!(
            "range {lo}..={hi} not inside 1..={}",
            obs.len()
        )));
    }
    let terms = all_terms(model, obs, sel)?;
    Ok(sum_terms(sel.dim(model.n_states()), terms[lo - 1..hi].iter()))
}

/// Sampling domain `[B1+1, n−B2−1]` (1-based, inclusive).
pub fn sample_range(n: usize, b1: usize, b2: usize) -> Result<(usize, usize)> {
    let lo = b1 + 1;
    match n.checked_sub(b2 + 1) {
        Some(hi) if hi >= lo => Ok((lo, hi)),
        _ => Err(Error::InvalidInput(format!(
            "empty sampling range: need B1 + 1 <= n - B2 - 1 (n = {n}, B1 = {b1}, B2 = {b2})"
        ))),
    }
}

/// Exact gradient minus its restricted-range part: the terms the
/// mini-batch estimator never sees.
pub fn boundary_gradient(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    b1: usize,
    b2: usize,
) -> Result<Vec<f64>> {
    let (lo, hi) = sample_range(obs.len(), b1, b2)?;
    let terms = all_terms(model, obs, sel)?;
    let dim = sel.dim(model.n_states());
    Ok(sum_terms(
        dim,
        terms[..lo - 1].iter().chain(terms[hi..].iter()),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    /// `(n−B1−B2−1)/s · Σ_j term_j` over the sampled indices.
    pub gradient: Vec<f64>,
    /// Buffered term values, aligned with `indices`.
    pub terms: Vec<Vec<f64>>,
    /// Sampled 1-based indices, ascending.
    pub indices: Vec<usize>,
    /// Estimated variance of each gradient component (with the
    /// finite-population correction for sampling without replacement).
    pub variance: Vec<f64>,
    /// Matrix–vector products spent in the buffer windows.
    pub matvecs: u64,
}

/// Draws `s` distinct indices uniformly from `[lo, hi]`. With
/// `non_overlapping`, an index whose window `[j−B1, j+B2]` meets an
/// already accepted window is rejected and redrawn.
fn draw_indices(
    lo: usize,
    hi: usize,
    s: usize,
    b1: usize,
    b2: usize,
    non_overlapping: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    let count = hi - lo + 1;
    if s == 0 || s > count {
        return Err(Error::InvalidInput(format!(
            "batch size {s} must lie in 1..={count}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = if non_overlapping {
        let span = b1 + b2 + 1;
        let mut accepted: Vec<usize> = Vec::with_capacity(s);
        let max_tries = 1000 * s;
        let mut tries = 0;
        while accepted.len() < s {
            tries += 1;
            if tries > max_tries {
                return Err(Error::InvalidInput(format!(
                    "could not place {s} non-overlapping windows of length {span} in {count} positions"
                )));
            }
            let j = rng.random_range(lo..=hi);
            if accepted.iter().all(|&a| a.abs_diff(j) >= span) {
                accepted.push(j);
            }
        }
        accepted
    } else {
        rand::seq::index::sample(&mut rng, count, s)
            .into_iter()
            .map(|i| lo + i)
            .collect()
    };
    idx.sort_unstable();
    Ok(idx)
}

/// Buffered estimate of term `j`: `ρ_{j−1}` from the `B1` preceding
/// observations, `β_j` from the `B2` following ones.
pub fn buffered_term(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    j: usize,
    b1: usize,
    b2: usize,
) -> Result<(Vec<f64>, u64)> {
    let n = obs.len();
    if j == 0 || j > n {
        return Err(Error::OutOfRange(format!("j = {j} outside 1..={n}")));
    }
    let ys = obs.values();
    let lw = left_window(j, b1);
    let rw = right_window(j, b2, n);
    let cost = (lw.len() + rw.len()) as u64;
    let rho = filter_window(model, &ys[lw])?;
    let beta = backward_window(model, &ys[rw])?;
    Ok((term_from_parts(model, sel, ys[j - 1], &rho, &beta)?, cost))
}

/// Estimator over a given index set, scaled by `(n−B1−B2−1)/|indices|`.
/// Terms are evaluated in parallel and summed in index order.
pub fn minibatch_gradient_at(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    indices: &[usize],
    b1: usize,
    b2: usize,
) -> Result<GradientReport> {
    minibatch_gradient_windows(model, obs, sel, indices, (b1, b2), (b1, b2))
}

/// As [`minibatch_gradient_at`], with the sampling range fixed by `range`
/// and the term windows by `windows`. Windows of length `n` give exact terms.
pub fn minibatch_gradient_windows(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    indices: &[usize],
    range: (usize, usize),
    windows: (usize, usize),
) -> Result<GradientReport> {
    let (b1, b2) = range;
    sel.check(model)?;
    let (lo, hi) = sample_range(obs.len(), b1, b2)?;
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty index set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j < lo || j > hi) {
        return Err(Error::OutOfRange(format!("index {bad} outside [{lo}, {hi}]")));
    }
    let results: Vec<(Vec<f64>, u64)> = indices
        .par_iter()
        .map(|&j| buffered_term(model, obs, sel, j, windows.0, windows.1))
        .collect::<Result<_>>()?;
    let dim = sel.dim(model.n_states());
    let s = indices.len() as f64;
    let count = (hi - lo + 1) as f64;
    let scale = count / s;
    let mut terms = Vec::with_capacity(results.len());
    let mut matvecs = 0;
    for (t, c) in results {
        matvecs += c;
        terms.push(t);
    }
    let mut gradient = sum_terms(dim, terms.iter());
    gradient.iter_mut().for_each(|g| *g *= scale);
    let variance = (0..dim)
        .map(|c| {
            if indices.len() < 2 {
                return f64::NAN;
            }
            let mean = terms.iter().map(|t| t[c]).sum::<f64>() / s;
            let var = terms.iter().map(|t| (t[c] - mean).powi(2)).sum::<f64>() / (s - 1.0);
            count * count * var / s * (1.0 - s / count)
        })
        .collect();
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("mini-batch gradient".into()));
    }
    Ok(GradientReport {
        gradient,
        terms,
        indices: indices.to_vec(),
        variance,
        matvecs,
    })
}

/// Mini-batch gradient: `s` indices drawn without replacement from
/// `[B1+1, n−B2−1]`, each term evaluated on its buffer windows.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_gradient(
    model: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    s: usize,
    b1: usize,
    b2: usize,
    non_overlapping: bool,
    seed: u64,
) -> Result<GradientReport> {
    let (lo, hi) = sample_range(obs.len(), b1, b2)?;
    let indices = draw_indices(lo, hi, s, b1, b2, non_overlapping, seed)?;
    minibatch_gradient_at(model, obs, sel, &indices, b1, b2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferChoice {
    /// Re-estimated from the current parameters at every restart.
    Auto,
    Fixed { b1: usize, b2: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaSchedule {
    /// `η = η0 · decay^t` with `t` counted within the current restart.
    PerRestart,
    /// `t` counts every step of the run; restarts do not reset it.
    Global,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta0: f64,
    pub decay: f64,
    pub steps_per_restart: usize,
    pub restart_threshold: f64,
    pub batch_size: usize,
    pub buffer: BufferChoice,
    /// Forgetting tolerance used by automatic buffers.
    pub epsilon: f64,
    pub seed: u64,
    pub eta_schedule: EtaSchedule,
    pub max_restarts: usize,
    pub non_overlapping: bool,
    /// Length of the fixed prefix used for log-likelihood probes.
    pub probe_len: usize,
    /// Abort when the probe falls this many nats below its starting value.
    pub divergence_nats: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            decay: 0.95,
            steps_per_restart: 25,
            restart_threshold: 0.02,
            batch_size: 100,
            buffer: BufferChoice::Auto,
            epsilon: 1e-10,
            seed: 0,
            eta_schedule: EtaSchedule::PerRestart,
            max_restarts: 100,
            non_overlapping: false,
            probe_len: 10_000,
            divergence_nats: 1e3,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            bad.push("eta0 must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            bad.push("decay must lie in (0, 1)");
        }
        if self.steps_per_restart == 0 {
            bad.push("steps_per_restart must be positive");
        }
        if !(self.restart_threshold > 0.0) {
            bad.push("restart_threshold must be positive");
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad.push("epsilon must lie in (0, 1)");
        }
        if self.max_restarts == 0 {
            bad.push("max_restarts must be positive");
        }
        if self.probe_len == 0 {
            bad.push("probe_len must be positive");
        }
        if let BufferChoice::Fixed { b1, b2 } = self.buffer {
            if b1 == 0 || b2 == 0 {
                bad.push("buffers must be positive");
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    /// 0-based restart number.
    pub restart: usize,
    /// Global step number, 1-based; step 0 of restart 0 is the start point.
    pub step: usize,
    /// Free parameters in natural units after this step.
    pub theta: Vec<f64>,
    pub eta: f64,
    pub probe_loglik: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SgdResult {
    #[serde(skip)]
    pub model: HmmModel,
    /// Final free parameters in natural units.
    pub theta_hat: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Matrix–vector products spent on gradient windows.
    pub multiplies: u64,
    /// Matrix–vector products spent on buffer-length estimation.
    pub gap_multiplies: u64,
    /// Buffers used in the last restart.
    pub buffers: (usize, usize),
    pub restarts: usize,
    pub converged: bool,
}

/// Number of observations fed to the gap estimate for automatic buffers.
const AUTO_GAP_LEN: usize = 10_000;

fn auto_buffers(
    model: &HmmModel,
    obs: &ObservationSequence,
    epsilon: f64,
    seed: u64,
) -> Result<(usize, usize, u64)> {
    let len = obs.len().min(AUTO_GAP_LEN);
    let head = ObservationSequence::new(obs.values()[..len].to_vec())?;
    let burn_in = DEFAULT_BURN_IN.min(len / 10);
    let fwd = estimate_gap(model, &head, burn_in, derive_seed(seed, 1))?;
    let bwd = estimate_backward_gap(model, &head, burn_in, derive_seed(seed, 2))?;
    let b1 = buffer_length(fwd.gap, epsilon)?;
    let b2 = buffer_length(bwd.gap, epsilon)?;
    Ok((b1, b2, 2 * len as u64))
}

fn probe(model: &HmmModel, ys: &[f64]) -> Result<f64> {
    let mut f = ForwardFilter::new(model);
    for &y in ys {
        f.step(y)?;
    }
    Ok(f.log_likelihood())
}

/// Normalized stochastic gradient ascent with restarts.
///
/// Each restart optionally re-estimates the buffers, takes
/// `steps_per_restart` steps `θ ← θ + η g/‖g‖`, and the run stops once a
/// restart moves the unconstrained parameters by less than
/// `restart_threshold` in the max norm. Hitting `max_restarts` returns the
/// last iterate with `converged = false`.
pub fn sgd_infer(
    model0: &HmmModel,
    obs: &ObservationSequence,
    sel: &ParamSelector,
    config: &SgdConfig,
) -> Result<SgdResult> {
    config.validate()?;
    let mut theta = sel.pack(model0)?;
    let mut model = sel.unpack(model0, &theta)?;
    let probe_ys = &obs.values()[..obs.len().min(config.probe_len)];
    let probe0 = probe(&model, probe_ys)?;
    let mut trace = vec![TraceRow {
        restart: 0,
        step: 0,
        theta: sel.natural(&model),
        eta: 0.0,
        probe_loglik: probe0,
    }];
    let mut multiplies = 0;
    let mut gap_multiplies = 0;
    let mut buffers = (0, 0);
    let mut global_step = 0usize;
    let mut converged = false;
    let mut restarts = 0;
    while restarts < config.max_restarts {
        let restart = restarts;
        restarts += 1;
        buffers = match config.buffer {
            BufferChoice::Fixed { b1, b2 } => (b1, b2),
            BufferChoice::Auto => {
                let (b1, b2, cost) =
                    auto_buffers(&model, obs, config.epsilon, derive_seed(config.seed, 1_000_000 + restart as u64))?;
                gap_multiplies += cost;
                (b1, b2)
            }
        };
        sample_range(obs.len(), buffers.0, buffers.1)?;
        let theta_start = theta.clone();
        for local in 0..config.steps_per_restart {
            let t = match config.eta_schedule {
                EtaSchedule::PerRestart => local,
                EtaSchedule::Global => global_step,
            };
            global_step += 1;
            let eta = config.eta0 * config.decay.powi(t as i32);
            let report = minibatch_gradient(
                &model,
                obs,
                sel,
                config.batch_size,
                buffers.0,
                buffers.1,
                config.non_overlapping,
                derive_seed(config.seed, global_step as u64),
            )?;
            multiplies += report.matvecs;
            let norm = report.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (th, g) in theta.iter_mut().zip(&report.gradient) {
                    *th += eta * g / norm;
                }
                model = sel.unpack(model0, &theta)?;
            }
            let p = probe(&model, probe_ys)?;
            trace.push(TraceRow {
                restart,
                step: global_step,
                theta: sel.natural(&model),
                eta,
                probe_loglik: p,
            });
            if p < probe0 - config.divergence_nats {
                return Err(Error::Divergence(format!(
                    "probe log-likelihood fell from {probe0:.3} to {p:.3} at step {global_step} (theta = {:?})",
                    sel.natural(&model)
                )));
            }
        }
        let moved = theta
            .iter()
            .zip(&theta_start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log::info!("restart {restart}: moved {moved:.4}, theta {:?}", sel.natural(&model));
        if moved < config.restart_threshold {
            converged = true;
            break;
        }
    }
    Ok(SgdResult {
        theta_hat: sel.natural(&model),
        model,
        trace,
        multiplies,
        gap_multiplies,
        buffers,
        restarts,
        converged,
    })
}
