//! Ensemble selection over a pool of trained networks.
//!
//! All algorithms score candidates on a validation pairing and minimise the
//! NLL of the (weighted) probability average. Argmin ties always go to the
//! smallest [`LearnerId`], so results do not depend on candidate order or on
//! how candidate scoring is parallelised.

use std::collections::BTreeSet;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    argmax, check_simplex, ensemble_average, neg_log, nll, AveragingMode, LabelVector, PredictionMatrix,
};

/// Identifier of one trained network in a pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LearnerId(pub usize);

impl fmt::Display for LearnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A pool member's validation predictions.
pub type Candidate<'a> = (LearnerId, &'a PredictionMatrix);

/// Ordered ensemble members with optional simplex weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelection {
    member_ids: Vec<LearnerId>,
    weights: Option<Vec<f64>>,
    with_replacement: bool,
}

impl EnsembleSelection {
    /// Uniformly weighted selection without repeats.
    pub fn uniform(member_ids: Vec<LearnerId>) -> Result<Self> {
        Self::new(member_ids, None, false)
    }

    pub fn new(member_ids: Vec<LearnerId>, weights: Option<Vec<f64>>, with_replacement: bool) -> Result<Self> {
        if member_ids.is_empty() {
            return Err(Error::Empty("ensemble selection"));
        }
        if !with_replacement {
            let distinct: BTreeSet<_> = member_ids.iter().collect();
            if distinct.len() != member_ids.len() {
                return Err(Error::InvalidArgument("duplicate member in a selection without replacement".into()));
            }
        }
        if let Some(w) = &weights {
            if w.len() != member_ids.len() {
                return Err(Error::InvalidWeights(format!("{} weights for {} members", w.len(), member_ids.len())));
            }
            check_simplex(w)?;
        }
        Ok(Self { member_ids, weights, with_replacement })
    }

    pub fn member_ids(&self) -> &[LearnerId] {
        &self.member_ids
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Same members with new weights.
    pub fn reweighted(&self, weights: Option<Vec<f64>>) -> Result<Self> {
        Self::new(self.member_ids.clone(), weights, self.with_replacement)
    }

    /// Resolves member predictions from a candidate list.
    pub fn resolve<'a>(&self, candidates: &[Candidate<'a>]) -> Result<Vec<&'a PredictionMatrix>> {
        self.member_ids
            .iter()
            .map(|id| {
                candidates
                    .iter()
                    .find(|(cid, _)| cid == id)
                    .map(|(_, m)| *m)
                    .ok_or_else(|| Error::InvalidArgument(format!("selected member {id} is not a candidate")))
            })
            .collect()
    }

    /// NLL of the (weighted) probability average on `labels`.
    pub fn nll(&self, candidates: &[Candidate<'_>], labels: &LabelVector) -> Result<f64> {
        let members = self.resolve(candidates)?;
        let avg = ensemble_average(&members, self.weights(), AveragingMode::Probability)?;
        nll(&avg, labels)
    }
}

/// Candidates sorted by id plus their true-class probabilities.
struct Prepared<'a> {
    ids: Vec<LearnerId>,
    mats: Vec<&'a PredictionMatrix>,
    true_probs: Vec<Vec<f64>>,
    num_points: usize,
}

impl<'a> Prepared<'a> {
    fn new(candidates: &[Candidate<'a>], labels: &LabelVector) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
        let mut sorted: Vec<Candidate<'a>> = candidates.to_vec();
        sorted.sort_by_key(|(id, _)| *id);
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate candidate id".into()));
        }
        let shape = sorted[0].1.shape();
        if let Some((id, m)) = sorted.iter().find(|(_, m)| m.shape() != shape) {
            return Err(Error::ShapeMismatch(format!("candidate {id} has shape {:?}, expected {shape:?}", m.shape())));
        }
        let true_probs = sorted.iter().map(|(_, m)| m.true_class_probs(labels)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: sorted.iter().map(|(id, _)| *id).collect(),
            mats: sorted.iter().map(|(_, m)| *m).collect(),
            true_probs,
            num_points: shape.0,
        })
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    /// NLL of the uniform average whose true-class probabilities sum to
    /// `sum + extra` over `count` members. Mirrors [`ensemble_average`]
    /// followed by [`nll`] operation for operation.
    fn uniform_nll(&self, sum: &[f64], extra: Option<&[f64]>, count: usize) -> f64 {
        let m = count as f64;
        let total: f64 = match extra {
            Some(e) => sum.iter().zip(e).map(|(s, p)| neg_log(((s + p) / m).clamp(0.0, 1.0))).sum(),
            None => sum.iter().map(|s| neg_log((s / m).clamp(0.0, 1.0))).sum(),
        };
        total / self.num_points as f64
    }

    fn individual_nll(&self, k: usize) -> f64 {
        let zero = vec![0.0; self.num_points];
        self.uniform_nll(&zero, Some(&self.true_probs[k]), 1)
    }
}

/// Index of the minimum score; strict comparison keeps the earliest index.
fn argmin(scores: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in scores {
        match best {
            Some((_, b)) if !(s < b) => {}
            _ => best = Some((k, s)),
        }
    }
    best.map(|(k, _)| k)
}

fn check_size(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    Ok(())
}

/// Greedy forward step-wise selection minimising validation NLL.
///
/// Starts from an empty ensemble and repeatedly adds the candidate whose
/// inclusion gives the lowest ensemble NLL. Without replacement each
/// candidate may be chosen once.
pub fn forward_select(
    candidates: &[Candidate<'_>],
    labels: &LabelVector,
    m: usize,
    with_replacement: bool,
) -> Result<EnsembleSelection> {
    greedy(candidates, labels, m, with_replacement, 0.0)
}

/// [`forward_select`] (without replacement) minimising
/// `NLL - lambda * diversity`, where diversity is the mean L2 distance between
/// member rows and the ensemble's rows.
pub fn forward_select_diverse(
    candidates: &[Candidate<'_>],
    labels: &LabelVector,
    m: usize,
    lambda: f64,
) -> Result<EnsembleSelection> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("diversity strength must be >= 0, got {lambda}")));
    }
    greedy(candidates, labels, m, false, lambda)
}

fn greedy(
    candidates: &[Candidate<'_>],
    labels: &LabelVector,
    m: usize,
    with_replacement: bool,
    lambda: f64,
) -> Result<EnsembleSelection> {
    check_size(m)?;
    let prep = Prepared::new(candidates, labels)?;
    if !with_replacement && prep.len() < m {
        return Err(Error::PoolTooSmall { pool: prep.len(), requested: m });
    }
    let n = prep.num_points;
    let c = prep.mats[0].num_classes();
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut used = vec![false; prep.len()];
    let mut true_sum = vec![0.0; n];
    // full-row sum, only needed for the diversity term
    let mut row_sum = if lambda > 0.0 { vec![0.0; n * c] } else { Vec::new() };

    while chosen.len() < m {
        let count = chosen.len() + 1;
        let scores: Vec<(usize, f64)> = (0..prep.len())
            .into_par_iter()
            .filter(|&k| with_replacement || !used[k])
            .map(|k| {
                let loss = prep.uniform_nll(&true_sum, Some(&prep.true_probs[k]), count);
                let objective = if lambda > 0.0 {
                    let members: Vec<usize> = chosen.iter().copied().chain(std::iter::once(k)).collect();
                    loss - lambda * diversity(&prep, &members, &row_sum, k, c)
                } else {
                    loss
                };
                (k, objective)
            })
            .collect();
        let k = argmin(&scores).expect("at least one candidate remains");
        chosen.push(k);
        used[k] = true;
        for (s, p) in true_sum.iter_mut().zip(&prep.true_probs[k]) {
            *s += p;
        }
        if lambda > 0.0 {
            for (s, p) in row_sum.iter_mut().zip(prep.mats[k].as_slice()) {
                *s += p;
            }
        }
    }
    EnsembleSelection::new(chosen.iter().map(|&k| prep.ids[k]).collect(), None, with_replacement)
}

/// Mean over members and points of `||p_i(x) - F(x)||_2`, where `F` is the
/// average of `members`; `row_sum` holds the sum over all but `extra`.
fn diversity(prep: &Prepared<'_>, members: &[usize], row_sum: &[f64], extra: usize, c: usize) -> f64 {
    let n = prep.num_points;
    let m = members.len() as f64;
    let extra_rows = prep.mats[extra].as_slice();
    let mut total = 0.0;
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            mean[j] = (row_sum[i * c + j] + extra_rows[i * c + j]) / m;
        }
        for &k in members {
            let row = prep.mats[k].row(i);
            let d2: f64 = row.iter().zip(&mean).map(|(p, f)| (p - f) * (p - f)).sum();
            total += d2.sqrt();
        }
    }
    total / (m * n as f64)
}

/// The `m` candidates with the lowest individual validation NLL.
pub fn top_m(candidates: &[Candidate<'_>], labels: &LabelVector, m: usize) -> Result<EnsembleSelection> {
    check_size(m)?;
    let prep = Prepared::new(candidates, labels)?;
    if prep.len() < m {
        return Err(Error::PoolTooSmall { pool: prep.len(), requested: m });
    }
    let order = ranked_by_nll(&prep);
    EnsembleSelection::uniform(order.into_iter().take(m).map(|k| prep.ids[k]).collect())
}

fn ranked_by_nll(prep: &Prepared<'_>) -> Vec<usize> {
    let losses: Vec<f64> = (0..prep.len()).map(|k| prep.individual_nll(k)).collect();
    let mut order: Vec<usize> = (0..prep.len()).collect();
    // stable sort keeps id order among equal losses
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    order
}

/// Walks candidates from best to worst individual NLL, keeping each one only
/// if it strictly lowers the ensemble's validation NLL. May return fewer
/// than `m` members.
pub fn quick_and_greedy(candidates: &[Candidate<'_>], labels: &LabelVector, m: usize) -> Result<EnsembleSelection> {
    check_size(m)?;
    let prep = Prepared::new(candidates, labels)?;
    let order = ranked_by_nll(&prep);
    let mut chosen = vec![order[0]];
    let mut sum = prep.true_probs[order[0]].clone();
    let mut current = prep.uniform_nll(&sum, None, 1);
    for &k in &order[1..] {
        if chosen.len() == m {
            break;
        }
        let trial = prep.uniform_nll(&sum, Some(&prep.true_probs[k]), chosen.len() + 1);
        if trial < current {
            chosen.push(k);
            for (s, p) in sum.iter_mut().zip(&prep.true_probs[k]) {
                *s += p;
            }
            current = trial;
        }
    }
    EnsembleSelection::uniform(chosen.iter().map(|&k| prep.ids[k]).collect())
}

/// Exponentiated-gradient settings for [`stacking_fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct StackingOptions {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once an iteration improves NLL by less than this.
    pub tolerance: f64,
    /// Record every iterate in [`StackingFit::trace`].
    pub keep_trace: bool,
}

impl Default for StackingOptions {
    fn default() -> Self {
        Self { step_size: 0.1, max_iters: 500, tolerance: 1e-7, keep_trace: false }
    }
}

/// Learned stacking weights over the whole pool.
#[derive(Clone, Debug, PartialEq)]
pub struct StackingFit {
    /// Candidate ids in ascending order, aligned with `weights`.
    pub ids: Vec<LearnerId>,
    pub weights: Vec<f64>,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<Vec<f64>>,
}

/// Learns simplex weights over every candidate by mirror descent on the
/// validation NLL of the weighted average. Returns the best iterate.
pub fn stacking_fit(candidates: &[Candidate<'_>], labels: &LabelVector, opts: &StackingOptions) -> Result<StackingFit> {
    let prep = Prepared::new(candidates, labels)?;
    let k = prep.len();
    let n = prep.num_points;
    let loss = |w: &[f64]| -> f64 {
        let total: f64 = (0..n)
            .map(|i| {
                let q: f64 = (0..k).map(|j| w[j] * prep.true_probs[j][i]).sum();
                neg_log(q)
            })
            .sum();
        total / n as f64
    };
    let mut w = vec![1.0 / k as f64; k];
    let mut current = loss(&w);
    let mut best = (w.clone(), current);
    let mut trace = Vec::new();
    if opts.keep_trace {
        trace.push(w.clone());
    }
    let mut converged = k == 1;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let q: Vec<f64> =
            (0..n).map(|i| (0..k).map(|j| w[j] * prep.true_probs[j][i]).sum::<f64>().max(1e-12)).collect();
        let logits: Vec<f64> = (0..k)
            .map(|j| {
                let grad = -(0..n).map(|i| prep.true_probs[j][i] / q[i]).sum::<f64>() / n as f64;
                w[j].ln() - opts.step_size * grad
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut next: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = next.iter().sum();
        for v in &mut next {
            *v /= z;
        }
        let value = loss(&next);
        if opts.keep_trace {
            trace.push(next.clone());
        }
        if value < best.1 {
            best = (next.clone(), value);
        }
        converged = current - value < opts.tolerance;
        w = next;
        current = value;
    }
    if !converged {
        warn!("stacking did not converge in {} iterations; returning best iterate", opts.max_iters);
    }
    Ok(StackingFit { ids: prep.ids, weights: best.0, nll: best.1, iterations, converged, trace })
}

/// Stacking: fit weights over the whole pool, keep the `m` heaviest
/// candidates, and either renormalise their weights or average uniformly.
pub fn stacking_select(
    candidates: &[Candidate<'_>],
    labels: &LabelVector,
    m: usize,
    weighted_output: bool,
) -> Result<EnsembleSelection> {
    check_size(m)?;
    if candidates.len() < m {
        return Err(Error::PoolTooSmall { pool: candidates.len(), requested: m });
    }
    let fit = stacking_fit(candidates, labels, &StackingOptions::default())?;
    let mut order: Vec<usize> = (0..fit.ids.len()).collect();
    order.sort_by(|&a, &b| fit.weights[b].total_cmp(&fit.weights[a]));
    order.truncate(m);
    let ids = order.iter().map(|&k| fit.ids[k]).collect();
    let weights = if weighted_output {
        let total: f64 = order.iter().map(|&k| fit.weights[k]).sum();
        Some(order.iter().map(|&k| fit.weights[k] / total).collect())
    } else {
        None
    };
    EnsembleSelection::new(ids, weights, false)
}

/// Source of Bayesian-model-averaging weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BmaScheme {
    /// Proportional to the validation likelihood `exp(-N * NLL)`.
    Likelihood,
    /// Proportional to validation accuracy.
    Accuracy,
}

/// Reweights an existing selection by normalised validation likelihood or
/// accuracy. The member list is unchanged.
pub fn bma_reweight(
    selection: &EnsembleSelection,
    candidates: &[Candidate<'_>],
    labels: &LabelVector,
    scheme: BmaScheme,
) -> Result<EnsembleSelection> {
    let members = selection.resolve(candidates)?;
    let n = labels.len() as f64;
    let raw: Vec<f64> = match scheme {
        BmaScheme::Likelihood => {
            let logs = members.iter().map(|m| nll(m, labels).map(|v| -n * v)).collect::<Result<Vec<_>>>()?;
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            logs.iter().map(|l| (l - max).exp()).collect()
        }
        BmaScheme::Accuracy => members
            .iter()
            .map(|m| {
                let hits = labels.iter().enumerate().filter(|&(i, y)| argmax(m.row(i)) == y).count();
                hits as f64 / n
            })
            .collect(),
    };
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        warn!("all BMA weights are zero; falling back to uniform weights");
        vec![1.0 / raw.len() as f64; raw.len()]
    };
    selection.reweighted(Some(weights))
}

/// Upper bound on subsets enumerated by [`exhaustive_select`].
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// The exact minimum-NLL subset of size `m` (uniform average), found by
/// enumerating every combination. Ties go to the lexicographically smallest
/// id set. Members are returned in ascending id order.
pub fn exhaustive_select(candidates: &[Candidate<'_>], labels: &LabelVector, m: usize) -> Result<EnsembleSelection> {
    check_size(m)?;
    let prep = Prepared::new(candidates, labels)?;
    let k = prep.len();
    if k < m {
        return Err(Error::PoolTooSmall { pool: k, requested: m });
    }
    let count = binomial(k, m);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::GuardExceeded { pool: k, size: m, count, limit: EXHAUSTIVE_LIMIT });
    }
    let n = prep.num_points;
    let mut combo: Vec<usize> = (0..m).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut sum = vec![0.0; n];
    loop {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for &j in &combo {
            for (s, p) in sum.iter_mut().zip(&prep.true_probs[j]) {
                *s += p;
            }
        }
        let value = prep.uniform_nll(&sum, None, m);
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((combo.clone(), value));
        }
        // next combination in lexicographic order
        let mut i = m;
        loop {
            if i == 0 {
                let (ids, _) = best.expect("at least one subset");
                return EnsembleSelection::uniform(ids.iter().map(|&j| prep.ids[j]).collect());
            }
            i -= 1;
            if combo[i] < k - m + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..m {
            combo[j] = combo[j - 1] + 1;
        }
    }
}
