//! Prediction matrices, ensembling, and the scalar metric suite.
//!
//! Every metric works on class-probability matrices (one row per evaluation
//! point). Probabilities are clamped to [`PROB_CLAMP`] before any logarithm so
//! degenerate one-hot rows never produce infinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Row-sum tolerance accepted by [`PredictionMatrix::new`].
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Tolerance on simplex weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-8;

/// Slack allowed by [`loss_chain_check`] for clamping effects.
pub const LOSS_CHAIN_SLACK: f64 = 1e-9;

/// Default number of equal-width confidence bins for [`ece`].
pub const DEFAULT_ECE_BINS: usize = 15;

/// An `N x C` row-stochastic matrix of class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    num_points: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl PredictionMatrix {
    /// Builds a matrix from row-major probabilities, validating every row.
    pub fn new(num_points: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if num_points == 0 {
            return Err(Error::InvalidMatrix("at least one point is required".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidMatrix(format!("need at least 2 classes, got {num_classes}")));
        }
        if probs.len() != num_points * num_classes {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for {num_points}x{num_classes}, got {}",
                num_points * num_classes,
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(num_classes).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidMatrix(format!("row {i} has entry {p} outside [0, 1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { num_points, num_classes, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_classes) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        Self::new(rows.len(), num_classes, rows.concat())
    }

    /// Softmax of row-major logits.
    pub fn from_logits(num_points: usize, num_classes: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != num_points * num_classes {
            return Err(Error::InvalidMatrix("logit length does not match shape".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite logit".into()));
        }
        let mut probs = logits.to_vec();
        if num_classes > 0 {
            for row in probs.chunks_exact_mut(num_classes) {
                softmax_in_place(row);
            }
        }
        Self::new(num_points, num_classes, probs)
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_points, self.num_classes)
    }

    /// Row-major probabilities.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_classes)
    }

    /// Index of the largest entry of row `i`, ties toward the lowest class.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    /// Probability assigned to the true class at every point.
    pub fn true_class_probs(&self, labels: &LabelVector) -> Result<Vec<f64>> {
        check_pair(self, labels)?;
        Ok(labels.iter().enumerate().map(|(i, y)| self.probs[i * self.num_classes + y]).collect())
    }
}

/// Class indices paired with a prediction matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    /// Builds labels and checks that every index is below `num_classes`.
    pub fn with_classes(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabels(format!("label {bad} is not below {num_classes}")));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl From<Vec<usize>> for LabelVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// How member predictions are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingMode {
    /// Average post-softmax probabilities.
    #[default]
    Probability,
    /// Average log-probabilities, then re-normalise with a softmax.
    Logit,
}

/// Scalar summary of one ensemble on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nll: f64,
    pub error: f64,
    pub ece: f64,
    pub oracle_nll: f64,
    pub avg_bsl_nll: f64,
    pub pred_disagreement: f64,
}

impl EvalReport {
    /// Evaluates an ensemble of `members` with optional weights.
    ///
    /// Disagreement is reported as 0 for single-member ensembles.
    pub fn compute(members: &[&PredictionMatrix], weights: Option<&[f64]>, labels: &LabelVector) -> Result<Self> {
        let ensemble = ensemble_average(members, weights, AveragingMode::Probability)?;
        let pred_disagreement = if members.len() >= 2 { predictive_disagreement(members, labels)? } else { 0.0 };
        Ok(Self {
            nll: nll(&ensemble, labels)?,
            error: classification_error(&ensemble, labels)?,
            ece: ece(&ensemble, labels, DEFAULT_ECE_BINS)?,
            oracle_nll: oracle_nll(members, labels)?,
            avg_bsl_nll: avg_base_learner_nll(members, labels)?,
            pred_disagreement,
        })
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[inline]
pub(crate) fn neg_log(p: f64) -> f64 {
    -p.clamp(PROB_CLAMP, 1.0).ln()
}

fn check_pair(pred: &PredictionMatrix, labels: &LabelVector) -> Result<()> {
    if pred.num_points != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} prediction rows but {} labels", pred.num_points, labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&y| y >= pred.num_classes) {
        return Err(Error::ShapeMismatch(format!("label {bad} with only {} classes", pred.num_classes)));
    }
    Ok(())
}

fn check_members(members: &[&PredictionMatrix]) -> Result<(usize, usize)> {
    let first = members.first().ok_or(Error::Empty("member list"))?;
    let shape = first.shape();
    if let Some(m) = members.iter().find(|m| m.shape() != shape) {
        return Err(Error::ShapeMismatch(format!("member shapes {:?} and {:?}", shape, m.shape())));
    }
    Ok(shape)
}

pub(crate) fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Combines member predictions into one ensemble prediction.
///
/// Without weights the members are averaged uniformly: rows are summed in
/// member order and divided by the member count.
pub fn ensemble_average(
    members: &[&PredictionMatrix],
    weights: Option<&[f64]>,
    mode: AveragingMode,
) -> Result<PredictionMatrix> {
    let (n, c) = check_members(members)?;
    if let Some(w) = weights {
        if w.len() != members.len() {
            return Err(Error::InvalidWeights(format!("{} weights for {} members", w.len(), members.len())));
        }
        check_simplex(w)?;
    }
    let m = members.len() as f64;
    let mut out = vec![0.0; n * c];
    match mode {
        AveragingMode::Probability => {
            match weights {
                None => {
                    for member in members {
                        for (o, p) in out.iter_mut().zip(&member.probs) {
                            *o += p;
                        }
                    }
                    for o in &mut out {
                        *o /= m;
                    }
                }
                Some(w) => {
                    for (member, &wi) in members.iter().zip(w) {
                        for (o, p) in out.iter_mut().zip(&member.probs) {
                            *o += wi * p;
                        }
                    }
                }
            }
            // Guard against rounding pushing an entry a hair above 1.
            for o in &mut out {
                *o = o.clamp(0.0, 1.0);
            }
        }
        AveragingMode::Logit => {
            for (k, member) in members.iter().enumerate() {
                let wi = weights.map_or(1.0 / m, |w| w[k]);
                for (o, p) in out.iter_mut().zip(&member.probs) {
                    *o += wi * p.clamp(PROB_CLAMP, 1.0).ln();
                }
            }
            for row in out.chunks_exact_mut(c) {
                softmax_in_place(row);
            }
        }
    }
    PredictionMatrix::new(n, c, out)
}

/// Mean negative log-likelihood of the true class.
pub fn nll(pred: &PredictionMatrix, labels: &LabelVector) -> Result<f64> {
    check_pair(pred, labels)?;
    let total: f64 = labels.iter().enumerate().map(|(i, y)| neg_log(pred.probs[i * pred.num_classes + y])).sum();
    Ok(total / pred.num_points as f64)
}

/// Fraction of points whose argmax differs from the label.
pub fn classification_error(pred: &PredictionMatrix, labels: &LabelVector) -> Result<f64> {
    check_pair(pred, labels)?;
    let wrong = labels.iter().enumerate().filter(|&(i, y)| pred.argmax(i) != y).count();
    Ok(wrong as f64 / pred.num_points as f64)
}

/// Index of the right-closed bin `(b/B, (b+1)/B]` containing `conf`.
fn confidence_bin(conf: f64, num_bins: usize) -> usize {
    let b = num_bins as f64;
    let mut idx = ((conf * b).ceil() as isize - 1).clamp(0, num_bins as isize - 1) as usize;
    while idx > 0 && conf <= idx as f64 / b {
        idx -= 1;
    }
    while idx + 1 < num_bins && conf > (idx + 1) as f64 / b {
        idx += 1;
    }
    idx
}

/// Expected calibration error over `num_bins` equal-width confidence bins.
pub fn ece(pred: &PredictionMatrix, labels: &LabelVector, num_bins: usize) -> Result<f64> {
    check_pair(pred, labels)?;
    if num_bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    let mut count = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    for (i, y) in labels.iter().enumerate() {
        let row = pred.row(i);
        let top = argmax(row);
        let conf = row[top];
        let b = confidence_bin(conf, num_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if top == y {
            correct[b] += 1;
        }
    }
    let n = pred.num_points as f64;
    let mut total = 0.0;
    for b in 0..num_bins {
        if count[b] == 0 {
            continue;
        }
        let size = count[b] as f64;
        let acc = correct[b] as f64 / size;
        let conf = conf_sum[b] / size;
        total += (size / n) * (acc - conf).abs();
    }
    Ok(total)
}

/// NLL of the oracle ensemble: per point, the best member's loss.
pub fn oracle_nll(members: &[&PredictionMatrix], labels: &LabelVector) -> Result<f64> {
    let (n, c) = check_members(members)?;
    check_pair(members[0], labels)?;
    let mut total = 0.0;
    for (i, y) in labels.iter().enumerate() {
        let best = members.iter().map(|m| neg_log(m.probs[i * c + y])).fold(f64::INFINITY, f64::min);
        total += best;
    }
    Ok(total / n as f64)
}

/// Mean of the members' individual NLLs.
pub fn avg_base_learner_nll(members: &[&PredictionMatrix], labels: &LabelVector) -> Result<f64> {
    check_members(members)?;
    let mut total = 0.0;
    for m in members {
        total += nll(m, labels)?;
    }
    Ok(total / members.len() as f64)
}

/// Mean pairwise argmax disagreement divided by mean member error.
///
/// Returns `+inf` when members never err yet disagree, and 0 when they
/// neither err nor disagree.
pub fn predictive_disagreement(members: &[&PredictionMatrix], labels: &LabelVector) -> Result<f64> {
    let (n, _) = check_members(members)?;
    if members.len() < 2 {
        return Err(Error::InvalidArgument("predictive disagreement needs at least two members".into()));
    }
    check_pair(members[0], labels)?;
    let preds: Vec<Vec<usize>> = members.iter().map(|m| (0..n).map(|i| m.argmax(i)).collect()).collect();
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            let differ = preds[i].iter().zip(&preds[j]).filter(|(a, b)| a != b).count();
            pair_sum += differ as f64 / n as f64;
            pairs += 1;
        }
    }
    let disagreement = pair_sum / pairs as f64;
    let mut err_sum = 0.0;
    for p in &preds {
        let wrong = p.iter().zip(labels.iter()).filter(|(a, y)| **a != *y).count();
        err_sum += wrong as f64 / n as f64;
    }
    let mean_err = err_sum / preds.len() as f64;
    Ok(if mean_err == 0.0 {
        if disagreement > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        disagreement / mean_err
    })
}

/// Oracle, ensemble and average base-learner NLL of a uniform probability
/// average, with whether they are ordered as theory requires.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossChain {
    pub oracle_nll: f64,
    pub ensemble_nll: f64,
    pub avg_bsl_nll: f64,
    pub holds: bool,
}

/// Checks `oracle <= ensemble <= average` on a probability-averaged ensemble.
pub fn loss_chain_check(members: &[&PredictionMatrix], labels: &LabelVector) -> Result<LossChain> {
    let ensemble = ensemble_average(members, None, AveragingMode::Probability)?;
    let ensemble_nll = nll(&ensemble, labels)?;
    let oracle = oracle_nll(members, labels)?;
    let average = avg_base_learner_nll(members, labels)?;
    let holds = oracle <= ensemble_nll + LOSS_CHAIN_SLACK && ensemble_nll <= average + LOSS_CHAIN_SLACK;
    Ok(LossChain { oracle_nll: oracle, ensemble_nll, avg_bsl_nll: average, holds })
}
