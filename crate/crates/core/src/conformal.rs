//! Split conformal calibration and the per-record uncertainty target.
//!
//! Scores are computed on calibration records only. The calibrated
//! threshold is the `k`-th smallest score with `k = ceil((n + 1)(1 - alpha))`,
//! or `+inf` when `k > n`. Test records then get a prediction set (or
//! interval) and the target `r` is its size (or length).
//!
//! Conventions:
//! - APS orders classes by descending probability, ties by ascending index.
//! - Threshold sets may be empty; empty sets never cover.
//! - CQR intervals whose endpoints cross are empty with length 0.
//! - Interval endpoints are closed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitPair;
use crate::error::{Error, Result};
use crate::predictor::{PredictionBundle, Predictions, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// One minus the probability of the true class.
    TrueClassThreshold,
    /// Adaptive prediction sets: cumulative sorted mass through the true class.
    Aps,
    /// Conformalized quantile regression.
    Cqr,
    /// Absolute residual around the midpoint of the quantile pair.
    Residual,
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_class_threshold" | "threshold" => Ok(ScoreMethod::TrueClassThreshold),
            "aps" => Ok(ScoreMethod::Aps),
            "cqr" => Ok(ScoreMethod::Cqr),
            "residual" => Ok(ScoreMethod::Residual),
            other => Err(Error::InvalidParameter(format!(
                "unknown score method `{other}` (true_class_threshold, aps, cqr, residual)"
            ))),
        }
    }
}

impl ScoreMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::TrueClassThreshold => "true_class_threshold",
            ScoreMethod::Aps => "aps",
            ScoreMethod::Cqr => "cqr",
            ScoreMethod::Residual => "residual",
        }
    }

    pub fn task(self) -> Task {
        match self {
            ScoreMethod::TrueClassThreshold | ScoreMethod::Aps => Task::Classification,
            ScoreMethod::Cqr | ScoreMethod::Residual => Task::Regression,
        }
    }

    pub fn check_task(self, task: Task) -> Result<()> {
        if self.task() == task {
            Ok(())
        } else {
            Err(Error::MethodTaskMismatch {
                method: self.as_str(),
                task: task.as_str(),
            })
        }
    }
}

/// 1-based rank `ceil((n + 1)(1 - alpha))` of the calibrated score.
///
/// The product is snapped to the nearest integer when it is within
/// relative 1e-10 of it, so decimal levels such as `alpha = 0.95` do not
/// pick up a spurious extra rank from binary rounding.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha);
    let nearest = target.round();
    if (target - nearest).abs() <= 1e-10 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        target.ceil() as usize
    }
}

/// The conformal quantile `q_hat`: the `quantile_rank(n, alpha)`-th
/// smallest score, or `+inf` when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_alpha(alpha)?;
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {bad}")));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k.max(1) - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha {alpha} not in (0,1)"
        )))
    }
}

fn check_class(probs: &[f64], class: usize) -> Result<()> {
    if class < probs.len() {
        Ok(())
    } else {
        Err(Error::ClassIndex {
            index: class,
            classes: probs.len(),
        })
    }
}

pub fn true_class_score(probs: &[f64], true_class: usize) -> Result<f64> {
    check_class(probs, true_class)?;
    Ok(1.0 - probs[true_class])
}

/// Class indices by descending probability, ties by ascending index.
fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

pub fn aps_score(probs: &[f64], true_class: usize) -> Result<f64> {
    check_class(probs, true_class)?;
    let mut cum = 0.0;
    for k in descending_order(probs) {
        cum += probs[k];
        if k == true_class {
            break;
        }
    }
    Ok(cum)
}

/// Smallest prefix of the descending ordering whose mass reaches `threshold`
/// (at least one class, at most all of them).
fn aps_prefix(probs: &[f64], threshold: f64) -> PredictionSet {
    let order = descending_order(probs);
    let mut cum = 0.0;
    let mut take = order.len();
    for (i, &k) in order.iter().enumerate() {
        cum += probs[k];
        if cum >= threshold {
            take = i + 1;
            break;
        }
    }
    PredictionSet::new(order[..take.max(1).min(order.len())].to_vec())
}

/// The uncalibrated set that would be right if `probs` were the true
/// conditional distribution: top classes until their mass reaches `1 - alpha`.
pub fn aps_oracle_set(probs: &[f64], alpha: f64) -> PredictionSet {
    aps_prefix(probs, 1.0 - alpha)
}

pub fn aps_prediction_set(probs: &[f64], q_hat: f64) -> PredictionSet {
    if q_hat == f64::INFINITY {
        return PredictionSet::new((0..probs.len()).collect());
    }
    aps_prefix(probs, q_hat)
}

/// Classes whose true-class score would not exceed `q_hat`; may be empty.
pub fn threshold_prediction_set(probs: &[f64], q_hat: f64) -> PredictionSet {
    PredictionSet::new(
        (0..probs.len())
            .filter(|&y| 1.0 - probs[y] <= q_hat)
            .collect(),
    )
}

pub fn residual_score(prediction: f64, y: f64) -> f64 {
    (y - prediction).abs()
}

/// Signed distance of `y` outside `[lo, hi]`; negative inside.
pub fn cqr_score(lo: f64, hi: f64, y: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::InvertedInterval { lo, hi });
    }
    Ok((lo - y).max(y - hi))
}

/// `[lo - q_hat, hi + q_hat]`.
pub fn cqr_interval(lo: f64, hi: f64, q_hat: f64) -> Result<PredictionInterval> {
    if lo > hi {
        return Err(Error::InvertedInterval { lo, hi });
    }
    if !q_hat.is_finite() {
        return Err(Error::UnboundedQuantile);
    }
    Ok(PredictionInterval::new(lo - q_hat, hi + q_hat))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        PredictionSet { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }

    pub fn is_superset(&self, other: &PredictionSet) -> bool {
        other.members.iter().all(|m| self.contains(*m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
    pub empty: bool,
}

impl PredictionInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        let empty = hi < lo;
        PredictionInterval {
            lo,
            hi,
            length: if empty { 0.0 } else { hi - lo },
            empty,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        !self.empty && self.lo <= y && y <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Set(PredictionSet),
    Interval(PredictionInterval),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truth {
    Class(usize),
    Real(f64),
}

impl Region {
    /// The uncertainty target: set size or interval length.
    pub fn size(&self) -> f64 {
        match self {
            Region::Set(s) => s.size() as f64,
            Region::Interval(i) => i.length,
        }
    }

    pub fn covers(&self, truth: Truth) -> Result<bool> {
        match (self, truth) {
            (Region::Set(s), Truth::Class(c)) => Ok(s.contains(c)),
            (Region::Interval(i), Truth::Real(y)) => Ok(i.contains(y)),
            _ => Err(Error::Misaligned(
                "region and truth of different tasks".into(),
            )),
        }
    }
}

/// Fraction of records whose truth lies in its set or interval.
pub fn empirical_coverage(regions: &[Region], truths: &[Truth]) -> Result<f64> {
    if regions.len() != truths.len() {
        return Err(Error::Misaligned(format!(
            "{} regions for {} truths",
            regions.len(),
            truths.len()
        )));
    }
    if regions.is_empty() {
        return Err(Error::Misaligned("no records".into()));
    }
    let mut hits = 0usize;
    for (r, &t) in regions.iter().zip(truths) {
        hits += usize::from(r.covers(t)?);
    }
    Ok(hits as f64 / regions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: ScoreMethod,
    pub alpha: f64,
    /// `+inf` when the calibration set is too small for `alpha`.
    #[serde(with = "crate::report::finite_or_inf")]
    pub q_hat: f64,
    pub n_calib: usize,
    /// Calibration scores in calibration-record order.
    #[serde(skip)]
    pub scores: Option<Vec<f64>>,
}

/// Per-test-record uncertainty `r`, aligned with the test record ids.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyTarget {
    pub record_ids: Vec<usize>,
    pub r: Vec<f64>,
    /// Whether the set or interval covered the truth; empty for targets
    /// built directly from values.
    pub covered: Vec<bool>,
}

impl UncertaintyTarget {
    pub fn from_values(record_ids: Vec<usize>, r: Vec<f64>) -> Result<Self> {
        if record_ids.len() != r.len() {
            return Err(Error::Misaligned(
                "record ids and targets differ in length".into(),
            ));
        }
        if let Some(bad) = r.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "target {bad} is not a finite non-negative value"
            )));
        }
        Ok(UncertaintyTarget {
            record_ids,
            r,
            covered: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn coverage(&self) -> Option<f64> {
        (!self.covered.is_empty())
            .then(|| self.covered.iter().filter(|c| **c).count() as f64 / self.covered.len() as f64)
    }
}

/// Everything produced by calibrating and predicting on the test side.
#[derive(Clone, Debug)]
pub struct ConformalOutput {
    pub calibration: CalibrationResult,
    pub targets: UncertaintyTarget,
    pub regions: Vec<Region>,
    pub truths: Vec<Truth>,
}

pub fn generate_targets(
    bundle: &PredictionBundle,
    split: &SplitPair,
    method: ScoreMethod,
    alpha: f64,
) -> Result<(CalibrationResult, UncertaintyTarget)> {
    let out = conformalize(bundle, split, method, alpha)?;
    Ok((out.calibration, out.targets))
}

fn rows_for(
    index: &std::collections::HashMap<usize, usize>,
    ids: &[usize],
    side: &str,
) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| {
                Error::Misaligned(format!("{side} record_id {id} has no prediction"))
            })
        })
        .collect()
}

/// Calibrates on the split's calibration records and builds sets or
/// intervals for its test records, in test record-id order.
pub fn conformalize(
    bundle: &PredictionBundle,
    split: &SplitPair,
    method: ScoreMethod,
    alpha: f64,
) -> Result<ConformalOutput> {
    check_alpha(alpha)?;
    method.check_task(bundle.task())?;
    let index = bundle.index();
    let calib_rows = rows_for(&index, split.calibration.record_ids(), "calibration")?;
    let test_rows = rows_for(&index, split.test.record_ids(), "test")?;

    let scores: Vec<f64> = match bundle.predictions() {
        Predictions::Classification { probs, truths, .. } => calib_rows
            .iter()
            .map(|&i| match method {
                ScoreMethod::Aps => aps_score(&probs[i], truths[i]),
                _ => true_class_score(&probs[i], truths[i]),
            })
            .collect::<Result<_>>()?,
        Predictions::Regression { lo, hi, truths } => calib_rows
            .iter()
            .map(|&i| match method {
                ScoreMethod::Residual => Ok(residual_score(midpoint(lo[i], hi[i]), truths[i])),
                _ => cqr_score(lo[i], hi[i], truths[i]),
            })
            .collect::<Result<_>>()?,
    };
    let q_hat = conformal_quantile(&scores, alpha)?;
    if bundle.task() == Task::Regression && q_hat.is_infinite() {
        return Err(Error::UnboundedQuantile);
    }

    let scored: Vec<(Region, Truth)> = test_rows
        .par_iter()
        .map(|&i| -> Result<(Region, Truth)> {
            Ok(match bundle.predictions() {
                Predictions::Classification { probs, truths, .. } => {
                    let set = match method {
                        ScoreMethod::Aps => aps_prediction_set(&probs[i], q_hat),
                        _ => threshold_prediction_set(&probs[i], q_hat),
                    };
                    (Region::Set(set), Truth::Class(truths[i]))
                }
                Predictions::Regression { lo, hi, truths } => {
                    let interval = match method {
                        ScoreMethod::Residual => {
                            let m = midpoint(lo[i], hi[i]);
                            PredictionInterval::new(m - q_hat, m + q_hat)
                        }
                        _ => cqr_interval(lo[i], hi[i], q_hat)?,
                    };
                    (Region::Interval(interval), Truth::Real(truths[i]))
                }
            })
        })
        .collect::<Result<_>>()?;

    let (regions, truths): (Vec<Region>, Vec<Truth>) = scored.into_iter().unzip();
    let r = regions.iter().map(Region::size).collect();
    let covered = regions
        .iter()
        .zip(&truths)
        .map(|(reg, &t)| reg.covers(t))
        .collect::<Result<_>>()?;
    Ok(ConformalOutput {
        calibration: CalibrationResult {
            method,
            alpha,
            q_hat,
            n_calib: scores.len(),
            scores: Some(scores),
        },
        targets: UncertaintyTarget {
            record_ids: split.test.record_ids().to_vec(),
            r,
            covered,
        },
        regions,
        truths,
    })
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / 2.0
}
