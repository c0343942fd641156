//! Built-in baseline predictors and the external prediction file contract.
//!
//! The baselines are linear on purpose: a softmax regression for
//! classification and a pair of linear quantile regressions for
//! regression. Both train with full-batch deterministic descent so that a
//! fixed seed reproduces the fitted model bit for bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, ColumnKind, Dataset};
use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector before renormalization.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::InvalidParameter(format!(
                "unknown task `{other}` (classification, regression)"
            ))),
        }
    }
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }
}

/// The pinball (quantile) loss at level `alpha`.
pub fn pinball_loss(y: f64, y_hat: f64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(pinball(y, y_hat, alpha))
}

fn pinball(y: f64, y_hat: f64, alpha: f64) -> f64 {
    let diff = y - y_hat;
    if diff > 0.0 {
        alpha * diff
    } else {
        (1.0 - alpha) * (-diff)
    }
}

/// Subgradient of the pinball loss with respect to the prediction.
pub fn pinball_subgradient(y: f64, y_hat: f64, alpha: f64) -> f64 {
    if y - y_hat > 0.0 {
        -alpha
    } else {
        1.0 - alpha
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "level {alpha} not in (0,1)"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Feature {
    Binary { column: String },
    OneHot { column: String, levels: Vec<String> },
    Standardized { column: String, mean: f64, std: f64 },
}

/// Maps descriptor columns to a dense feature vector: binary columns pass
/// through, nominal columns are one-hot encoded and numeric columns are
/// standardized with the training mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    features: Vec<Feature>,
}

/// Encoded design matrix plus the number of nominal values the encoder had
/// not seen during fitting (these encode as all-zero one-hot blocks).
#[derive(Clone, Debug)]
pub struct Encoded {
    pub rows: Vec<Vec<f64>>,
    pub unseen_values: usize,
}

impl FeatureEncoder {
    pub fn fit(train: &Dataset) -> Self {
        let schema = train.schema();
        let features = schema
            .descriptors()
            .map(|(idx, col)| match (col.kind, train.column_data(idx)) {
                (ColumnKind::Nominal, ColumnData::Nominal(codes)) => {
                    // Only levels present in the training rows get a slot.
                    let mut present = vec![false; col.levels.len()];
                    for &c in codes {
                        present[c as usize] = true;
                    }
                    let levels = col
                        .levels
                        .iter()
                        .zip(present)
                        .filter(|(_, p)| *p)
                        .map(|(l, _)| l.clone())
                        .collect();
                    Feature::OneHot {
                        column: col.name.clone(),
                        levels,
                    }
                }
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    Feature::Standardized {
                        column: col.name.clone(),
                        mean,
                        std,
                    }
                }
                _ => Feature::Binary {
                    column: col.name.clone(),
                },
            })
            .collect();
        FeatureEncoder { features }
    }

    pub fn width(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                Feature::OneHot { levels, .. } => levels.len(),
                _ => 1,
            })
            .sum()
    }

    pub fn encode(&self, ds: &Dataset) -> Result<Encoded> {
        let schema = ds.schema();
        let mut cols = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let name = match f {
                Feature::Binary { column }
                | Feature::OneHot { column, .. }
                | Feature::Standardized { column, .. } => column,
            };
            let idx = schema
                .index_of(name)
                .ok_or_else(|| Error::UnknownAttribute(name.clone()))?;
            cols.push(idx);
        }
        // Per one-hot feature: dataset level code -> slot in the encoder.
        let maps: Vec<Option<Vec<Option<usize>>>> = self
            .features
            .iter()
            .zip(&cols)
            .map(|(f, &idx)| match f {
                Feature::OneHot { levels, .. } => Some(
                    schema.columns()[idx]
                        .levels
                        .iter()
                        .map(|l| levels.iter().position(|x| x == l))
                        .collect(),
                ),
                _ => None,
            })
            .collect();

        let width = self.width();
        let mut unseen = 0;
        let mut rows = Vec::with_capacity(ds.len());
        for r in 0..ds.len() {
            let mut row = Vec::with_capacity(width);
            for ((f, &idx), map) in self.features.iter().zip(&cols).zip(&maps) {
                match (f, ds.column_data(idx)) {
                    (Feature::Binary { .. }, ColumnData::Binary(v)) => row.push(f64::from(v[r])),
                    (Feature::Standardized { mean, std, .. }, ColumnData::Numeric(v)) => {
                        row.push((v[r] - mean) / std)
                    }
                    (Feature::OneHot { levels, .. }, ColumnData::Nominal(v)) => {
                        let start = row.len();
                        row.resize(start + levels.len(), 0.0);
                        match map.as_ref().and_then(|m| m[v[r] as usize]) {
                            Some(slot) => row[start + slot] = 1.0,
                            None => unseen += 1,
                        }
                    }
                    (_, _) => {
                        return Err(Error::AttributeKind {
                            name: schema.columns()[idx].name.clone(),
                            expected: "the kind seen during fitting",
                            actual: schema.columns()[idx].kind.as_str(),
                        })
                    }
                }
            }
            rows.push(row);
        }
        Ok(Encoded {
            rows,
            unseen_values: unseen,
        })
    }
}

/// Row-major `classes x features` weights plus one bias per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub classes: usize,
    pub features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxParams {
    pub fn zeros(classes: usize, features: usize) -> Self {
        SoftmaxParams {
            classes,
            features,
            weights: vec![0.0; classes * features],
            bias: vec![0.0; classes],
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * self.features..(k + 1) * self.features];
                self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2` (biases unpenalized), and its
/// gradient.
pub fn softmax_objective(
    params: &SoftmaxParams,
    x: &[Vec<f64>],
    y: &[usize],
    l2: f64,
) -> (f64, SoftmaxParams) {
    let n = x.len().max(1) as f64;
    let mut grad = SoftmaxParams::zeros(params.classes, params.features);
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let p = params.predict_proba(row);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        for k in 0..params.classes {
            let delta = (p[k] - if k == label { 1.0 } else { 0.0 }) / n;
            grad.bias[k] += delta;
            let g = &mut grad.weights[k * params.features..(k + 1) * params.features];
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += delta * xj;
            }
        }
    }
    loss /= n;
    loss += 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
        *g += l2 * w;
    }
    (loss, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftClassifierModel {
    pub params: SoftmaxParams,
    pub encoder: FeatureEncoder,
    pub meta: TrainingMeta,
}

pub fn fit_softmax_classifier(
    train: &Dataset,
    config: &ClassifierConfig,
) -> Result<SoftClassifierModel> {
    let labels = train
        .class_labels()
        .ok_or_else(|| Error::Training("classifier needs a label_class column".into()))?;
    let classes = train.num_classes().unwrap_or(0);
    let mut present = vec![false; classes];
    for &l in labels {
        present[l] = true;
    }
    if classes < 2 || present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::Training("single-class training set".into()));
    }
    if !(config.learning_rate >= 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "learning_rate and l2 must be non-negative".into(),
        ));
    }
    let encoder = FeatureEncoder::fit(train);
    let x = encoder.encode(train)?.rows;
    let width = encoder.width();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut params = SoftmaxParams::zeros(classes, width);
    for w in params.weights.iter_mut() {
        *w = init.sample(&mut rng);
    }

    let (initial_loss, _) = softmax_objective(&params, &x, labels, config.l2);
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    for epoch in 0..config.epochs {
        let (loss, grad) = softmax_objective(&params, &x, labels, config.l2);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
            *w -= config.learning_rate * g;
        }
        for (b, g) in params.bias.iter_mut().zip(&grad.bias) {
            *b -= config.learning_rate * g;
        }
    }
    let (final_loss, _) = softmax_objective(&params, &x, labels, config.l2);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
        });
    }
    Ok(SoftClassifierModel {
        params,
        encoder,
        meta: TrainingMeta {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            seed: config.seed,
            initial_loss,
            final_loss,
        },
    })
}

impl SoftClassifierModel {
    /// Class probabilities for an already encoded row.
    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        self.params.predict_proba(features)
    }

    /// Probabilities for every record plus the count of unseen nominal values.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<(PredictionBundle, usize)> {
        let enc = self.encoder.encode(ds)?;
        let truths = ds
            .class_labels()
            .ok_or_else(|| Error::Training("dataset has no class label".into()))?
            .to_vec();
        let probs = enc.rows.iter().map(|r| self.predict_proba(r)).collect();
        let bundle = PredictionBundle::classification(
            ds.record_ids().to_vec(),
            self.params.classes,
            probs,
            truths,
        )?;
        Ok((bundle, enc.unseen_values))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Mean pinball loss of a linear model plus `l2 / 2 * ||w||^2`, and a
/// subgradient as `(d weights, d bias)`.
pub fn pinball_objective(
    model: &LinearModel,
    x: &[Vec<f64>],
    y: &[f64],
    alpha: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (row, &target) in x.iter().zip(y) {
        let pred = model.predict(row);
        loss += pinball(target, pred, alpha);
        let g = pinball_subgradient(target, pred, alpha) / n;
        gb += g;
        for (gj, xj) in gw.iter_mut().zip(row) {
            *gj += g * xj;
        }
    }
    loss /= n;
    loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g += l2 * w;
    }
    (loss, gw, gb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig {
            epochs: 1500,
            learning_rate: 0.2,
            l2: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRegressorModel {
    pub encoder: FeatureEncoder,
    pub lower: LinearModel,
    pub upper: LinearModel,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

/// Two independent linear pinball fits at `alpha_lo` and `alpha_hi`.
///
/// Targets are standardized during descent and the fitted coefficients are
/// mapped back to the original units. Each fit starts at the empirical
/// quantile of the targets with zero slopes, descends with step
/// `learning_rate / sqrt(t + 1)`, and keeps the iterate with the lowest
/// objective.
pub fn fit_quantile_regressor(
    train: &Dataset,
    alpha_lo: f64,
    alpha_hi: f64,
    config: &QuantileConfig,
) -> Result<QuantileRegressorModel> {
    check_level(alpha_lo)?;
    check_level(alpha_hi)?;
    if alpha_lo >= alpha_hi {
        return Err(Error::InvalidParameter(format!(
            "alpha_lo {alpha_lo} must be below alpha_hi {alpha_hi}"
        )));
    }
    let y = train
        .real_labels()
        .ok_or_else(|| Error::Training("quantile regressor needs a label_real column".into()))?;
    if y.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let encoder = FeatureEncoder::fit(train);
    let x = encoder.encode(train)?.rows;

    let n = y.len() as f64;
    let center = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z: Vec<f64> = y.iter().map(|v| (v - center) / scale).collect();

    let fit = |alpha: f64| -> Result<LinearModel> {
        let std_model = descend_pinball(&x, &z, alpha, encoder.width(), config)?;
        Ok(LinearModel {
            weights: std_model.weights.iter().map(|w| w * scale).collect(),
            bias: std_model.bias * scale + center,
        })
    };
    Ok(QuantileRegressorModel {
        lower: fit(alpha_lo)?,
        upper: fit(alpha_hi)?,
        encoder,
        alpha_lo,
        alpha_hi,
    })
}

fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn descend_pinball(
    x: &[Vec<f64>],
    y: &[f64],
    alpha: f64,
    width: usize,
    config: &QuantileConfig,
) -> Result<LinearModel> {
    let mut model = LinearModel {
        weights: vec![0.0; width],
        bias: empirical_quantile(y, alpha),
    };
    let (mut best_loss, _, _) = pinball_objective(&model, x, y, alpha, config.l2);
    let mut best = model.clone();
    for epoch in 0..config.epochs {
        let (loss, gw, gb) = pinball_objective(&model, x, y, alpha, config.l2);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if loss < best_loss {
            best_loss = loss;
            best = model.clone();
        }
        let step = config.learning_rate / ((epoch + 1) as f64).sqrt();
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        model.bias -= step * gb;
    }
    let (loss, _, _) = pinball_objective(&model, x, y, alpha, config.l2);
    if !loss.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
        });
    }
    if loss < best_loss {
        best = model;
    }
    Ok(best)
}

impl QuantileRegressorModel {
    /// Raw `(lower, upper)` model outputs, possibly crossed.
    pub fn predict_raw(&self, features: &[f64]) -> (f64, f64) {
        (self.lower.predict(features), self.upper.predict(features))
    }

    /// Quantile pair with crossing repaired by swapping, so `lo <= hi`.
    pub fn predict_quantiles(&self, features: &[f64]) -> (f64, f64) {
        let (a, b) = self.predict_raw(features);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<(PredictionBundle, usize)> {
        let enc = self.encoder.encode(ds)?;
        let truths = ds
            .real_labels()
            .ok_or_else(|| Error::Training("dataset has no real label".into()))?
            .to_vec();
        let (lo, hi) = enc.rows.iter().map(|r| self.predict_quantiles(r)).unzip();
        let bundle = PredictionBundle::regression(ds.record_ids().to_vec(), lo, hi, truths)?;
        Ok((bundle, enc.unseen_values))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classification {
        num_classes: usize,
        probs: Vec<Vec<f64>>,
        truths: Vec<usize>,
    },
    Regression {
        lo: Vec<f64>,
        hi: Vec<f64>,
        truths: Vec<f64>,
    },
}

/// Soft model outputs and ground truth for a set of records.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle {
    record_ids: Vec<usize>,
    predictions: Predictions,
}

impl PredictionBundle {
    /// Validates each row against the probability simplex. Rows whose sum is
    /// within [`SIMPLEX_TOLERANCE`] of one are renormalized.
    pub fn classification(
        record_ids: Vec<usize>,
        num_classes: usize,
        mut probs: Vec<Vec<f64>>,
        truths: Vec<usize>,
    ) -> Result<Self> {
        if probs.len() != record_ids.len() || truths.len() != record_ids.len() {
            return Err(Error::Misaligned("bundle columns differ in length".into()));
        }
        for (i, (row, &t)) in probs.iter_mut().zip(&truths).enumerate() {
            if row.len() != num_classes {
                return Err(Error::Predictions {
                    row: i + 1,
                    msg: format!("expected {num_classes} probabilities, got {}", row.len()),
                });
            }
            if t >= num_classes {
                return Err(Error::ClassIndex {
                    index: t,
                    classes: num_classes,
                });
            }
            let sum: f64 = row.iter().sum();
            let in_range = row
                .iter()
                .all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0 + SIMPLEX_TOLERANCE);
            if !in_range || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::Predictions {
                    row: i + 1,
                    msg: format!("not a probability vector (sum {sum})"),
                });
            }
            if sum != 1.0 {
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
        }
        Ok(PredictionBundle {
            record_ids,
            predictions: Predictions::Classification {
                num_classes,
                probs,
                truths,
            },
        })
    }

    pub fn regression(
        record_ids: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
        truths: Vec<f64>,
    ) -> Result<Self> {
        let n = record_ids.len();
        if lo.len() != n || hi.len() != n || truths.len() != n {
            return Err(Error::Misaligned("bundle columns differ in length".into()));
        }
        for (i, ((&l, &h), &t)) in lo.iter().zip(&hi).zip(&truths).enumerate() {
            if !(l.is_finite() && h.is_finite() && t.is_finite()) {
                return Err(Error::Predictions {
                    row: i + 1,
                    msg: "non-finite value".into(),
                });
            }
            if l > h {
                return Err(Error::Predictions {
                    row: i + 1,
                    msg: format!("pred_lo {l} > pred_hi {h}"),
                });
            }
        }
        Ok(PredictionBundle {
            record_ids,
            predictions: Predictions::Regression { lo, hi, truths },
        })
    }

    pub fn task(&self) -> Task {
        match self.predictions {
            Predictions::Classification { .. } => Task::Classification,
            Predictions::Regression { .. } => Task::Regression,
        }
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn record_ids(&self) -> &[usize] {
        &self.record_ids
    }

    pub fn predictions(&self) -> &Predictions {
        &self.predictions
    }

    /// Row position of every record id.
    pub fn index(&self) -> HashMap<usize, usize> {
        self.record_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect()
    }

    /// Checks that the bundle covers exactly the dataset's records.
    pub fn check_aligned(&self, ds: &Dataset) -> Result<()> {
        if self.len() != ds.len() {
            return Err(Error::Misaligned(format!(
                "row-count mismatch: {} predictions for {} records",
                self.len(),
                ds.len()
            )));
        }
        let index = self.index();
        if index.len() != self.len() {
            return Err(Error::Misaligned(
                "duplicate record_id in predictions".into(),
            ));
        }
        if let Some(id) = ds.record_ids().iter().find(|id| !index.contains_key(id)) {
            return Err(Error::Misaligned(format!(
                "record_id {id} has no prediction"
            )));
        }
        Ok(())
    }

    /// Concatenates two bundles of the same task.
    pub fn concat(self, other: PredictionBundle) -> Result<PredictionBundle> {
        let mut ids = self.record_ids;
        ids.extend(other.record_ids);
        let predictions = match (self.predictions, other.predictions) {
            (
                Predictions::Classification {
                    num_classes,
                    mut probs,
                    mut truths,
                },
                Predictions::Classification {
                    num_classes: k2,
                    probs: p2,
                    truths: t2,
                },
            ) if num_classes == k2 => {
                probs.extend(p2);
                truths.extend(t2);
                Predictions::Classification {
                    num_classes,
                    probs,
                    truths,
                }
            }
            (
                Predictions::Regression {
                    mut lo,
                    mut hi,
                    mut truths,
                },
                Predictions::Regression {
                    lo: l2,
                    hi: h2,
                    truths: t2,
                },
            ) => {
                lo.extend(l2);
                hi.extend(h2);
                truths.extend(t2);
                Predictions::Regression { lo, hi, truths }
            }
            _ => {
                return Err(Error::Misaligned(
                    "cannot join bundles of different tasks".into(),
                ))
            }
        };
        Ok(PredictionBundle {
            record_ids: ids,
            predictions,
        })
    }
}

/// Reads an externally produced prediction file.
///
/// Classification files have header `record_id,prob_0,...,prob_{K-1},true_class`;
/// regression files have `record_id,pred_lo,pred_hi,true_y`.
pub fn load_external_predictions(path: impl AsRef<Path>, task: Task) -> Result<PredictionBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&bytes, task)
}

pub fn parse_predictions(bytes: &[u8], task: Task) -> Result<PredictionBundle> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let bad_header = |expected: &str| Error::Predictions {
        row: 0,
        msg: format!("header `{}` does not match `{expected}`", header.join(",")),
    };
    match task {
        Task::Classification => {
            let k = header.len().saturating_sub(2);
            let ok = k >= 2
                && header[0] == "record_id"
                && header[header.len() - 1] == "true_class"
                && (0..k).all(|j| header[j + 1] == format!("prob_{j}"));
            if !ok {
                return Err(bad_header("record_id,prob_0,...,prob_{K-1},true_class"));
            }
            let (mut ids, mut probs, mut truths) = (Vec::new(), Vec::new(), Vec::new());
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let row = i + 1;
                ids.push(parse_field::<usize>(&rec, 0, row)?);
                probs.push(
                    (1..=k)
                        .map(|j| parse_field::<f64>(&rec, j, row))
                        .collect::<Result<Vec<_>>>()?,
                );
                truths.push(parse_field::<usize>(&rec, k + 1, row)?);
            }
            PredictionBundle::classification(ids, k, probs, truths)
        }
        Task::Regression => {
            if header != ["record_id", "pred_lo", "pred_hi", "true_y"] {
                return Err(bad_header("record_id,pred_lo,pred_hi,true_y"));
            }
            let (mut ids, mut lo, mut hi, mut truths) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let row = i + 1;
                ids.push(parse_field::<usize>(&rec, 0, row)?);
                lo.push(parse_field::<f64>(&rec, 1, row)?);
                hi.push(parse_field::<f64>(&rec, 2, row)?);
                truths.push(parse_field::<f64>(&rec, 3, row)?);
            }
            PredictionBundle::regression(ids, lo, hi, truths)
        }
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Predictions {
        row,
        msg: format!("missing field {idx}"),
    })?;
    raw.parse().map_err(|_| Error::Predictions {
        row,
        msg: format!("cannot parse `{raw}` in field {idx}"),
    })
}
