//! Simulated ensemble techniques. Every technique consumes stored base-model
//! predictions (and, for the selection techniques, preprocessed instance
//! features) instead of trainable base models.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::learners::{
    forest_fit, forest_predict, logreg_fit, logreg_predict, ForestConfig, ForestModel,
    LearnerError, LogRegConfig, LogRegModel, PreprocessedFeatures,
};
use crate::metrics::{self, Metric, MetricError};
use crate::model::{ClassIdx, PredictionMatrix};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("roster mismatch: fitted on {expected} base models, got {got}")]
    RosterMismatch { expected: usize, got: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("{0} rows of features for {1} instances")]
    FeatureRows(usize, usize),
    #[error("no base models")]
    NoBaseModels,
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("unknown technique {0:?} (expected one of voting, stacking, es, dcs, des, dcs-sba, dcs-vba, vbe)")]
    UnknownTechnique(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TechniqueId {
    Voting,
    Stacking,
    EnsembleSelection,
    Dcs,
    Des,
    DcsSba,
    DcsVba,
    Vbe,
}

impl TechniqueId {
    /// All techniques in report column order.
    pub const ALL: [TechniqueId; 8] = [
        TechniqueId::DcsSba,
        TechniqueId::Dcs,
        TechniqueId::Des,
        TechniqueId::Stacking,
        TechniqueId::Voting,
        TechniqueId::EnsembleSelection,
        TechniqueId::Vbe,
        TechniqueId::DcsVba,
    ];

    /// Command-line token.
    pub fn token(self) -> &'static str {
        match self {
            TechniqueId::Voting => "voting",
            TechniqueId::Stacking => "stacking",
            TechniqueId::EnsembleSelection => "es",
            TechniqueId::Dcs => "dcs",
            TechniqueId::Des => "des",
            TechniqueId::DcsSba => "dcs-sba",
            TechniqueId::DcsVba => "dcs-vba",
            TechniqueId::Vbe => "vbe",
        }
    }

    /// Column label in reports.
    pub fn label(self) -> &'static str {
        match self {
            TechniqueId::Voting => "Voting",
            TechniqueId::Stacking => "Stacking",
            TechniqueId::EnsembleSelection => "ES",
            TechniqueId::Dcs => "DCS",
            TechniqueId::Des => "DES",
            TechniqueId::DcsSba => "SBA",
            TechniqueId::DcsVba => "VBA",
            TechniqueId::Vbe => "VBE",
        }
    }

    /// Oracle baselines look at meta-test ground truth.
    pub fn is_oracle(self) -> bool {
        matches!(self, TechniqueId::DcsVba | TechniqueId::Vbe)
    }
}

impl fmt::Display for TechniqueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TechniqueId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "voting" => TechniqueId::Voting,
            "stacking" => TechniqueId::Stacking,
            "es" | "ensemble-selection" => TechniqueId::EnsembleSelection,
            "dcs" => TechniqueId::Dcs,
            "des" => TechniqueId::Des,
            "dcs-sba" | "sba" => TechniqueId::DcsSba,
            "dcs-vba" | "vba" => TechniqueId::DcsVba,
            "vbe" => TechniqueId::Vbe,
            _ => return Err(SimError::UnknownTechnique(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub es_size: usize,
    pub des_threshold: f64,
    pub metric: Metric,
    pub logreg: LogRegConfig,
    pub forest: ForestConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            es_size: 50,
            des_threshold: 0.5,
            metric: Metric::Auroc,
            logreg: LogRegConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

/// Predictions and `k × C` confidences emitted by a technique.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub predictions: Vec<ClassIdx>,
    pub confidences: Array2<f64>,
}

impl From<(Vec<ClassIdx>, Array2<f64>)> for EnsemblePrediction {
    fn from((predictions, confidences): (Vec<ClassIdx>, Array2<f64>)) -> Self {
        EnsemblePrediction {
            predictions,
            confidences,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TechniqueState {
    Empty,
    Stacking(LogRegModel),
    Weights(Vec<f64>),
    Epms(Vec<ForestModel>),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedTechnique {
    pub technique: TechniqueId,
    /// Roster the technique was fitted on.
    pub run_ids: Vec<u64>,
    pub state: TechniqueState,
}

fn argmax_first(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (c, v);
        }
    }
    best.0
}

fn check_features(features: &PreprocessedFeatures, pm: &PredictionMatrix) -> Result<(), SimError> {
    if features.n_rows() != pm.n_instances() {
        return Err(SimError::FeatureRows(features.n_rows(), pm.n_instances()));
    }
    Ok(())
}

pub fn fit(
    technique: TechniqueId,
    pm_train: &PredictionMatrix,
    features_train: &PreprocessedFeatures,
    config: &SimConfig,
    seed: u64,
) -> Result<FittedTechnique, SimError> {
    if pm_train.n_models() == 0 {
        return Err(SimError::NoBaseModels);
    }
    let state = match technique {
        TechniqueId::Voting | TechniqueId::DcsVba | TechniqueId::Vbe => TechniqueState::Empty,
        TechniqueId::Stacking => TechniqueState::Stacking(stacking_fit(
            pm_train,
            &pm_train.ground_truth,
            &LogRegConfig {
                seed,
                ..config.logreg
            },
        )?),
        TechniqueId::EnsembleSelection => TechniqueState::Weights(ensemble_selection_fit(
            pm_train,
            config.es_size,
            config.metric,
        )?),
        TechniqueId::Dcs | TechniqueId::Des => {
            check_features(features_train, pm_train)?;
            TechniqueState::Epms(epm_fit(features_train, pm_train, &config.forest, seed)?)
        }
        TechniqueId::DcsSba => TechniqueState::Index(metrics::sba_index(pm_train, config.metric)?),
    };
    Ok(FittedTechnique {
        technique,
        run_ids: pm_train.run_ids.clone(),
        state,
    })
}

pub fn predict(
    fitted: &FittedTechnique,
    pm: &PredictionMatrix,
    features: &PreprocessedFeatures,
    config: &SimConfig,
) -> Result<EnsemblePrediction, SimError> {
    if fitted.run_ids != pm.run_ids {
        return Err(SimError::RosterMismatch {
            expected: fitted.run_ids.len(),
            got: pm.n_models(),
        });
    }
    match (&fitted.state, fitted.technique) {
        (_, TechniqueId::Voting) => Ok(vote_predict(pm)),
        (_, TechniqueId::DcsVba) => Ok(dcs_vba_predict(pm)),
        (_, TechniqueId::Vbe) => vbe_predict(pm, &pm.ground_truth, &config.logreg),
        (TechniqueState::Stacking(model), _) => stacking_predict(model, pm),
        (TechniqueState::Weights(w), _) => weighted_average_predict(w, pm),
        (TechniqueState::Epms(epms), TechniqueId::Dcs) => {
            check_features(features, pm)?;
            dcs_predict(epms, features, pm)
        }
        (TechniqueState::Epms(epms), _) => {
            check_features(features, pm)?;
            des_predict(epms, features, pm, config.des_threshold)
        }
        (TechniqueState::Index(b), _) => Ok(model_rows(pm, *b)),
        (TechniqueState::Empty, t) => unreachable!("{t} is always fitted with state"),
    }
}

/// The rows of base model `b`.
pub fn model_rows(pm: &PredictionMatrix, b: usize) -> EnsemblePrediction {
    EnsemblePrediction {
        predictions: pm.model_predictions(b).to_vec(),
        confidences: pm.model_confidences(b).to_owned(),
    }
}

/// Majority vote of `models` on instance `i`. Ties go to the label with the
/// highest summed confidence over the voters, then to the first label.
/// Returns the winner and the vote shares.
fn vote_row(pm: &PredictionMatrix, i: usize, models: &[usize]) -> (ClassIdx, Vec<f64>) {
    let c = pm.n_classes;
    let mut votes = vec![0usize; c];
    for &b in models {
        votes[pm.predictions[[i, b]]] += 1;
    }
    // Sorted summation keeps the tie-break independent of model order.
    let mass: Vec<f64> = (0..c)
        .map(|k| {
            let mut v: Vec<f64> = models.iter().map(|&b| pm.confidences[[i, b, k]]).collect();
            v.sort_by(f64::total_cmp);
            v.iter().sum()
        })
        .collect();
    let mut best = 0;
    for k in 1..c {
        if votes[k] > votes[best] || (votes[k] == votes[best] && mass[k] > mass[best]) {
            best = k;
        }
    }
    let n = models.len() as f64;
    (best, votes.iter().map(|&v| v as f64 / n).collect())
}

/// Hard majority voting over all base models; confidences are vote shares.
pub fn vote_predict(pm: &PredictionMatrix) -> EnsemblePrediction {
    let all: Vec<usize> = (0..pm.n_models()).collect();
    let k = pm.n_instances();
    let mut predictions = Vec::with_capacity(k);
    let mut confidences = Array2::zeros((k, pm.n_classes));
    for i in 0..k {
        let (winner, shares) = vote_row(pm, i, &all);
        predictions.push(winner);
        for (c, s) in shares.into_iter().enumerate() {
            confidences[[i, c]] = s;
        }
    }
    EnsemblePrediction {
        predictions,
        confidences,
    }
}

/// `k × (B·C)` stacking input: each model's confidence row, side by side.
pub fn stacking_inputs(pm: &PredictionMatrix) -> Array2<f64> {
    let (k, b, c) = pm.confidences.dim();
    pm.confidences
        .to_shape((k, b * c))
        .expect("confidence tensor reshapes to k × B·C")
        .to_owned()
}

pub fn stacking_fit(
    pm: &PredictionMatrix,
    y: &[ClassIdx],
    config: &LogRegConfig,
) -> Result<LogRegModel, SimError> {
    Ok(logreg_fit(
        stacking_inputs(pm).view(),
        y,
        pm.n_classes,
        config,
    )?)
}

pub fn stacking_predict(
    model: &LogRegModel,
    pm: &PredictionMatrix,
) -> Result<EnsemblePrediction, SimError> {
    let x = stacking_inputs(pm);
    if x.ncols() != model.width() {
        return Err(SimError::RosterMismatch {
            expected: model.width() / pm.n_classes.max(1),
            got: pm.n_models(),
        });
    }
    Ok(logreg_predict(model, x.view())?.into())
}

fn score_average(
    pm: &PredictionMatrix,
    avg: ArrayView2<'_, f64>,
    metric: Metric,
) -> Result<f64, MetricError> {
    let preds: Vec<ClassIdx> = avg
        .rows()
        .into_iter()
        .map(|r| argmax_first(r.iter().copied()))
        .collect();
    metric.score(&pm.ground_truth, &preds, avg)
}

/// Greedy ensemble selection with replacement. Each round adds the model
/// whose inclusion maximizes `metric` of the bag's unweighted average
/// (lowest index on ties); weights are selection counts over `size`.
pub fn ensemble_selection_fit(
    pm: &PredictionMatrix,
    size: usize,
    metric: Metric,
) -> Result<Vec<f64>, SimError> {
    let b = pm.n_models();
    if b == 0 {
        return Err(SimError::NoBaseModels);
    }
    if size == 0 {
        return Err(SimError::InvalidWeights(
            "ensemble size must be positive".into(),
        ));
    }
    let (k, _, c) = pm.confidences.dim();
    let mut counts = vec![0usize; b];
    let mut sum = Array2::<f64>::zeros((k, c));
    for round in 0..size {
        let mut best: Option<(usize, f64)> = None;
        let mut last_err = None;
        for m in 0..b {
            let avg = (&sum + &pm.model_confidences(m)) / (round + 1) as f64;
            match score_average(pm, avg.view(), metric) {
                Ok(s) if best.is_none_or(|(_, bs)| s > bs) => best = Some((m, s)),
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
        }
        let (pick, _) = match best {
            Some(p) => p,
            None => return Err(last_err.expect("every candidate failed").into()),
        };
        counts[pick] += 1;
        sum += &pm.model_confidences(pick);
    }
    Ok(counts.iter().map(|&n| n as f64 / size as f64).collect())
}

pub fn weighted_average_predict(
    weights: &[f64],
    pm: &PredictionMatrix,
) -> Result<EnsemblePrediction, SimError> {
    if weights.len() != pm.n_models() {
        return Err(SimError::RosterMismatch {
            expected: weights.len(),
            got: pm.n_models(),
        });
    }
    if let Some(w) = weights.iter().find(|w| w.is_nan() || **w < 0.0) {
        return Err(SimError::InvalidWeights(format!("negative weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SimError::InvalidWeights(format!("weights sum to {total}")));
    }
    let (k, _, c) = pm.confidences.dim();
    let mut confidences = Array2::zeros((k, c));
    for (b, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            confidences.scaled_add(w, &pm.model_confidences(b));
        }
    }
    let predictions = confidences
        .rows()
        .into_iter()
        .map(|r| argmax_first(r.iter().copied()))
        .collect();
    Ok(EnsemblePrediction {
        predictions,
        confidences,
    })
}

/// One forest per base model regressing `1 - confidence on the true class`
/// on the instance features.
pub fn epm_fit(
    features: &PreprocessedFeatures,
    pm: &PredictionMatrix,
    config: &ForestConfig,
    seed: u64,
) -> Result<Vec<ForestModel>, SimError> {
    check_features(features, pm)?;
    (0..pm.n_models())
        .map(|b| {
            let targets: Vec<f64> = (0..pm.n_instances())
                .map(|i| 1.0 - pm.confidences[[i, b, pm.ground_truth[i]]])
                .collect();
            Ok(forest_fit(
                features.matrix.view(),
                &targets,
                config,
                derive_seed(&[seed, b as u64]),
            )?)
        })
        .collect()
}

/// `k × B` predicted errors.
pub fn predicted_errors(
    epms: &[ForestModel],
    features: &PreprocessedFeatures,
) -> Result<Array2<f64>, SimError> {
    let mut out = Array2::zeros((features.n_rows(), epms.len()));
    for (b, epm) in epms.iter().enumerate() {
        let col = forest_predict(epm, features.matrix.view())?;
        out.column_mut(b).assign(&ndarray::Array1::from(col));
    }
    Ok(out)
}

fn check_epms(epms: &[ForestModel], pm: &PredictionMatrix) -> Result<(), SimError> {
    if epms.len() != pm.n_models() {
        return Err(SimError::RosterMismatch {
            expected: epms.len(),
            got: pm.n_models(),
        });
    }
    Ok(())
}

/// Per instance, the rows of the model with the lowest predicted error.
pub fn dcs_predict(
    epms: &[ForestModel],
    features: &PreprocessedFeatures,
    pm: &PredictionMatrix,
) -> Result<EnsemblePrediction, SimError> {
    check_epms(epms, pm)?;
    let errors = predicted_errors(epms, features)?;
    let (k, _, c) = pm.confidences.dim();
    let mut predictions = Vec::with_capacity(k);
    let mut confidences = Array2::zeros((k, c));
    for (i, row) in errors.axis_iter(Axis(0)).enumerate() {
        let mut best = 0;
        for b in 1..row.len() {
            if row[b] < row[best] {
                best = b;
            }
        }
        predictions.push(pm.predictions[[i, best]]);
        confidences
            .row_mut(i)
            .assign(&pm.confidences.slice(ndarray::s![i, best, ..]));
    }
    Ok(EnsemblePrediction {
        predictions,
        confidences,
    })
}

/// Models in ascending order of predicted error (index on ties), added until
/// the accumulated error first exceeds `threshold × total`. The crossing
/// model is included. When the total is zero the whole roster is returned.
pub fn des_subset(errors: &[f64], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&b| errors[b]).sum();
    if total.is_nan() || total <= 0.0 {
        return order;
    }
    let limit = threshold * total;
    let mut cum = 0.0;
    let mut subset = Vec::new();
    for b in order {
        cum += errors[b];
        subset.push(b);
        if cum > limit {
            break;
        }
    }
    subset
}

/// Per instance, majority vote over the [`des_subset`] of the roster.
pub fn des_predict(
    epms: &[ForestModel],
    features: &PreprocessedFeatures,
    pm: &PredictionMatrix,
    threshold: f64,
) -> Result<EnsemblePrediction, SimError> {
    check_epms(epms, pm)?;
    let errors = predicted_errors(epms, features)?;
    let (k, _, c) = pm.confidences.dim();
    let mut predictions = Vec::with_capacity(k);
    let mut confidences = Array2::zeros((k, c));
    for (i, row) in errors.axis_iter(Axis(0)).enumerate() {
        let mut subset = des_subset(&row.to_vec(), threshold);
        subset.sort_unstable();
        let (winner, shares) = vote_row(pm, i, &subset);
        predictions.push(winner);
        for (cls, s) in shares.into_iter().enumerate() {
            confidences[[i, cls]] = s;
        }
    }
    Ok(EnsemblePrediction {
        predictions,
        confidences,
    })
}

/// Oracle selector: the per-instance best model by true-class confidence.
pub fn dcs_vba_predict(pm: &PredictionMatrix) -> EnsemblePrediction {
    metrics::vba_rows(pm).into()
}

/// Oracle ensemble: stacking fitted on the evaluation slice itself.
pub fn vbe_predict(
    pm: &PredictionMatrix,
    y: &[ClassIdx],
    config: &LogRegConfig,
) -> Result<EnsemblePrediction, SimError> {
    let model = stacking_fit(pm, y, config)?;
    stacking_predict(&model, pm)
}
