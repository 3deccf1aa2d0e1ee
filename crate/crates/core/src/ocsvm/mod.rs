//! One-class SVM (nu formulation, RBF kernel) over standardized feature
//! vectors, with JSON persistence and feedback-driven retraining.

pub mod smo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ChannelMode, FeatureError, FeatureVector, Scaler, FEATURE_LAYOUT_VERSION};
use crate::par::{self, Execution};
use smo::{KernelMatrix, SolverOptions};

/// Coefficients at or below this are dropped from the stored model.
pub const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("nu must be in (0, 1], got {0}")]
    BadNu(f64),
    #[error("gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input has {found} features, model expects {expected}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("model layout version {found}, this build reads {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("relabeling left no fall samples to train on")]
    EmptyResultingSet,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch(x.len(), y.len()));
    }
    Ok(rbf_unchecked(x, y, gamma))
}

#[inline]
fn rbf_unchecked(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    pub version: u32,
    pub nu: f64,
    pub gamma: f64,
    pub rho: f64,
    pub scaler: Scaler,
    #[serde(rename = "svs")]
    pub support_vectors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub channels: ChannelMode,
    #[serde(default)]
    pub n_train: usize,
    #[serde(default)]
    pub no_free_sv: bool,
}

/// Decision for one vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub score: f64,
    pub is_fall: bool,
}

impl OcSvmModel {
    pub fn dimension(&self) -> usize {
        self.scaler.dimension()
    }

    /// Decision on an already standardized vector.
    pub fn decision(&self, x: &FeatureVector) -> Result<Decision, SvmError> {
        if x.len() != self.dimension() {
            return Err(SvmError::LayoutMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alpha)
            .map(|(sv, a)| a * rbf_unchecked(sv, &x.values, self.gamma))
            .sum();
        let score = s - self.rho;
        Ok(Decision {
            score,
            is_fall: score >= 0.0,
        })
    }

    /// Standardizes a raw feature vector with the model scaler, then decides.
    pub fn decide_raw(&self, raw: &FeatureVector) -> Result<Decision, SvmError> {
        if raw.len() != self.dimension() {
            return Err(SvmError::LayoutMismatch {
                expected: self.dimension(),
                found: raw.len(),
            });
        }
        self.decision(&self.scaler.transform(raw)?)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, SvmError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| SvmError::CorruptModel(e.to_string()))?;
        if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
            if v != FEATURE_LAYOUT_VERSION as u64 {
                return Err(SvmError::VersionMismatch {
                    expected: FEATURE_LAYOUT_VERSION,
                    found: v as u32,
                });
            }
        }
        let model: OcSvmModel =
            serde_json::from_value(value).map_err(|e| SvmError::CorruptModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), SvmError> {
        let bad = |m: &str| Err(SvmError::CorruptModel(m.to_string()));
        let d = self.dimension();
        if self.scaler.std.len() != d {
            return bad("scaler mean/std lengths differ");
        }
        if self.support_vectors.len() != self.alpha.len() {
            return bad("svs and alpha lengths differ");
        }
        if self.support_vectors.iter().any(|sv| sv.len() != d) {
            return bad("support vector length differs from scaler");
        }
        if !(self.gamma > 0.0) || !(self.nu > 0.0 && self.nu <= 1.0) || !self.rho.is_finite() {
            return bad("bad hyperparameters");
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("bad coefficients");
        }
        Ok(())
    }
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub nu: f64,
    pub gamma: f64,
    pub solver: SolverOptions,
    pub exec: Execution,
}

impl TrainParams {
    pub fn new(nu: f64, gamma: f64) -> Self {
        Self {
            nu,
            gamma,
            solver: SolverOptions::default(),
            exec: Execution::default(),
        }
    }

    /// Builds the kernel on the calling thread (for use inside parallel loops).
    pub fn sequential(mut self) -> Self {
        self.exec = Execution::Sequential;
        self
    }
}

/// Builds the kernel matrix of standardized vectors.
pub fn kernel_matrix(x: &[FeatureVector], gamma: f64, exec: Execution) -> KernelMatrix {
    let rows = par::map_range(exec, x.len(), |i| {
        x.iter()
            .map(|xj| rbf_unchecked(&x[i].values, &xj.values, gamma))
            .collect::<Vec<f64>>()
    });
    KernelMatrix::from_rows(rows)
}

/// Trains on standardized fall-class vectors. The solver's full solution is
/// returned alongside the model for diagnostics.
pub fn train_with_solution(
    x: &[FeatureVector],
    scaler: Scaler,
    channels: ChannelMode,
    params: &TrainParams,
) -> Result<(OcSvmModel, smo::DualSolution), SvmError> {
    if x.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(SvmError::BadNu(params.nu));
    }
    if !(params.gamma > 0.0) {
        return Err(SvmError::BadGamma(params.gamma));
    }
    let d = scaler.dimension();
    if let Some(v) = x.iter().find(|v| v.len() != d) {
        return Err(SvmError::LayoutMismatch {
            expected: d,
            found: v.len(),
        });
    }
    let k = kernel_matrix(x, params.gamma, params.exec);
    let sol = smo::solve(&k, params.nu, &params.solver);
    let (support_vectors, alpha) = x
        .iter()
        .zip(&sol.alpha)
        .filter(|(_, &a)| a > ALPHA_EPS)
        .map(|(v, &a)| (v.values.clone(), a))
        .unzip();
    let model = OcSvmModel {
        version: FEATURE_LAYOUT_VERSION,
        nu: params.nu,
        gamma: params.gamma,
        rho: sol.rho,
        scaler,
        support_vectors,
        alpha,
        channels,
        n_train: x.len(),
        no_free_sv: sol.no_free_sv,
    };
    Ok((model, sol))
}

pub fn train(
    x: &[FeatureVector],
    scaler: Scaler,
    channels: ChannelMode,
    params: &TrainParams,
) -> Result<OcSvmModel, SvmError> {
    train_with_solution(x, scaler, channels, params).map(|(m, _)| m)
}

/// Fits the scaler on raw fall vectors, standardizes them and trains.
pub fn fit(raw: &[FeatureVector], channels: ChannelMode, params: &TrainParams) -> Result<OcSvmModel, SvmError> {
    if raw.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let scaler = Scaler::fit(raw)?;
    let z = raw.iter().map(|v| scaler.transform(v)).collect::<Result<Vec<_>, _>>()?;
    train(&z, scaler, channels, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fall,
    NonFall,
}

/// The raw fall-class training vectors a model was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStore {
    pub falls: Vec<FeatureVector>,
}

impl TrainingStore {
    pub fn new(falls: Vec<FeatureVector>) -> Self {
        Self { falls }
    }

    /// Appends fall-labeled vectors and removes every stored copy of
    /// non-fall-labeled ones.
    pub fn apply(&mut self, relabeled: &[(FeatureVector, Label)]) {
        for (v, label) in relabeled {
            match label {
                Label::Fall => self.falls.push(v.clone()),
                Label::NonFall => self.falls.retain(|f| f != v),
            }
        }
    }
}

/// Applies user corrections to the store and retrains from scratch with the
/// model's hyperparameters.
pub fn update_model(
    model: &OcSvmModel,
    relabeled: &[(FeatureVector, Label)],
    store: &mut TrainingStore,
) -> Result<OcSvmModel, SvmError> {
    let mut next = store.clone();
    next.apply(relabeled);
    if next.falls.is_empty() {
        return Err(SvmError::EmptyResultingSet);
    }
    let new_model = fit(&next.falls, model.channels, &TrainParams::new(model.nu, model.gamma))?;
    *store = next;
    Ok(new_model)
}

/// Result of one hyperparameter grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub gamma: f64,
    pub nu: f64,
    pub fdr: f64,
    pub fpr: f64,
}

impl GridPoint {
    pub fn metric(&self) -> f64 {
        self.fdr - self.fpr
    }
}

/// Fall/non-fall detection rates of `model` on labeled raw vectors.
pub fn rates(model: &OcSvmModel, labeled: &[(FeatureVector, Label)]) -> Result<(f64, f64), SvmError> {
    let (mut tp, mut falls, mut fp, mut others) = (0usize, 0usize, 0usize, 0usize);
    for (v, label) in labeled {
        let hit = model.decide_raw(v)?.is_fall;
        match label {
            Label::Fall => {
                falls += 1;
                tp += hit as usize;
            }
            Label::NonFall => {
                others += 1;
                fp += hit as usize;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((ratio(tp, falls), ratio(fp, others)))
}

/// Evaluates every `(gamma, nu)` pair on a validation set and returns all
/// points plus the best one (largest FDR - FPR, first in grid order on ties).
pub fn grid_search(
    train_falls: &[FeatureVector],
    validation: &[(FeatureVector, Label)],
    channels: ChannelMode,
    gammas: &[f64],
    nus: &[f64],
) -> Result<(GridPoint, Vec<GridPoint>), SvmError> {
    let mut points = Vec::new();
    for &gamma in gammas {
        for &nu in nus {
            let model = fit(train_falls, channels, &TrainParams::new(nu, gamma))?;
            let (fdr, fpr) = rates(&model, validation)?;
            points.push(GridPoint { gamma, nu, fdr, fpr });
        }
    }
    let best = points
        .iter()
        .copied()
        .fold(None::<GridPoint>, |best, p| match best {
            Some(b) if b.metric() >= p.metric() => Some(b),
            _ => Some(p),
        })
        .ok_or(SvmError::EmptyTrainingSet)?;
    Ok((best, points))
}
