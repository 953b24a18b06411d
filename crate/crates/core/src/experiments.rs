//! Monte-Carlo studies of estimation error against `sqrt(d_M / n)`.
//!
//! Three studies share one driver: unconstrained kernels (error vs the
//! uncompressed sample complexity), Tucker-structured kernels (compressed
//! sample complexity), and CP-structured kernels trained with a varying
//! number of kernels `K`. A fourth study repeats the unconstrained one with
//! binary labels and logistic loss.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{sample_complexity_cp, sample_complexity_tucker, sample_complexity_uncompressed};
use crate::decomposition::TuckerForm;
use crate::estimation::{
    sigmoid, train, Dataset, EstimationError, KernelParams, Model, ModelShape, Objective, Parameterization, TrainConfig,
};
use crate::linearize::{transform_input, ConvPoolSpec, LinearizeError};
use crate::random::{derive_seed, normal, normal_matrix, normal_tensor, orthonormal_columns, rng, Rng};
use crate::tensor::DenseTensor;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown setting '{id}' for the {study} study (known: {known})")]
    UnknownSetting { study: String, id: String, known: String },
    #[error(transparent)]
    Geometry(#[from] LinearizeError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn config_err<T>(m: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Config(m.into()))
}

/// `n` tensors with i.i.d. standard normal entries.
pub fn gen_inputs_iid(shape: &[usize], n: usize, seed: u64) -> Vec<DenseTensor> {
    let mut r = rng(seed);
    (0..n).map(|_| normal_tensor(&mut r, shape, 1.0)).collect()
}

/// `vec(x_i) = ρ vec(x_{i−1}) + sqrt(1 − ρ²) ε_i` started from a stationary draw,
/// so every sample is marginally standard normal.
pub fn gen_inputs_var1(shape: &[usize], n: usize, rho: f64, seed: u64) -> Result<Vec<DenseTensor>> {
    if !(rho.abs() < 1.0) {
        return config_err(format!("VAR(1) coefficient must satisfy |rho| < 1, got {rho}"));
    }
    let mut r = rng(seed);
    let mut x = normal_tensor(&mut r, shape, 1.0);
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for v in x.data_mut() {
            *v = rho * *v + innov * normal(&mut r);
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Sample sizes whose `sqrt(d_M / n)` is equally spaced over `[lo, hi]`,
/// from `hi` down to `lo` (so `n` ascends). Rounding collisions are dropped.
pub fn n_grid_from_ratio(d_m: u64, lo: f64, hi: f64, points: usize) -> Result<Vec<usize>> {
    if !(lo > 0.0 && lo < hi) || points < 2 {
        return config_err("n grid needs 0 < lo < hi and at least two points");
    }
    let mut out: Vec<usize> = Vec::with_capacity(points);
    for i in 0..points {
        let r = hi - (hi - lo) * i as f64 / (points - 1) as f64;
        let n = ((d_m as f64) / (r * r)).round().max(1.0) as usize;
        if out.last() != Some(&n) {
            out.push(n);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Theorem1,
    Theorem2,
    Kernel,
    Logistic,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Theorem1 => "theorem1",
            StudyKind::Theorem2 => "theorem2",
            StudyKind::Kernel => "kernel",
            StudyKind::Logistic => "logistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputKind {
    Iid,
    Var1 { rho: f64 },
}

impl Default for InputKind {
    fn default() -> Self {
        InputKind::Iid
    }
}

/// Geometry and structure of one simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub id: String,
    pub input_dims: Vec<usize>,
    pub kernel_dims: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    #[serde(default = "one")]
    pub conv_stride: usize,
    /// Number of kernels `K` (ignored by the kernel study, which sweeps `kernel_counts`).
    #[serde(default = "one")]
    pub kernels: usize,
    /// Tucker ranks `(R_1, ..., R_N, R)` for the Tucker study.
    #[serde(default)]
    pub tucker_ranks: Option<Vec<usize>>,
    /// CP rank `R` for the kernel study.
    #[serde(default)]
    pub cp_rank: Option<usize>,
}

fn one() -> usize {
    1
}

impl Setting {
    fn new(id: &str, input: &[usize], kernel: &[usize], pool: &[usize], kernels: usize) -> Self {
        Self {
            id: id.to_string(),
            input_dims: input.to_vec(),
            kernel_dims: kernel.to_vec(),
            pool_sizes: pool.to_vec(),
            conv_stride: 1,
            kernels,
            tucker_ranks: None,
            cp_rank: None,
        }
    }

    fn tucker(mut self, ranks: &[usize]) -> Self {
        self.tucker_ranks = Some(ranks.to_vec());
        self
    }

    fn cp(mut self, rank: usize) -> Self {
        self.cp_rank = Some(rank);
        self
    }

    pub fn spec(&self) -> Result<ConvPoolSpec> {
        Ok(ConvPoolSpec::new(
            &self.input_dims,
            &self.kernel_dims,
            self.conv_stride,
            &self.pool_sizes,
        )?)
    }

    /// The sample complexity used for this setting's `n` grid.
    pub fn d_m(&self, study: StudyKind) -> Result<u64> {
        let spec = self.spec()?;
        let (p, l) = (spec.pooled_size(), spec.kernel_size());
        let d = match study {
            StudyKind::Theorem1 | StudyKind::Logistic => sample_complexity_uncompressed(self.kernels, p, l),
            StudyKind::Theorem2 => {
                let ranks = self.ranks()?;
                let n = self.kernel_dims.len();
                sample_complexity_tucker(&ranks[..n], ranks[n], &self.kernel_dims, p)
            }
            StudyKind::Kernel => sample_complexity_cp(self.rank()?, &self.kernel_dims, p),
        };
        d.map_err(|e| ExperimentError::Config(e.to_string()))
    }

    fn ranks(&self) -> Result<Vec<usize>> {
        match &self.tucker_ranks {
            Some(r) if r.len() == self.kernel_dims.len() + 1 => Ok(r.clone()),
            Some(r) => config_err(format!(
                "setting {}: {} Tucker ranks for {} kernel modes (need one more for the output mode)",
                self.id,
                r.len(),
                self.kernel_dims.len()
            )),
            None => config_err(format!("setting {} has no tucker_ranks", self.id)),
        }
    }

    fn rank(&self) -> Result<usize> {
        self.cp_rank
            .ok_or_else(|| ExperimentError::Config(format!("setting {} has no cp_rank", self.id)))
    }
}

/// Unconstrained settings S1–S4.
pub fn theorem1_settings() -> Vec<Setting> {
    vec![
        Setting::new("S1", &[7, 5, 7], &[2, 2, 2], &[3, 2, 3], 1),
        Setting::new("S2", &[7, 5, 7], &[2, 2, 2], &[3, 2, 3], 3),
        Setting::new("S3", &[8, 8, 3], &[3, 3, 3], &[3, 3, 1], 1),
        Setting::new("S4", &[8, 8, 3], &[3, 3, 3], &[3, 3, 1], 3),
    ]
}

/// Tucker settings. S1–S4 use ranks up to (2,3,2,1) on an 8×8×5 input,
/// `mini` uses unit ranks, and `wide-S1`/`wide-S2` use a 10×10×8 input with
/// 5×5×3 kernels.
pub fn theorem2_settings() -> Vec<Setting> {
    let (d, l, q) = ([8, 8, 5], [3, 3, 2], [3, 3, 2]);
    vec![
        Setting::new("S1", &d, &l, &q, 2).tucker(&[2, 2, 2, 1]),
        Setting::new("S2", &d, &l, &q, 3).tucker(&[2, 2, 2, 1]),
        Setting::new("S3", &d, &l, &q, 2).tucker(&[2, 3, 2, 1]),
        Setting::new("S4", &d, &l, &q, 3).tucker(&[2, 3, 2, 1]),
        Setting::new("mini", &d, &l, &q, 2).tucker(&[1, 1, 1, 1]),
        Setting::new("wide-S1", &[10, 10, 8], &[5, 5, 3], &[3, 3, 3], 2).tucker(&[2, 2, 2, 1]),
        Setting::new("wide-S2", &[10, 10, 8], &[5, 5, 3], &[3, 3, 3], 3).tucker(&[2, 2, 2, 1]),
    ]
}

/// CP setting for the kernel-count study: 8x8 inputs with 4 channels, `R = 2`.
/// Larger geometries can be supplied as custom settings.
pub fn kernel_settings() -> Vec<Setting> {
    vec![Setting::new("desk", &[8, 8, 4], &[3, 3, 4], &[3, 3, 1], 2).cp(2)]
}

/// Binary-classification setting: 6x6 inputs, 3x3 kernel, 2x2 pooling, one kernel.
pub fn logistic_settings() -> Vec<Setting> {
    vec![Setting::new("L1", &[6, 6], &[3, 3], &[2, 2], 1)]
}

pub fn preset_settings(study: StudyKind) -> Vec<Setting> {
    match study {
        StudyKind::Theorem1 => theorem1_settings(),
        StudyKind::Theorem2 => theorem2_settings(),
        StudyKind::Kernel => kernel_settings(),
        StudyKind::Logistic => logistic_settings(),
    }
}

fn default_lo() -> f64 {
    0.15
}
fn default_hi() -> f64 {
    0.60
}
fn default_points() -> usize {
    8
}
fn default_reps() -> usize {
    50
}
fn default_noise() -> f64 {
    1.0
}

/// Optional overrides of [`TrainConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    /// Frobenius radius for the composite weight. The logistic study defaults to `2 sqrt(d_M)`.
    pub radius_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    /// Preset ids to run; empty means the study's default presets.
    #[serde(default)]
    pub settings: Vec<String>,
    /// Extra fully specified settings.
    #[serde(default)]
    pub custom: Vec<Setting>,
    #[serde(default = "default_points")]
    pub grid_points: usize,
    #[serde(default = "default_lo")]
    pub ratio_lo: f64,
    #[serde(default = "default_hi")]
    pub ratio_hi: f64,
    /// Explicit sample sizes; overrides the ratio grid.
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub input: InputKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Kernel counts `K` for the kernel study.
    #[serde(default)]
    pub kernel_counts: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn new(study: StudyKind) -> Self {
        Self {
            study,
            settings: Vec::new(),
            custom: Vec::new(),
            grid_points: default_points(),
            ratio_lo: default_lo(),
            ratio_hi: default_hi(),
            n_values: None,
            replications: default_reps(),
            noise_std: default_noise(),
            input: InputKind::Iid,
            seed: 0,
            train: TrainOverrides::default(),
            kernel_counts: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return config_err("replications must be at least 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return config_err("noise_std must be a non-negative number");
        }
        if let Some(ns) = &self.n_values {
            if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
                return config_err("n_values must be positive and strictly increasing");
            }
        } else if !(self.ratio_lo > 0.0 && self.ratio_lo < self.ratio_hi) || self.grid_points < 2 {
            return config_err("ratio grid needs 0 < ratio_lo < ratio_hi and grid_points >= 2");
        }
        if let InputKind::Var1 { rho } = self.input {
            if !(rho.abs() < 1.0) {
                return config_err(format!("VAR(1) coefficient must satisfy |rho| < 1, got {rho}"));
            }
        }
        if let Some(ks) = &self.kernel_counts {
            if ks.is_empty() || ks.contains(&0) {
                return config_err("kernel_counts must be non-empty and positive");
            }
        }
        self.train_config(0).validate()?;
        for s in self.resolve_settings()? {
            s.spec()?;
            s.d_m(self.study)?;
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        if self.study == StudyKind::Kernel {
            t.tol = 1e-5;
        }
        let o = &self.train;
        t.learning_rate = o.learning_rate.unwrap_or(t.learning_rate);
        t.momentum = o.momentum.unwrap_or(t.momentum);
        t.tol = o.tol.unwrap_or(t.tol);
        t.max_iters = o.max_iters.unwrap_or(t.max_iters);
        t.radius_clip = o.radius_clip;
        t
    }

    /// Presets named in `settings` (or the study defaults) followed by `custom`.
    pub fn resolve_settings(&self) -> Result<Vec<Setting>> {
        let presets = preset_settings(self.study);
        let defaults: &[&str] = match self.study {
            StudyKind::Theorem1 | StudyKind::Theorem2 => &["S1", "S2", "S3", "S4"],
            StudyKind::Kernel => &["desk"],
            StudyKind::Logistic => &["L1"],
        };
        let names: Vec<String> = if self.settings.is_empty() && self.custom.is_empty() {
            defaults.iter().map(|s| s.to_string()).collect()
        } else {
            self.settings.clone()
        };
        let mut out = Vec::new();
        for name in names {
            match presets.iter().find(|s| s.id == name) {
                Some(s) => out.push(s.clone()),
                None => {
                    return Err(ExperimentError::UnknownSetting {
                        study: self.study.as_str().into(),
                        id: name,
                        known: presets.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(", "),
                    })
                }
            }
        }
        out.extend(self.custom.iter().cloned());
        Ok(out)
    }

    fn n_grid(&self, d_m: u64) -> Result<Vec<usize>> {
        match &self.n_values {
            Some(ns) => Ok(ns.clone()),
            None => n_grid_from_ratio(d_m, self.ratio_lo, self.ratio_hi, self.grid_points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    pub n: usize,
    pub sqrt_ratio: f64,
    pub mean_err: f64,
    /// Standard error of `mean_err`.
    pub std_err: f64,
    /// Mean of `‖Ŵ − W*‖_F / ‖W*‖_F`.
    pub mean_rel_err: f64,
    pub reps: usize,
    pub failed_reps: usize,
}

/// Least-squares line through the origin, `err ≈ slope · sqrt_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub setting: String,
    pub slope: f64,
    /// `1 − SS_res / Σ(y − ȳ)²`.
    pub r2: f64,
    /// `1 − SS_res / Σ y²`, the usual figure for fits without intercept.
    pub r2_uncentered: f64,
}

pub fn fit_through_origin(setting: &str, x: &[f64], y: &[f64]) -> LineFit {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    let ss_raw: f64 = y.iter().map(|b| b * b).sum();
    let ratio = |den: f64| if den > 0.0 { 1.0 - ss_res / den } else { 1.0 };
    LineFit {
        setting: setting.to_string(),
        slope,
        r2: ratio(ss_tot),
        r2_uncentered: ratio(ss_raw),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: StudyKind,
    pub records: Vec<RunRecord>,
    pub fits: Vec<LineFit>,
}

impl StudyResult {
    pub fn fit(&self, setting: &str) -> Option<&LineFit> {
        self.fits.iter().find(|f| f.setting == setting)
    }

    pub fn records_for<'a>(&'a self, setting: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.setting == setting)
    }
}

/// The ground truth of one setting: a model (for its composite weight) and
/// the parameterization the estimator trains.
struct Truth {
    w_star: Vec<f64>,
    param: Parameterization,
}

fn truth_for(study: StudyKind, s: &Setting, kernels: usize, shape: &ModelShape, r: &mut Rng) -> Result<Truth> {
    let p = shape.pooled_size();
    let fc = normal_matrix(r, p, kernels, 1.0);
    let (model, param) = match study {
        StudyKind::Theorem1 | StudyKind::Logistic => {
            let a = normal_matrix(r, shape.kernel_size(), kernels, 1.0);
            (
                Model::new(shape.clone(), KernelParams::Free(a), vec![fc])?,
                Parameterization::Free { kernels },
            )
        }
        StudyKind::Theorem2 => {
            let ranks = s.ranks()?;
            let dims: Vec<usize> = s.kernel_dims.iter().copied().chain([kernels]).collect();
            if ranks.iter().zip(&dims).any(|(a, b)| a > b) {
                return config_err(format!("setting {}: ranks {ranks:?} exceed stack shape {dims:?}", s.id));
            }
            let core = normal_tensor(r, &ranks, 1.0);
            let factors = dims.iter().zip(&ranks).map(|(&d, &k)| orthonormal_columns(r, d, k)).collect();
            let t = TuckerForm::new(core, factors).expect("shapes agree");
            (
                Model::new(shape.clone(), KernelParams::Tucker(t), vec![fc])?,
                Parameterization::Tucker { ranks, kernels },
            )
        }
        StudyKind::Kernel => {
            let rank = s.rank()?;
            let dims: Vec<usize> = s.kernel_dims.iter().copied().chain([kernels]).collect();
            if dims.iter().any(|&d| d < rank) {
                return config_err(format!(
                    "setting {}: CP rank {rank} needs every stack extent >= rank, got {dims:?}",
                    s.id
                ));
            }
            let factors: Vec<DMatrix<f64>> = dims.iter().map(|&d| orthonormal_columns(r, d, rank)).collect();
            (
                Model::new(shape.clone(), KernelParams::Cp(factors), vec![fc])?,
                Parameterization::Cp { rank, kernels },
            )
        }
    };
    let mut w_star = model.composites_flat().remove(0);
    let target_norm = match study {
        StudyKind::Kernel => Some(1.0),
        // Signal strength grows with the model size, as the margin condition requires.
        StudyKind::Logistic => Some((s.d_m(study)? as f64).sqrt()),
        _ => None,
    };
    if let Some(t) = target_norm {
        let norm = w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        w_star.iter_mut().for_each(|v| *v *= t / norm);
    }
    Ok(Truth { w_star, param })
}

/// Builds the normalized truth weight for the kernel study (exposed for checks).
pub fn kernel_study_truth(setting: &Setting, kernels: usize, seed: u64) -> Result<DenseTensor> {
    let spec = setting.spec()?;
    let shape = ModelShape::from_spec(&spec);
    let t = truth_for(StudyKind::Kernel, setting, kernels, &shape, &mut rng(seed))?;
    Ok(DenseTensor::from_vec(&shape.z_dims(), t.w_star).expect("shape"))
}

fn gen_inputs(cfg: &ExperimentConfig, shape: &[usize], n: usize, seed: u64) -> Result<Vec<DenseTensor>> {
    match cfg.input {
        InputKind::Iid => Ok(gen_inputs_iid(shape, n, seed)),
        InputKind::Var1 { rho } => gen_inputs_var1(shape, n, rho, seed),
    }
}

/// One replication: fresh inputs and noise, train, return (abs, rel) error.
fn replicate(
    cfg: &ExperimentConfig,
    spec: &ConvPoolSpec,
    shape: &ModelShape,
    truth: &Truth,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let xs = gen_inputs(cfg, spec.input_dims(), n, derive_seed(seed, &[0]))?;
    let mut noise = rng(derive_seed(seed, &[1]));
    let mut zs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for x in &xs {
        let z = transform_input(x, spec)?;
        let s: f64 = z.data().iter().zip(&truth.w_star).map(|(a, b)| a * b).sum();
        ys.push(match cfg.study {
            StudyKind::Logistic => (noise.random::<f64>() < sigmoid(s)) as u8 as f64,
            _ => s + cfg.noise_std * normal(&mut noise),
        });
        zs.push(z);
    }
    let data = Dataset {
        inputs: zs,
        targets: ys,
    };
    let objective = match cfg.study {
        StudyKind::Logistic => Objective::logistic(&data, shape)?,
        _ => Objective::least_squares(&data, shape)?,
    };
    let mut tcfg = cfg.train_config(derive_seed(seed, &[2]));
    if cfg.study == StudyKind::Logistic && tcfg.radius_clip.is_none() {
        tcfg.radius_clip = Some(2.0 * truth.w_star.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let model = Model::random(shape, &truth.param, 1, &mut rng(tcfg.seed))?;
    let fit = train(model, &objective, &tcfg)?;
    let w = fit.model.composites_flat().remove(0);
    let err = w.iter().zip(&truth.w_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = truth.w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((err, err / norm))
}

fn summarize(setting: &str, n: usize, sqrt_ratio: f64, outcomes: Vec<Result<(f64, f64)>>) -> Result<RunRecord> {
    let mut errs = Vec::new();
    let mut rels = Vec::new();
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok((e, r)) => {
                errs.push(e);
                rels.push(r);
            }
            Err(ExperimentError::Estimation(EstimationError::Diverged { .. })) => failed += 1,
            Err(other) => return Err(other),
        }
    }
    let reps = errs.len();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mean_err = mean(&errs);
    let std_err = if reps > 1 {
        let var = errs.iter().map(|e| (e - mean_err).powi(2)).sum::<f64>() / (reps - 1) as f64;
        (var / reps as f64).sqrt()
    } else {
        0.0
    };
    Ok(RunRecord {
        setting: setting.to_string(),
        n,
        sqrt_ratio,
        mean_err,
        std_err,
        mean_rel_err: mean(&rels),
        reps,
        failed_reps: failed,
    })
}

/// Runs every (setting, n) cell; replications run in parallel and are
/// aggregated in replication order, so results do not depend on scheduling.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut fits = Vec::new();
    for (si, setting) in cfg.resolve_settings()?.iter().enumerate() {
        let spec = setting.spec()?;
        let shape = ModelShape::from_spec(&spec);
        let d_m = setting.d_m(cfg.study)?;
        let grid = cfg.n_grid(d_m)?;
        let kernel_counts = match cfg.study {
            StudyKind::Kernel => cfg.kernel_counts.clone().unwrap_or_else(|| {
                let r = setting.cp_rank.unwrap_or(1);
                vec![r, 2 * r, 4 * r]
            }),
            _ => vec![setting.kernels],
        };
        for &k in &kernel_counts {
            let label = match cfg.study {
                StudyKind::Kernel => format!("{}-K{k}", setting.id),
                _ => setting.id.clone(),
            };
            let truth_seed = derive_seed(cfg.seed, &[si as u64, k as u64]);
            let truth = truth_for(cfg.study, setting, k, &shape, &mut rng(truth_seed))?;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (ni, &n) in grid.iter().enumerate() {
                // Shared across kernel counts: every K sees the same inputs and noise.
                let base = derive_seed(cfg.seed, &[1000 + si as u64, ni as u64]);
                let outcomes: Vec<Result<(f64, f64)>> = (0..cfg.replications)
                    .into_par_iter()
                    .map(|rep| replicate(cfg, &spec, &shape, &truth, n, derive_seed(base, &[rep as u64])))
                    .collect();
                let sqrt_ratio = (d_m as f64 / n as f64).sqrt();
                let rec = summarize(&label, n, sqrt_ratio, outcomes)?;
                if rec.reps > 0 {
                    xs.push(sqrt_ratio);
                    ys.push(rec.mean_err);
                }
                records.push(rec);
            }
            fits.push(fit_through_origin(&label, &xs, &ys));
        }
    }
    Ok(StudyResult {
        study: cfg.study,
        records,
        fits,
    })
}

pub const CSV_HEADER: [&str; 7] = ["setting", "n", "sqrt_dM_over_n", "mean_err", "std_err", "reps", "failed_reps"];

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.setting.clone(),
            r.n.to_string(),
            r.sqrt_ratio.to_string(),
            r.mean_err.to_string(),
            r.std_err.to_string(),
            r.reps.to_string(),
            r.failed_reps.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Parses CSV produced by [`records_to_csv`]; relative errors are not part
/// of the schema and come back as NaN.
pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| ExperimentError::Config(format!("bad results CSV: {m}"));
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| row.get(i).ok_or_else(|| bad(format!("missing column {i}")));
        let num = |i: usize| -> Result<f64> { f(i)?.parse().map_err(|_| bad(format!("column {i} not numeric"))) };
        let int = |i: usize| -> Result<usize> { f(i)?.parse().map_err(|_| bad(format!("column {i} not an integer"))) };
        out.push(RunRecord {
            setting: f(0)?.to_string(),
            n: int(1)?,
            sqrt_ratio: num(2)?,
            mean_err: num(3)?,
            std_err: num(4)?,
            mean_rel_err: f64::NAN,
            reps: int(5)?,
            failed_reps: int(6)?,
        });
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_file(path, &records_to_csv(records))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Scatter of mean error against `sqrt(d_M / n)` with each setting's
/// through-origin line and a `slope=` annotation.
pub fn render_svg(title: &str, result: &StudyResult) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let finite = result.records.iter().filter(|r| r.mean_err.is_finite());
    let xmax = finite.clone().map(|r| r.sqrt_ratio).fold(0.0, f64::max).max(1e-9) * 1.05;
    let ymax = finite.map(|r| r.mean_err + r.std_err).fold(0.0, f64::max).max(1e-9) * 1.05;
    let sx = |x: f64| m + x / xmax * (w - 2.0 * m);
    let sy = |y: f64| h - m - y / ymax * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{0}" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let (xv, yv) = (xmax * i as f64 / 4.0, ymax * i as f64 / 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#, sx(xv), h - m + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, m - 6.0, sy(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">sqrt(d_M / n)</text>"#, w / 2.0, h - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean estimation error</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, fit) in result.fits.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for r in result.records_for(&fit.setting).filter(|r| r.mean_err.is_finite()) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                sx(r.sqrt_ratio),
                sy(r.mean_err)
            );
        }
        let xend = (ymax / fit.slope.max(1e-300)).min(xmax);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            sx(0.0),
            sy(0.0),
            sx(xend),
            sy(fit.slope * xend)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}" data-setting="{}">{}: slope={:.3} R2={:.3}</text>"#,
            m + 10.0,
            m + 14.0 + 16.0 * i as f64,
            escape(&fit.setting),
            escape(&fit.setting),
            fit.slope,
            fit.r2
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_svg_plot(title: &str, result: &StudyResult, path: &Path) -> Result<()> {
    write_file(path, &render_svg(title, result))
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    settings: Vec<SettingSummary>,
    fits: &'a [LineFit],
    records: &'a [RunRecord],
}

#[derive(Serialize)]
struct SettingSummary {
    id: String,
    input_dims: Vec<usize>,
    kernel_dims: Vec<usize>,
    pool_sizes: Vec<usize>,
    pooled_dims: Vec<usize>,
    conv_stride: usize,
    d_m: u64,
}

/// Writes `<study>.csv`, `<study>.svg` and `<study>_summary.toml` (config,
/// exact geometries, fits, relative errors) into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, result: &StudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let stem = cfg.study.as_str();
    let csv = dir.join(format!("{stem}.csv"));
    let svg = dir.join(format!("{stem}.svg"));
    let summary = dir.join(format!("{stem}_summary.toml"));
    emit_csv(&result.records, &csv)?;
    emit_svg_plot(&format!("{stem} study"), result, &svg)?;
    let mut settings = Vec::new();
    for s in cfg.resolve_settings()? {
        let spec = s.spec()?;
        settings.push(SettingSummary {
            id: s.id.clone(),
            input_dims: s.input_dims.clone(),
            kernel_dims: s.kernel_dims.clone(),
            pool_sizes: s.pool_sizes.clone(),
            pooled_dims: spec.pooled_dims(),
            conv_stride: s.conv_stride,
            d_m: s.d_m(cfg.study)?,
        });
    }
    let text = toml::to_string(&Summary {
        config: cfg,
        settings,
        fits: &result.fits,
        records: &result.records,
    })
    .expect("summary serializes");
    write_file(&summary, &text)?;
    Ok(vec![csv, svg, summary])
}
