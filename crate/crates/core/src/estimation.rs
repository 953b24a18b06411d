//! Full-batch gradient-descent estimators for the linearized model
//! `y = ⟨Z, W⟩ + ξ` with `W = Σ_k B_k ⊗ A_k`.
//!
//! Kernels may be free, Tucker-factorized or CP-factorized; the constraint is
//! imposed by training the factors directly. Every objective is a function of
//! the composite weights only, so the model exposes a forward map
//! (parameters → `W`) and its adjoint (`∂f/∂W` → parameter gradient).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::decomposition::TuckerForm;
use crate::linearize::{ConvPoolSpec, KernelBank};
use crate::random::{normal_matrix, normal_tensor, Rng};
use crate::tensor::{next_index, strides, DenseTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("input {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameterization: {0}")]
    InvalidParameterization(String),
    #[error("sample {index}: label {label} outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("objective diverged at iteration {iteration} (value {objective})")]
    Diverged {
        iteration: usize,
        objective: f64,
        trace: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, EstimationError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Stop once the objective decreases by less than this.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Keep `‖W‖_F` at most this radius (logistic training); `None` disables.
    pub radius_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            tol: 1e-8,
            max_iters: 200_000,
            seed: 0,
            radius_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EstimationError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if let Some(r) = self.radius_clip {
            if !(r > 0.0) {
                return bad("radius_clip must be positive");
            }
        }
        Ok(())
    }
}

/// How the kernel stack `(l_1, ..., l_N, K)` is parameterized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parameterization {
    Free { kernels: usize },
    /// `ranks` has `N + 1` entries; the last is the output rank `R`.
    Tucker { ranks: Vec<usize>, kernels: usize },
    Cp { rank: usize, kernels: usize },
}

impl Parameterization {
    pub fn kernels(&self) -> usize {
        match self {
            Parameterization::Free { kernels }
            | Parameterization::Tucker { kernels, .. }
            | Parameterization::Cp { kernels, .. } => *kernels,
        }
    }
}

/// Kernel and pooled shapes of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub kernel_dims: Vec<usize>,
    pub pooled_dims: Vec<usize>,
}

impl ModelShape {
    pub fn new(kernel_dims: &[usize], pooled_dims: &[usize]) -> Self {
        assert_eq!(kernel_dims.len(), pooled_dims.len(), "mode count mismatch");
        Self {
            kernel_dims: kernel_dims.to_vec(),
            pooled_dims: pooled_dims.to_vec(),
        }
    }

    pub fn from_spec(spec: &ConvPoolSpec) -> Self {
        Self::new(spec.kernel_dims(), &spec.pooled_dims())
    }

    pub fn z_dims(&self) -> Vec<usize> {
        self.kernel_dims.iter().zip(&self.pooled_dims).map(|(l, p)| l * p).collect()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_dims.iter().product()
    }

    pub fn pooled_size(&self) -> usize {
        self.pooled_dims.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.kernel_size() * self.pooled_size()
    }

    /// `map[p * L + a]` is the flat Z-space position of `B[p] · A[a]` in `B ⊗ A`.
    fn kron_map(&self) -> Vec<usize> {
        let (l, p) = (&self.kernel_dims, &self.pooled_dims);
        let zs = strides(&self.z_dims());
        let mut map = Vec::with_capacity(self.dim());
        let mut pi = vec![0; p.len()];
        loop {
            let mut ai = vec![0; l.len()];
            loop {
                map.push((0..l.len()).map(|j| (pi[j] * l[j] + ai[j]) * zs[j]).sum());
                if !next_index(&mut ai, l) {
                    break;
                }
            }
            if !next_index(&mut pi, p) {
                break;
            }
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelParams {
    /// Column `k` is `vec(A_k)`.
    Free(DMatrix<f64>),
    Tucker(TuckerForm),
    /// Factor matrices with `R` columns each, output-channel factor last.
    Cp(Vec<DMatrix<f64>>),
}

/// Kernels shared across classes, with one set of fc weights per class.
#[derive(Debug, Clone)]
pub struct Model {
    shape: ModelShape,
    map: Vec<usize>,
    kernels: KernelParams,
    /// `fc[m]` is `P x K`; column `k` is `vec(B_{k,m})`.
    fc: Vec<DMatrix<f64>>,
}

fn invalid<T>(m: impl Into<String>) -> Result<T> {
    Err(EstimationError::InvalidParameterization(m.into()))
}

impl Model {
    pub fn new(shape: ModelShape, kernels: KernelParams, fc: Vec<DMatrix<f64>>) -> Result<Self> {
        let (l, p, n) = (shape.kernel_size(), shape.pooled_size(), shape.kernel_dims.len());
        let k = match &kernels {
            KernelParams::Free(a) => {
                if a.nrows() != l {
                    return invalid(format!("free kernels need {l} rows, got {}", a.nrows()));
                }
                a.ncols()
            }
            KernelParams::Tucker(t) => {
                let s = t.shape();
                if s.len() != n + 1 || s[..n] != shape.kernel_dims[..] {
                    return invalid(format!("Tucker stack shape {s:?} does not match kernels {:?}", shape.kernel_dims));
                }
                s[n]
            }
            KernelParams::Cp(f) => {
                if f.len() != n + 1 {
                    return invalid(format!("CP needs {} factors, got {}", n + 1, f.len()));
                }
                let r = f[0].ncols();
                for (j, m) in f.iter().enumerate() {
                    if m.ncols() != r || (j < n && m.nrows() != shape.kernel_dims[j]) {
                        return invalid(format!("CP factor {j} has shape {}x{}", m.nrows(), m.ncols()));
                    }
                }
                f[n].nrows()
            }
        };
        if k == 0 {
            return invalid("need at least one kernel");
        }
        if fc.is_empty() || fc.iter().any(|b| b.nrows() != p || b.ncols() != k) {
            return invalid(format!("fc weights must be {p}x{k} per class"));
        }
        let map = shape.kron_map();
        Ok(Self { shape, map, kernels, fc })
    }

    /// Random model with `N(0, 1/fan_in)` entries for `classes` output classes.
    pub fn random(shape: &ModelShape, param: &Parameterization, classes: usize, rng: &mut Rng) -> Result<Self> {
        let n = shape.kernel_dims.len();
        let k = param.kernels();
        if k == 0 || classes == 0 {
            return invalid("kernel and class counts must be positive");
        }
        let std = |fan: usize| 1.0 / (fan as f64).sqrt();
        let kernels = match param {
            Parameterization::Free { kernels } => {
                let l = shape.kernel_size();
                KernelParams::Free(normal_matrix(rng, l, *kernels, std(l)))
            }
            Parameterization::Tucker { ranks, kernels } => {
                if ranks.len() != n + 1 || ranks.contains(&0) {
                    return invalid(format!("Tucker needs {} positive ranks, got {ranks:?}", n + 1));
                }
                let dims: Vec<usize> = shape.kernel_dims.iter().copied().chain([*kernels]).collect();
                if ranks.iter().zip(&dims).any(|(r, d)| r > d) {
                    return invalid(format!("ranks {ranks:?} exceed stack shape {dims:?}"));
                }
                let fan: usize = ranks[..n].iter().product();
                let core = normal_tensor(rng, ranks, std(fan));
                let factors = dims.iter().zip(ranks).map(|(&d, &r)| normal_matrix(rng, d, r, std(r))).collect();
                KernelParams::Tucker(TuckerForm::new(core, factors).expect("consistent shapes"))
            }
            Parameterization::Cp { rank, kernels } => {
                if *rank == 0 {
                    return invalid("CP rank must be positive");
                }
                let dims: Vec<usize> = shape.kernel_dims.iter().copied().chain([*kernels]).collect();
                KernelParams::Cp(dims.iter().map(|&d| normal_matrix(rng, d, *rank, std(*rank))).collect())
            }
        };
        let p = shape.pooled_size();
        let fc = (0..classes).map(|_| normal_matrix(rng, p, k, std(p))).collect();
        Self::new(shape.clone(), kernels, fc)
    }

    /// Model holding exactly the given bank (single class, free kernels).
    pub fn from_bank(bank: &KernelBank) -> Result<Self> {
        let shape = ModelShape::new(bank.kernels[0].shape(), bank.fc[0].shape());
        let cols = |ts: &[DenseTensor]| {
            DMatrix::from_fn(ts[0].len(), ts.len(), |i, k| ts[k].data()[i])
        };
        Self::new(shape, KernelParams::Free(cols(&bank.kernels)), vec![cols(&bank.fc)])
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn classes(&self) -> usize {
        self.fc.len()
    }

    pub fn kernel_count(&self) -> usize {
        self.fc[0].ncols()
    }

    pub fn kernel_params(&self) -> &KernelParams {
        &self.kernels
    }

    pub fn fc_matrix(&self, class: usize) -> &DMatrix<f64> {
        &self.fc[class]
    }

    /// `L x K` matrix whose columns are the kernels.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let l = self.shape.kernel_size();
        match &self.kernels {
            KernelParams::Free(a) => a.clone(),
            KernelParams::Tucker(t) => {
                let s = t.reconstruct();
                let k = s.len() / l;
                DMatrix::from_vec(l, k, s.into_data())
            }
            KernelParams::Cp(f) => {
                let n = f.len() - 1;
                khatri_rao(&f[..n]) * f[n].transpose()
            }
        }
    }

    pub fn kernels(&self) -> Vec<DenseTensor> {
        let a = self.kernel_matrix();
        a.column_iter()
            .map(|c| DenseTensor::from_vec(&self.shape.kernel_dims, c.iter().copied().collect()).expect("shape"))
            .collect()
    }

    pub fn fc_weights(&self, class: usize) -> Vec<DenseTensor> {
        self.fc[class]
            .column_iter()
            .map(|c| DenseTensor::from_vec(&self.shape.pooled_dims, c.iter().copied().collect()).expect("shape"))
            .collect()
    }

    /// Kernel bank for one class (materialized kernels).
    pub fn bank(&self, class: usize) -> KernelBank {
        KernelBank::new(self.kernels(), self.fc_weights(class)).expect("consistent model")
    }

    fn composite_flat_with(&self, a: &DMatrix<f64>, class: usize) -> Vec<f64> {
        let wm = &self.fc[class] * a.transpose();
        let l = self.shape.kernel_size();
        let mut w = vec![0.0; self.shape.dim()];
        for (idx, &pos) in self.map.iter().enumerate() {
            w[pos] = wm[(idx / l, idx % l)];
        }
        w
    }

    /// `vec(W_m)` in Z-space layout for every class.
    pub fn composites_flat(&self) -> Vec<Vec<f64>> {
        let a = self.kernel_matrix();
        (0..self.classes()).map(|m| self.composite_flat_with(&a, m)).collect()
    }

    pub fn composite(&self, class: usize) -> DenseTensor {
        let a = self.kernel_matrix();
        DenseTensor::from_vec(&self.shape.z_dims(), self.composite_flat_with(&a, class)).expect("shape")
    }

    pub fn param_count(&self) -> usize {
        let kc = match &self.kernels {
            KernelParams::Free(a) => a.len(),
            KernelParams::Tucker(t) => t.core.len() + t.factors.iter().map(|f| f.len()).sum::<usize>(),
            KernelParams::Cp(f) => f.iter().map(|m| m.len()).sum(),
        };
        kc + self.fc.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All parameters, kernel parameters first, then the fc matrices.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match &self.kernels {
            KernelParams::Free(a) => out.extend_from_slice(a.as_slice()),
            KernelParams::Tucker(t) => {
                out.extend_from_slice(t.core.data());
                for f in &t.factors {
                    out.extend_from_slice(f.as_slice());
                }
            }
            KernelParams::Cp(fs) => {
                for f in fs {
                    out.extend_from_slice(f.as_slice());
                }
            }
        }
        for b in &self.fc {
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&theta[off..off + dst.len()]);
            off += dst.len();
        };
        match &mut self.kernels {
            KernelParams::Free(a) => take(a.as_mut_slice()),
            KernelParams::Tucker(t) => {
                take(t.core.data_mut());
                for f in &mut t.factors {
                    take(f.as_mut_slice());
                }
            }
            KernelParams::Cp(fs) => {
                for f in fs {
                    take(f.as_mut_slice());
                }
            }
        }
        for b in &mut self.fc {
            take(b.as_mut_slice());
        }
    }

    /// Scales every class's fc weights (and hence every `W_m`) by `s`.
    fn scale_fc(&mut self, s: f64) {
        for b in &mut self.fc {
            *b *= s;
        }
    }

    /// Parameter gradient from `∂f/∂vec(W_m)` for each class.
    pub fn backprop(&self, dw: &[Vec<f64>]) -> Vec<f64> {
        let l = self.shape.kernel_size();
        let p = self.shape.pooled_size();
        let a = self.kernel_matrix();
        let mut da = DMatrix::zeros(l, a.ncols());
        let mut dfc = Vec::with_capacity(self.classes());
        for (m, g) in dw.iter().enumerate() {
            let d = DMatrix::from_fn(p, l, |pi, ai| g[self.map[pi * l + ai]]);
            da += d.transpose() * &self.fc[m];
            dfc.push(d * &a);
        }
        let mut out = Vec::with_capacity(self.param_count());
        match &self.kernels {
            KernelParams::Free(_) => out.extend_from_slice(da.as_slice()),
            KernelParams::Tucker(t) => {
                let mut sdims = self.shape.kernel_dims.clone();
                sdims.push(da.ncols());
                let ds = DenseTensor::from_vec(&sdims, da.as_slice().to_vec()).expect("shape");
                let ts: Vec<DMatrix<f64>> = t.factors.iter().map(|h| h.transpose()).collect();
                let all: Vec<_> = ts.iter().map(Some).collect();
                out.extend_from_slice(ds.multi_mode_product(&all).expect("shape").data());
                for j in 0..t.factors.len() {
                    let others: Vec<_> = t.factors.iter().enumerate().map(|(i, h)| (i != j).then_some(h)).collect();
                    let partial = t.core.multi_mode_product(&others).expect("shape");
                    let g = ds.unfold(j).expect("mode") * partial.unfold(j).expect("mode").transpose();
                    out.extend_from_slice(g.as_slice());
                }
            }
            KernelParams::Cp(fs) => {
                let n = fs.len() - 1;
                let kr = khatri_rao(&fs[..n]);
                let dkr = &da * &fs[n];
                let grads = khatri_rao_adjoint(&fs[..n], &self.shape.kernel_dims, &dkr);
                for g in grads {
                    out.extend_from_slice(g.as_slice());
                }
                out.extend_from_slice((da.transpose() * kr).as_slice());
            }
        }
        for g in dfc {
            out.extend_from_slice(g.as_slice());
        }
        out
    }
}

/// Column `r` is `h_N(:, r) ⊗ ... ⊗ h_1(:, r)` (first factor fastest).
fn khatri_rao(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r = factors[0].ncols();
    let rows: usize = factors.iter().map(|f| f.nrows()).product();
    let mut out = DMatrix::from_element(rows, r, 1.0);
    for c in 0..r {
        let mut stride = 1;
        for f in factors {
            let d = f.nrows();
            for i in 0..rows {
                out[(i, c)] *= f[((i / stride) % d, c)];
            }
            stride *= d;
        }
    }
    out
}

/// Gradients of `Σ_r ⟨G(:, r), khatri_rao(H)(:, r)⟩` with respect to each `H_j`.
fn khatri_rao_adjoint(factors: &[DMatrix<f64>], dims: &[usize], g: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let n = factors.len();
    let r = g.ncols();
    let mut grads: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, r)).collect();
    let mut vals = vec![0.0; n];
    let mut suffix = vec![1.0; n + 1];
    for c in 0..r {
        let mut idx = vec![0; n];
        let mut row = 0;
        loop {
            for j in 0..n {
                vals[j] = factors[j][(idx[j], c)];
            }
            for j in (0..n).rev() {
                suffix[j] = suffix[j + 1] * vals[j];
            }
            let gv = g[(row, c)];
            let mut prefix = 1.0;
            for j in 0..n {
                grads[j][(idx[j], c)] += gv * prefix * suffix[j + 1];
                prefix *= vals[j];
            }
            row += 1;
            if !next_index(&mut idx, dims) {
                break;
            }
        }
    }
    grads
}

/// Z-space samples with real-valued targets (regression) or 0/1 targets (binary).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<DenseTensor>,
    pub targets: Vec<f64>,
}

/// Z-space samples with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassData {
    pub inputs: Vec<DenseTensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

fn check_inputs(inputs: &[DenseTensor], targets: usize, z_dims: &[usize]) -> Result<()> {
    if inputs.is_empty() {
        return Err(EstimationError::EmptyData);
    }
    if inputs.len() != targets {
        return Err(EstimationError::LengthMismatch {
            inputs: inputs.len(),
            targets,
        });
    }
    for (i, z) in inputs.iter().enumerate() {
        if z.shape() != z_dims {
            return Err(EstimationError::ShapeMismatch {
                index: i,
                expected: z_dims.to_vec(),
                got: z.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn design_matrix(inputs: &[DenseTensor]) -> DMatrix<f64> {
    let dim = inputs[0].len();
    DMatrix::from_fn(inputs.len(), dim, |i, j| inputs[i].data()[j])
}

/// Above this dimension least squares keeps the design matrix instead of the Gram matrix.
const GRAM_MAX_DIM: usize = 4096;

#[derive(Debug, Clone)]
enum LsForm {
    /// `G = ZᵀZ/n`, `c = Zᵀy/n`, `yy = yᵀy/n`.
    Gram { g: DMatrix<f64>, c: DVector<f64>, yy: f64 },
    Design { z: DMatrix<f64>, y: DVector<f64> },
}

/// A loss on the composite weights `W_m` of a model.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `(1/n) Σ (y_i − ⟨Z_i, W⟩)²`.
    LeastSquares(LeastSquaresStats),
    /// `(1/n) Σ [φ(⟨Z_i, W⟩) − y_i ⟨Z_i, W⟩]` with `φ(s) = log(1 + e^s)`.
    Logistic { z: DMatrix<f64>, y: DVector<f64> },
    /// One-vs-rest logistic loss over `M` classes averaged over `nM` terms.
    Multiclass { z: DMatrix<f64>, y: DMatrix<f64> },
}

/// Sufficient statistics (or the design matrix, for large `dim`).
#[derive(Debug, Clone)]
pub struct LeastSquaresStats(LsForm);

/// `log(1 + e^s)` without overflow.
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl Objective {
    pub fn least_squares(data: &Dataset, shape: &ModelShape) -> Result<Self> {
        check_inputs(&data.inputs, data.targets.len(), &shape.z_dims())?;
        let n = data.inputs.len() as f64;
        let z = design_matrix(&data.inputs);
        let y = DVector::from_column_slice(&data.targets);
        let form = if shape.dim() <= GRAM_MAX_DIM {
            let zt = z.transpose();
            LsForm::Gram {
                g: &zt * &z / n,
                c: &zt * &y / n,
                yy: y.dot(&y) / n,
            }
        } else {
            LsForm::Design { z, y }
        };
        Ok(Objective::LeastSquares(LeastSquaresStats(form)))
    }

    pub fn logistic(data: &Dataset, shape: &ModelShape) -> Result<Self> {
        check_inputs(&data.inputs, data.targets.len(), &shape.z_dims())?;
        if let Some(i) = data.targets.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(EstimationError::LabelOutOfRange {
                index: i,
                label: data.targets[i] as usize,
                classes: 2,
            });
        }
        Ok(Objective::Logistic {
            z: design_matrix(&data.inputs),
            y: DVector::from_column_slice(&data.targets),
        })
    }

    pub fn multiclass(data: &MulticlassData, shape: &ModelShape) -> Result<Self> {
        check_inputs(&data.inputs, data.labels.len(), &shape.z_dims())?;
        if data.classes < 2 {
            return invalid("multiclass needs at least two classes");
        }
        if let Some(i) = data.labels.iter().position(|&c| c >= data.classes) {
            return Err(EstimationError::LabelOutOfRange {
                index: i,
                label: data.labels[i],
                classes: data.classes,
            });
        }
        let y = DMatrix::from_fn(data.labels.len(), data.classes, |i, m| (data.labels[i] == m) as u8 as f64);
        Ok(Objective::Multiclass {
            z: design_matrix(&data.inputs),
            y,
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            Objective::Multiclass { y, .. } => y.ncols(),
            _ => 1,
        }
    }

    /// Objective value and `∂f/∂vec(W_m)` per class.
    pub fn value_grad(&self, ws: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        match self {
            Objective::LeastSquares(LeastSquaresStats(LsForm::Gram { g, c, yy })) => {
                let w = DVector::from_column_slice(&ws[0]);
                let gw = g * &w;
                let f = w.dot(&gw) - 2.0 * c.dot(&w) + yy;
                let grad = (gw - c) * 2.0;
                (f, vec![grad.as_slice().to_vec()])
            }
            Objective::LeastSquares(LeastSquaresStats(LsForm::Design { z, y })) => {
                let n = z.nrows() as f64;
                let r = z * DVector::from_column_slice(&ws[0]) - y;
                let grad = z.transpose() * &r * (2.0 / n);
                (r.norm_squared() / n, vec![grad.as_slice().to_vec()])
            }
            Objective::Logistic { z, y } => {
                let n = z.nrows() as f64;
                let s = z * DVector::from_column_slice(&ws[0]);
                let mut f = 0.0;
                let mut resid = DVector::zeros(s.len());
                for i in 0..s.len() {
                    f += softplus(s[i]) - y[i] * s[i];
                    resid[i] = sigmoid(s[i]) - y[i];
                }
                let grad = z.transpose() * resid / n;
                (f / n, vec![grad.as_slice().to_vec()])
            }
            Objective::Multiclass { z, y } => {
                let (n, m) = (z.nrows(), y.ncols());
                let dim = z.ncols();
                let w = DMatrix::from_fn(dim, m, |j, c| ws[c][j]);
                let s = z * w;
                let norm = (n * m) as f64;
                let mut f = 0.0;
                let resid = DMatrix::from_fn(n, m, |i, c| {
                    f += softplus(s[(i, c)]) - y[(i, c)] * s[(i, c)];
                    sigmoid(s[(i, c)]) - y[(i, c)]
                });
                let grad = z.transpose() * resid / norm;
                (f / norm, grad.column_iter().map(|c| c.iter().copied().collect()).collect())
            }
        }
    }

    pub fn value(&self, ws: &[Vec<f64>]) -> f64 {
        self.value_grad(ws).0
    }

    /// Objective and parameter gradient of `model`.
    pub fn model_value_grad(&self, model: &Model) -> (f64, Vec<f64>) {
        let (f, dw) = self.value_grad(&model.composites_flat());
        (f, model.backprop(&dw))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    /// Objective before each update, followed by the final value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("non-empty trace")
    }

    pub fn composite(&self, class: usize) -> DenseTensor {
        self.model.composite(class)
    }

    /// `W_stack` with classes along a trailing mode.
    pub fn composite_stack(&self) -> DenseTensor {
        let parts: Vec<DenseTensor> = (0..self.model.classes()).map(|m| self.model.composite(m)).collect();
        DenseTensor::stack_last(&parts).expect("equal shapes")
    }
}

const DIVERGENCE_LIMIT: f64 = 1e12;

fn clip(model: &mut Model, radius: f64) {
    let norm = model
        .composites_flat()
        .iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > radius {
        model.scale_fc(radius / norm);
    }
}

/// Heavy-ball gradient descent from `model`.
pub fn train(mut model: Model, objective: &Objective, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if model.classes() != objective.classes() {
        return invalid(format!(
            "model has {} classes, objective expects {}",
            model.classes(),
            objective.classes()
        ));
    }
    if let Some(r) = cfg.radius_clip {
        clip(&mut model, r);
    }
    let mut theta = model.to_flat();
    let mut velocity = vec![0.0; theta.len()];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for it in 0..cfg.max_iters {
        let (f, grad) = objective.model_value_grad(&model);
        trace.push(f);
        if !f.is_finite() || f > DIVERGENCE_LIMIT {
            return Err(EstimationError::Diverged {
                iteration: it,
                objective: f,
                trace,
            });
        }
        let drop = prev - f;
        if (0.0..cfg.tol).contains(&drop) {
            return Ok(FitResult {
                model,
                trace,
                iterations: it,
                converged: true,
            });
        }
        prev = f;
        for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *t += *v;
        }
        model.set_flat(&theta);
        if let Some(r) = cfg.radius_clip {
            clip(&mut model, r);
            theta = model.to_flat();
        }
    }
    let (f, _) = objective.model_value_grad(&model);
    trace.push(f);
    Ok(FitResult {
        model,
        trace,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Least-squares fit from a random `N(0, 1/fan_in)` initialization.
pub fn train_least_squares(
    data: &Dataset,
    shape: &ModelShape,
    param: &Parameterization,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    let objective = Objective::least_squares(data, shape)?;
    let model = Model::random(shape, param, 1, &mut crate::random::rng(cfg.seed))?;
    train(model, &objective, cfg)
}

/// Binary logistic fit; targets must be 0 or 1.
pub fn train_logistic(
    data: &Dataset,
    shape: &ModelShape,
    param: &Parameterization,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    let objective = Objective::logistic(data, shape)?;
    let model = Model::random(shape, param, 1, &mut crate::random::rng(cfg.seed))?;
    train(model, &objective, cfg)
}

/// One-vs-rest fit with kernels shared across classes.
pub fn train_multiclass(
    data: &MulticlassData,
    shape: &ModelShape,
    param: &Parameterization,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    let objective = Objective::multiclass(data, shape)?;
    let model = Model::random(shape, param, data.classes, &mut crate::random::rng(cfg.seed))?;
    train(model, &objective, cfg)
}

/// `Z_i ∘ e_m`: the sample whose inner product with `W_stack` is `⟨Z_i, W_m⟩`.
pub fn one_hot_lift(z: &DenseTensor, class: usize, classes: usize) -> DenseTensor {
    let mut e = DenseTensor::zeros(&[classes]).expect("positive class count");
    e.data_mut()[class] = 1.0;
    z.outer(&e)
}
