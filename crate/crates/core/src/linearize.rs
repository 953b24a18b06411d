//! Exact linearization of conv → average-pool → fully-connected networks.
//!
//! With a linear activation a network with kernels `A_k` and fully-connected
//! weights `B_k` computes `⟨X, W_X⟩` where
//!
//! ```text
//! W   = Σ_k B_k ⊗ A_k                       (shape l_j·p_j per mode)
//! W_X = W ×_1 U_F^(1) ×_2 ... ×_N U_F^(N)   (shape d_j per mode)
//! ```
//!
//! and `U_F^(j)` is the horizontal concatenation of the pooling-block averages
//! of the positioning matrices. [`forward_oracle`] evaluates the network by
//! direct sliding windows and never touches these matrices, so it serves as
//! the independent check on [`build_composite`].

use nalgebra::DMatrix;
use thiserror::Error;

use crate::decomposition::{CpForm, TuckerForm};
use crate::tensor::{next_index, relative_error, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error("input, kernel and pooling dims must have the same number of modes ({input}, {kernel}, {pool})")]
    ModeCount { input: usize, kernel: usize, pool: usize },
    #[error("all extents and strides must be positive")]
    NonPositive,
    #[error("mode {mode}: (d - l) = ({input} - {kernel}) is not a non-negative multiple of the conv stride {stride}")]
    ConvNotDivisible {
        mode: usize,
        input: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("mode {mode}: conv output {conv} does not tile with pool size {pool} and stride {stride}")]
    PoolNotDivisible {
        mode: usize,
        conv: usize,
        pool: usize,
        stride: usize,
    },
    #[error("mode {mode}: p*l = {pl} exceeds the input extent {input}, so U_F loses full column rank")]
    RankDeficient { mode: usize, pl: usize, input: usize },
    #[error("window index {index} out of range for mode {mode} with {windows} windows")]
    WindowOutOfRange { mode: usize, index: usize, windows: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("kernel bank needs at least one kernel and matching fc weight counts ({kernels} vs {fc})")]
    BankCount { kernels: usize, fc: usize },
    #[error("linearization requires a linear activation")]
    NonlinearActivation,
    #[error("decomposition reconstructs the stacked kernel only to relative error {0:e}")]
    InexactDecomposition(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LinearizeError>;

/// Geometry of one convolution + average-pooling stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvPoolSpec {
    input_dims: Vec<usize>,
    kernel_dims: Vec<usize>,
    conv_stride: usize,
    pool_sizes: Vec<usize>,
    /// `None` means non-overlapping pooling (stride `q_j` in mode `j`).
    pool_stride: Option<usize>,
}

impl ConvPoolSpec {
    /// Non-overlapping pooling.
    pub fn new(
        input_dims: &[usize],
        kernel_dims: &[usize],
        conv_stride: usize,
        pool_sizes: &[usize],
    ) -> Result<Self> {
        Self::build(input_dims, kernel_dims, conv_stride, pool_sizes, None)
    }

    /// Pooling with a stride shared by all modes; windows may overlap.
    pub fn with_pool_stride(
        input_dims: &[usize],
        kernel_dims: &[usize],
        conv_stride: usize,
        pool_sizes: &[usize],
        pool_stride: usize,
    ) -> Result<Self> {
        Self::build(input_dims, kernel_dims, conv_stride, pool_sizes, Some(pool_stride))
    }

    fn build(
        input_dims: &[usize],
        kernel_dims: &[usize],
        conv_stride: usize,
        pool_sizes: &[usize],
        pool_stride: Option<usize>,
    ) -> Result<Self> {
        let n = input_dims.len();
        if n == 0 || kernel_dims.len() != n || pool_sizes.len() != n {
            return Err(LinearizeError::ModeCount {
                input: n,
                kernel: kernel_dims.len(),
                pool: pool_sizes.len(),
            });
        }
        let positive = |v: &[usize]| v.iter().all(|&x| x > 0);
        if !positive(input_dims)
            || !positive(kernel_dims)
            || !positive(pool_sizes)
            || conv_stride == 0
            || pool_stride == Some(0)
        {
            return Err(LinearizeError::NonPositive);
        }
        let spec = Self {
            input_dims: input_dims.to_vec(),
            kernel_dims: kernel_dims.to_vec(),
            conv_stride,
            pool_sizes: pool_sizes.to_vec(),
            pool_stride,
        };
        for j in 0..n {
            let (d, l) = (input_dims[j], kernel_dims[j]);
            if l > d || (d - l) % conv_stride != 0 {
                return Err(LinearizeError::ConvNotDivisible {
                    mode: j,
                    input: d,
                    kernel: l,
                    stride: conv_stride,
                });
            }
            let m = (d - l) / conv_stride + 1;
            let (q, s) = (pool_sizes[j], spec.pool_stride_at(j));
            if q > m || (m - q) % s != 0 {
                return Err(LinearizeError::PoolNotDivisible {
                    mode: j,
                    conv: m,
                    pool: q,
                    stride: s,
                });
            }
            let p = (m - q) / s + 1;
            if p * l > d {
                return Err(LinearizeError::RankDeficient {
                    mode: j,
                    pl: p * l,
                    input: d,
                });
            }
        }
        Ok(spec)
    }

    pub fn order(&self) -> usize {
        self.input_dims.len()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn kernel_dims(&self) -> &[usize] {
        &self.kernel_dims
    }

    pub fn conv_stride(&self) -> usize {
        self.conv_stride
    }

    pub fn pool_sizes(&self) -> &[usize] {
        &self.pool_sizes
    }

    pub fn pool_stride(&self) -> Option<usize> {
        self.pool_stride
    }

    pub fn pool_stride_at(&self, mode: usize) -> usize {
        self.pool_stride.unwrap_or(self.pool_sizes[mode])
    }

    /// Convolution output extents `m_j`.
    pub fn conv_dims(&self) -> Vec<usize> {
        self.input_dims
            .iter()
            .zip(&self.kernel_dims)
            .map(|(d, l)| (d - l) / self.conv_stride + 1)
            .collect()
    }

    /// Pooled extents `p_j`, i.e. the fully-connected weight shape.
    pub fn pooled_dims(&self) -> Vec<usize> {
        self.conv_dims()
            .iter()
            .enumerate()
            .map(|(j, m)| (m - self.pool_sizes[j]) / self.pool_stride_at(j) + 1)
            .collect()
    }

    /// Extents `l_j * p_j` of the transformed input and composite weight.
    pub fn z_dims(&self) -> Vec<usize> {
        self.kernel_dims.iter().zip(self.pooled_dims()).map(|(l, p)| l * p).collect()
    }

    /// `P = ∏ p_j`.
    pub fn pooled_size(&self) -> usize {
        self.pooled_dims().iter().product()
    }

    /// `L = ∏ l_j`.
    pub fn kernel_size(&self) -> usize {
        self.kernel_dims.iter().product()
    }

    /// Positioning matrix `U_i^(j)` for 0-based window `index`.
    pub fn positioning_matrix(&self, mode: usize, index: usize) -> Result<DMatrix<f64>> {
        positioning_matrix(self.input_dims[mode], self.kernel_dims[mode], self.conv_stride, mode, index)
    }

    /// Pooled factor `U_F^(j)` (`d_j x l_j p_j`): block `k` is the average of
    /// the positioning matrices over pooling window `k`.
    pub fn pooled_factor(&self, mode: usize) -> DMatrix<f64> {
        let (d, l) = (self.input_dims[mode], self.kernel_dims[mode]);
        let p = self.pooled_dims()[mode];
        let q = self.pool_sizes[mode];
        let s = self.pool_stride_at(mode);
        let mut u = DMatrix::zeros(d, l * p);
        for k in 0..p {
            for i in k * s..k * s + q {
                for a in 0..l {
                    u[(i * self.conv_stride + a, k * l + a)] += 1.0 / q as f64;
                }
            }
        }
        u
    }

    pub fn pooled_factors(&self) -> Vec<DMatrix<f64>> {
        (0..self.order()).map(|j| self.pooled_factor(j)).collect()
    }

    /// `U_G` with `vec(Z) = U_Gᵀ vec(X)`. In first-index-fastest layout this
    /// is `U_F^(N) ⊗ ... ⊗ U_F^(1)`.
    pub fn input_operator(&self) -> DMatrix<f64> {
        self.pooled_factors()
            .iter()
            .fold(DMatrix::from_element(1, 1, 1.0), |acc, u| u.kronecker(&acc))
    }
}

/// `d x l` matrix with an identity block in rows `index*stride .. index*stride + l`
/// (0-based window `index`). `mode` is only used for error reporting.
pub fn positioning_matrix(d: usize, l: usize, stride: usize, mode: usize, index: usize) -> Result<DMatrix<f64>> {
    if l == 0 || stride == 0 || l > d {
        return Err(LinearizeError::NonPositive);
    }
    let windows = (d - l) / stride + 1;
    if index >= windows {
        return Err(LinearizeError::WindowOutOfRange { mode, index, windows });
    }
    let mut u = DMatrix::zeros(d, l);
    for a in 0..l {
        u[(index * stride + a, a)] = 1.0;
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Kernels `A_k` (shape `l`) paired with fully-connected weights `B_k` (shape `p`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub kernels: Vec<DenseTensor>,
    pub fc: Vec<DenseTensor>,
}

impl KernelBank {
    pub fn new(kernels: Vec<DenseTensor>, fc: Vec<DenseTensor>) -> Result<Self> {
        if kernels.is_empty() || kernels.len() != fc.len() {
            return Err(LinearizeError::BankCount {
                kernels: kernels.len(),
                fc: fc.len(),
            });
        }
        for (what, set) in [("kernel", &kernels), ("fc weight", &fc)] {
            for t in set.iter() {
                if t.shape() != set[0].shape() {
                    return Err(LinearizeError::ShapeMismatch {
                        what,
                        expected: set[0].shape().to_vec(),
                        got: t.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { kernels, fc })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn check(&self, spec: &ConvPoolSpec) -> Result<()> {
        check_shape("kernel", spec.kernel_dims(), self.kernels[0].shape())?;
        check_shape("fc weight", &spec.pooled_dims(), self.fc[0].shape())
    }

    /// `Σ_k B_k ⊗ A_k`.
    pub fn kron_sum(&self) -> Result<DenseTensor> {
        let mut w = self.fc[0].kronecker(&self.kernels[0])?;
        for (a, b) in self.kernels.iter().zip(&self.fc).skip(1) {
            w.axpy(1.0, &b.kronecker(a)?)?;
        }
        Ok(w)
    }
}

fn check_shape(what: &'static str, expected: &[usize], got: &[usize]) -> Result<()> {
    if expected != got {
        return Err(LinearizeError::ShapeMismatch {
            what,
            expected: expected.to_vec(),
            got: got.to_vec(),
        });
    }
    Ok(())
}

/// A network collapsed to a single weight tensor.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    /// Weight acting on the transformed input `Z`.
    pub composite: DenseTensor,
    /// Weight acting on the raw input `X`.
    pub composite_x: DenseTensor,
    /// The fixed per-mode operators mapping `composite` to `composite_x`.
    pub factors: Vec<DMatrix<f64>>,
}

impl LinearizedModel {
    pub fn predict(&self, x: &DenseTensor) -> Result<f64> {
        Ok(x.inner(&self.composite_x)?)
    }
}

/// Convolution followed by average pooling, evaluated by direct sliding
/// windows. Returns the pooled tensor of shape `p`.
pub fn conv_pool(
    x: &DenseTensor,
    kernel: &DenseTensor,
    spec: &ConvPoolSpec,
    activation: Activation,
) -> Result<DenseTensor> {
    check_shape("input", spec.input_dims(), x.shape())?;
    check_shape("kernel", spec.kernel_dims(), kernel.shape())?;
    let m = spec.conv_dims();
    let n = spec.order();
    let mut conv = DenseTensor::zeros(&m)?;
    let mut win = vec![0; n];
    let mut pos = vec![0; n];
    for out in conv.data_mut() {
        let mut acc = 0.0;
        let mut a = vec![0; n];
        for &k in kernel.data() {
            for j in 0..n {
                pos[j] = win[j] * spec.conv_stride() + a[j];
            }
            acc += k * x.get(&pos)?;
            next_index(&mut a, spec.kernel_dims());
        }
        *out = activation.apply(acc);
        next_index(&mut win, &m);
    }

    let p = spec.pooled_dims();
    let q = spec.pool_sizes();
    let norm: f64 = q.iter().map(|&v| v as f64).product();
    DenseTensor::from_fn(&p, |k| {
        let mut off = vec![0; n];
        let mut acc = 0.0;
        loop {
            let idx: Vec<usize> = (0..n).map(|j| k[j] * spec.pool_stride_at(j) + off[j]).collect();
            acc += conv.get(&idx).expect("pool window inside conv output");
            if !next_index(&mut off, q) {
                break;
            }
        }
        acc / norm
    })
    .map_err(Into::into)
}

/// Direct evaluation `Σ_k ⟨pool(g(conv(X, A_k))), B_k⟩`.
pub fn forward_oracle(
    x: &DenseTensor,
    bank: &KernelBank,
    spec: &ConvPoolSpec,
    activation: Activation,
) -> Result<f64> {
    bank.check(spec)?;
    let mut y = 0.0;
    for (a, b) in bank.kernels.iter().zip(&bank.fc) {
        y += conv_pool(x, a, spec, activation)?.inner(b)?;
    }
    Ok(y)
}

/// Composite weights `W = Σ B_k ⊗ A_k` and `W_X = W ×_j U_F^(j)`.
pub fn build_composite(bank: &KernelBank, spec: &ConvPoolSpec) -> Result<LinearizedModel> {
    bank.check(spec)?;
    let composite = bank.kron_sum()?;
    let factors = spec.pooled_factors();
    let ms: Vec<_> = factors.iter().map(Some).collect();
    let composite_x = composite.multi_mode_product(&ms)?;
    Ok(LinearizedModel {
        composite,
        composite_x,
        factors,
    })
}

/// [`build_composite`] guarded by the activation: only linear networks
/// have an exact composite weight.
pub fn linearize(bank: &KernelBank, spec: &ConvPoolSpec, activation: Activation) -> Result<LinearizedModel> {
    if activation != Activation::Linear {
        return Err(LinearizeError::NonlinearActivation);
    }
    build_composite(bank, spec)
}

/// `Z = X ×_1 U_F^(1)ᵀ ... ×_N U_F^(N)ᵀ`, so that `⟨Z, W⟩ = ⟨X, W_X⟩`.
pub fn transform_input(x: &DenseTensor, spec: &ConvPoolSpec) -> Result<DenseTensor> {
    check_shape("input", spec.input_dims(), x.shape())?;
    let ts: Vec<DMatrix<f64>> = spec.pooled_factors().iter().map(|u| u.transpose()).collect();
    let ms: Vec<_> = ts.iter().map(Some).collect();
    Ok(x.multi_mode_product(&ms)?)
}

/// Stacks the kernels along a trailing output-channel mode: shape `(l_1, ..., l_N, K)`.
pub fn stack_kernels(bank: &KernelBank) -> DenseTensor {
    DenseTensor::stack_last(&bank.kernels).expect("bank kernels share a shape")
}

/// Inverse of [`stack_kernels`].
pub fn split_stack(stack: &DenseTensor) -> Vec<DenseTensor> {
    stack.split_last()
}

fn mix_fc(fc: &[DenseTensor], weights: impl Fn(usize) -> f64) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(fc[0].shape())?;
    for (k, b) in fc.iter().enumerate() {
        out.axpy(weights(k), b)?;
    }
    Ok(out)
}

const REPARAM_TOL: f64 = 1e-8;

/// Rewrites a bank whose stacked kernel has a Tucker form with output rank
/// `R` as an equivalent bank of `R` kernels:
/// `Ã_r = (G ×_1 H^(1) ... ×_N H^(N))[..., r]`, `B̃_r = Σ_k H^(N+1)(k, r) B_k`.
pub fn reparameterize_tucker(bank: &KernelBank, tucker: &TuckerForm) -> Result<KernelBank> {
    let stack = stack_kernels(bank);
    check_shape("Tucker form", stack.shape(), &tucker.shape())?;
    let err = relative_error(&tucker.reconstruct(), &stack)?;
    if err > REPARAM_TOL {
        return Err(LinearizeError::InexactDecomposition(err));
    }
    let n = bank.kernels[0].order();
    let spatial: Vec<_> = (0..=n).map(|j| (j < n).then_some(&tucker.factors[j])).collect();
    let partial = tucker.core.multi_mode_product(&spatial)?;
    let kernels: Vec<DenseTensor> = partial
        .split_last()
        .into_iter()
        .map(|t| if t.order() == n { t } else { t.with_order(n) })
        .collect();
    let h = &tucker.factors[n];
    let fc = (0..h.ncols())
        .map(|r| mix_fc(&bank.fc, |k| h[(k, r)]))
        .collect::<Result<Vec<_>>>()?;
    KernelBank::new(kernels, fc)
}

/// CP counterpart of [`reparameterize_tucker`]:
/// `Ã_r = α_r h_r^(1) ∘ ... ∘ h_r^(N)`, `B̃_r = Σ_k h_r^(N+1)(k) B_k`.
pub fn reparameterize_cp(bank: &KernelBank, cp: &CpForm) -> Result<KernelBank> {
    let stack = stack_kernels(bank);
    check_shape("CP form", stack.shape(), &cp.shape())?;
    let err = relative_error(&cp.reconstruct(), &stack)?;
    if err > REPARAM_TOL {
        return Err(LinearizeError::InexactDecomposition(err));
    }
    let n = bank.kernels[0].order();
    let l = &stack.shape()[..n];
    let mut kernels = Vec::with_capacity(cp.rank());
    let mut fc = Vec::with_capacity(cp.rank());
    for r in 0..cp.rank() {
        kernels.push(DenseTensor::from_fn(l, |idx| {
            cp.weights[r] * idx.iter().enumerate().map(|(j, &i)| cp.factors[j][(i, r)]).product::<f64>()
        })?);
        fc.push(mix_fc(&bank.fc, |k| cp.factors[n][(k, r)])?);
    }
    KernelBank::new(kernels, fc)
}

/// Weights of a conv → pool → conv → pool → fully-connected network.
/// The second convolution is applied to every first-stage channel, and
/// `fc[k1][k2]` weighs the pooled output of kernel pair `(k1, k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveLayerBank {
    pub first: Vec<DenseTensor>,
    pub second: Vec<DenseTensor>,
    pub fc: Vec<Vec<DenseTensor>>,
}

impl FiveLayerBank {
    fn check(&self, spec1: &ConvPoolSpec, spec2: &ConvPoolSpec) -> Result<()> {
        check_shape("second-stage input", &spec1.pooled_dims(), spec2.input_dims())?;
        if self.first.is_empty() || self.second.is_empty() || self.fc.len() != self.first.len() {
            return Err(LinearizeError::BankCount {
                kernels: self.first.len(),
                fc: self.fc.len(),
            });
        }
        for a in &self.first {
            check_shape("first-stage kernel", spec1.kernel_dims(), a.shape())?;
        }
        for a in &self.second {
            check_shape("second-stage kernel", spec2.kernel_dims(), a.shape())?;
        }
        for row in &self.fc {
            if row.len() != self.second.len() {
                return Err(LinearizeError::BankCount {
                    kernels: self.second.len(),
                    fc: row.len(),
                });
            }
            for b in row {
                check_shape("fc weight", &spec2.pooled_dims(), b.shape())?;
            }
        }
        Ok(())
    }
}

/// `U_DF^(j)`: stack the pooled blocks of both stages into 3-way tensors
/// `U (d × l × p)` and `Ũ (p × l̃ × p̃)`, contract the shared `p` mode, and
/// unfold along the input mode. Columns are ordered `(a, b, c)` with the
/// first-stage kernel index `a` fastest, matching `B ⊗ Ã ⊗ A`.
pub fn five_layer_factor(spec1: &ConvPoolSpec, spec2: &ConvPoolSpec, mode: usize) -> DMatrix<f64> {
    let u1 = spec1.pooled_factor(mode);
    let u2 = spec2.pooled_factor(mode);
    let (d, l, p) = (spec1.input_dims()[mode], spec1.kernel_dims()[mode], spec1.pooled_dims()[mode]);
    let (l2, p2) = (spec2.kernel_dims()[mode], spec2.pooled_dims()[mode]);
    let mut out = DMatrix::zeros(d, l * l2 * p2);
    for c in 0..p2 {
        for b in 0..l2 {
            for a in 0..l {
                let col = a + l * (b + l2 * c);
                for k in 0..p {
                    let w = u2[(k, c * l2 + b)];
                    if w == 0.0 {
                        continue;
                    }
                    for x in 0..d {
                        out[(x, col)] += u1[(x, k * l + a)] * w;
                    }
                }
            }
        }
    }
    out
}

/// `W_D = (Σ_{k1,k2} B_{k1,k2} ⊗ Ã_{k2} ⊗ A_{k1}) ×_j U_DF^(j)`.
pub fn build_composite_5layer(
    bank: &FiveLayerBank,
    spec1: &ConvPoolSpec,
    spec2: &ConvPoolSpec,
) -> Result<LinearizedModel> {
    bank.check(spec1, spec2)?;
    let mut composite: Option<DenseTensor> = None;
    for (a, row) in bank.first.iter().zip(&bank.fc) {
        for (a2, b) in bank.second.iter().zip(row) {
            let term = b.kronecker(a2)?.kronecker(a)?;
            match composite.as_mut() {
                Some(w) => w.axpy(1.0, &term)?,
                None => composite = Some(term),
            }
        }
    }
    let composite = composite.expect("non-empty bank");
    let factors: Vec<DMatrix<f64>> = (0..spec1.order()).map(|j| five_layer_factor(spec1, spec2, j)).collect();
    let ms: Vec<_> = factors.iter().map(Some).collect();
    let composite_x = composite.multi_mode_product(&ms)?;
    Ok(LinearizedModel {
        composite,
        composite_x,
        factors,
    })
}

/// Direct nested evaluation of the five-layer network.
pub fn forward_oracle_5layer(
    x: &DenseTensor,
    bank: &FiveLayerBank,
    spec1: &ConvPoolSpec,
    spec2: &ConvPoolSpec,
    activation: Activation,
) -> Result<f64> {
    bank.check(spec1, spec2)?;
    let mut y = 0.0;
    for (a, row) in bank.first.iter().zip(&bank.fc) {
        let h = conv_pool(x, a, spec1, activation)?;
        for (a2, b) in bank.second.iter().zip(row) {
            y += conv_pool(&h, a2, spec2, activation)?.inner(b)?;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{normal_tensor, rng};

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn positioning_matrix_examples() {
        assert_eq!(
            positioning_matrix(4, 2, 1, 0, 0).unwrap(),
            m(4, 2, &[1., 0., 0., 1., 0., 0., 0., 0.])
        );
        let u = positioning_matrix(5, 2, 2, 0, 1).unwrap();
        assert_eq!(u, m(5, 2, &[0., 0., 0., 0., 1., 0., 0., 1., 0., 0.]));
        assert!(positioning_matrix(5, 2, 2, 0, 2).is_err());
        let s = ConvPoolSpec::new(&[4], &[2], 1, &[3]).unwrap();
        assert!(s.positioning_matrix(0, 2).is_ok());
        assert!(matches!(
            s.positioning_matrix(0, 3),
            Err(LinearizeError::WindowOutOfRange { windows: 3, .. })
        ));
    }

    #[test]
    fn non_overlapping_positions_sum() {
        let s = ConvPoolSpec::new(&[6], &[2], 2, &[1]).unwrap();
        let mut acc = DMatrix::zeros(2, 2);
        for i in 0..3 {
            let u = s.positioning_matrix(0, i).unwrap();
            acc += u.transpose() * u;
        }
        assert_eq!(acc, DMatrix::identity(2, 2) * 3.0);
    }

    #[test]
    fn pooled_factor_examples() {
        let s = ConvPoolSpec::new(&[4], &[1], 1, &[2]).unwrap();
        assert_eq!(s.pooled_factor(0), m(4, 2, &[0.5, 0., 0.5, 0., 0., 0.5, 0., 0.5]));
        // q = 1 and s_c = l: pure reshaping, U_F is the identity.
        let s = ConvPoolSpec::new(&[6], &[2], 2, &[1]).unwrap();
        assert_eq!(s.pooled_factor(0), DMatrix::identity(6, 6));
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            ConvPoolSpec::new(&[5], &[2], 2, &[1]),
            Err(LinearizeError::ConvNotDivisible { .. })
        ));
        assert!(matches!(
            ConvPoolSpec::new(&[7], &[2], 1, &[4]),
            Err(LinearizeError::PoolNotDivisible { .. })
        ));
        assert!(matches!(
            ConvPoolSpec::with_pool_stride(&[5], &[2], 1, &[1], 1),
            Err(LinearizeError::RankDeficient { .. })
        ));
        assert!(matches!(ConvPoolSpec::new(&[5, 5], &[2], 1, &[1]), Err(LinearizeError::ModeCount { .. })));
        assert!(matches!(ConvPoolSpec::new(&[5], &[2], 0, &[1]), Err(LinearizeError::NonPositive)));
        let s = ConvPoolSpec::new(&[7, 5, 7], &[2, 2, 2], 1, &[3, 2, 3]).unwrap();
        assert_eq!(s.conv_dims(), vec![6, 4, 6]);
        assert_eq!(s.pooled_dims(), vec![2, 2, 2]);
        assert_eq!(s.z_dims(), vec![4, 4, 4]);
    }

    #[test]
    fn single_window_oracle_is_scaled_inner() {
        let s = ConvPoolSpec::new(&[3, 2], &[3, 2], 1, &[1, 1]).unwrap();
        let mut r = rng(1);
        let x = normal_tensor(&mut r, &[3, 2], 1.0);
        let a = normal_tensor(&mut r, &[3, 2], 1.0);
        let b = DenseTensor::from_vec(&[1, 1], vec![-1.5]).unwrap();
        let bank = KernelBank::new(vec![a.clone()], vec![b.clone()]).unwrap();
        let y = forward_oracle(&x, &bank, &s, Activation::Linear).unwrap();
        assert!((y + 1.5 * x.inner(&a).unwrap()).abs() < 1e-12);
        let lin = build_composite(&bank, &s).unwrap();
        assert!(relative_error(&lin.composite_x, &a.scale(-1.5)).unwrap() < 1e-15);
    }

    #[test]
    fn zero_input_and_relu() {
        let s = ConvPoolSpec::new(&[4, 4], &[2, 2], 1, &[3, 3]).unwrap();
        let mut r = rng(2);
        let bank = KernelBank::new(vec![normal_tensor(&mut r, &[2, 2], 1.0)], vec![normal_tensor(&mut r, &[1, 1], 1.0)]).unwrap();
        let x = DenseTensor::zeros(&[4, 4]).unwrap();
        assert_eq!(forward_oracle(&x, &bank, &s, Activation::Linear).unwrap(), 0.0);
        assert_eq!(forward_oracle(&x, &bank, &s, Activation::Relu).unwrap(), 0.0);
        assert!(matches!(linearize(&bank, &s, Activation::Relu), Err(LinearizeError::NonlinearActivation)));
    }

    #[test]
    fn zero_fc_gives_zero_composite() {
        let s = ConvPoolSpec::new(&[6, 5], &[2, 2], 1, &[5, 2]).unwrap();
        let mut r = rng(3);
        let bank = KernelBank::new(
            vec![normal_tensor(&mut r, &[2, 2], 1.0); 2],
            vec![DenseTensor::zeros(&s.pooled_dims()).unwrap(); 2],
        )
        .unwrap();
        assert_eq!(build_composite(&bank, &s).unwrap().composite_x.frobenius(), 0.0);
    }

    #[test]
    fn identity_embedding_transform_is_permutation() {
        let s = ConvPoolSpec::new(&[4, 6], &[2, 2], 2, &[1, 1]).unwrap();
        assert_eq!(s.z_dims(), vec![4, 6]);
        let x = DenseTensor::from_fn(&[4, 6], |i| (i[0] + 10 * i[1]) as f64).unwrap();
        let z = transform_input(&x, &s).unwrap();
        let mut a = x.vectorize();
        let mut b = z.vectorize();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_factor_full_column_rank() {
        let mut r = rng(9);
        for _ in 0..30 {
            use rand::Rng;
            let l = r.random_range(1..4);
            let sc = r.random_range(1..3);
            let q = r.random_range(1..4);
            let p = r.random_range(1..4);
            let d = (p * q - 1) * sc + l;
            let Ok(s) = ConvPoolSpec::new(&[d], &[l], sc, &[q]) else { continue };
            let u = s.pooled_factor(0);
            let sv = u.singular_values();
            let rank = sv.iter().filter(|&&v| v > 1e-10 * sv.max()).count();
            assert_eq!(rank, l * p);
        }
    }

    #[test]
    fn bank_validation() {
        let a = DenseTensor::zeros(&[2]).unwrap();
        assert!(KernelBank::new(vec![], vec![]).is_err());
        assert!(KernelBank::new(vec![a.clone()], vec![]).is_err());
        assert!(KernelBank::new(vec![a.clone(), DenseTensor::zeros(&[3]).unwrap()], vec![a.clone(), a.clone()]).is_err());
    }

    #[test]
    fn stack_round_trip_and_single_kernel() {
        let mut r = rng(4);
        let bank = KernelBank::new(vec![normal_tensor(&mut r, &[2, 3], 1.0)], vec![normal_tensor(&mut r, &[2, 2], 1.0)]).unwrap();
        let st = stack_kernels(&bank);
        assert_eq!(st.shape(), &[2, 3, 1]);
        assert_eq!(split_stack(&st), bank.kernels);
    }
}
