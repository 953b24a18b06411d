//! Tucker and CP forms: reconstruction, HOSVD/HOOI, CP-ALS, and random
//! generation of exactly low-rank tensors.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::random::{self, derive_seed};
use crate::tensor::{next_index, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("rank {rank} for mode {mode} must lie in 1..={extent}")]
    RankOutOfRange {
        mode: usize,
        rank: usize,
        extent: usize,
    },
    #[error("expected {expected} ranks, got {got}")]
    RankCount { expected: usize, got: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("factor {mode} has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    FactorShape {
        mode: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("column {column} of CP factor {mode} has norm {norm}, expected 1")]
    NotUnitNorm { mode: usize, column: usize, norm: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DecompositionError>;

/// `core x1 H1 x2 ... xN HN`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerForm {
    pub core: DenseTensor,
    pub factors: Vec<DMatrix<f64>>,
}

impl TuckerForm {
    pub fn new(core: DenseTensor, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(DecompositionError::RankCount {
                expected: core.order(),
                got: factors.len(),
            });
        }
        for (mode, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.ncols() != r {
                return Err(DecompositionError::FactorShape {
                    mode,
                    rows: f.nrows(),
                    cols: f.ncols(),
                    expected_rows: f.nrows(),
                    expected_cols: r,
                });
            }
        }
        Ok(Self { core, factors })
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        let ms: Vec<_> = self.factors.iter().map(Some).collect();
        self.core
            .multi_mode_product(&ms)
            .expect("factor shapes validated at construction")
    }
}

/// `sum_r weights[r] * f1[:, r] ∘ ... ∘ fN[:, r]` with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpForm {
    pub weights: Vec<f64>,
    pub factors: Vec<DMatrix<f64>>,
}

impl CpForm {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let r = weights.len();
        for (mode, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(DecompositionError::FactorShape {
                    mode,
                    rows: f.nrows(),
                    cols: f.ncols(),
                    expected_rows: f.nrows(),
                    expected_cols: r,
                });
            }
            for (column, c) in f.column_iter().enumerate() {
                let norm = c.norm();
                if (norm - 1.0).abs() > 1e-10 {
                    return Err(DecompositionError::NotUnitNorm { mode, column, norm });
                }
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        cp_full(&self.weights, &self.factors)
    }
}

fn cp_full(weights: &[f64], factors: &[DMatrix<f64>]) -> DenseTensor {
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    DenseTensor::from_fn(&shape, |idx| {
        weights
            .iter()
            .enumerate()
            .map(|(r, w)| w * idx.iter().zip(factors).map(|(&i, f)| f[(i, r)]).product::<f64>())
            .sum()
    })
    .expect("non-empty factors")
}

/// Leading `k` left singular vectors of `m`, completed to an orthonormal set
/// when `k` exceeds the number of columns.
pub(crate) fn leading_left_singular_vectors(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let rows = m.nrows();
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut cols: Vec<nalgebra::DVector<f64>> = order.iter().take(k).map(|&j| u.column(j).into_owned()).collect();
    // Complete with Gram-Schmidt on the canonical basis.
    let mut e = 0;
    while cols.len() < k && e < rows {
        let mut v = nalgebra::DVector::zeros(rows);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            cols.push(v / n);
        }
        e += 1;
    }
    DMatrix::from_columns(&cols)
}

fn check_ranks(shape: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != shape.len() {
        return Err(DecompositionError::RankCount {
            expected: shape.len(),
            got: ranks.len(),
        });
    }
    for (mode, (&r, &extent)) in ranks.iter().zip(shape).enumerate() {
        if r == 0 || r > extent {
            return Err(DecompositionError::RankOutOfRange { mode, rank: r, extent });
        }
    }
    Ok(())
}

fn project_core(t: &DenseTensor, factors: &[DMatrix<f64>]) -> DenseTensor {
    let transposed: Vec<DMatrix<f64>> = factors.iter().map(|f| f.transpose()).collect();
    let ms: Vec<_> = transposed.iter().map(Some).collect();
    t.multi_mode_product(&ms).expect("factor rows match tensor shape")
}

/// Truncated higher-order SVD.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerForm> {
    check_ranks(t.shape(), ranks)?;
    let factors: Vec<DMatrix<f64>> = ranks
        .iter()
        .enumerate()
        .map(|(mode, &r)| Ok(leading_left_singular_vectors(&t.unfold(mode)?, r)))
        .collect::<Result<_>>()?;
    let core = project_core(t, &factors);
    TuckerForm::new(core, factors)
}

/// Relative reconstruction error `‖t - f‖ / ‖t‖` (absolute when `t` is zero).
pub fn tucker_error(t: &DenseTensor, f: &TuckerForm) -> f64 {
    crate::tensor::relative_error(&f.reconstruct(), t).expect("form matches tensor shape")
}

/// Result of [`hooi_refine`]: the refined form and the relative error after
/// the initial form and after each sweep.
#[derive(Debug, Clone)]
pub struct HooiResult {
    pub form: TuckerForm,
    pub errors: Vec<f64>,
}

/// Higher-order orthogonal iteration starting from `initial`.
///
/// Each sweep is kept only if it does not increase the error, and the loop
/// stops once the decrease falls below `tol`.
pub fn hooi_refine(
    t: &DenseTensor,
    initial: &TuckerForm,
    max_iters: usize,
    tol: f64,
) -> Result<HooiResult> {
    if initial.shape() != t.shape() {
        return Err(TensorError::ShapeMismatch {
            left: initial.shape(),
            right: t.shape().to_vec(),
        }
        .into());
    }
    let ranks = initial.ranks().to_vec();
    let mut form = initial.clone();
    let mut err = tucker_error(t, &form);
    let mut errors = vec![err];
    for _ in 0..max_iters {
        let mut factors = form.factors.clone();
        for mode in 0..t.order() {
            let transposed: Vec<Option<DMatrix<f64>>> = factors
                .iter()
                .enumerate()
                .map(|(j, f)| (j != mode).then(|| f.transpose()))
                .collect();
            let ms: Vec<_> = transposed.iter().map(|m| m.as_ref()).collect();
            let y = t.multi_mode_product(&ms)?;
            factors[mode] = leading_left_singular_vectors(&y.unfold(mode)?, ranks[mode]);
        }
        let candidate = TuckerForm::new(project_core(t, &factors), factors)?;
        let cand_err = tucker_error(t, &candidate);
        if cand_err > err {
            break;
        }
        let drop = err - cand_err;
        form = candidate;
        err = cand_err;
        errors.push(err);
        if drop < tol {
            break;
        }
    }
    Ok(HooiResult { form, errors })
}

#[derive(Debug, Clone, Copy)]
pub struct CpAlsOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Total number of starts; the first is SVD-initialized, the rest Gaussian.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpAlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpFit {
    pub form: CpForm,
    /// `1 - ‖t - reconstruction‖ / ‖t‖`, or 1 for the zero tensor.
    pub fit: f64,
    /// Fit after every sweep of the winning start.
    pub fit_trace: Vec<f64>,
    /// Best fit reached by each start.
    pub start_fits: Vec<f64>,
    /// Set when the rank exceeds the product of all but the largest extent,
    /// which always upper-bounds the CP rank.
    pub rank_warning: bool,
}

/// Matricized tensor times Khatri-Rao product for `mode`.
fn mttkrp(t: &DenseTensor, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
    let r = factors[0].ncols();
    let mut out = DMatrix::zeros(t.shape()[mode], r);
    let mut idx = vec![0; t.order()];
    let mut prod = vec![0.0; r];
    for &v in t.data() {
        if v != 0.0 {
            prod.iter_mut().for_each(|p| *p = v);
            for (j, f) in factors.iter().enumerate() {
                if j != mode {
                    for (c, p) in prod.iter_mut().enumerate() {
                        *p *= f[(idx[j], c)];
                    }
                }
            }
            for (c, p) in prod.iter().enumerate() {
                out[(idx[mode], c)] += p;
            }
        }
        next_index(&mut idx, t.shape());
    }
    out
}

fn normalize_columns(f: &mut DMatrix<f64>) -> Vec<f64> {
    f.column_iter_mut()
        .map(|mut c| {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
            n
        })
        .collect()
}

fn cp_fit(t: &DenseTensor, norm: f64, weights: &[f64], factors: &[DMatrix<f64>]) -> f64 {
    let resid = cp_full(weights, factors).sub(t).expect("same shape").frobenius();
    1.0 - resid / norm
}

/// ALS sweeps until the fit changes by less than `opts.tol`; returns the fit trace.
fn als_sweeps(
    t: &DenseTensor,
    norm: f64,
    rank: usize,
    factors: &mut [DMatrix<f64>],
    weights: &mut Vec<f64>,
    opts: &CpAlsOptions,
) -> Vec<f64> {
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..opts.max_iters {
        for mode in 0..factors.len() {
            let mut v = DMatrix::from_element(rank, rank, 1.0);
            for (j, f) in factors.iter().enumerate() {
                if j != mode {
                    v.component_mul_assign(&(f.transpose() * f));
                }
            }
            let m = mttkrp(t, factors, mode);
            let vinv = v.pseudo_inverse(1e-13).expect("non-negative eps");
            factors[mode] = m * vinv;
            *weights = normalize_columns(&mut factors[mode]);
        }
        let fit = cp_fit(t, norm, weights, factors);
        trace.push(fit);
        if (fit - prev).abs() < opts.tol {
            break;
        }
        prev = fit;
    }
    trace
}

/// The column whose removal lowers the fit the least.
fn least_useful_column(t: &DenseTensor, norm: f64, weights: &[f64], factors: &[DMatrix<f64>]) -> usize {
    let mut w = weights.to_vec();
    (0..weights.len())
        .map(|c| {
            w[c] = 0.0;
            let fit = cp_fit(t, norm, &w, factors);
            w[c] = weights[c];
            (c, fit)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
        .expect("rank >= 1")
}

/// CP decomposition by alternating least squares with restarts.
pub fn cp_als(t: &DenseTensor, rank: usize, opts: CpAlsOptions) -> Result<CpFit> {
    if rank == 0 {
        return Err(DecompositionError::ZeroRank);
    }
    let shape = t.shape().to_vec();
    let largest = *shape.iter().max().expect("order >= 1");
    let bound: usize = shape.iter().product::<usize>() / largest;
    let rank_warning = rank > bound;
    let norm = t.frobenius();
    if norm == 0.0 {
        let factors = shape
            .iter()
            .map(|&n| {
                let mut f = DMatrix::zeros(n, rank);
                f.row_mut(0).fill(1.0);
                f
            })
            .collect();
        return Ok(CpFit {
            form: CpForm::new(vec![0.0; rank], factors)?,
            fit: 1.0,
            fit_trace: vec![1.0],
            start_fits: vec![1.0],
            rank_warning,
        });
    }

    let mut best: Option<(f64, Vec<f64>, Vec<DMatrix<f64>>, Vec<f64>)> = None;
    let mut start_fits = Vec::new();
    for start in 0..opts.restarts.max(1) {
        let mut rng = random::rng(derive_seed(opts.seed, &[start as u64]));
        let mut factors: Vec<DMatrix<f64>> = shape
            .iter()
            .enumerate()
            .map(|(mode, &n)| {
                if start == 0 && rank <= n {
                    leading_left_singular_vectors(&t.unfold(mode).expect("valid mode"), rank)
                } else {
                    let mut f = random::normal_matrix(&mut rng, n, rank, 1.0);
                    normalize_columns(&mut f);
                    f
                }
            })
            .collect();
        let mut weights = vec![1.0; rank];
        let mut trace = als_sweeps(t, norm, rank, &mut factors, &mut weights, &opts);
        // ALS can stall with several columns sharing a lower-rank part while a
        // component orthogonal to them is left in the residual. Move the least
        // useful column onto the residual's leading direction and continue.
        for _ in 0..rank {
            let before = *trace.last().unwrap_or(&f64::NEG_INFINITY);
            if rank == 1 || before >= 1.0 - 1e-12 {
                break;
            }
            let col = least_useful_column(t, norm, &weights, &factors);
            let (saved_w, saved_f) = (weights.clone(), factors.clone());
            let resid = t.sub(&cp_full(&weights, &factors)).expect("same shape");
            for (mode, f) in factors.iter_mut().enumerate() {
                let u = leading_left_singular_vectors(&resid.unfold(mode).expect("valid mode"), 1);
                f.set_column(col, &u.column(0));
            }
            let more = als_sweeps(t, norm, rank, &mut factors, &mut weights, &opts);
            if more.last().is_some_and(|&f| f > before + opts.tol) {
                trace.extend(more);
            } else {
                (weights, factors) = (saved_w, saved_f);
                break;
            }
        }
        let fit = *trace.last().unwrap_or(&f64::NEG_INFINITY);
        start_fits.push(fit);
        if best.as_ref().is_none_or(|b| fit > b.0) {
            best = Some((fit, weights, factors, trace));
        }
    }
    let (fit, weights, factors, fit_trace) = best.expect("at least one start");
    // Columns that collapsed to zero keep a unit placeholder direction.
    let factors = factors
        .into_iter()
        .map(|mut f| {
            for mut c in f.column_iter_mut() {
                if c.norm() == 0.0 {
                    c[0] = 1.0;
                }
            }
            f
        })
        .collect();
    Ok(CpFit {
        form: CpForm::new(weights, factors)?,
        fit,
        fit_trace,
        start_fits,
        rank_warning,
    })
}

/// Random Tucker form: standard normal core, factors with orthonormal columns.
pub fn random_tucker(shape: &[usize], ranks: &[usize], seed: u64) -> Result<TuckerForm> {
    check_ranks(shape, ranks)?;
    let mut rng = random::rng(seed);
    let core = random::normal_tensor(&mut rng, ranks, 1.0);
    let factors = shape
        .iter()
        .zip(ranks)
        .map(|(&n, &r)| random::orthonormal_columns(&mut rng, n, r))
        .collect();
    TuckerForm::new(core, factors)
}

/// Random CP form with unit weights and orthonormal factor columns.
/// Requires `rank <= min(shape)`.
pub fn random_cp(shape: &[usize], rank: usize, seed: u64) -> Result<CpForm> {
    if rank == 0 {
        return Err(DecompositionError::ZeroRank);
    }
    for (mode, &extent) in shape.iter().enumerate() {
        if rank > extent {
            return Err(DecompositionError::RankOutOfRange { mode, rank, extent });
        }
    }
    let mut rng = random::rng(seed);
    let factors = shape
        .iter()
        .map(|&n| random::orthonormal_columns(&mut rng, n, rank))
        .collect();
    CpForm::new(vec![1.0; rank], factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tucker_scalar_core_is_rank_one() {
        let core = DenseTensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = TuckerForm::new(core, vec![u, v]).unwrap().reconstruct();
        assert_eq!(t.shape(), &[2, 3]);
        assert!((t.get(&[1, 0]).unwrap() - 2.4).abs() < 1e-15);
        assert_eq!(t.get(&[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn tucker_identity_factors_return_core() {
        let core = random::normal_tensor(&mut random::rng(1), &[2, 3, 2], 1.0);
        let f = TuckerForm::new(
            core.clone(),
            vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3), DMatrix::identity(2, 2)],
        )
        .unwrap();
        assert_eq!(f.reconstruct(), core);
    }

    #[test]
    fn tucker_factor_mismatch_is_rejected() {
        let core = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(TuckerForm::new(core, vec![DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)]).is_err());
    }

    #[test]
    fn hosvd_rank_one_and_full_rank() {
        let f = random_tucker(&[3, 4, 2], &[1, 1, 1], 5).unwrap();
        let t = f.reconstruct();
        let h = hosvd(&t, &[1, 1, 1]).unwrap();
        assert!(tucker_error(&t, &h) < 1e-10);

        let t = random::normal_tensor(&mut random::rng(9), &[3, 4, 2], 1.0);
        let h = hosvd(&t, &[3, 4, 2]).unwrap();
        assert!(tucker_error(&t, &h) < 1e-12);
        for f in &h.factors {
            let g = f.transpose() * f;
            assert!((g - DMatrix::identity(f.ncols(), f.ncols())).norm() < 1e-10);
        }
    }

    #[test]
    fn hosvd_rejects_bad_ranks() {
        let t = DenseTensor::zeros(&[2, 3]).unwrap();
        assert!(matches!(hosvd(&t, &[0, 1]), Err(DecompositionError::RankOutOfRange { .. })));
        assert!(matches!(hosvd(&t, &[2, 4]), Err(DecompositionError::RankOutOfRange { .. })));
        assert!(matches!(hosvd(&t, &[2]), Err(DecompositionError::RankCount { .. })));
    }

    #[test]
    fn hosvd_completes_basis_when_rank_exceeds_columns() {
        // Mode-0 unfolding is 6x2 so only two singular vectors exist.
        let t = random::normal_tensor(&mut random::rng(2), &[6, 2, 1], 1.0);
        let h = hosvd(&t, &[4, 2, 1]).unwrap();
        let g = h.factors[0].transpose() * &h.factors[0];
        assert!((g - DMatrix::identity(4, 4)).norm() < 1e-10);
        assert!(tucker_error(&t, &h) < 1e-12);
    }

    #[test]
    fn hooi_edge_cases() {
        let t = random_tucker(&[4, 4, 3], &[2, 2, 2], 3).unwrap().reconstruct();
        let init = hosvd(&t, &[2, 2, 2]).unwrap();
        let same = hooi_refine(&t, &init, 0, 1e-12).unwrap();
        assert_eq!(same.form, init);
        let refined = hooi_refine(&t, &init, 10, 1e-12).unwrap();
        assert!(tucker_error(&t, &refined.form) < 1e-10);
    }

    #[test]
    fn cp_rank_one_and_zero() {
        let f = random_cp(&[3, 4, 5], 1, 11).unwrap();
        let t = f.reconstruct().scale(2.5);
        let fit = cp_als(&t, 1, CpAlsOptions::default()).unwrap();
        assert!(fit.fit >= 1.0 - 1e-10, "fit {}", fit.fit);
        assert!((fit.form.weights[0].abs() - 2.5).abs() < 1e-9);

        let z = DenseTensor::zeros(&[2, 3, 2]).unwrap();
        let fit = cp_als(&z, 2, CpAlsOptions::default()).unwrap();
        assert_eq!(fit.fit, 1.0);
        assert!(fit.form.weights.iter().all(|&w| w == 0.0));
        assert!(cp_als(&z, 0, CpAlsOptions::default()).is_err());
    }

    #[test]
    fn cp_rank_warning() {
        let t = random::normal_tensor(&mut random::rng(1), &[2, 2, 3], 1.0);
        let opts = CpAlsOptions {
            max_iters: 5,
            restarts: 1,
            ..Default::default()
        };
        assert!(cp_als(&t, 5, opts).unwrap().rank_warning);
        assert!(!cp_als(&t, 4, opts).unwrap().rank_warning);
    }

    #[test]
    fn random_generators() {
        let f = random_tucker(&[3, 2], &[3, 2], 4).unwrap();
        for m in &f.factors {
            assert!((m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).norm() < 1e-12);
            assert_eq!(m.nrows(), m.ncols());
        }
        assert_eq!(random_tucker(&[3, 2], &[2, 1], 4).unwrap(), random_tucker(&[3, 2], &[2, 1], 4).unwrap());
        assert!(random_tucker(&[3, 2], &[4, 1], 4).is_err());

        let c = random_cp(&[4, 5, 6], 3, 8).unwrap();
        for f in &c.factors {
            for col in f.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-10);
            }
        }
        assert!(random_cp(&[4, 2], 3, 0).is_err());
    }

    #[test]
    fn random_tucker_has_numerical_ranks() {
        let t = random_tucker(&[5, 6, 4], &[2, 3, 2], 17).unwrap().reconstruct();
        for (mode, &r) in [2usize, 3, 2].iter().enumerate() {
            let s = t.unfold(mode).unwrap().singular_values();
            let mut s: Vec<f64> = s.iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            assert!(s[r - 1] > 1e-6 * s[0]);
            if s.len() > r {
                assert!(s[r] <= 1e-10 * s[0], "mode {mode}: {:?}", s);
            }
        }
    }
}
