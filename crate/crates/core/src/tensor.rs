//! Dense N-way tensors and the multilinear algebra used throughout the crate.
//!
//! Storage is first-index-fastest: `vec(A)` enumerates `A(i1, ..., iN)` with
//! `i1` varying fastest, so a tensor's flat buffer *is* its vectorization.
//! Every identity in the crate that mixes `vec` with Kronecker products
//! (for example `vec(X x1 M1 ... xN MN) = (MN ⊗ ... ⊗ M1) vec(X)`) assumes
//! this layout.
//!
//! Modes and element indices are 0-based in the Rust API. Mode `n` here is
//! mode `n + 1` in the usual 1-based mathematical notation.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("matrix with {cols} columns cannot multiply mode {mode} of extent {extent}")]
    ProductMismatch {
        mode: usize,
        extent: usize,
        cols: usize,
    },
    #[error("tensor shapes must have at least one mode and no zero extents, got {0:?}")]
    InvalidShape(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense real tensor in first-index-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

/// Strides for the first-index-fastest layout.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &s in shape {
        out.push(acc);
        acc *= s;
    }
    out
}

/// Advances `index` to the next multi-index in first-index-fastest order.
/// Returns `false` after the last index has been visited.
pub fn next_index(index: &mut [usize], shape: &[usize]) -> bool {
    for (i, &extent) in index.iter_mut().zip(shape) {
        *i += 1;
        if *i < extent {
            return true;
        }
        *i = 0;
    }
    false
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        let mut idx = vec![0; shape.len()];
        loop {
            data.push(f(&idx));
            if !next_index(&mut idx, shape) {
                break;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A tensor with every extent equal to one, holding `value`.
    pub fn scalar(order: usize, value: f64) -> Self {
        Self {
            shape: vec![1; order.max(1)],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, s)| i >= s) {
            return Err(TensorError::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        let mut stride = 1;
        for (&i, &s) in index.iter().zip(&self.shape) {
            off += i * stride;
            stride *= s;
        }
        Ok(off)
    }

    /// Element at a 0-based multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// `vec(A)`: a copy of the flat buffer.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Inverse of [`DenseTensor::vectorize`].
    pub fn fold(v: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, v.to_vec())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// (left, extent, right) sizes around `mode`.
    fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode].iter().product();
        let right = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }

    /// Mode-n unfolding. Columns are the mode-n fibers, enumerated with the
    /// remaining indices in first-index-fastest order.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.check_mode(mode)?;
        let (left, extent, right) = self.split_at_mode(mode);
        let mut m = DMatrix::zeros(extent, left * right);
        for b in 0..right {
            for i in 0..extent {
                let base = i * left + b * left * extent;
                for a in 0..left {
                    m[(i, a + b * left)] = self.data[base + a];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold_mode(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.check_mode(mode)?;
        let (left, extent, right) = t.split_at_mode(mode);
        if m.nrows() != extent || m.ncols() != left * right {
            return Err(TensorError::ShapeMismatch {
                left: vec![m.nrows(), m.ncols()],
                right: vec![extent, left * right],
            });
        }
        for b in 0..right {
            for i in 0..extent {
                let base = i * left + b * left * extent;
                for a in 0..left {
                    t.data[base + a] = m[(i, a + b * left)];
                }
            }
        }
        Ok(t)
    }

    /// Mode-n product `self x_n m`, where `m` is `p x shape[mode]`.
    pub fn mode_n_product(&self, m: &DMatrix<f64>, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let (left, extent, right) = self.split_at_mode(mode);
        if m.ncols() != extent {
            return Err(TensorError::ProductMismatch {
                mode,
                extent,
                cols: m.ncols(),
            });
        }
        let p = m.nrows();
        let mut shape = self.shape.clone();
        shape[mode] = p;
        let mut out = Self::zeros(&shape)?;
        for b in 0..right {
            for i in 0..extent {
                let src = &self.data[i * left + b * left * extent..][..left];
                for j in 0..p {
                    let w = m[(j, i)];
                    if w == 0.0 {
                        continue;
                    }
                    let dst = &mut out.data[j * left + b * left * p..][..left];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Applies `matrices[n]` along every mode `n`, skipping `None` entries.
    pub fn multi_mode_product(&self, matrices: &[Option<&DMatrix<f64>>]) -> Result<Self> {
        let mut out = self.clone();
        for (mode, m) in matrices.iter().enumerate() {
            if let Some(m) = m {
                out = out.mode_n_product(m, mode)?;
            }
        }
        Ok(out)
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Tensor Kronecker product `self ⊗ other`.
    ///
    /// Mode `j` of the result has extent `self.shape[j] * other.shape[j]`;
    /// inside it the index of `other` varies fastest, i.e. position
    /// `i_self * other.shape[j] + i_other`.
    pub fn kronecker(&self, other: &Self) -> Result<Self> {
        if self.order() != other.order() {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let shape: Vec<usize> = self.shape.iter().zip(&other.shape).map(|(a, b)| a * b).collect();
        let out_strides = strides(&shape);
        let mut out = Self::zeros(&shape)?;
        // Offset contributed by each factor's multi-index, precomputed once.
        let offsets = |src: &Self, scale: &dyn Fn(usize, usize) -> usize| {
            let mut offs = Vec::with_capacity(src.len());
            let mut idx = vec![0; src.order()];
            loop {
                offs.push(
                    idx.iter()
                        .enumerate()
                        .map(|(j, &i)| scale(j, i) * out_strides[j])
                        .sum::<usize>(),
                );
                if !next_index(&mut idx, &src.shape) {
                    break;
                }
            }
            offs
        };
        let outer_offs = offsets(self, &|j, i| i * other.shape[j]);
        let inner_offs = offsets(other, &|_, i| i);
        for (a, oa) in self.data.iter().zip(&outer_offs) {
            if *a == 0.0 {
                continue;
            }
            for (b, ob) in other.data.iter().zip(&inner_offs) {
                out.data[oa + ob] = a * b;
            }
        }
        Ok(out)
    }

    /// Outer product; the result has order `self.order() + other.order()`.
    pub fn outer(&self, other: &Self) -> Self {
        let mut shape = self.shape.clone();
        shape.extend_from_slice(&other.shape);
        let mut data = Vec::with_capacity(self.len() * other.len());
        for b in &other.data {
            data.extend(self.data.iter().map(|a| a * b));
        }
        Self { shape, data }
    }

    /// Appends trailing unit modes until the order reaches `order`.
    pub fn with_order(&self, order: usize) -> Self {
        let mut shape = self.shape.clone();
        while shape.len() < order {
            shape.push(1);
        }
        Self {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Slices along the last mode, returning tensors of order `order() - 1`.
    /// An order-1 tensor yields scalars of shape `[1]`.
    pub fn split_last(&self) -> Vec<Self> {
        let last = *self.shape.last().expect("order >= 1");
        let head: Vec<usize> = if self.order() > 1 {
            self.shape[..self.order() - 1].to_vec()
        } else {
            vec![1]
        };
        let chunk = self.len() / last;
        self.data
            .chunks(chunk)
            .map(|c| Self {
                shape: head.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// Stacks equally shaped tensors along a new trailing mode.
    pub fn stack_last(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(TensorError::InvalidShape(vec![]))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            first.same_shape(p)?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape.push(parts.len());
        Ok(Self { shape, data })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    let diff = a.sub(b)?.frobenius();
    let denom = b.frobenius();
    Ok(if denom == 0.0 { diff } else { diff / denom })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::from_vec(shape, (0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn matrix_mode0_unfold_is_itself() {
        // [[1,3],[2,4]] in column-major order.
        let t = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.unfold(0).unwrap();
        assert_eq!(m, DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn unfold_shape_and_round_trip() {
        let t = seq(&[2, 3, 4]);
        let m = t.unfold(1).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 8));
        assert_eq!(DenseTensor::fold_mode(&m, 1, &[2, 3, 4]).unwrap(), t);
    }

    #[test]
    fn unfold_rank_one_matches_fiber_enumeration() {
        let a = [1.0, -2.0];
        let b = [0.5, 3.0, 1.0];
        let c = [2.0, -1.0, 4.0, 0.25];
        let t = DenseTensor::from_fn(&[2, 3, 4], |i| a[i[0]] * b[i[1]] * c[i[2]]).unwrap();
        let m = t.unfold(0).unwrap();
        // Brute force: column (j, k) with j fastest holds a * b[j] * c[k].
        for k in 0..4 {
            for j in 0..3 {
                for i in 0..2 {
                    assert_eq!(m[(i, j + 3 * k)], a[i] * b[j] * c[k]);
                }
            }
        }
    }

    #[test]
    fn unfold_bad_mode() {
        assert!(matches!(
            seq(&[2, 2]).unfold(2),
            Err(TensorError::ModeOutOfRange { mode: 2, order: 2 })
        ));
    }

    #[test]
    fn mode_product_identity_and_sums() {
        let t = seq(&[2, 3, 2]);
        assert_eq!(t.mode_n_product(&DMatrix::identity(3, 3), 1).unwrap(), t);
        let m = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = m.mode_n_product(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 0).unwrap();
        assert_eq!(s.shape(), &[1, 2]);
        assert_eq!(s.data(), &[3.0, 7.0]);
    }

    #[test]
    fn mode_product_matches_triple_loop() {
        let t = seq(&[2, 3, 2]);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 2.0, 0.5, 0.0, 3.0]);
        let out = t.mode_n_product(&m, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let want: f64 = (0..3).map(|l| t.get(&[i, l, k]).unwrap() * m[(j, l)]).sum();
                    assert_eq!(out.get(&[i, j, k]).unwrap(), want);
                }
            }
        }
        assert!(matches!(
            t.mode_n_product(&m, 0),
            Err(TensorError::ProductMismatch { .. })
        ));
    }

    #[test]
    fn inner_products() {
        let ones = DenseTensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(ones.inner(&ones).unwrap(), 4.0);
        let e1 = DenseTensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e2 = DenseTensor::from_vec(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(e1.inner(&e2).unwrap(), 0.0);
        assert!(ones.inner(&seq(&[4])).is_err());
    }

    #[test]
    fn kronecker_classical_cases() {
        let one = DenseTensor::scalar(2, 1.0);
        let b = seq(&[2, 3]);
        assert_eq!(one.kronecker(&b).unwrap(), b);

        let a = DenseTensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.kronecker(&b).unwrap().data(), &[3.0, 4.0, 6.0, 8.0]);

        let a = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::from_vec(&[2, 2], vec![0.0, 5.0, -1.0, 2.0]).unwrap();
        let k = a.kronecker(&b).unwrap();
        let ma = a.unfold(0).unwrap();
        let mb = b.unfold(0).unwrap();
        assert_eq!(k.unfold(0).unwrap(), ma.kronecker(&mb));
        assert!(a.kronecker(&seq(&[2])).is_err());
    }

    #[test]
    fn vectorize_order_and_kronecker_of_vectors() {
        // [[a, c], [b, d]] -> (a, b, c, d)
        let t = DenseTensor::from_fn(&[2, 2], |i| [[1.0, 3.0], [2.0, 4.0]][i[0]][i[1]]).unwrap();
        assert_eq!(t.vectorize(), vec![1.0, 2.0, 3.0, 4.0]);
        let a = DenseTensor::from_vec(&[3], vec![1.0, -1.0, 2.0]).unwrap();
        let b = DenseTensor::from_vec(&[2], vec![0.5, 4.0]).unwrap();
        let classical: Vec<f64> = a.data().iter().flat_map(|x| b.data().iter().map(move |y| x * y)).collect();
        assert_eq!(a.kronecker(&b).unwrap().vectorize(), classical);
        assert!(DenseTensor::fold(&[1.0, 2.0, 3.0], &[2, 2]).is_err());
    }

    #[test]
    fn outer_products() {
        let a = DenseTensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let o = a.outer(&b);
        assert_eq!(o.shape(), &[2, 2]);
        assert_eq!(o.get(&[1, 0]).unwrap(), 2.0);
        assert_eq!(o.get(&[0, 1]).unwrap(), 0.0);
        let one = DenseTensor::from_vec(&[1], vec![1.0]).unwrap();
        assert_eq!(a.outer(&one).shape(), &[2, 1]);

        let m = seq(&[2, 2]);
        let v = DenseTensor::from_vec(&[3], vec![0.5, -2.0, 3.0]).unwrap();
        let o = m.outer(&v);
        assert_eq!(o.shape(), &[2, 2, 3]);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(
                        o.get(&[i, j, k]).unwrap(),
                        m.get(&[i, j]).unwrap() * v.get(&[k]).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_shapes_and_indices() {
        assert!(DenseTensor::zeros(&[]).is_err());
        assert!(DenseTensor::zeros(&[2, 0]).is_err());
        let t = seq(&[2, 2]);
        assert!(t.get(&[2, 0]).is_err());
        assert!(t.get(&[0]).is_err());
    }

    #[test]
    fn split_and_stack() {
        let t = seq(&[2, 2, 3]);
        let parts = t.split_last();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[1].get(&[1, 0]).unwrap(), t.get(&[1, 0, 1]).unwrap());
        assert_eq!(DenseTensor::stack_last(&parts).unwrap(), t);
    }
}
