//! Dense row-major tensors and the handful of local array kernels the IR
//! lowers to.
//!
//! Every reduction goes through one balanced pairwise tree so that the order
//! of floating point additions depends only on the extent of the reduced
//! axis, never on how the caller slices the work.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }

    /// Round a value to the precision of this dtype.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    IntegerPow(u32),
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Mean,
}

impl ReduceOp {
    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sum" => Some(ReduceOp::Sum),
            "mean" => Some(ReduceOp::Mean),
            _ => None,
        }
    }
}

/// Immutable dense tensor. Cloning shares the buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Arc<[f64]>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}{:?}>{:?}", self.dtype, self.shape, &self.data[..])
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_dtype(shape, DType::F64, data)
    }

    pub fn with_dtype(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument {
                op: "tensor",
                reason: format!(
                    "shape {shape:?} holds {expected} elements but {} were given",
                    data.len()
                ),
            });
        }
        Ok(Self::from_parts(shape, dtype, data))
    }

    // Callers guarantee product(shape) == data.len().
    fn from_parts(shape: Vec<usize>, dtype: DType, mut data: Vec<f64>) -> Self {
        if dtype == DType::F32 {
            data.iter_mut().for_each(|v| *v = DType::F32.round(*v));
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            dtype,
            data: data.into(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), DType::F64, vec![value])
    }

    pub fn vector(values: &[f64]) -> Self {
        Self::from_parts(vec![values.len()], DType::F64, values.to_vec())
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn matrix<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.as_ref().len(), cols, "ragged matrix rows");
            data.extend_from_slice(row.as_ref());
        }
        Self::from_parts(vec![rows.len(), cols], DType::F64, data)
    }

    pub fn full(shape: &[usize], dtype: DType, value: f64) -> Self {
        let len = shape.iter().product();
        Self::from_parts(shape.to_vec(), dtype, vec![value; len])
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, dtype, 0.0)
    }

    pub fn ones(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, dtype, 1.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn rank(&self) -> usize {
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

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The value of a single-element tensor, whatever its rank.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn cast(&self, dtype: DType) -> Tensor {
        Self::from_parts(self.shape.clone(), dtype, self.data.to_vec())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    /// False if any element is NaN or infinite (for instance after a
    /// division by zero).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact equality of shape, dtype and every element's bit pattern.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.dtype == other.dtype
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Number of elements in one slice along the leading axis.
    fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Slice `index` along the leading axis, dropping that axis.
    pub fn index_leading(&self, index: usize) -> Result<Tensor> {
        let extent = self.leading_extent("index_leading")?;
        if index >= extent {
            return Err(Error::InvalidArgument {
                op: "index_leading",
                reason: format!("index {index} out of range for leading extent {extent}"),
            });
        }
        let row = self.row_len();
        Ok(Self::from_parts(
            self.shape[1..].to_vec(),
            self.dtype,
            self.data[index * row..(index + 1) * row].to_vec(),
        ))
    }

    /// Rows `start..end` along the leading axis, keeping the axis.
    pub fn slice_leading(&self, start: usize, end: usize) -> Result<Tensor> {
        let extent = self.leading_extent("slice_leading")?;
        if start > end || end > extent {
            return Err(Error::InvalidArgument {
                op: "slice_leading",
                reason: format!("range {start}..{end} out of bounds for extent {extent}"),
            });
        }
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self::from_parts(
            shape,
            self.dtype,
            self.data[start * row..end * row].to_vec(),
        ))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "stack",
            reason: "no tensors to stack".into(),
        })?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for part in parts {
            check_same("stack", first, part)?;
            data.extend_from_slice(&part.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self::from_parts(shape, first.dtype, data))
    }

    /// Concatenate along the existing leading axis.
    pub fn concat_leading(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "concat_leading",
            reason: "no tensors to concatenate".into(),
        })?;
        first.leading_extent("concat_leading")?;
        let mut data = Vec::new();
        let mut extent = 0;
        for part in parts {
            part.leading_extent("concat_leading")?;
            if part.shape[1..] != first.shape[1..] || part.dtype != first.dtype {
                return Err(Error::ShapeMismatch {
                    op: "concat_leading",
                    lhs: first.shape.clone(),
                    rhs: part.shape.clone(),
                });
            }
            extent += part.shape[0];
            data.extend_from_slice(&part.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = extent;
        Ok(Self::from_parts(shape, first.dtype, data))
    }

    fn leading_extent(&self, op: &'static str) -> Result<usize> {
        self.shape.first().copied().ok_or_else(|| Error::InvalidArgument {
            op,
            reason: "rank-0 tensor has no leading axis".into(),
        })
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dtype != b.dtype {
        return Err(Error::DTypeMismatch {
            op,
            lhs: a.dtype.name(),
            rhs: b.dtype.name(),
        });
    }
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

/// Element-wise binary op. Operands must have equal shapes, or one of them
/// must be rank 0.
pub fn ew_binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dtype != b.dtype {
        return Err(Error::DTypeMismatch {
            op: op.name(),
            lhs: a.dtype.name(),
            rhs: b.dtype.name(),
        });
    }
    let data: Vec<f64> = if a.shape == b.shape {
        a.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| op.apply(x, y))
            .collect()
    } else if a.rank() == 0 {
        let x = a.data[0];
        b.data.iter().map(|&y| op.apply(x, y)).collect()
    } else if b.rank() == 0 {
        let y = b.data[0];
        a.data.iter().map(|&x| op.apply(x, y)).collect()
    } else {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    };
    let shape = if a.rank() == 0 { &b.shape } else { &a.shape };
    Ok(Tensor::from_parts(shape.clone(), a.dtype, data))
}

pub fn ew_unary(op: UnaryOp, a: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = match op {
        UnaryOp::Neg => a.data.iter().map(|v| -v).collect(),
        UnaryOp::Scale(c) => {
            if !c.is_finite() {
                return Err(Error::InvalidArgument {
                    op: "scale",
                    reason: format!("scale factor {c} is not finite"),
                });
            }
            a.data.iter().map(|v| c * v).collect()
        }
        UnaryOp::IntegerPow(k) => a.data.iter().map(|&v| integer_pow(v, k)).collect(),
    };
    Ok(Tensor::from_parts(a.shape.clone(), a.dtype, data))
}

fn integer_pow(v: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut acc = v;
    for _ in 1..k {
        acc *= v;
    }
    acc
}

/// Contract the last axis of two equally shaped tensors, batching over all
/// leading axes: `out[..] = sum_j a[.., j] * b[.., j]`.
pub fn batched_dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("batched_dot", a, b)?;
    let d = *a.shape.last().ok_or_else(|| Error::InvalidArgument {
        op: "batched_dot",
        reason: "operands must have rank >= 1".into(),
    })?;
    let data = if d == 0 {
        vec![0.0; a.shape[..a.rank() - 1].iter().product()]
    } else {
        a.data
            .chunks_exact(d)
            .zip(b.data.chunks_exact(d))
            .map(|(x, y)| x.iter().zip(y).fold(0.0, |acc, (p, q)| acc + p * q))
            .collect()
    };
    Ok(Tensor::from_parts(
        a.shape[..a.rank() - 1].to_vec(),
        a.dtype,
        data,
    ))
}

/// Scale the last-axis fibres of `b` by the matching entries of `m`:
/// `out[.., j] = m[..] * b[.., j]`.
pub fn batched_outer(m: &Tensor, b: &Tensor) -> Result<Tensor> {
    if m.dtype != b.dtype {
        return Err(Error::DTypeMismatch {
            op: "batched_outer",
            lhs: m.dtype.name(),
            rhs: b.dtype.name(),
        });
    }
    if b.rank() == 0 || m.shape[..] != b.shape[..b.rank() - 1] {
        return Err(Error::ShapeMismatch {
            op: "batched_outer",
            lhs: m.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let d = b.shape[b.rank() - 1];
    let mut data = Vec::with_capacity(b.len());
    if d > 0 {
        for (&s, row) in m.data.iter().zip(b.data.chunks_exact(d)) {
            data.extend(row.iter().map(|v| s * v));
        }
    }
    Ok(Tensor::from_parts(b.shape.clone(), b.dtype, data))
}

/// Reduce over the leading axis, dropping it.
pub fn reduce_leading(op: ReduceOp, a: &Tensor) -> Result<Tensor> {
    reduce_axis(op, a, 0, false)
}

/// Reduce over `axis` with the pairwise tree. `keepdims` leaves an axis of
/// extent 1 in place of the reduced one.
pub fn reduce_axis(op: ReduceOp, a: &Tensor, axis: usize, keepdims: bool) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(Error::InvalidArgument {
            op: "reduce_leading",
            reason: format!("axis {axis} out of range for rank {}", a.rank()),
        });
    }
    let len = a.shape[axis];
    if len == 0 {
        return Err(Error::InvalidArgument {
            op: "reduce_leading",
            reason: "cannot reduce an axis of extent 0".into(),
        });
    }
    let outer: usize = a.shape[..axis].iter().product();
    let inner: usize = a.shape[axis + 1..].iter().product();
    let mut data = vec![0.0; outer * inner];
    for (o, out) in data.chunks_exact_mut(inner.max(1)).enumerate().take(outer) {
        let block = &a.data[o * len * inner..(o + 1) * len * inner];
        pairwise_rows(block, inner, 0, len, out);
    }
    if op == ReduceOp::Mean {
        let n = len as f64;
        data.iter_mut().for_each(|v| *v /= n);
    }
    let mut shape = a.shape.clone();
    if keepdims {
        shape[axis] = 1;
    } else {
        shape.remove(axis);
    }
    Ok(Tensor::from_parts(shape, a.dtype, data))
}

/// Pairwise sum of rows `lo..hi` of a row-major block with `width`-wide rows.
fn pairwise_rows(block: &[f64], width: usize, lo: usize, hi: usize, out: &mut [f64]) {
    if hi - lo == 1 {
        out.copy_from_slice(&block[lo * width..(lo + 1) * width]);
        return;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_rows(block, width, lo, mid, out);
    let mut right = vec![0.0; width];
    pairwise_rows(block, width, mid, hi, &mut right);
    out.iter_mut().zip(&right).for_each(|(l, r)| *l += r);
}

/// Sum equally shaped tensors with the same balanced tree `reduce_axis` uses,
/// so combining the partial sums of an aligned block partition reproduces the
/// full reduction bit for bit.
pub fn pairwise_sum(parts: &[Tensor]) -> Result<Tensor> {
    match parts {
        [] => Err(Error::InvalidArgument {
            op: "pairwise_sum",
            reason: "nothing to sum".into(),
        }),
        [single] => Ok(single.clone()),
        _ => {
            let mid = parts.len() / 2;
            let left = pairwise_sum(&parts[..mid])?;
            let right = pairwise_sum(&parts[mid..])?;
            check_same("pairwise_sum", &left, &right)?;
            ew_binary(BinaryOp::Add, &left, &right)
        }
    }
}

/// Tile a tensor with leading extent 1 to leading extent `n`.
pub fn tile_leading(a: &Tensor, n: usize) -> Result<Tensor> {
    tile_axis(a, n, 0, false)
}

/// Repeat along `axis`. With `insert`, a new axis of extent `n` is placed at
/// `axis`; otherwise the existing axis must have extent 1 and grows to `n`.
pub fn tile_axis(a: &Tensor, n: usize, axis: usize, insert: bool) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument {
            op: "tile_leading",
            reason: "tile count must be positive".into(),
        });
    }
    let limit = if insert { a.rank() } else { a.rank().saturating_sub(1) };
    if axis > limit || (!insert && a.rank() == 0) {
        return Err(Error::InvalidArgument {
            op: "tile_leading",
            reason: format!("axis {axis} out of range for rank {}", a.rank()),
        });
    }
    if !insert && a.shape[axis] != 1 {
        return Err(Error::InvalidArgument {
            op: "tile_leading",
            reason: format!(
                "axis {axis} has extent {}, expected 1",
                a.shape[axis]
            ),
        });
    }
    let outer: usize = a.shape[..axis].iter().product();
    let skip = if insert { axis } else { axis + 1 };
    let inner: usize = a.shape[skip..].iter().product();
    let mut data = Vec::with_capacity(a.len() * n);
    for o in 0..outer {
        let chunk = &a.data[o * inner..(o + 1) * inner];
        for _ in 0..n {
            data.extend_from_slice(chunk);
        }
    }
    let mut shape = a.shape.clone();
    if insert {
        shape.insert(axis, n);
    } else {
        shape[axis] = n;
    }
    Ok(Tensor::from_parts(shape, a.dtype, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn constructor_checks_element_count() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        let s = Tensor::scalar(5.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), Some(5.0));
    }

    #[test]
    fn binary_examples() {
        let add = ew_binary(BinaryOp::Add, &Tensor::vector(&[1., 2.]), &Tensor::vector(&[3., 4.]));
        assert_eq!(add.unwrap().data(), &[4., 6.]);
        let mul = ew_binary(BinaryOp::Mul, &Tensor::vector(&[5., 7.]), &Tensor::scalar(0.0));
        assert_eq!(mul.unwrap().data(), &[0., 0.]);
        let sub = ew_binary(BinaryOp::Sub, &t(&[2, 1], &[1., 3.]), &Tensor::scalar(1.0)).unwrap();
        assert_eq!(sub.shape(), &[2, 1]);
        assert_eq!(sub.data(), &[0., 2.]);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let err = ew_binary(BinaryOp::Add, &Tensor::vector(&[1., 2.]), &Tensor::vector(&[1., 2., 3.]))
            .unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch { op: "add", lhs: vec![2], rhs: vec![3] }
        );
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn division_by_zero_is_flagged_not_rejected() {
        let q = ew_binary(BinaryOp::Div, &Tensor::vector(&[1., 0.]), &Tensor::scalar(0.0)).unwrap();
        assert!(!q.all_finite());
        assert!(Tensor::vector(&[1., 2.]).all_finite());
    }

    #[test]
    fn unary_examples() {
        let x = Tensor::vector(&[3.0]);
        assert_eq!(ew_unary(UnaryOp::IntegerPow(2), &x).unwrap().data(), &[9.0]);
        let y = Tensor::vector(&[-1.5, 2.25, 0.1]);
        assert!(ew_unary(UnaryOp::IntegerPow(1), &y).unwrap().bit_eq(&y));
        assert_eq!(ew_unary(UnaryOp::IntegerPow(0), &y).unwrap().data(), &[1., 1., 1.]);
        let s = ew_unary(UnaryOp::Scale(0.5), &Tensor::vector(&[4., 8.])).unwrap();
        assert_eq!(s.data(), &[2., 4.]);
        assert_eq!(ew_unary(UnaryOp::Neg, &x).unwrap().data(), &[-3.0]);
        assert!(ew_unary(UnaryOp::Scale(f64::NAN), &x).is_err());
    }

    #[test]
    fn batched_dot_examples() {
        let d = batched_dot(&Tensor::matrix(&[[1., 0.]]), &Tensor::matrix(&[[1., 2.]])).unwrap();
        assert_eq!((d.shape(), d.data()), (&[1][..], &[1.0][..]));
        let d = batched_dot(&Tensor::matrix(&[[1., 1.]]), &Tensor::matrix(&[[2., 3.]])).unwrap();
        assert_eq!(d.data(), &[5.0]);
        let d = batched_dot(
            &Tensor::matrix(&[[1., 0.], [1., 0.]]),
            &Tensor::matrix(&[[1., 2.], [3., 4.]]),
        )
        .unwrap();
        assert_eq!(d.data(), &[1., 3.]);
        // rank 1 contracts to a scalar
        let d = batched_dot(&Tensor::vector(&[1., 2.]), &Tensor::vector(&[3., 4.])).unwrap();
        assert_eq!((d.rank(), d.item()), (0, Some(11.0)));
        assert!(batched_dot(&Tensor::matrix(&[[1., 0.]]), &Tensor::vector(&[1., 2.])).is_err());
        assert!(batched_dot(&Tensor::scalar(1.0), &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn batched_outer_examples() {
        let o = batched_outer(&Tensor::vector(&[2.]), &Tensor::matrix(&[[3., 4.]])).unwrap();
        assert_eq!((o.shape(), o.data()), (&[1, 2][..], &[6., 8.][..]));
        let o = batched_outer(&Tensor::vector(&[0., 0.]), &Tensor::matrix(&[[1., 2.], [3., 4.]]))
            .unwrap();
        assert_eq!(o.data(), &[0.; 4]);
        let o = batched_outer(&Tensor::vector(&[1., 2.]), &Tensor::matrix(&[[1., 1.], [1., 1.]]))
            .unwrap();
        assert_eq!(o.data(), &[1., 1., 2., 2.]);
        assert!(batched_outer(&Tensor::vector(&[1., 2., 3.]), &Tensor::matrix(&[[1., 1.]])).is_err());
    }

    #[test]
    fn reduce_examples() {
        let x = Tensor::matrix(&[[1., 2.], [3., 4.], [5., 6.]]);
        let s = reduce_leading(ReduceOp::Sum, &x).unwrap();
        assert_eq!((s.shape(), s.data()), (&[2][..], &[9., 12.][..]));
        let m = reduce_leading(ReduceOp::Mean, &t(&[2, 1], &[2., 4.])).unwrap();
        assert_eq!(m.data(), &[3.]);
        let one = Tensor::matrix(&[[0.1, -7.25]]);
        assert!(reduce_leading(ReduceOp::Sum, &one)
            .unwrap()
            .bit_eq(&Tensor::vector(&[0.1, -7.25])));
        assert!(reduce_leading(ReduceOp::Sum, &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn reduce_inner_axis_and_keepdims() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let r = reduce_axis(ReduceOp::Sum, &x, 1, false).unwrap();
        assert_eq!((r.shape(), r.data()), (&[2][..], &[6., 15.][..]));
        let r = reduce_axis(ReduceOp::Sum, &x, 0, true).unwrap();
        assert_eq!((r.shape(), r.data()), (&[1, 3][..], &[5., 7., 9.][..]));
        assert!(reduce_axis(ReduceOp::Sum, &x, 2, false).is_err());
    }

    #[test]
    fn pairwise_order_is_a_balanced_tree() {
        // ((a + b) + (c + d)) differs from a left fold for these values.
        let vals = [1e16, 1.0, -1e16, 1.0];
        let x = Tensor::vector(&vals);
        let tree = reduce_leading(ReduceOp::Sum, &x).unwrap().item().unwrap();
        assert_eq!(tree, (1e16 + 1.0) + (-1e16 + 1.0));
        let parts: Vec<Tensor> = vals.iter().map(|&v| Tensor::scalar(v)).collect();
        assert_eq!(pairwise_sum(&parts).unwrap().item().unwrap(), tree);
    }

    #[test]
    fn tile_examples() {
        let x = Tensor::matrix(&[[1., 2.]]);
        let y = tile_leading(&x, 3).unwrap();
        assert_eq!((y.shape(), y.data()), (&[3, 2][..], &[1., 2., 1., 2., 1., 2.][..]));
        assert!(tile_leading(&x, 1).unwrap().bit_eq(&x));
        let z = tile_leading(&Tensor::matrix(&[[0.]]), 4).unwrap();
        assert_eq!((z.shape(), z.data()), (&[4, 1][..], &[0.; 4][..]));
        assert!(tile_leading(&Tensor::matrix(&[[1.], [2.]]), 2).is_err());
        assert!(tile_leading(&x, 0).is_err());
    }

    #[test]
    fn tile_insert_and_inner_axis() {
        let v = Tensor::vector(&[1., 2.]);
        let y = tile_axis(&v, 3, 0, true).unwrap();
        assert_eq!((y.shape(), y.data()), (&[3, 2][..], &[1., 2., 1., 2., 1., 2.][..]));
        let y = tile_axis(&v, 2, 1, true).unwrap();
        assert_eq!((y.shape(), y.data()), (&[2, 2][..], &[1., 1., 2., 2.][..]));
        let col = t(&[2, 1], &[1., 2.]);
        let y = tile_axis(&col, 3, 1, false).unwrap();
        assert_eq!(y.data(), &[1., 1., 1., 2., 2., 2.]);
    }

    #[test]
    fn f32_results_are_rounded() {
        let a = Tensor::with_dtype(vec![1], DType::F32, vec![0.1]).unwrap();
        assert_eq!(a.data()[0], 0.1f32 as f64);
        let b = ew_binary(BinaryOp::Mul, &a, &Tensor::scalar(3.0).cast(DType::F32)).unwrap();
        assert_eq!(b.data()[0], (0.1f32 as f64 * 3.0) as f32 as f64);
        assert!(ew_binary(BinaryOp::Add, &a, &Tensor::vector(&[1.0])).is_err());
    }

    #[test]
    fn stack_slice_round_trip() {
        let xs = vec![Tensor::vector(&[1., 2.]), Tensor::vector(&[3., 4.])];
        let s = Tensor::stack(&xs).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert!(s.index_leading(1).unwrap().bit_eq(&xs[1]));
        assert!(s.index_leading(2).is_err());
        let parts = [s.slice_leading(0, 1).unwrap(), s.slice_leading(1, 2).unwrap()];
        assert!(Tensor::concat_leading(&parts).unwrap().bit_eq(&s));
    }

    fn small_ints(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((-1000i32..1000).prop_map(f64::from), len)
    }

    proptest! {
        #[test]
        fn sum_of_tile_is_n_times_row(row in small_ints(3), n in 1usize..64) {
            let a = Tensor::new(vec![1, 3], row.clone()).unwrap();
            let s = reduce_leading(ReduceOp::Sum, &tile_leading(&a, n).unwrap()).unwrap();
            let expected: Vec<f64> = row.iter().map(|v| v * n as f64).collect();
            prop_assert_eq!(s.data(), &expected[..]);
        }

        #[test]
        fn batched_dot_is_symmetric(a in small_ints(6), b in small_ints(6)) {
            let a = Tensor::new(vec![3, 2], a).unwrap();
            let b = Tensor::new(vec![3, 2], b).unwrap();
            prop_assert!(batched_dot(&a, &b).unwrap().bit_eq(&batched_dot(&b, &a).unwrap()));
        }

        #[test]
        fn reduction_is_reproducible(data in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let x = Tensor::vector(&data);
            let first = reduce_leading(ReduceOp::Sum, &x).unwrap();
            let second = reduce_leading(ReduceOp::Sum, &x).unwrap();
            prop_assert!(first.bit_eq(&second));
        }

        #[test]
        fn aligned_block_partials_match_full_reduction(
            data in proptest::collection::vec(-1e3f64..1e3, 16),
            log_blocks in 0u32..5,
        ) {
            let x = Tensor::new(vec![8, 2], data).unwrap();
            let blocks = 1usize << log_blocks.min(3);
            let size = 8 / blocks;
            let partials: Vec<Tensor> = (0..blocks)
                .map(|b| reduce_axis(ReduceOp::Sum, &x.slice_leading(b * size, (b + 1) * size).unwrap(), 0, true).unwrap())
                .collect();
            let combined = pairwise_sum(&partials).unwrap();
            prop_assert!(combined.bit_eq(&reduce_axis(ReduceOp::Sum, &x, 0, true).unwrap()));
        }
    }
}
