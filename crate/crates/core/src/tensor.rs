//! Dense row-major tensors over `f64` or the ring Z_{2^62}.
//!
//! Every higher layer (fixed-point codec, secret sharing, training) lowers
//! onto the kernels here. Shapes must match exactly; there is no
//! broadcasting.

use std::fmt;

use thiserror::Error;

/// Bit width of the ring used for integer payloads.
pub const RING_BITS: u32 = 62;
/// Ring modulus Q = 2^62.
pub const RING_MODULUS: u64 = 1 << RING_BITS;
const RING_MASK: u64 = RING_MODULUS - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("dtype mismatch in {op}: {left:?} vs {right:?}")]
    DtypeMismatch {
        op: &'static str,
        left: DType,
        right: DType,
    },
    #[error("{op} expects {expected:?} input, got {actual:?}")]
    WrongDtype {
        op: &'static str,
        expected: DType,
        actual: DType,
    },
    #[error("{op} expects rank {expected}, got shape {shape}")]
    WrongRank {
        op: &'static str,
        expected: usize,
        shape: Shape,
    },
    #[error("payload of {len} elements does not fill shape {shape}")]
    LengthMismatch { len: usize, shape: Shape },
    #[error("ring element {0} is not a residue modulo 2^62")]
    InvalidResidue(u64),
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    Float64,
    Ring64,
}

/// Dimension list of a tensor. The empty list is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

impl From<Vec<usize>> for Shape {
    fn from(dims: Vec<usize>) -> Self {
        Shape(dims)
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Float(Vec<f64>),
    Ring(Vec<u64>),
}

impl Data {
    fn len(&self) -> usize {
        match self {
            Data::Float(v) => v.len(),
            Data::Ring(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
        }
    }

    fn apply_f64(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }

    fn apply_ring(self, a: u64, b: u64) -> u64 {
        let raw = match self {
            ElementwiseOp::Add => a.wrapping_add(b),
            ElementwiseOp::Sub => a.wrapping_sub(b),
            ElementwiseOp::Mul => a.wrapping_mul(b),
        };
        raw & RING_MASK
    }
}

/// Reduces an arbitrary `u64` into the ring.
#[inline]
pub fn ring_reduce(x: u64) -> u64 {
    x & RING_MASK
}

/// Immutable dense tensor. All operations create new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Data,
}

impl Tensor {
    pub fn from_f64(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        Self::check_len(&shape, data.len())?;
        Ok(Tensor {
            shape,
            data: Data::Float(data),
        })
    }

    /// Builds a ring tensor; every element must already be a residue in [0, Q).
    pub fn from_ring(shape: impl Into<Shape>, data: Vec<u64>) -> Result<Self> {
        let shape = shape.into();
        Self::check_len(&shape, data.len())?;
        if let Some(&bad) = data.iter().find(|&&x| x >= RING_MODULUS) {
            return Err(TensorError::InvalidResidue(bad));
        }
        Ok(Tensor {
            shape,
            data: Data::Ring(data),
        })
    }

    pub fn zeros(shape: impl Into<Shape>, dtype: DType) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        let data = match dtype {
            DType::Float64 => Data::Float(vec![0.0; n]),
            DType::Ring64 => Data::Ring(vec![0; n]),
        };
        Tensor { shape, data }
    }

    pub fn scalar_f64(x: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: Data::Float(vec![x]),
        }
    }

    /// Convenience for rank-1 float tensors.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::new([data.len()]),
            data: Data::Float(data),
        }
    }

    /// Convenience for rank-2 float tensors given as rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(TensorError::InvalidArgument {
                op: "matrix",
                reason: "ragged rows".into(),
            });
        }
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::from_f64([r, c], data)
    }

    fn check_len(shape: &Shape, len: usize) -> Result<()> {
        if shape.numel() != len {
            return Err(TensorError::LengthMismatch {
                len,
                shape: shape.clone(),
            });
        }
        Ok(())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            Data::Float(_) => DType::Float64,
            Data::Ring(_) => DType::Ring64,
        }
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            Data::Float(v) => Ok(v),
            Data::Ring(_) => Err(TensorError::WrongDtype {
                op: "as_f64",
                expected: DType::Float64,
                actual: DType::Ring64,
            }),
        }
    }

    pub fn as_ring(&self) -> Result<&[u64]> {
        match &self.data {
            Data::Ring(v) => Ok(v),
            Data::Float(_) => Err(TensorError::WrongDtype {
                op: "as_ring",
                expected: DType::Ring64,
                actual: DType::Float64,
            }),
        }
    }

    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self.data {
            Data::Float(v) => Ok(v),
            Data::Ring(_) => Err(TensorError::WrongDtype {
                op: "into_f64",
                expected: DType::Float64,
                actual: DType::Ring64,
            }),
        }
    }

    pub fn into_ring(self) -> Result<Vec<u64>> {
        match self.data {
            Data::Ring(v) => Ok(v),
            Data::Float(_) => Err(TensorError::WrongDtype {
                op: "into_ring",
                expected: DType::Ring64,
                actual: DType::Float64,
            }),
        }
    }

    /// Bitwise equality, treating floats by their IEEE-754 bit patterns.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (Data::Float(a), Data::Float(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Data::Ring(a), Data::Ring(b)) => a == b,
            _ => false,
        }
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        Self::check_len(&shape, self.numel())?;
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.dtype() != other.dtype() {
            return Err(TensorError::DtypeMismatch {
                op,
                left: self.dtype(),
                right: other.dtype(),
            });
        }
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.check_same(b, op.name())?;
        let data = match (&a.data, &b.data) {
            (Data::Float(x), Data::Float(y)) => {
                Data::Float(x.iter().zip(y).map(|(&p, &q)| op.apply_f64(p, q)).collect())
            }
            (Data::Ring(x), Data::Ring(y)) => Data::Ring(
                x.iter()
                    .zip(y)
                    .map(|(&p, &q)| op.apply_ring(p, q))
                    .collect(),
            ),
            _ => unreachable!("dtypes checked above"),
        };
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Mul, self, other)
    }

    pub fn neg(&self) -> Tensor {
        let data = match &self.data {
            Data::Float(v) => Data::Float(v.iter().map(|x| -x).collect()),
            Data::Ring(v) => Data::Ring(v.iter().map(|&x| ring_reduce(x.wrapping_neg())).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Multiplies every float element by `c`.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let v = self.as_f64()?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Data::Float(v.iter().map(|x| x * c).collect()),
        })
    }

    /// Multiplies every ring element by the public residue `c`.
    pub fn ring_scale(&self, c: u64) -> Result<Tensor> {
        let v = self.as_ring()?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Data::Ring(v.iter().map(|&x| ring_reduce(x.wrapping_mul(c))).collect()),
        })
    }

    /// Adds the public residue `c` to every ring element.
    pub fn ring_offset(&self, c: u64) -> Result<Tensor> {
        let v = self.as_ring()?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Data::Ring(v.iter().map(|&x| ring_reduce(x.wrapping_add(c))).collect()),
        })
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.dims() {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::WrongRank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Standard matrix product of `[m,k]` by `[k,n]`. Ring products reduce mod 2^62.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if self.dtype() != other.dtype() {
            return Err(TensorError::DtypeMismatch {
                op: "matmul",
                left: self.dtype(),
                right: other.dtype(),
            });
        }
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = match (&self.data, &other.data) {
            (Data::Float(a), Data::Float(b)) => {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        let brow = &b[p * n..(p + 1) * n];
                        for (o, &bpj) in row.iter_mut().zip(brow) {
                            *o += aip * bpj;
                        }
                    }
                }
                Data::Float(out)
            }
            (Data::Ring(a), Data::Ring(b)) => {
                // Arithmetic mod 2^64 projects onto mod 2^62, so reduce once at the end.
                let mut out = vec![0u64; m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        let brow = &b[p * n..(p + 1) * n];
                        for (o, &bpj) in row.iter_mut().zip(brow) {
                            *o = o.wrapping_add(aip.wrapping_mul(bpj));
                        }
                    }
                }
                out.iter_mut().for_each(|x| *x = ring_reduce(*x));
                Data::Ring(out)
            }
            _ => unreachable!("dtypes checked above"),
        };
        Ok(Tensor {
            shape: Shape::new([m, n]),
            data,
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("transpose")?;
        let data = match &self.data {
            Data::Float(v) => {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = v[i * c + j];
                    }
                }
                Data::Float(out)
            }
            Data::Ring(v) => {
                let mut out = vec![0u64; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = v[i * c + j];
                    }
                }
                Data::Ring(out)
            }
        };
        Ok(Tensor {
            shape: Shape::new([c, r]),
            data,
        })
    }

    /// Non-overlapping `k`x`k` mean pooling over a `[batch, ch, h, w]` float tensor.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor> {
        if self.dtype() != DType::Float64 {
            return Err(TensorError::WrongDtype {
                op: "avg_pool2d",
                expected: DType::Float64,
                actual: self.dtype(),
            });
        }
        let norm = (k * k) as f64;
        let sums = self.sum_pool2d(k)?;
        let shape = sums.shape.clone();
        let out = sums.into_f64()?.into_iter().map(|s| s / norm).collect();
        Tensor::from_f64(shape, out)
    }

    /// Non-overlapping `k`x`k` window sums over `[batch, ch, h, w]`, either dtype.
    /// Ring sums wrap mod 2^62, so pooling over shares stays linear.
    pub fn sum_pool2d(&self, k: usize) -> Result<Tensor> {
        let [b, ch, h, w] = *self.dims() else {
            return Err(TensorError::WrongRank {
                op: "sum_pool2d",
                expected: 4,
                shape: self.shape.clone(),
            });
        };
        if k == 0 {
            return Err(TensorError::InvalidArgument {
                op: "sum_pool2d",
                reason: "window size must be positive".into(),
            });
        }
        if h % k != 0 || w % k != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "sum_pool2d",
                left: self.shape.clone(),
                right: Shape::new([k, k]),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let shape = Shape::new([b, ch, oh, ow]);
        fn pool<T: Copy>(
            v: &[T],
            h: usize,
            w: usize,
            k: usize,
            zero: T,
            add: impl Fn(T, T) -> T,
        ) -> Vec<T> {
            let (oh, ow) = (h / k, w / k);
            let mut out = Vec::with_capacity(v.len() / (k * k));
            for plane in v.chunks_exact(h * w) {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut sum = zero;
                        for di in 0..k {
                            let row = (oi * k + di) * w + oj * k;
                            for &x in &plane[row..row + k] {
                                sum = add(sum, x);
                            }
                        }
                        out.push(sum);
                    }
                }
            }
            out
        }
        let data = match &self.data {
            Data::Float(v) => Data::Float(pool(v, h, w, k, 0.0, |a, b| a + b)),
            Data::Ring(v) => Data::Ring(pool(v, h, w, k, 0u64, |a, b| {
                ring_reduce(a.wrapping_add(b))
            })),
        };
        Ok(Tensor { shape, data })
    }

    /// Adds the vector `row` (length n) to every row of an `[m, n]` matrix.
    pub fn add_rows(&self, row: &Tensor) -> Result<Tensor> {
        let (_, n) = self.matrix_dims("add_rows")?;
        if row.dims() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_rows",
                left: self.shape.clone(),
                right: row.shape.clone(),
            });
        }
        let data = match (&self.data, &row.data) {
            (Data::Float(a), Data::Float(r)) => {
                Data::Float(a.iter().enumerate().map(|(i, x)| x + r[i % n]).collect())
            }
            (Data::Ring(a), Data::Ring(r)) => Data::Ring(
                a.iter()
                    .enumerate()
                    .map(|(i, &x)| ring_reduce(x.wrapping_add(r[i % n])))
                    .collect(),
            ),
            _ => {
                return Err(TensorError::DtypeMismatch {
                    op: "add_rows",
                    left: self.dtype(),
                    right: row.dtype(),
                })
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Sums an `[m, n]` matrix over its rows, giving a length-n vector.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (_, n) = self.matrix_dims("sum_rows")?;
        let v = self.as_f64()?;
        let mut out = vec![0.0; n];
        for row in v.chunks_exact(n.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Tensor::from_f64([n], out)
    }

    /// Degree-3 logistic approximation 1/2 + x/4 - x^3/48, elementwise and unclamped.
    pub fn sigmoid_poly(&self) -> Result<Tensor> {
        let v = self.as_f64().map_err(|_| TensorError::WrongDtype {
            op: "sigmoid_poly",
            expected: DType::Float64,
            actual: self.dtype(),
        })?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Data::Float(v.iter().map(|&x| sigmoid_poly(x)).collect()),
        })
    }
}

/// Scalar form of the polynomial sigmoid.
#[inline]
pub fn sigmoid_poly(x: f64) -> f64 {
    0.5 + x / 4.0 - x * x * x / 48.0
}

/// Derivative of [`sigmoid_poly`].
#[inline]
pub fn sigmoid_poly_grad(x: f64) -> f64 {
    0.25 - x * x / 16.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn naive_matmul_ring(a: &[u64], b: &[u64], m: usize, k: usize, n: usize) -> Vec<u64> {
        let q = RING_MODULUS as u128;
        let mut out = vec![0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s: u128 = 0;
                for p in 0..k {
                    s = (s + (a[i * k + p] as u128 * b[p * n + j] as u128) % q) % q;
                }
                out[i * n + j] = s as u64;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let m = Tensor::from_f64([3, 3], (1..=9).map(|x| x as f64 * 0.7).collect()).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let eye = Tensor::from_f64([3, 3], eye).unwrap();
        assert!(eye.matmul(&m).unwrap().bit_eq(&m));
    }

    #[test]
    fn matmul_two_by_two() {
        let a = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::matrix(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_f64().unwrap(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_ring_wraps() {
        let a = Tensor::from_ring([1, 1], vec![1 << 61]).unwrap();
        let b = Tensor::from_ring([1, 1], vec![4]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_ring().unwrap(), &[0]);
    }

    #[test]
    fn matmul_errors() {
        let a = Tensor::zeros([2, 3], DType::Float64);
        let b = Tensor::zeros([2, 3], DType::Float64);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let r = Tensor::zeros([3, 2], DType::Ring64);
        assert!(matches!(
            a.matmul(&r),
            Err(TensorError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let z = Tensor::vector(vec![0.0; 3]);
        assert!(a.add(&z).unwrap().bit_eq(&a));
        let p = Tensor::vector(vec![2.0, 3.0])
            .mul(&Tensor::vector(vec![4.0, 5.0]))
            .unwrap();
        assert_eq!(p.as_f64().unwrap(), &[8.0, 15.0]);
        let r = Tensor::from_ring([1], vec![RING_MODULUS - 1]).unwrap();
        let one = Tensor::from_ring([1], vec![1]).unwrap();
        assert_eq!(r.add(&one).unwrap().as_ring().unwrap(), &[0]);
    }

    #[test]
    fn elementwise_rejects_mismatch() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
        let r = Tensor::from_ring([2], vec![1, 2]).unwrap();
        assert!(matches!(a.add(&r), Err(TensorError::DtypeMismatch { .. })));
    }

    #[test]
    fn ring_constructor_rejects_non_residue() {
        assert_eq!(
            Tensor::from_ring([1], vec![RING_MODULUS]),
            Err(TensorError::InvalidResidue(RING_MODULUS))
        );
        assert!(matches!(
            Tensor::from_f64([2, 2], vec![0.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn avg_pool_examples() {
        let t = Tensor::from_f64([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.avg_pool2d(2).unwrap().as_f64().unwrap(), &[2.5]);
        assert!(t.avg_pool2d(1).unwrap().bit_eq(&t));
        let c = Tensor::from_f64([2, 3, 4, 4], vec![1.25; 96]).unwrap();
        let pooled = c.avg_pool2d(2).unwrap();
        assert_eq!(pooled.dims(), &[2, 3, 2, 2]);
        assert!(pooled.as_f64().unwrap().iter().all(|&x| x == 1.25));
        assert!(matches!(
            t.avg_pool2d(3),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sigmoid_poly_examples() {
        assert_eq!(sigmoid_poly(0.0), 0.5);
        assert!((sigmoid_poly(1.0) - (0.5 + 0.25 - 1.0 / 48.0)).abs() < 1e-15);
        assert!((sigmoid_poly(1.0) - 0.729_166_666_666_666_6).abs() < 1e-15);
        let t = Tensor::vector(vec![-2.0, 0.0, 2.0]).sigmoid_poly().unwrap();
        let v = t.as_f64().unwrap();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_poly_leaves_unit_interval_past_its_root() {
        // x^3 - 12x - 24 = 0 at x ~ 4.2076
        assert!(sigmoid_poly(4.2) > 0.0);
        assert!(sigmoid_poly(4.21) < 0.0);
        assert!(sigmoid_poly(-4.21) > 1.0);
    }

    fn float_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, n)
    }

    fn ring_vec(n: usize) -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0..RING_MODULUS, n)
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop(a in float_vec(25), b in float_vec(25)) {
            let ta = Tensor::from_f64([5, 5], a.clone()).unwrap();
            let tb = Tensor::from_f64([5, 5], b.clone()).unwrap();
            let got = ta.matmul(&tb).unwrap();
            let want = naive_matmul_f64(&a, &b, 5, 5, 5);
            for (g, w) in got.as_f64().unwrap().iter().zip(&want) {
                let scale = w.abs().max(1.0);
                prop_assert!((g - w).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn ring_matmul_matches_triple_loop(a in ring_vec(25), b in ring_vec(25)) {
            let ta = Tensor::from_ring([5, 5], a.clone()).unwrap();
            let tb = Tensor::from_ring([5, 5], b.clone()).unwrap();
            let got = ta.matmul(&tb).unwrap();
            prop_assert_eq!(got.as_ring().unwrap(), &naive_matmul_ring(&a, &b, 5, 5, 5)[..]);
        }

        #[test]
        fn add_commutes_and_ring_associates(a in ring_vec(6), b in ring_vec(6), c in ring_vec(6)) {
            let (a, b, c) = (
                Tensor::from_ring([2, 3], a).unwrap(),
                Tensor::from_ring([2, 3], b).unwrap(),
                Tensor::from_ring([2, 3], c).unwrap(),
            );
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.add(&b).unwrap().add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
        }

        #[test]
        fn float_add_commutes(a in float_vec(8), b in float_vec(8), c in float_vec(8)) {
            let (ta, tb, tc) = (Tensor::vector(a), Tensor::vector(b), Tensor::vector(c));
            prop_assert!(ta.add(&tb).unwrap().bit_eq(&tb.add(&ta).unwrap()));
            let left = ta.add(&tb).unwrap().add(&tc).unwrap();
            let right = ta.add(&tb.add(&tc).unwrap()).unwrap();
            for (l, r) in left.as_f64().unwrap().iter().zip(right.as_f64().unwrap()) {
                // one rounding step apart at most
                prop_assert!((l - r).abs() <= 2.0 * f64::EPSILON * l.abs().max(r.abs()).max(1e3));
            }
        }

        #[test]
        fn sigmoid_poly_in_unit_interval(x in -4.2f64..4.2) {
            let y = sigmoid_poly(x);
            prop_assert!((0.0..=1.0).contains(&y));
            prop_assert!((sigmoid_poly(-x) - (1.0 - y)).abs() < 1e-12);
        }

        #[test]
        fn avg_pool_preserves_mean(v in float_vec(64)) {
            let t = Tensor::from_f64([1, 1, 8, 8], v.clone()).unwrap();
            let pooled = t.avg_pool2d(4).unwrap();
            let mean_in = v.iter().sum::<f64>() / 64.0;
            let out = pooled.as_f64().unwrap();
            let mean_out = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!((mean_in - mean_out).abs() < 1e-9);
        }
    }
}
