//! Scalar-generic numeric kernels.
//!
//! Both the recording tape and the inference-only evaluator call into these,
//! so the two paths perform bit-identical arithmetic at f64. The `Real` trait
//! exists only to let the benchmark run the same forward pass at f32.

/// Minimal float abstraction: f64 for everything, f32 for benchmark inference.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f64);
impl_real!(f32);

/// out[m×n] = a[m×k] · b[k×n]. `out` must be zeroed by the caller or this adds into it.
pub fn matmul_acc<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m×n] = a[m×k] · b[n×k]ᵀ (additive).
pub fn matmul_nt_acc<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[k×n] = a[m×k]ᵀ · g[m×n] (additive).
pub fn matmul_tn_acc<F: Real>(a: &[F], g: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for r in 0..m {
        let g_row = &g[r * n..(r + 1) * n];
        for i in 0..k {
            let ari = a[r * k + i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row.iter()) {
                *o += ari * gv;
            }
        }
    }
}

/// Per-row vector–matrix product: z[i,f] = Σ_c h[i,c] · theta[i, c·nf + f].
///
/// `h` is n×nc, `theta` is n×(nc·nf), `out` is n×nf. This is the contraction
/// that gives every graph node its own filter from the embedding-expanded
/// weight pool.
pub fn rowwise_vecmat<F: Real>(
    h: &[F],
    theta: &[F],
    n: usize,
    nc: usize,
    nf: usize,
    out: &mut [F],
) {
    debug_assert_eq!(h.len(), n * nc);
    debug_assert_eq!(theta.len(), n * nc * nf);
    debug_assert_eq!(out.len(), n * nf);
    for i in 0..n {
        let h_row = &h[i * nc..(i + 1) * nc];
        let t_row = &theta[i * nc * nf..(i + 1) * nc * nf];
        let out_row = &mut out[i * nf..(i + 1) * nf];
        for (c, &hc) in h_row.iter().enumerate() {
            let t_slice = &t_row[c * nf..(c + 1) * nf];
            for (o, &tv) in out_row.iter_mut().zip(t_slice.iter()) {
                *o += hc * tv;
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::ZERO {
        F::ONE / (F::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::ONE + e)
    }
}

/// Row-wise softmax with row-max subtraction.
pub fn row_softmax<F: Real>(x: &[F], rows: usize, cols: usize, out: &mut [F]) {
    debug_assert_eq!(x.len(), rows * cols);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let mut max = row[0];
        for &v in row.iter() {
            max = max.maximum(v);
        }
        let mut sum = F::ZERO;
        for (o, &v) in out_row.iter_mut().zip(row.iter()) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o = *o / sum;
        }
    }
}

/// Trailing-axis broadcast plan between two shapes.
///
/// Shapes are aligned from the right; each axis pair must be equal or one of
/// the two must be 1. Anything richer is rejected by the callers.
pub struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl Broadcast {
    pub fn plan(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        let rank = a.len().max(b.len());
        let mut out_shape = vec![0usize; rank];
        let get = |s: &[usize], i: usize| -> usize {
            // axis i counted from the right
            if i < s.len() {
                s[s.len() - 1 - i]
            } else {
                1
            }
        };
        for i in 0..rank {
            let (da, db) = (get(a, i), get(b, i));
            let d = if da == db {
                da
            } else if da == 1 {
                db
            } else if db == 1 {
                da
            } else {
                return None;
            };
            out_shape[rank - 1 - i] = d;
        }
        let strides_for = |s: &[usize]| -> Vec<usize> {
            // contiguous row-major strides, 0 on broadcast axes
            let mut st = vec![0usize; rank];
            let mut acc = 1usize;
            for i in 0..rank {
                let d = get(s, i);
                st[rank - 1 - i] = if d == 1 { 0 } else { acc };
                acc *= d;
            }
            st
        };
        let a_strides = strides_for(a);
        let b_strides = strides_for(b);
        Some(Broadcast {
            out_shape,
            a_strides,
            b_strides,
        })
    }

    pub fn element_count(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Visit every output element with the linear indices of its two sources.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let total = self.element_count();
        let mut idx = vec![0usize; rank];
        let mut ai = 0usize;
        let mut bi = 0usize;
        for out_i in 0..total {
            f(out_i, ai, bi);
            // odometer increment
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                ai += self.a_strides[axis];
                bi += self.b_strides[axis];
                if idx[axis] < self.out_shape[axis] {
                    break;
                }
                ai -= self.a_strides[axis] * self.out_shape[axis];
                bi -= self.b_strides[axis] * self.out_shape[axis];
                idx[axis] = 0;
            }
        }
    }
}
