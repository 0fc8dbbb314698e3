//! Slice-level numeric kernels shared by the tape's forward and backward
//! passes. All matrices are row-major.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_lhs<S: Scalar>(dc: &[S], b: &[S], da: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in dc_row.iter().zip(b_row) {
                acc += x * y;
            }
            da[i * k + p] += acc;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub(crate) fn matmul_grad_rhs<S: Scalar>(a: &[S], dc: &[S], db: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == S::zero() {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += a_ip * g;
            }
        }
    }
}

/// Softmax of `row` restricted to entries where `keep` is true; excluded
/// entries are set to exactly zero. A row with nothing kept becomes all zeros.
pub(crate) fn softmax_into<S: Scalar>(row: &[S], keep: Option<&[bool]>, out: &mut [S]) {
    let kept = |j: usize| keep.map_or(true, |k| k[j]);
    let mut max = S::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if kept(j) && x > max {
            max = x;
        }
    }
    if max == S::neg_infinity() {
        out.iter_mut().for_each(|o| *o = S::zero());
        return;
    }
    let mut sum = S::zero();
    for (j, (&x, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        *o = if kept(j) { (x - max).exp() } else { S::zero() };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Vector-Jacobian product of softmax: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub(crate) fn softmax_vjp_acc<S: Scalar>(y: &[S], dy: &[S], dx: &mut [S]) {
    let dot: S = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d += yi * (gi - dot);
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu_k<S: Scalar>() -> S {
    S::of((2.0 / std::f64::consts::PI).sqrt())
}

/// GELU, tanh approximation.
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let inner = gelu_k::<S>() * (x + S::of(GELU_C) * x * x * x);
    S::of(0.5) * x * (S::one() + inner.tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = gelu_k::<S>();
    let c = S::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = S::of(0.5);
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + S::of(3.0) * c * x * x)
}
