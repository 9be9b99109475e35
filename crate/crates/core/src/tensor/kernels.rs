//! Inner loops. Reductions use a fixed lane layout so results do not depend
//! on the instruction set the compiler picks.

use super::Real;

const LANES: usize = 8;

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    reduce(acc) + tail
}

/// Four dot products sharing the right-hand operand.
#[inline]
fn dot4<F: Real>(a: [&[F]; 4], b: &[F]) -> [F; 4] {
    let n = b.len();
    let mut acc = [[F::zero(); LANES]; 4];
    let full = n - n % LANES;
    let mut j = 0;
    while j < full {
        let bb = &b[j..j + LANES];
        for (r, row) in a.iter().enumerate() {
            let aa = &row[j..j + LANES];
            for l in 0..LANES {
                acc[r][l] = acc[r][l] + aa[l] * bb[l];
            }
        }
        j += LANES;
    }
    let mut out = [F::zero(); 4];
    for r in 0..4 {
        let mut tail = F::zero();
        for k in full..n {
            tail = tail + a[r][k] * b[k];
        }
        out[r] = reduce(acc[r]) + tail;
    }
    out
}

#[inline]
fn reduce<F: Real>(acc: [F; LANES]) -> F {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `out[n, r] = x[n, c] * w[r, c]^T (+ b)`
pub(crate) fn linear_forward<F: Real>(
    x: &[F],
    w: &[F],
    b: Option<&[F]>,
    n: usize,
    c: usize,
    r: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); n * r];
    let mut i = 0;
    while i + 4 <= n {
        let rows = [
            &x[i * c..(i + 1) * c],
            &x[(i + 1) * c..(i + 2) * c],
            &x[(i + 2) * c..(i + 3) * c],
            &x[(i + 3) * c..(i + 4) * c],
        ];
        for k in 0..r {
            let d = dot4(rows, &w[k * c..(k + 1) * c]);
            for (q, v) in d.iter().enumerate() {
                out[(i + q) * r + k] = *v;
            }
        }
        i += 4;
    }
    while i < n {
        let xi = &x[i * c..(i + 1) * c];
        for k in 0..r {
            out[i * r + k] = dot(xi, &w[k * c..(k + 1) * c]);
        }
        i += 1;
    }
    if let Some(b) = b {
        for row in out.chunks_exact_mut(r) {
            for (o, bk) in row.iter_mut().zip(b) {
                *o = *o + *bk;
            }
        }
    }
    out
}

/// Accumulates the adjoints of `x[n, c] * w[r, c]^T` given `g[n, r]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<F: Real>(
    g: &[F],
    x: &[F],
    w: &[F],
    n: usize,
    c: usize,
    r: usize,
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
) {
    if let Some(dx) = dx {
        for i in 0..n {
            let dxi = &mut dx[i * c..(i + 1) * c];
            for k in 0..r {
                let gk = g[i * r + k];
                if gk != F::zero() {
                    axpy(dxi, gk, &w[k * c..(k + 1) * c]);
                }
            }
        }
    }
    if let Some(dw) = dw {
        for k in 0..r {
            let dwk = &mut dw[k * c..(k + 1) * c];
            for i in 0..n {
                let gk = g[i * r + k];
                if gk != F::zero() {
                    axpy(dwk, gk, &x[i * c..(i + 1) * c]);
                }
            }
        }
    }
}

/// `out[n, m] = a[n, k] * b[k, m]`
pub(crate) fn matmul_forward<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * m];
    for i in 0..n {
        let oi = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != F::zero() {
                axpy(oi, aip, &b[p * m..(p + 1) * m]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<F: Real>(
    g: &[F],
    a: &[F],
    b: &[F],
    n: usize,
    k: usize,
    m: usize,
    da: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    if let Some(da) = da {
        for i in 0..n {
            let gi = &g[i * m..(i + 1) * m];
            for p in 0..k {
                da[i * k + p] = da[i * k + p] + dot(gi, &b[p * m..(p + 1) * m]);
            }
        }
    }
    if let Some(db) = db {
        for p in 0..k {
            let dbp = &mut db[p * m..(p + 1) * m];
            for i in 0..n {
                let aip = a[i * k + p];
                if aip != F::zero() {
                    axpy(dbp, aip, &g[i * m..(i + 1) * m]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_linear(x: &[f64], w: &[f64], n: usize, c: usize, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * r];
        for i in 0..n {
            for k in 0..r {
                for j in 0..c {
                    out[i * r + k] += x[i * c + j] * w[k * c + j];
                }
            }
        }
        out
    }

    #[test]
    fn linear_matches_naive_loops() {
        for &(n, c, r) in &[(1, 3, 2), (5, 17, 3), (9, 8, 4), (4, 33, 1)] {
            let x: Vec<f64> = (0..n * c).map(|i| ((i * 7 % 11) as f64) * 0.1 - 0.4).collect();
            let w: Vec<f64> = (0..r * c).map(|i| ((i * 5 % 13) as f64) * 0.07 - 0.3).collect();
            let got = linear_forward(&x, &w, None, n, c, r);
            let want = naive_linear(&x, &w, n, c, r);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let want: f64 = a.iter().map(|v| v * v).sum();
        assert_eq!(dot(&a, &a), want);
    }
}
