//! Small dense linear algebra: LU solves and real-matrix eigenvalues by Hessenberg
//! reduction followed by Francis double-shift QR iteration.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::error::{Error, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::input("matrix rows must all have length equal to the row count"));
        }
        Ok(Self { n, data: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    /// `None` if a pivot vanishes.
    pub fn factor(a: &DenseMatrix) -> Option<Self> {
        let n = a.n;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))?;
            if lu[(p, k)].abs() <= 1e-300 * scale || lu[(p, k)] == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(p * n + j, k * n + j);
                }
                perm.swap(p, k);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
        Some(Self { lu, perm, sign })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.n).fold(self.sign, |d, i| d * self.lu[(i, i)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// All eigenvalues of `a`, complex pairs adjacent.
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Eigenvalue>> {
    let mut h = a.clone();
    hessenberg(&mut h);
    hqr(&mut h)
}

/// Largest real part among the eigenvalues of `a`; 0-dimensional input gives -inf.
pub fn spectral_bound(a: &DenseMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max))
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg(a: &mut DenseMatrix) {
    let n = a.n;
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let norm = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 { -norm } else { norm };
        for i in k + 1..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm = (k + 1..n).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for i in k + 1..n {
            v[i] /= vnorm;
        }
        // A <- (I - 2vv^T) A
        for j in k..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum();
            for i in k + 1..n {
                a[(i, j)] -= 2.0 * v[i] * s;
            }
        }
        // A <- A (I - 2vv^T)
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum();
            for j in k + 1..n {
                a[(i, j)] -= 2.0 * s * v[j];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the shifted QR algorithm with
/// implicit double shifts. Destroys `a`.
fn hqr(a: &mut DenseMatrix) -> Result<Vec<Eigenvalue>> {
    const MAX_ITS: usize = 60;
    let n = a.n;
    let mut out = vec![Eigenvalue { re: 0.0, im: 0.0 }; n];
    if n == 0 {
        return Ok(out);
    }
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // Look for a single small subdiagonal element.
            let mut l = nu;
            while l > 0 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= eps * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nu, nu)];
            if l == nu {
                out[nu] = Eigenvalue { re: x + t, im: 0.0 };
                nn -= 1;
                break;
            }
            let mut y = a[(nu - 1, nu - 1)];
            let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    out[nu - 1] = Eigenvalue { re: x + z, im: 0.0 };
                    out[nu] = Eigenvalue { re: if z != 0.0 { x - w / z } else { x + z }, im: 0.0 };
                } else {
                    out[nu - 1] = Eigenvalue { re: x + p, im: z };
                    out[nu] = Eigenvalue { re: x + p, im: -z };
                }
                nn -= 2;
                break;
            }
            if its == MAX_ITS {
                return Err(Error::SearchFailure("QR iteration did not converge".into()));
            }
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nu {
                    a[(i, i)] -= x;
                }
                let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // Form the shift and look for two consecutive small subdiagonals.
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nu - 1 {
                a[(i + 2, i)] = 0.0;
                if i != m {
                    a[(i + 2, i - 1)] = 0.0;
                }
            }
            // Double QR step on rows l..=nn and columns m..=nn.
            let mut xk = 0.0;
            for k in m..nu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k + 1 != nu { a[(k + 2, k - 1)] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk != 0.0 {
                        p /= xk;
                        q /= xk;
                        r /= xk;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * xk;
                    }
                    p += s;
                    let xx = p / s;
                    let yy = q / s;
                    let zz = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * zz;
                        }
                        a[(k + 1, j)] -= pp * yy;
                        a[(k, j)] -= pp * xx;
                    }
                    let mmin = nu.min(k + 3);
                    for i in l..=mmin {
                        let mut pp = xx * a[(i, k)] + yy * a[(i, k + 1)];
                        if k + 1 != nu {
                            pp += zz * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_re(mut e: Vec<Eigenvalue>) -> Vec<f64> {
        e.sort_by(|a, b| a.re.total_cmp(&b.re));
        e.iter().map(|v| v.re).collect()
    }

    #[test]
    fn triangular_eigenvalues_are_diagonal() {
        let m = DenseMatrix::from_rows(&[
            vec![-7.0, -7.0, 1.0],
            vec![0.0, -3.0, 2.0],
            vec![0.0, 0.0, 4.0],
        ])
        .unwrap();
        let ev = sorted_re(eigenvalues(&m).unwrap());
        assert_eq!(ev, vec![-7.0, -3.0, 4.0]);
        assert_eq!(spectral_bound(&m).unwrap(), 4.0);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let m = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![2.0, 1.0]]).unwrap();
        let ev = eigenvalues(&m).unwrap();
        for e in &ev {
            assert!((e.re - 1.0).abs() < 1e-14);
            assert!((e.im.abs() - 2.0).abs() < 1e-14);
        }
        assert!(ev[0].im + ev[1].im == 0.0);
    }

    #[test]
    fn companion_matrix_roots() {
        // (x - 1)(x - 2)(x - 3)(x + 4) = x^4 - 2x^3 - 13x^2 + 38x - 24
        let m = DenseMatrix::from_rows(&[
            vec![2.0, 13.0, -38.0, 24.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let ev = sorted_re(eigenvalues(&m).unwrap());
        for (got, want) in ev.iter().zip([-4.0, 1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(spectral_bound(&DenseMatrix::zeros(3)).unwrap(), 0.0);
        assert_eq!(spectral_bound(&DenseMatrix::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_matrix_matches_closed_form() {
        // Tridiagonal (-1, 2, -1): eigenvalues 2 - 2 cos(k pi / (n + 1)).
        let n = 12;
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 2.0;
            if i + 1 < n {
                m[(i, i + 1)] = -1.0;
                m[(i + 1, i)] = -1.0;
            }
        }
        let ev = sorted_re(eigenvalues(&m).unwrap());
        for (k, got) in ev.iter().enumerate() {
            let want = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((got - want).abs() < 1e-12);
        }
    }

    /// Trace and determinant (via LU, an independent route) against the sum and
    /// product of the QR eigenvalues.
    #[test]
    fn random_matrices_trace_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=9 {
            for _ in 0..20 {
                let rows: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
                let m = DenseMatrix::from_rows(&rows).unwrap();
                let ev = eigenvalues(&m).unwrap();
                let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
                let sum_re: f64 = ev.iter().map(|e| e.re).sum();
                let sum_im: f64 = ev.iter().map(|e| e.im).sum();
                assert!((trace - sum_re).abs() < 1e-9 * (1.0 + trace.abs()));
                assert!(sum_im.abs() < 1e-9);
                let (mut pr, mut pi) = (1.0, 0.0);
                for e in &ev {
                    let r = pr * e.re - pi * e.im;
                    pi = pr * e.im + pi * e.re;
                    pr = r;
                }
                let det = Lu::factor(&m).map_or(0.0, |lu| lu.determinant());
                assert!((det - pr).abs() < 1e-8 * (1.0 + det.abs()), "n={n}: {det} vs {pr}");
                assert!(pi.abs() < 1e-8 * (1.0 + det.abs()));
            }
        }
    }

    #[test]
    fn lu_solves() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let b = m.mul_vec(&x);
        let got = Lu::factor(&m).unwrap().solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-14);
        }
        let singular = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(Lu::factor(&singular).is_none());
    }
}
