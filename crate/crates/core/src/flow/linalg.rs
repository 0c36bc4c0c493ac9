//! Small dense matrix helpers for the LU-parameterized 1x1 mix (row-major, f64).

/// Orthonormal factor of a square matrix by modified Gram-Schmidt on columns.
pub(crate) fn orthonormalize(a: &[f64], n: usize) -> Vec<f64> {
    let mut q = a.to_vec();
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| q[i * n + j] * q[i * n + k]).sum();
            for i in 0..n {
                q[i * n + j] -= dot * q[i * n + k];
            }
        }
        let norm = (0..n).map(|i| q[i * n + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..n {
            q[i * n + j] /= norm;
        }
    }
    q
}

/// LU factorization with partial pivoting: `a[perm[i], :] = (L U)[i, :]`
/// rearranged so that `a[i, :] = (L U)[inv[i], :]`.
///
/// Returns `(row_of, l, u)` where `row_of[i]` is the row of `L U` that
/// reproduces row `i` of `a`, `l` is unit lower triangular and `u` upper.
pub(crate) fn lu_decompose(a: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut l = vec![0.0; n * n];
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| m[x * n + k].abs().total_cmp(&m[y * n + k].abs()))
            .unwrap_or(k);
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
                if j < k {
                    l.swap(k * n + j, p * n + j);
                }
            }
            piv.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[i * n + k] / m[k * n + k];
            l[i * n + k] = f;
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
        }
    }
    for i in 0..n {
        l[i * n + i] = 1.0;
        for j in 0..i {
            m[i * n + j] = 0.0;
        }
    }
    // (P a)[k] = a[piv[k]] = (L U)[k]  =>  a[i] = (L U)[inv(piv)[i]]
    let mut row_of = vec![0; n];
    for (k, &p) in piv.iter().enumerate() {
        row_of[p] = k;
    }
    (row_of, l, m)
}

pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub(crate) fn invert_lower(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        for i in col..n {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                acc -= l[i * n + k] * inv[k * n + col];
            }
            inv[i * n + col] = acc / l[i * n + i];
        }
    }
    inv
}

/// Inverse of an upper-triangular matrix by back substitution.
pub(crate) fn invert_upper(u: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        for i in (0..=col).rev() {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                acc -= u[i * n + k] * inv[k * n + col];
            }
            inv[i * n + col] = acc / u[i * n + i];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed, 0);
        (0..n * n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn orthonormal_columns() {
        let n = 6;
        let q = orthonormalize(&random(n, 3), n);
        let mut qt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                qt[j * n + i] = q[i * n + j];
            }
        }
        let eye = matmul(&qt, &q, n);
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((eye[i * n + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lu_reconstructs_rows() {
        let n = 5;
        let a = random(n, 11);
        let (row_of, l, u) = lu_decompose(&a, n);
        let lu = matmul(&l, &u, n);
        for i in 0..n {
            for j in 0..n {
                assert!((a[i * n + j] - lu[row_of[i] * n + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangular_inverses() {
        let n = 4;
        let (_, l, u) = lu_decompose(&random(n, 5), n);
        for (m, inv) in [(l.clone(), invert_lower(&l, n)), (u.clone(), invert_upper(&u, n))] {
            let eye = matmul(&m, &inv, n);
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((eye[i * n + j] - e).abs() < 1e-10);
                }
            }
        }
    }
}
