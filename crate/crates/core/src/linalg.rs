//! Small dense linear-algebra helpers on top of nalgebra: Hermitian
//! eigensystems with a deterministic ordering, generalized Rayleigh-quotient
//! maximization via Cholesky whitening, and a rank-revealing null-space
//! extractor (nalgebra's QR/SVD are thin and cannot produce one).

use crate::{C64, CMat, CVec, Error, RMat, RVec, Result};

/// `(m + m^H) / 2` — removes the skew part accumulated by rounding.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Returns `(eigenvalues, eigenvectors)` with eigenvectors
/// in matching columns.
pub fn eigen_hermitian_desc(m: &CMat) -> (RVec, CMat) {
    let se = hermitian_part(m).symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let vals = RVec::from_fn(n, |i, _| se.eigenvalues[order[i]]);
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Count of eigenvalues above `rel_tol` times the largest magnitude.
pub fn rank_from_eigenvalues(eigs: &RVec, rel_tol: f64) -> usize {
    let scale = eigs.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    eigs.iter().filter(|&&v| v > rel_tol * scale).count()
}

/// Unit-norm maximizer of the generalized Rayleigh quotient
/// `u^H a u / u^H q u` with `q` Hermitian positive definite.
///
/// Whitens with the Cholesky factor of `q` and solves the ordinary Hermitian
/// eigenproblem; returns `(quotient_max, u)` with `||u|| = 1`.
pub fn top_generalized_eigvec(a: &CMat, q: &CMat) -> Result<(f64, CVec)> {
    let chol = hermitian_part(q)
        .cholesky()
        .ok_or_else(|| Error::Argument("generalized eigenproblem: q is not positive definite".into()))?;
    let l = chol.l();
    // s = l^{-1} a l^{-H}, Hermitian.
    let mut s = a.clone();
    assert!(l.solve_lower_triangular_mut(&mut s));
    let mut s_adj = s.adjoint();
    assert!(l.solve_lower_triangular_mut(&mut s_adj));
    let s = s_adj.adjoint();
    let (vals, vecs) = eigen_hermitian_desc(&s);
    let v = vecs.column(0).into_owned();
    // u = l^{-H} v, then normalize.
    let mut u = v;
    assert!(l.adjoint().solve_upper_triangular_mut(&mut u));
    let n = u.norm();
    Ok((vals[0], u / C64::new(n, 0.0)))
}

/// Largest entry magnitude of a complex matrix.
pub fn inf_norm(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, e| acc.max(e.norm()))
}

/// Orthonormal basis of the null space of `a`, or `None` if `a` has full
/// column-rank-equivalent row space.
///
/// Uses a column-pivoted Householder QR of `a^T` with the full orthogonal
/// factor accumulated; columns of `Q` beyond the numerical rank span
/// `null(a)`. A diagonal entry of `R` counts toward the rank when its
/// magnitude exceeds `rel_tol` times the largest diagonal entry (the pivoting
/// makes diagonals non-increasing, so the first one is the largest).
pub fn null_space(a: &RMat, rel_tol: f64) -> Option<RMat> {
    let at = a.transpose();
    let n = at.nrows(); // dimension of the solution space
    let m = at.ncols(); // number of constraints
    let mut r = at;
    let mut q = RMat::identity(n, n);

    let steps = n.min(m);
    let mut diag = Vec::with_capacity(steps);
    for k in 0..steps {
        // Pivot: bring the remaining column with the largest tail norm to k.
        let (best, best_norm) = (k..m)
            .map(|j| (j, r.view((k, j), (n - k, 1)).norm()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if best != k {
            r.swap_columns(k, best);
        }
        if best_norm == 0.0 {
            break;
        }
        // Householder reflector zeroing r[k+1.., k].
        let mut v = RVec::zeros(n - k);
        for i in 0..n - k {
            v[i] = r[(k + i, k)];
        }
        let alpha = -v[0].signum() * v.norm();
        v[0] -= alpha;
        let vsq = v.norm_squared();
        if vsq > 0.0 {
            // r[k.., k..] -= 2 v (v^T r) / vsq
            for j in k..m {
                let mut dot = 0.0;
                for i in 0..n - k {
                    dot += v[i] * r[(k + i, j)];
                }
                let scale = 2.0 * dot / vsq;
                for i in 0..n - k {
                    r[(k + i, j)] -= scale * v[i];
                }
            }
            // q[:, k..] -= 2 (q v) v^T / vsq
            for row in 0..n {
                let mut dot = 0.0;
                for i in 0..n - k {
                    dot += q[(row, k + i)] * v[i];
                }
                let scale = 2.0 * dot / vsq;
                for i in 0..n - k {
                    q[(row, k + i)] -= scale * v[i];
                }
            }
        }
        diag.push(r[(k, k)].abs());
    }

    let scale = diag.first().copied().unwrap_or(0.0);
    let rank = if scale == 0.0 {
        0
    } else {
        diag.iter().take_while(|&&d| d > rel_tol * scale).count()
    };
    if rank >= n {
        return None;
    }
    Some(q.columns(rank, n - rank).into_owned())
}

/// Unit vector orthogonal (to ~machine precision) to every vector in `span`,
/// or `None` when the span covers the whole space.
///
/// Builds an orthonormal range basis by SVD, projects each canonical basis
/// vector onto the complement, keeps the largest residual, and re-projects
/// once so downstream trace identities hold near machine precision.
pub fn orthogonal_complement_vector(span: &[CVec]) -> Option<CVec> {
    let n = span.first().map_or(0, |v| v.len());
    if n == 0 {
        return None;
    }
    // Normalized columns keep the SVD's rank threshold meaningful when the
    // span vectors differ in scale by orders of magnitude.
    let cols: Vec<CVec> = span
        .iter()
        .filter(|v| v.norm() > 0.0)
        .map(|v| v / C64::new(v.norm(), 0.0))
        .collect();
    if cols.is_empty() {
        let mut e = CVec::zeros(n);
        e[0] = C64::new(1.0, 0.0);
        return Some(e);
    }
    let mut b = CMat::zeros(n, cols.len());
    for (j, v) in cols.iter().enumerate() {
        b.set_column(j, v);
    }
    let svd = b.svd(true, false);
    let u = svd.u.as_ref()?;
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    if rank >= n {
        return None;
    }
    let range = u.columns(0, rank).into_owned();
    let project = |x: &CVec| -> CVec { x - &range * (range.adjoint() * x) };

    let mut best: Option<CVec> = None;
    let mut best_norm = 0.0;
    for j in 0..n {
        let mut e = CVec::zeros(n);
        e[j] = C64::new(1.0, 0.0);
        let res = project(&e);
        let nr = res.norm();
        if nr > best_norm {
            best_norm = nr;
            best = Some(res);
        }
    }
    let res = best?;
    if best_norm < 1e-7 {
        return None;
    }
    let refined = project(&res);
    let nr = refined.norm();
    if nr == 0.0 {
        return None;
    }
    Some(refined / C64::new(nr, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_rmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RMat {
        RMat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn hermitian_eigen_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cmat(&mut rng, 6, 6);
        let h = hermitian_part(&(a.clone() * a.adjoint()));
        let (vals, vecs) = eigen_hermitian_desc(&h);
        for i in 1..vals.len() {
            assert!(vals[i - 1] >= vals[i]);
        }
        let diag = CMat::from_diagonal(&vals.map(|v| C64::new(v, 0.0)));
        let rec = &vecs * diag * vecs.adjoint();
        assert!((rec - &h).norm() < 1e-12 * h.norm());
    }

    #[test]
    fn null_space_of_known_matrix() {
        // rows: x0 + x2 = 0 pattern => null space dim 2 in R^4.
        let a = RMat::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let basis = null_space(&a, 1e-10).expect("null space exists");
        assert_eq!(basis.ncols(), 2);
        assert!((&a * &basis).norm() < 1e-12);
        let gram = basis.transpose() * &basis;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_absent_for_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let square = random_rmat(&mut rng, 5, 5);
        // Generic random square matrix has no null space.
        assert!(null_space(&square, 1e-10).is_none());
        // Wide matrix with more constraints than unknowns, generic: no null space.
        let tall = random_rmat(&mut rng, 9, 4);
        assert!(null_space(&tall, 1e-10).is_none());
    }

    #[test]
    fn null_space_random_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let left = random_rmat(&mut rng, 5, 3);
            let right = random_rmat(&mut rng, 3, 9);
            let a = left * right; // rank 3, 9 unknowns
            let basis = null_space(&a, 1e-10).expect("rank-3 map on R^9 has a null space");
            assert_eq!(basis.ncols(), 6);
            assert!((&a * &basis).norm() < 1e-10 * a.norm().max(1.0));
            let gram = basis.transpose() * &basis;
            assert!((gram - DMatrix::identity(6, 6)).norm() < 1e-10);
        }
    }

    #[test]
    fn generalized_eigvec_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_cmat(&mut rng, 5, 5);
        let a = hermitian_part(&(b.clone() * b.adjoint()));
        let c = random_cmat(&mut rng, 5, 5);
        let q = hermitian_part(&(c.clone() * c.adjoint())) + CMat::identity(5, 5) * C64::new(0.5, 0.0);
        let (best, u) = top_generalized_eigvec(&a, &q).unwrap();
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let quotient = |v: &CVec| {
            let num = (v.adjoint() * &a * v)[(0, 0)].re;
            let den = (v.adjoint() * &q * v)[(0, 0)].re;
            num / den
        };
        assert!((quotient(&u) - best).abs() < 1e-9 * best.abs().max(1.0));
        for _ in 0..200 {
            let v = CVec::from_fn(5, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            assert!(quotient(&v) <= best + 1e-9);
        }
    }

    #[test]
    fn inf_norm_picks_largest_entry() {
        let mut m = CMat::zeros(3, 2);
        m[(1, 0)] = C64::new(3.0, 4.0);
        m[(2, 1)] = C64::new(-2.0, 0.0);
        assert_eq!(inf_norm(&m), 5.0);
    }

    #[test]
    fn orthogonal_complement_is_orthogonal_and_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            // 7 random (wildly scaled) vectors in C^8 leave a complement.
            let span: Vec<CVec> = (0..7)
                .map(|j| {
                    let scale = 10.0_f64.powi(j as i32 - 4);
                    CVec::from_fn(8, |_, _| {
                        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                            * C64::new(scale, 0.0)
                    })
                })
                .collect();
            let v = orthogonal_complement_vector(&span).expect("complement exists");
            assert!((v.norm() - 1.0).abs() < 1e-12);
            for s in &span {
                assert!(s.dotc(&v).norm() < 1e-13 * s.norm());
            }
        }
    }

    #[test]
    fn orthogonal_complement_absent_for_full_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let span: Vec<CVec> = (0..4)
            .map(|_| {
                CVec::from_fn(4, |_, _| {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
            })
            .collect();
        assert!(orthogonal_complement_vector(&span).is_none());
    }
}
