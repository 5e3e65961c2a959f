//! Iterative solvers used by the operator and solver modules.
//!
//! Inner products here are Euclidean; callers working in the quadrature inner product
//! only differ by the constant cell weight, which cancels in every algorithm below.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

type C = Complex64;

/// Outcome of an iterative linear solve.
#[derive(Clone, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

fn dot_r(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot_c(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_c(a: &[C]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Preconditioned conjugate gradients for a real symmetric positive definite operator.
pub fn pcg_real<A, P>(apply: A, precond: P, b: &[f64], x0: Option<&[f64]>, rtol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let bnorm = dot_r(b, b).sqrt();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; b.len()]);
    if bnorm == 0.0 {
        return Ok((vec![0.0; b.len()], SolveStats { iterations: 0, residual: 0.0 }));
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot_r(&r, &z);
    let mut res = dot_r(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= rtol {
            return Ok((x, SolveStats { iterations: it, residual: res }));
        }
        let ap = apply(&p);
        let pap = dot_r(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence { solver: "pcg", iterations: it, residual: res });
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot_r(&r, &r).sqrt() / bnorm;
        z = precond(&r);
        let rz_new = dot_r(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= rtol {
        return Ok((x, SolveStats { iterations: max_iter, residual: res }));
    }
    Err(Error::NoConvergence { solver: "pcg", iterations: max_iter, residual: res })
}

/// Conjugate gradients for a complex Hermitian positive definite operator.
pub fn cg_complex<A>(apply: A, b: &[C], x0: Option<&[C]>, rtol: f64, max_iter: usize) -> Result<(Vec<C>, SolveStats)>
where
    A: Fn(&[C]) -> Vec<C>,
{
    pcg_complex(apply, |r: &[C]| r.to_vec(), b, x0, rtol, max_iter)
}

/// Preconditioned conjugate gradients for a complex Hermitian positive definite operator.
pub fn pcg_complex<A, P>(apply: A, precond: P, b: &[C], x0: Option<&[C]>, rtol: f64, max_iter: usize) -> Result<(Vec<C>, SolveStats)>
where
    A: Fn(&[C]) -> Vec<C>,
    P: Fn(&[C]) -> Vec<C>,
{
    let bnorm = norm_c(b);
    if bnorm == 0.0 {
        return Ok((vec![C::default(); b.len()], SolveStats { iterations: 0, residual: 0.0 }));
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![C::default(); b.len()]);
    let ax = apply(&x);
    let mut r: Vec<C> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot_c(&r, &z).re;
    let mut res = norm_c(&r) / bnorm;
    for it in 0..max_iter {
        if res <= rtol {
            return Ok((x, SolveStats { iterations: it, residual: res }));
        }
        let ap = apply(&p);
        let pap = dot_c(&p, &ap).re;
        if pap <= 0.0 {
            return Err(Error::NoConvergence { solver: "cg", iterations: it, residual: res });
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        res = norm_c(&r) / bnorm;
        z = precond(&r);
        let rz_new = dot_c(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + p[i] * beta;
        }
    }
    if res <= rtol {
        return Ok((x, SolveStats { iterations: max_iter, residual: res }));
    }
    Err(Error::NoConvergence { solver: "cg", iterations: max_iter, residual: res })
}

/// Flexible GMRES with restarts for a real linear operator; the preconditioner may vary
/// between iterations.
pub fn fgmres<A, P>(
    apply: A,
    mut precond: P,
    b: &[f64],
    rtol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = dot_r(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let mut total = 0;
    let mut res = 1.0;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = dot_r(&r, &r).sqrt();
        res = beta / bnorm;
        if res <= rtol {
            break;
        }
        let m = restart.min(max_iter - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot_r(vi, &w);
                    h[i][k] += c;
                    for (wj, vj) in w.iter_mut().zip(vi) {
                        *wj -= c * vj;
                    }
                }
            }
            let wn = dot_r(&w, &w).sqrt();
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = if d == 0.0 { 1.0 } else { h[k][k] / d };
            sn[k] = if d == 0.0 { 0.0 } else { h[k + 1][k] / d };
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            res = g[k + 1].abs() / bnorm;
            if res <= rtol || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|t| t / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (xj, zj) in x.iter_mut().zip(zi) {
                *xj += yi * zj;
            }
        }
        if res <= rtol {
            // Confirm with the true residual.
            let ax = apply(&x);
            let tr = b.iter().zip(&ax).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / bnorm;
            res = tr;
            if tr <= rtol * 10.0 {
                return Ok((x, SolveStats { iterations: total, residual: tr }));
            }
        }
    }
    if res <= rtol {
        return Ok((x, SolveStats { iterations: total, residual: res }));
    }
    Err(Error::NoConvergence { solver: "fgmres", iterations: total, residual: res })
}

/// Options for [`lowest_eigenpairs`].
#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Residual tolerance `||A v - theta v|| <= tol * max(1, |theta|)`.
    pub tol: f64,
    /// Cap on Davidson steps.
    pub max_iterations: usize,
    /// Largest basis size before a thick restart.
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 3000,
            max_basis: 160,
            seed: 0x5eed,
        }
    }
}

fn orthonormalize_against(basis: &[Vec<C>], v: &mut [C]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot_c(b, v);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    let nv = norm_c(v);
    if nv > 0.0 {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    nv
}

/// Hermitian eigen-decomposition of a small dense matrix, eigenvalues ascending.
pub fn hermitian_eig(h: &DMatrix<C>) -> (Vec<f64>, DMatrix<C>) {
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(h.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// The `k` smallest eigenpairs of a Hermitian operator of dimension `dim`.
///
/// Block Davidson with thick restart: each step extends the search space by the
/// preconditioned residuals of the leading unconverged Ritz pairs and re-solves the
/// projected problem. Without a preconditioner the expansion is a plain block Krylov
/// step. Eigenvectors are returned with unit Euclidean norm.
pub fn lowest_eigenpairs<A>(dim: usize, apply: A, k: usize, opts: &EigenOptions) -> Result<(Vec<f64>, Vec<Vec<C>>)>
where
    A: Fn(&[C]) -> Vec<C>,
{
    lowest_eigenpairs_preconditioned(dim, apply, |_: f64, r: &[C]| r.to_vec(), k, opts)
}

/// As [`lowest_eigenpairs`], with `precond(theta, r)` approximating `(A - theta)^{-1} r`.
pub fn lowest_eigenpairs_preconditioned<A, P>(
    dim: usize,
    apply: A,
    precond: P,
    k: usize,
    opts: &EigenOptions,
) -> Result<(Vec<f64>, Vec<Vec<C>>)>
where
    A: Fn(&[C]) -> Vec<C>,
    P: Fn(f64, &[C]) -> Vec<C>,
{
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!("requested {k} eigenpairs of a {dim}-dimensional operator")));
    }
    let block = (k + 2).min(dim);
    let keep = (k + 4).min(dim);
    let max_basis = opts.max_basis.max(keep + 2 * block).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<C>> = Vec::new();
    let mut images: Vec<Vec<C>> = Vec::new();
    let mut h = DMatrix::<C>::zeros(0, 0);
    let mut fresh: Vec<Vec<C>> = (0..keep)
        .map(|_| (0..dim).map(|_| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect())
        .collect();
    let mut worst = f64::INFINITY;
    let max_steps = opts.max_iterations;
    for _step in 0..max_steps {
        // Extend the basis and the projected matrix.
        let old = basis.len();
        for mut v in fresh.drain(..) {
            let nv = norm_c(&v);
            if nv == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            if orthonormalize_against(&basis, &mut v) < 1e-8 {
                continue;
            }
            images.push(apply(&v));
            basis.push(v);
        }
        let m = basis.len();
        if m == old {
            break;
        }
        let mut grown = DMatrix::<C>::zeros(m, m);
        grown.view_mut((0, 0), (old, old)).copy_from(&h);
        for j in old..m {
            for i in 0..=j {
                let v = dot_c(&basis[i], &images[j]);
                grown[(i, j)] = v;
                grown[(j, i)] = v.conj();
            }
            grown[(j, j)] = C::new(grown[(j, j)].re, 0.0);
        }
        h = grown;
        let (theta, y) = hermitian_eig(&h);
        let ritz_pair = |c: usize| -> (Vec<C>, Vec<C>) {
            let mut v = vec![C::default(); dim];
            let mut av = vec![C::default(); dim];
            for r in 0..m {
                let w = y[(r, c)];
                for (t, b) in v.iter_mut().zip(&basis[r]) {
                    *t += w * b;
                }
                for (t, b) in av.iter_mut().zip(&images[r]) {
                    *t += w * b;
                }
            }
            (v, av)
        };
        let take = block.min(m);
        let mut resid_norms = Vec::with_capacity(take);
        let mut residuals = Vec::with_capacity(take);
        for c in 0..take {
            let (v, av) = ritz_pair(c);
            let r: Vec<C> = av.iter().zip(&v).map(|(a, x)| a - x * theta[c]).collect();
            resid_norms.push(norm_c(&r) / theta[c].abs().max(1.0));
            residuals.push(r);
        }
        worst = resid_norms[..k.min(take)].iter().cloned().fold(0.0, f64::max);
        if take >= k && worst <= opts.tol {
            let vecs = (0..k)
                .map(|c| {
                    let (mut v, _) = ritz_pair(c);
                    let nv = norm_c(&v);
                    v.iter_mut().for_each(|x| *x /= nv);
                    v
                })
                .collect();
            return Ok((theta[..k].to_vec(), vecs));
        }
        fresh = residuals
            .iter()
            .enumerate()
            .filter(|(c, _)| resid_norms[*c] > opts.tol * 0.1)
            .map(|(c, r)| precond(theta[c], r))
            .collect();
        if m + fresh.len() > max_basis {
            // Thick restart onto the leading Ritz vectors.
            let kept = keep.min(m);
            let pairs: Vec<(Vec<C>, Vec<C>)> = (0..kept).map(ritz_pair).collect();
            basis = pairs.iter().map(|p| p.0.clone()).collect();
            images = pairs.into_iter().map(|p| p.1).collect();
            h = DMatrix::from_fn(kept, kept, |i, j| if i == j { C::new(theta[i], 0.0) } else { C::default() });
        }
    }
    Err(Error::NoConvergence { solver: "block Davidson eigensolver", iterations: max_steps, residual: worst })
}

/// Multiplies `v` by a unit phase so its largest-magnitude component is real and positive.
pub fn fix_phase(v: &mut [C]) {
    let mut best = C::default();
    for x in v.iter() {
        if x.norm() > best.norm() * (1.0 + 1e-9) {
            best = *x;
        }
    }
    if best.norm() > 0.0 {
        let ph = best.conj() / best.norm();
        v.iter_mut().for_each(|x| *x *= ph);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcg_solves_diagonal_system() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, st) = pcg_real(
            |v| v.iter().zip(&d).map(|(a, b)| a * b).collect(),
            |v| v.to_vec(),
            &b,
            None,
            1e-12,
            200,
        )
        .unwrap();
        assert!(st.residual <= 1e-12);
        for i in 0..50 {
            assert!((x[i] * d[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fgmres_solves_nonsymmetric_system() {
        let n = 40;
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| 3.0 * v[i] + if i + 1 < n { v[i + 1] } else { 0.0 } - 0.5 * if i > 0 { v[i - 1] } else { 0.0 })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let (x, _) = fgmres(apply, |v| v.to_vec(), &b, 1e-12, 15, 400).unwrap();
        let r = apply(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn eigensolver_finds_degenerate_lowest_pairs() {
        // Diagonal operator with a doubly degenerate bottom.
        let diag: Vec<f64> = (0..300).map(|i| if i < 2 { 1.0 } else { 2.0 + i as f64 }).collect();
        let apply = |v: &[C]| -> Vec<C> { v.iter().zip(&diag).map(|(a, d)| a * d).collect() };
        let (vals, vecs) = lowest_eigenpairs(300, apply, 3, &EigenOptions::default()).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-10 && (vals[1] - 1.0).abs() < 1e-10);
        assert!((vals[2] - 4.0).abs() < 1e-10);
        assert!(dot_c(&vecs[0], &vecs[1]).norm() < 1e-10);
    }

    #[test]
    fn dense_hermitian_eig_on_pauli_y() {
        let h = DMatrix::from_row_slice(2, 2, &[C::default(), C::new(0.0, -1.0), C::new(0.0, 1.0), C::default()]);
        let (vals, _) = hermitian_eig(&h);
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    }
}
