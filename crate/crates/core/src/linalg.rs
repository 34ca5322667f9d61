//! Matrix-free preconditioned conjugate gradients over the active (interior)
//! nodes of a grid.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the final residual.
    pub residual_norm: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` restricted to the
/// nodes where `active` is true. Inactive entries of `x` are zeroed and
/// ignored. `stop(r)` is consulted after every iteration with the current
/// residual; `observe(x, r)` lets callers record iterates.
#[allow(clippy::too_many_arguments)]
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    diag: &[f64],
    active: &[bool],
    mut stop: impl FnMut(&[f64]) -> bool,
    mut observe: impl FnMut(&[f64], &[f64]),
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let mask = |v: &mut [f64]| {
        for (vi, &a) in v.iter_mut().zip(active) {
            if !a {
                *vi = 0.0;
            }
        }
    };
    mask(x);
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    mask(&mut r);
    if stop(&r) {
        return CgOutcome {
            iterations: 0,
            converged: true,
            residual_norm: dot(&r, &r).sqrt(),
        };
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for j in 0..n {
            z[j] = if active[j] && diag[j] > 0.0 { r[j] / diag[j] } else { 0.0 };
        }
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        mask(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome {
                iterations: it,
                converged: false,
                residual_norm: dot(&r, &r).sqrt(),
            };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        observe(x, &r);
        if stop(&r) {
            return CgOutcome {
                iterations: it,
                converged: true,
                residual_norm: dot(&r, &r).sqrt(),
            };
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..n {
            p[j] = z[j] + beta * p[j];
        }
    }
    CgOutcome {
        iterations: max_iter,
        converged: false,
        residual_norm: dot(&r, &r).sqrt(),
    }
}
