//! Regularized existence machinery for `-Δ_p u = g e^{1/u}` on a box.
//!
//! Level `n` replaces the weight by `g_n = min(g, n)` and the singular term by
//! `e^{1/(u + 1/n)}`. Each level is solved either through the fixed-point map
//! `A(v)` (solve the operator with the frozen right-hand side
//! `g_n e^{1/(|v| + 1/n)}`) or directly, by minimizing the strictly convex
//! energy whose Euler-Lagrange equation is the level problem. The ladder then
//! checks monotonicity in `n`, interior positivity and sup-norm behavior.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{integrability_thresholds, ExponentData};
use crate::grid::{self, p_energy, p_energy_gradient, Grid, GridField};
use crate::linalg::{dot, pcg};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverTolerances {
    /// Sup norm of the energy gradient (per unit volume) for inner solves.
    /// `None` picks 1e-10 when every `p_i = 2` and 1e-8 otherwise.
    pub inner_tol: Option<f64>,
    /// Sup-norm fixed-point tolerance for the outer iteration.
    pub fix_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            inner_tol: None,
            fix_tol: 1e-8,
            inner_max_iter: 10_000,
            outer_max_iter: 200,
        }
    }
}

impl SolverTolerances {
    pub fn inner_tol_for(&self, e: &ExponentData) -> f64 {
        self.inner_tol.unwrap_or(if all_quadratic(e.p()) { 1e-10 } else { 1e-8 })
    }
}

fn all_quadratic(p: &[f64]) -> bool {
    p.iter().all(|&v| v == 2.0)
}

/// Nonnegative weight `g` with a claimed integrability exponent `m`.
#[derive(Debug, Clone)]
pub struct WeightSpec {
    g: GridField,
    m: f64,
}

impl WeightSpec {
    pub fn new(g: GridField, m: f64) -> Result<Self> {
        if let Some(bad) = g.values().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "weight must be finite and nonnegative, found {bad}"
            )));
        }
        if !(m >= 1.0) {
            return Err(Error::InvalidInput(format!("integrability exponent m = {m} must be >= 1")));
        }
        Ok(Self { g, m })
    }

    /// Constant weight `c` (bounded, so `m = inf`).
    pub fn constant(grid: &Arc<Grid>, c: f64) -> Result<Self> {
        Self::new(GridField::constant(grid, c), f64::INFINITY)
    }

    /// `g(x) = |x - center|^{-s}`, which lies in `L^m` exactly for `m < N / s`.
    /// The node at the singularity takes the value at distance `h_min / 2`.
    /// The recorded `m` is `N / s` (supremum of admissible exponents).
    pub fn radial_power(grid: &Arc<Grid>, s: f64, center: &[f64]) -> Result<Self> {
        if !(s > 0.0) {
            return Self::constant(grid, 1.0);
        }
        let hmin = grid.h().iter().cloned().fold(f64::INFINITY, f64::min);
        let g = GridField::from_fn(grid, |x| {
            let r = x
                .iter()
                .zip(center)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt()
                .max(hmin / 2.0);
            r.powf(-s)
        });
        Self::new(g, grid.dim() as f64 / s)
    }

    pub fn field(&self) -> &GridField {
        &self.g
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Whether `∫ g > 0`.
    pub fn is_nontrivial(&self) -> bool {
        grid::integrate(&self.g) > 0.0
    }
}

/// Data of the level-`n` approximate problem.
#[derive(Debug, Clone)]
pub struct RegularizationLevel {
    pub n: u32,
    pub g_n: GridField,
    pub shift: f64,
}

impl RegularizationLevel {
    pub fn new(n: u32, weight: &WeightSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameters("level n must be positive".into()));
        }
        let cap = n as f64;
        Ok(Self {
            n,
            g_n: weight.g.map(|v| v.min(cap)),
            shift: 1.0 / cap,
        })
    }

    /// Right-hand side `g_n e^{1/(|v| + 1/n)}`.
    pub fn rhs(&self, v: &GridField) -> GridField {
        self.g_n
            .zip_map(v, |g, vv| if g == 0.0 { 0.0 } else { g * (1.0 / (vv.abs() + self.shift)).exp() })
    }
}

/// Node-local part of a convex energy.
#[derive(Clone, Copy)]
enum Potential<'a> {
    /// `-rhs * u`
    Linear(&'a [f64]),
    /// `-g * H(u)` with `H' = e^{1/(max(u,0) + shift)}`; convex since `H'` is non-increasing.
    Singular { g: &'a [f64], shift: f64 },
}

struct Functional<'a> {
    grid: &'a Arc<Grid>,
    p: &'a [f64],
    pot: Potential<'a>,
}

impl<'a> Functional<'a> {
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        p_energy_gradient(u, self.grid, self.p, out);
        let w = self.grid.node_weights();
        match self.pot {
            Potential::Linear(rhs) => {
                for j in 0..out.len() {
                    out[j] -= w[j] * rhs[j];
                }
            }
            Potential::Singular { g, shift } => {
                for j in 0..out.len() {
                    if g[j] != 0.0 {
                        out[j] -= w[j] * g[j] * (1.0 / (u[j].max(0.0) + shift)).exp();
                    }
                }
            }
        }
        for (o, &inside) in out.iter_mut().zip(self.grid.interior_mask()) {
            if !inside {
                *o = 0.0;
            }
        }
    }

    fn energy(&self, u: &[f64]) -> Option<f64> {
        match self.pot {
            Potential::Linear(rhs) => {
                let w = self.grid.node_weights();
                let lin: f64 = (0..u.len()).map(|j| w[j] * rhs[j] * u[j]).sum();
                Some(p_energy(u, self.grid, self.p) - lin)
            }
            Potential::Singular { .. } => None,
        }
    }

    /// Sup over interior nodes of `|grad_j| / w_j`.
    fn normalized_sup(&self, grad: &[f64]) -> f64 {
        let w = self.grid.node_weights();
        let mask = self.grid.interior_mask();
        (0..grad.len())
            .filter(|&j| mask[j])
            .fold(0.0, |m, j| m.max((grad[j] / w[j]).abs()))
    }

    /// Face coefficients of the (floored) Hessian and the potential's diagonal.
    fn hessian(&self, u: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let g = self.grid;
        let mut coeffs = Vec::with_capacity(self.p.len());
        for (axis, &pi) in self.p.iter().enumerate() {
            let s = g.stride(axis);
            let inv_h = 1.0 / g.h()[axis];
            let fw = g.face_weights(axis);
            let mut c = vec![0.0; g.len()];
            if pi == 2.0 {
                for j in 0..g.len() {
                    if fw[j] > 0.0 {
                        c[j] = 1.0;
                    }
                }
            } else {
                let mut max = 0.0f64;
                for j in 0..g.len() {
                    if fw[j] > 0.0 {
                        let d = ((u[j + s] - u[j]) * inv_h).abs();
                        c[j] = (pi - 1.0) * d.powf(pi - 2.0);
                        max = max.max(c[j]);
                    }
                }
                // degenerate faces get a small floor; a zero field uses the quadratic surrogate
                let floor = if max > 0.0 { 1e-8 * max } else { 1.0 };
                for j in 0..g.len() {
                    if fw[j] > 0.0 && c[j] < floor {
                        c[j] = floor;
                    }
                }
            }
            coeffs.push(c);
        }
        let w = g.node_weights();
        let diag = match self.pot {
            Potential::Linear(_) => vec![0.0; g.len()],
            Potential::Singular { g: wt, shift } => (0..g.len())
                .map(|j| {
                    if u[j] > 0.0 && wt[j] != 0.0 {
                        let a = u[j] + shift;
                        w[j] * wt[j] * (1.0 / a).exp() / (a * a)
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        (coeffs, diag)
    }
}

/// `y = Σ_i D_i^T (W_i c_i D_i x) + diag ∘ x`
fn hessian_apply(grid: &Grid, coeffs: &[Vec<f64>], diag: &[f64], x: &[f64], y: &mut [f64]) {
    for j in 0..y.len() {
        y[j] = diag[j] * x[j];
    }
    for (axis, c) in coeffs.iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h2 = 1.0 / (grid.h()[axis] * grid.h()[axis]);
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            let w = fw[j];
            if w > 0.0 {
                let flux = w * c[j] * (x[j + s] - x[j]) * inv_h2;
                y[j] -= flux;
                y[j + s] += flux;
            }
        }
    }
}

fn hessian_diag(grid: &Grid, coeffs: &[Vec<f64>], diag: &[f64]) -> Vec<f64> {
    let mut d = diag.to_vec();
    for (axis, c) in coeffs.iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h2 = 1.0 / (grid.h()[axis] * grid.h()[axis]);
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            if fw[j] > 0.0 {
                let v = fw[j] * c[j] * inv_h2;
                d[j] += v;
                d[j + s] += v;
            }
        }
    }
    d
}

/// Result of a convex minimization.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub field: GridField,
    /// Sup norm of the per-volume energy gradient at the returned field.
    pub residual: f64,
    pub iterations: usize,
    /// Energy after each iteration (linear right-hand sides only).
    pub energies: Vec<f64>,
}

fn minimize(f: &Functional, mut u: Vec<f64>, tol: f64, max_iter: usize, what: &str) -> Result<InnerSolution> {
    let grid = f.grid;
    let mask = grid.interior_mask();
    for (v, &inside) in u.iter_mut().zip(mask) {
        if !inside {
            *v = 0.0;
        }
    }
    let n = grid.len();
    let w = grid.node_weights();
    let mut energies = Vec::new();
    if let Some(e0) = f.energy(&u) {
        energies.push(e0);
    }

    if let (true, Potential::Linear(rhs)) = (all_quadratic(f.p), f.pot) {
        // Quadratic energy: one preconditioned CG solve is the exact minimization.
        let (coeffs, diag) = f.hessian(&u);
        let pre = hessian_diag(grid, &coeffs, &diag);
        let b: Vec<f64> = (0..n).map(|j| w[j] * rhs[j]).collect();
        let stop = |r: &[f64]| {
            (0..n)
                .filter(|&j| mask[j])
                .all(|j| (r[j] / w[j]).abs() <= tol)
        };
        let mut observe = |x: &[f64], r: &[f64]| {
            // J(x) = x.Kx/2 - b.x = -x.(b + r)/2
            let e: f64 = -0.5 * (0..n).map(|j| x[j] * (b[j] + r[j])).sum::<f64>();
            energies.push(e);
        };
        let out = pcg(
            |x, y| hessian_apply(grid, &coeffs, &diag, x, y),
            &b,
            &mut u,
            &pre,
            mask,
            stop,
            &mut observe,
            max_iter,
        );
        let mut grad = vec![0.0; n];
        f.gradient(&u, &mut grad);
        let residual = f.normalized_sup(&grad);
        if !out.converged && residual > tol {
            return Err(Error::NonConvergence {
                what: what.into(),
                iterations: out.iterations,
                residual,
            });
        }
        return Ok(InnerSolution {
            field: GridField::from_values(grid, u)?,
            residual,
            iterations: out.iterations,
            energies,
        });
    }

    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut tgrad = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut stalled = 0;
    for it in 0..max_iter {
        f.gradient(&u, &mut grad);
        residual = f.normalized_sup(&grad);
        if residual <= tol {
            return Ok(InnerSolution {
                field: GridField::from_values(grid, u)?,
                residual,
                iterations: it,
                energies,
            });
        }
        let (coeffs, diag) = f.hessian(&u);
        let pre = hessian_diag(grid, &coeffs, &diag);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let rnorm = dot(&rhs, &rhs).sqrt();
        let mut step = vec![0.0; n];
        pcg(
            |x, y| hessian_apply(grid, &coeffs, &diag, x, y),
            &rhs,
            &mut step,
            &pre,
            mask,
            |r| dot(r, r).sqrt() <= 1e-6 * rnorm,
            |_, _| {},
            2_000,
        );
        let slope0 = dot(&grad, &step);
        if !(slope0 < 0.0) {
            // not a descent direction (CG breakdown); fall back to steepest descent
            for j in 0..n {
                step[j] = -grad[j] / pre[j].max(f64::MIN_POSITIVE);
            }
        }
        let slope0 = dot(&grad, &step);
        let mut dphi = |t: f64| {
            for j in 0..n {
                trial[j] = u[j] + t * step[j];
            }
            f.gradient(&trial, &mut tgrad);
            dot(&tgrad, &step)
        };
        let t = line_search(&mut dphi, slope0);
        if t == 0.0 {
            stalled += 1;
            if stalled > 3 {
                break;
            }
            continue;
        }
        for j in 0..n {
            u[j] += t * step[j];
        }
        if let Some(e) = f.energy(&u) {
            energies.push(e);
        }
    }
    f.gradient(&u, &mut grad);
    residual = residual.min(f.normalized_sup(&grad));
    Err(Error::NonConvergence {
        what: what.into(),
        iterations: max_iter,
        residual,
    })
}

/// Finds `t > 0` with `φ'(t) <= 0` and `|φ'(t)| <= 0.1 |φ'(0)|` for a convex
/// `φ` with `φ'(0) < 0`; such a `t` lies left of the minimizer, so `φ(t) < φ(0)`.
fn line_search(dphi: &mut impl FnMut(f64) -> f64, slope0: f64) -> f64 {
    let target = 0.1 * slope0.abs();
    let (mut a, mut fa) = (0.0, slope0);
    let mut b = 1.0;
    let mut fb = dphi(b);
    // bracket the minimizer
    let mut guard = 0;
    while fb < 0.0 {
        if fb.abs() <= target {
            return b;
        }
        a = b;
        fa = fb;
        b *= 2.0;
        fb = dphi(b);
        guard += 1;
        if guard > 60 {
            return a;
        }
    }
    // shrink a badly scaled bracket geometrically first
    let mut guard = 0;
    while fb > 1e3 * fa.abs() && guard < 200 {
        let m = a + (b - a) * 0.25;
        let fm = dphi(m);
        if fm < 0.0 {
            if fm.abs() <= target {
                return m;
            }
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
        guard += 1;
    }
    // Illinois regula falsi
    let mut side = 0i32;
    for _ in 0..100 {
        let m = (a * fb - b * fa) / (fb - fa);
        let m = if m > a && m < b { m } else { 0.5 * (a + b) };
        let fm = dphi(m);
        if fm < 0.0 {
            if fm.abs() <= target {
                return m;
            }
            a = m;
            fa = fm;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            if fm == 0.0 {
                return m;
            }
            b = m;
            fb = fm;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if (b - a) <= 1e-15 * b {
            break;
        }
    }
    a
}

/// `Σ_i (1/p_i) ∫ |D_i u|^{p_i} - ∫ rhs u`.
pub fn inner_energy(u: &GridField, rhs: &GridField, e: &ExponentData) -> f64 {
    let g = u.grid();
    let lin = grid::weighted_integrate(rhs, u);
    p_energy(u.values(), g, e.p()) - lin
}

/// Minimizes [`inner_energy`]: the unique zero-boundary solution of
/// `-Δ_p u = rhs` up to `tol` in the per-volume gradient sup norm.
pub fn solve_inner(rhs: &GridField, e: &ExponentData, tol: f64) -> Result<GridField> {
    Ok(solve_inner_detailed(rhs, e, tol, 10_000, None)?.field)
}

/// [`solve_inner`] with an iteration cap, optional starting field, and
/// diagnostics (iteration count, energy history).
pub fn solve_inner_detailed(
    rhs: &GridField,
    e: &ExponentData,
    tol: f64,
    max_iter: usize,
    init: Option<&GridField>,
) -> Result<InnerSolution> {
    let grid = rhs.grid().clone();
    check_dims(&grid, e)?;
    let f = Functional {
        grid: &grid,
        p: e.p(),
        pot: Potential::Linear(rhs.values()),
    };
    let start = init.map(|u| u.values().to_vec()).unwrap_or_else(|| vec![0.0; grid.len()]);
    minimize(&f, start, tol, max_iter, "inner solve")
}

fn check_dims(grid: &Grid, e: &ExponentData) -> Result<()> {
    if grid.dim() != e.dim() {
        return Err(Error::InvalidInput(format!(
            "{} exponents for a {}-dimensional grid",
            e.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// The fixed-point map `A(v)`: solves the operator with right-hand side
/// `g_n e^{1/(|v| + 1/n)}`.
pub fn apply_a(
    v: &GridField,
    level: &RegularizationLevel,
    e: &ExponentData,
    tols: &SolverTolerances,
) -> Result<GridField> {
    apply_a_from(v, level, e, tols, None)
}

fn apply_a_from(
    v: &GridField,
    level: &RegularizationLevel,
    e: &ExponentData,
    tols: &SolverTolerances,
    init: Option<&GridField>,
) -> Result<GridField> {
    let rhs = level.rhs(v);
    Ok(solve_inner_detailed(&rhs, e, tols.inner_tol_for(e), tols.inner_max_iter, init)?.field)
}

/// How a single level is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LevelMethod {
    /// Damped iteration of `A` from `u = 0`.
    FixedPoint,
    /// Newton on the convex level energy, then one application of `A` to
    /// measure the fixed-point residual.
    Direct,
}

#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub field: GridField,
    pub iterations: usize,
    /// `sup |A(u) - u|`.
    pub fixed_point_residual: f64,
    /// Final damping factor of the fixed-point iteration (1 for direct solves).
    pub damping: f64,
}

/// Iterates `u <- u + ω (A(u) - u)` from `u = 0` until `sup |A(u) - u| <= fix_tol`.
///
/// `A` is order-reversing, so plain iteration (`ω = 1`) oscillates; `ω` is
/// halved whenever the fixed-point residual fails to contract.
pub fn solve_level(
    level: &RegularizationLevel,
    e: &ExponentData,
    tols: &SolverTolerances,
) -> Result<LevelSolution> {
    let grid = level.g_n.grid().clone();
    check_dims(&grid, e)?;
    let mut u = GridField::zeros(&grid);
    let mut omega = 1.0;
    let mut prev = f64::INFINITY;
    let mut last = f64::INFINITY;
    let mut inner_start: Option<GridField> = None;
    for it in 0..tols.outer_max_iter {
        let a = apply_a_from(&u, level, e, tols, inner_start.as_ref())?;
        let change = a.dist_sup(&u);
        last = change;
        if change <= tols.fix_tol {
            return Ok(LevelSolution {
                field: a,
                iterations: it + 1,
                fixed_point_residual: change,
                damping: omega,
            });
        }
        if change > 0.95 * prev {
            omega *= 0.5;
        }
        prev = change;
        u = u.zip_map(&a, |x, y| x + omega * (y - x));
        inner_start = Some(a);
    }
    Err(Error::NonConvergence {
        what: format!("fixed-point iteration at level {}", level.n),
        iterations: tols.outer_max_iter,
        residual: last,
    })
}

/// Solves level `n` by minimizing its convex energy, then measures the
/// fixed-point residual with one application of `A`.
pub fn solve_level_direct(
    level: &RegularizationLevel,
    e: &ExponentData,
    tols: &SolverTolerances,
    init: Option<&GridField>,
) -> Result<LevelSolution> {
    let grid = level.g_n.grid().clone();
    check_dims(&grid, e)?;
    let f = Functional {
        grid: &grid,
        p: e.p(),
        pot: Potential::Singular {
            g: level.g_n.values(),
            shift: level.shift,
        },
    };
    let start = init.map(|u| u.values().to_vec()).unwrap_or_else(|| vec![0.0; grid.len()]);
    let sol = minimize(
        &f,
        start,
        tols.inner_tol_for(e),
        tols.inner_max_iter,
        &format!("direct solve at level {}", level.n),
    )?;
    let u = sol.field;
    // cold start: a warm start at u would return u itself
    let a = apply_a_from(&u, level, e, tols, None)?;
    Ok(LevelSolution {
        fixed_point_residual: a.dist_sup(&u),
        field: u,
        iterations: sol.iterations,
        damping: 1.0,
    })
}

/// Per-level entry of a [`LadderReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelRecord {
    pub n: u32,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub sup_norm: f64,
    /// Minimum over the centered box of half the side length.
    pub interior_min: f64,
    /// `max (u_n - u_{n+1})^+`, absent for the last level.
    pub monotonicity_defect: Option<f64>,
    pub level_set: LevelSetFit,
}

/// Level-set decay data `|A(k)| = |{u > k}|` and the fitted Stampacchia bound
/// `|A(h)| <= C |A(k)|^β / (h - k)^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelSetFit {
    pub beta: f64,
    pub r: f64,
    /// Smallest constant for which the bound holds on every pair of fit levels.
    pub c: f64,
    /// Largest ratio measured / bound over all pairs of a 4x finer level ladder.
    pub max_violation: f64,
    /// `k* = d` from the closed form with the fitted `C` and `φ0 = |A(0)|`.
    pub predicted_extinction: Option<f64>,
    /// Whether `max u <= k*`.
    pub extinction_consistent: Option<bool>,
    pub levels: Vec<f64>,
    pub measures: Vec<f64>,
}
/// Weak-form residuals of the final level against random compactly supported
/// test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeakFormCheck {
    pub test_functions: usize,
    /// Largest `|LHS - RHS| / ∫|rhs φ|` against the level problem.
    pub max_level_residual: f64,
    /// Same against the limit problem with `g e^{1/u}`.
    pub max_limit_residual: f64,
}

/// `(u - ε)^+` diagnostics for the final level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpsilonTruncation {
    pub epsilon: f64,
    pub energy: f64,
    /// Smallest distance from a node of `{u > ε}` to the boundary.
    pub boundary_distance: f64,
    pub clear_of_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LadderFailure {
    pub level: u32,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LadderReport {
    pub method: LevelMethod,
    pub levels: Vec<LevelRecord>,
    pub max_monotonicity_defect: f64,
    pub interior_min_nondecreasing: bool,
    /// Whether the weight's `m` exceeds the uniform-bound threshold.
    pub uniform_bound_expected: bool,
    /// Ratio of the last to the first sup-norm increment (small means leveling off).
    pub sup_growth_trend: Option<f64>,
    pub weak_form: Option<WeakFormCheck>,
    pub epsilon_truncations: Vec<EpsilonTruncation>,
    pub failure: Option<LadderFailure>,
    /// Level fields `u_1 .. u_nMax`; the last one is the limit proxy.
    #[serde(skip)]
    pub fields: Vec<GridField>,
}

impl LadderReport {
    pub fn limit(&self) -> Option<&GridField> {
        self.fields.last()
    }
}

/// Options for [`run_ladder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderOptions {
    pub method: LevelMethod,
    pub tolerances: SolverTolerances,
    pub test_functions: usize,
    pub seed: u64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            method: LevelMethod::Direct,
            tolerances: SolverTolerances::default(),
            test_functions: 20,
            seed: 0x5eed,
        }
    }
}

/// Computes `u_1, ..., u_nMax` and the ladder diagnostics.
pub fn run_ladder(
    n_max: u32,
    weight: &WeightSpec,
    e: &ExponentData,
    opts: &LadderOptions,
) -> Result<LadderReport> {
    if n_max < 2 {
        return Err(Error::InvalidParameters(format!("nMax = {n_max} must be at least 2")));
    }
    let grid = weight.g.grid().clone();
    check_dims(&grid, e)?;
    let omega = interior_box(&grid);
    let (st_beta, st_r) = stampacchia_exponents(e, weight.m);

    let mut fields: Vec<GridField> = Vec::new();
    let mut records: Vec<LevelRecord> = Vec::new();
    let mut failure = None;
    for n in 1..=n_max {
        let level = RegularizationLevel::new(n, weight)?;
        let solved = match opts.method {
            LevelMethod::FixedPoint => solve_level(&level, e, &opts.tolerances),
            LevelMethod::Direct => solve_level_direct(&level, e, &opts.tolerances, fields.last()),
        };
        let sol = match solved {
            Ok(s) => s,
            Err(err) => {
                failure = Some(LadderFailure {
                    level: n,
                    message: err.to_string(),
                });
                break;
            }
        };
        let u = sol.field;
        let interior_min = omega
            .iter()
            .map(|&j| u.values()[j])
            .fold(f64::INFINITY, f64::min);
        records.push(LevelRecord {
            n,
            iterations: sol.iterations,
            fixed_point_residual: sol.fixed_point_residual,
            sup_norm: u.sup_norm(),
            interior_min,
            monotonicity_defect: None,
            level_set: level_set_fit(&u, st_beta, st_r, 16),
        });
        fields.push(u);
    }

    for k in 1..fields.len() {
        let defect = fields[k - 1]
            .values()
            .iter()
            .zip(fields[k].values())
            .fold(0.0f64, |m, (a, b)| m.max(a - b));
        records[k - 1].monotonicity_defect = Some(defect.max(0.0));
    }
    let max_monotonicity_defect = records
        .iter()
        .filter_map(|r| r.monotonicity_defect)
        .fold(0.0, f64::max);
    let interior_min_nondecreasing = records
        .windows(2)
        .all(|w| w[1].interior_min >= w[0].interior_min - 10.0 * opts.tolerances.fix_tol);
    let sup_growth_trend = if records.len() >= 3 {
        let first = records[1].sup_norm - records[0].sup_norm;
        let last = records[records.len() - 1].sup_norm - records[records.len() - 2].sup_norm;
        if first > 0.0 {
            Some(last / first)
        } else {
            None
        }
    } else {
        None
    };

    let (weak_form, epsilon_truncations) = match (fields.last(), records.last()) {
        (Some(u), Some(rec)) if weight.is_nontrivial() => {
            let level = RegularizationLevel::new(rec.n, weight)?;
            let wf = weak_form_check(u, &level, weight, e, opts.test_functions, opts.seed)?;
            let eps: Vec<EpsilonTruncation> = [0.05, 0.25]
                .iter()
                .map(|frac| epsilon_truncation(u, e, frac * rec.sup_norm))
                .collect();
            (Some(wf), eps)
        }
        _ => (None, Vec::new()),
    };

    Ok(LadderReport {
        method: opts.method,
        levels: records,
        max_monotonicity_defect,
        interior_min_nondecreasing,
        uniform_bound_expected: integrability_thresholds(e).bounded_for(weight.m),
        sup_growth_trend,
        weak_form,
        epsilon_truncations,
        failure,
        fields,
    })
}

/// Node indices of the centered box with half the side length.
pub fn interior_box(grid: &Grid) -> Vec<usize> {
    (0..grid.len())
        .filter(|&j| {
            let x = grid.coords(j);
            (0..grid.dim()).all(|i| {
                let c = 0.5 * (grid.lo()[i] + grid.hi()[i]);
                let quarter = 0.25 * (grid.hi()[i] - grid.lo()[i]);
                (x[i] - c).abs() <= quarter + 1e-12
            })
        })
        .collect()
}

/// Exponents `(β, r)` of the level-set recursion for a weight in `L^m`.
///
/// With `pbar < N`: `r = pbar*`, `β = (pbar* - 1)(m - pbar*') / (m (pbar - 1))`.
/// Otherwise `r = 2 p_N` and `β = r (m - r') / (m r' (p_N - 1))`.
pub fn stampacchia_exponents(e: &ExponentData, m: f64) -> (f64, f64) {
    let frac = |m: f64, conj: f64| if m.is_infinite() { 1.0 } else { (m - conj) / m };
    match e.pstar() {
        Some(ps) => {
            let conj = ps / (ps - 1.0);
            let beta = (ps - 1.0) * frac(m, conj) / (e.pbar() - 1.0);
            (beta, ps)
        }
        None => {
            let r = 2.0 * e.p_max();
            let conj = r / (r - 1.0);
            let beta = r * frac(m, conj) / (conj * (e.p_max() - 1.0));
            (beta, r)
        }
    }
}

/// Measures `|{u > k}|` on `count` equally spaced levels in `[0, max u)`,
/// fits the constant of `|A(h)| <= C |A(k)|^β / (h - k)^r` over all level
/// pairs, and validates it on a ladder four times finer.
pub fn level_set_fit(u: &GridField, beta: f64, r: f64, count: usize) -> LevelSetFit {
    let top = u.max();
    let ladder = |m: usize| -> (Vec<f64>, Vec<f64>) {
        let levels: Vec<f64> = (0..m).map(|j| top * j as f64 / m as f64).collect();
        let measures = levels.iter().map(|&k| grid::level_set_measure(u, k)).collect();
        (levels, measures)
    };
    // needed C for the pair (k, h): |A(h)| (h - k)^r / |A(k)|^β
    let needed = |lv: &[f64], ms: &[f64], j: usize, l: usize| {
        if ms[l] > 0.0 {
            ms[l] * (lv[l] - lv[j]).powf(r) / ms[j].powf(beta)
        } else {
            0.0
        }
    };
    let pairs = |lv: &[f64], ms: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..lv.len() {
            for l in j + 1..lv.len() {
                worst = worst.max(needed(lv, ms, j, l));
            }
        }
        worst
    };
    let (levels, measures) = ladder(count);
    if !(top > 0.0) || count < 2 {
        return LevelSetFit {
            beta,
            r,
            c: 0.0,
            max_violation: 0.0,
            predicted_extinction: None,
            extinction_consistent: None,
            levels,
            measures,
        };
    }
    let c = pairs(&levels, &measures);
    let (fine_lv, fine_ms) = ladder(4 * count);
    let max_violation = if c > 0.0 { pairs(&fine_lv, &fine_ms) / c } else { 0.0 };
    let predicted = stampacchia_extinction(c, beta, r, 0.0, measures[0]).ok();
    LevelSetFit {
        beta,
        r,
        c,
        max_violation,
        predicted_extinction: predicted,
        extinction_consistent: predicted.map(|k| top <= k),
        levels,
        measures,
    }
}

/// Random smooth bumps `(1 - |x - c|^2 / ρ^2)^3_+` supported inside the box.
pub fn random_bumps(grid: &Arc<Grid>, count: usize, seed: u64) -> Vec<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let side = (0..dim)
        .map(|i| grid.hi()[i] - grid.lo()[i])
        .fold(f64::INFINITY, f64::min);
    (0..count)
        .map(|_| {
            let rho = rng.random_range(0.1..0.3) * side;
            let center: Vec<f64> = (0..dim)
                .map(|i| {
                    let margin = rho + 2.0 * grid.h()[i];
                    let (lo, hi) = (grid.lo()[i] + margin, grid.hi()[i] - margin);
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        0.5 * (grid.lo()[i] + grid.hi()[i])
                    }
                })
                .collect();
            let amp = rng.random_range(0.5..2.0);
            GridField::from_fn_dirichlet(grid, |x| {
                let r2: f64 = x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum();
                let s = 1.0 - r2 / (rho * rho);
                if s > 0.0 {
                    amp * s * s * s
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// `Σ_i ∫ |D_i u|^{p_i-2} D_i u D_i φ` with face quadrature.
pub fn flux_pairing(u: &GridField, phi: &GridField, p: &[f64]) -> f64 {
    let g = u.grid();
    let mut total = 0.0;
    for (axis, &pi) in p.iter().enumerate() {
        let s = g.stride(axis);
        let inv_h = 1.0 / g.h()[axis];
        let fw = g.face_weights(axis);
        let (uv, pv) = (u.values(), phi.values());
        for j in 0..g.len() {
            if fw[j] > 0.0 {
                let du = (uv[j + s] - uv[j]) * inv_h;
                let dp = (pv[j + s] - pv[j]) * inv_h;
                total += fw[j] * grid::signed_pow(du, pi) * dp;
            }
        }
    }
    total
}

fn weak_form_check(
    u: &GridField,
    level: &RegularizationLevel,
    weight: &WeightSpec,
    e: &ExponentData,
    count: usize,
    seed: u64,
) -> Result<WeakFormCheck> {
    let grid = u.grid();
    let w = grid.node_weights();
    let level_rhs = level.rhs(u);
    let mut max_level: f64 = 0.0;
    let mut max_limit: f64 = 0.0;
    for phi in random_bumps(grid, count, seed) {
        let lhs = flux_pairing(u, &phi, e.p());
        let pv = phi.values();
        let mut rhs_level = 0.0;
        let mut scale_level = 0.0;
        let mut rhs_limit = 0.0;
        let mut scale_limit = 0.0;
        for j in 0..grid.len() {
            if pv[j] != 0.0 {
                let a = w[j] * level_rhs.values()[j] * pv[j];
                rhs_level += a;
                scale_level += a.abs();
                let uj = u.values()[j];
                if !(uj > 0.0) {
                    return Err(Error::Singularity { node: j, value: uj });
                }
                let b = w[j] * weight.g.values()[j] * (1.0 / uj).exp() * pv[j];
                rhs_limit += b;
                scale_limit += b.abs();
            }
        }
        if scale_level > 0.0 {
            max_level = max_level.max((lhs - rhs_level).abs() / scale_level);
        }
        if scale_limit > 0.0 {
            max_limit = max_limit.max((lhs - rhs_limit).abs() / scale_limit);
        }
    }
    Ok(WeakFormCheck {
        test_functions: count,
        max_level_residual: max_level,
        max_limit_residual: max_limit,
    })
}

fn epsilon_truncation(u: &GridField, e: &ExponentData, epsilon: f64) -> EpsilonTruncation {
    let grid = u.grid();
    let t = u.map(|v| (v - epsilon).max(0.0));
    let energy = p_energy(t.values(), grid, e.p());
    let mut dist = f64::INFINITY;
    for j in 0..grid.len() {
        if t.values()[j] > 0.0 {
            let x = grid.coords(j);
            for i in 0..grid.dim() {
                dist = dist.min(x[i] - grid.lo()[i]).min(grid.hi()[i] - x[i]);
            }
        }
    }
    EpsilonTruncation {
        epsilon,
        energy,
        boundary_distance: dist,
        clear_of_boundary: energy.is_finite() && dist > 0.0,
    }
}

/// Extinction level `k* = k0 + d` with `d^r = C φ0^{β-1} 2^{rβ/(β-1)}` for
/// `φ(h) <= C φ(k)^β / (h - k)^r`, `h > k >= k0`.
pub fn stampacchia_extinction(c: f64, beta: f64, r: f64, k0: f64, phi0: f64) -> Result<f64> {
    Ok(k0 + stampacchia_increment(c, beta, r, phi0)?)
}

fn stampacchia_increment(c: f64, beta: f64, r: f64, phi0: f64) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::InvalidParameters(format!(
            "level-set recursion needs beta > 1, got {beta}"
        )));
    }
    if !(c > 0.0) || !(r > 0.0) || !(phi0 >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need C > 0, r > 0, phi0 >= 0 (got C={c}, r={r}, phi0={phi0})"
        )));
    }
    if phi0 == 0.0 {
        return Ok(0.0);
    }
    let log_d = (c.ln() + (beta - 1.0) * phi0.ln() + r * beta / (beta - 1.0) * std::f64::consts::LN_2) / r;
    Ok(log_d.exp())
}

/// Dyadic iteration behind the extinction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StampacchiaTrace {
    pub increment: f64,
    pub k_star: f64,
    /// Levels `k_j = k0 + d (1 - 2^{-j})`.
    pub levels: Vec<f64>,
    /// `ln` of the implied bound `φ0 2^{-j r/(β-1)}`.
    pub log_bounds: Vec<f64>,
    /// `ln` of the worst case `φ_{j+1} = C φ_j^β / (k_{j+1} - k_j)^r`.
    pub log_worst_case: Vec<f64>,
    /// Largest `ln(worst / bound)`; at most rounding when the closed form is right.
    pub max_log_excess: f64,
}

/// Runs the dyadic recursion until the implied bound drops below `stop_below`.
pub fn stampacchia_verify(
    c: f64,
    beta: f64,
    r: f64,
    k0: f64,
    phi0: f64,
    stop_below: f64,
) -> Result<StampacchiaTrace> {
    let d = stampacchia_increment(c, beta, r, phi0)?;
    if phi0 == 0.0 {
        return Ok(StampacchiaTrace {
            increment: 0.0,
            k_star: k0,
            levels: vec![k0],
            log_bounds: vec![f64::NEG_INFINITY],
            log_worst_case: vec![f64::NEG_INFINITY],
            max_log_excess: 0.0,
        });
    }
    let ln2 = std::f64::consts::LN_2;
    let mut levels = vec![k0];
    let mut log_bounds = vec![phi0.ln()];
    let mut log_worst = vec![phi0.ln()];
    let mut excess: f64 = 0.0;
    let stop = stop_below.ln();
    let mut j = 0usize;
    while *log_bounds.last().unwrap() >= stop && j < 100_000 {
        let step = d * 2f64.powi(-(j as i32 + 1));
        let k_next = levels[j] + step;
        let lw = c.ln() + beta * log_worst[j] - r * step.ln();
        let lb = phi0.ln() - (j + 1) as f64 * r * ln2 / (beta - 1.0);
        excess = excess.max(lw - lb);
        levels.push(k_next);
        log_worst.push(lw);
        log_bounds.push(lb);
        j += 1;
    }
    Ok(StampacchiaTrace {
        increment: d,
        k_star: k0 + d,
        levels,
        log_bounds,
        log_worst_case: log_worst,
        max_log_excess: excess,
    })
}
