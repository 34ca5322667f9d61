//! Uniform tensor grids in one to three dimensions.
//!
//! Nodes include the boundary; a field that represents a zero-Dirichlet
//! function carries zeros there. Differences along axis `i` live on faces
//! between node `j` and `j + stride_i`. Face arrays share the node indexing
//! (face `j` starts at node `j`), and the faces that would leave the box carry
//! zero quadrature weight.
//!
//! Quadrature uses trapezoid weights per axis. Along its own axis a face has
//! weight `h_i` (midpoint rule), across the other axes it uses the trapezoid
//! weight of its nodes. With these weights the discrete operator returned by
//! [`p_laplacian_apply`] is, at interior nodes, exactly the gradient of the
//! discrete energy `Σ_i (1/p_i) ∫ |D_i u|^{p_i}` divided by the node weight.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::ExponentData;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
    h: Vec<f64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    node_w: Vec<f64>,
    face_w: Vec<Vec<f64>>,
    interior: Vec<bool>,
}

impl Grid {
    /// Box `[lo_i, hi_i]` split into `res_i` cells per axis.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Arc<Self>> {
        let dim = res.len();
        if !(1..=3).contains(&dim) || lo.len() != dim || hi.len() != dim {
            return Err(Error::InvalidInput(format!(
                "grid needs 1 to 3 axes with matching box, got res={res:?} lo={lo:?} hi={hi:?}"
            )));
        }
        if res.iter().any(|&r| r < 2) {
            return Err(Error::InvalidInput(format!(
                "every axis needs at least 2 cells, got {res:?}"
            )));
        }
        let h: Vec<f64> = (0..dim).map(|i| (hi[i] - lo[i]) / res[i] as f64).collect();
        if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("degenerate box {lo:?}..{hi:?}")));
        }
        let shape: Vec<usize> = res.iter().map(|r| r + 1).collect();
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let len: usize = shape.iter().product();

        // per-axis 1D trapezoid weights
        let w1: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..shape[i])
                    .map(|k| if k == 0 || k == res[i] { h[i] / 2.0 } else { h[i] })
                    .collect()
            })
            .collect();

        let mut node_w = vec![0.0; len];
        let mut face_w = vec![vec![0.0; len]; dim];
        let mut interior = vec![false; len];
        let mut idx = vec![0usize; dim];
        for j in 0..len {
            let mut rem = j;
            for i in 0..dim {
                idx[i] = rem / strides[i];
                rem %= strides[i];
            }
            let mut w = 1.0;
            for i in 0..dim {
                w *= w1[i][idx[i]];
            }
            node_w[j] = w;
            interior[j] = (0..dim).all(|i| idx[i] > 0 && idx[i] < res[i]);
            for a in 0..dim {
                if idx[a] < res[a] {
                    let mut fw = h[a];
                    for i in 0..dim {
                        if i != a {
                            fw *= w1[i][idx[i]];
                        }
                    }
                    face_w[a][j] = fw;
                }
            }
        }

        Ok(Arc::new(Self {
            dim,
            lo,
            hi,
            res,
            h,
            shape,
            strides,
            len,
            node_w,
            face_w,
            interior,
        }))
    }

    /// `[0, 1]^dim` with `res` cells per axis.
    pub fn unit(dim: usize, res: usize) -> Result<Arc<Self>> {
        Self::new(vec![0.0; dim], vec![1.0; dim], vec![res; dim])
    }

    /// `[-half, half]^dim` with `res` cells per axis.
    pub fn centered_cube(dim: usize, half: f64, res: usize) -> Result<Arc<Self>> {
        Self::new(vec![-half; dim], vec![half; dim], vec![res; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn res(&self) -> &[usize] {
        &self.res
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_w
    }

    /// Face quadrature weights along `axis`; zero where no face exists.
    pub fn face_weights(&self, axis: usize) -> &[f64] {
        &self.face_w[axis]
    }

    pub fn is_interior(&self, j: usize) -> bool {
        self.interior[j]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    /// Multi-index of node `j`.
    pub fn index(&self, j: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rem = j;
        for i in 0..self.dim {
            out[i] = rem / self.strides[i];
            rem %= self.strides[i];
        }
        out
    }

    /// Coordinates of node `j` (unused axes are zero).
    pub fn coords(&self, j: usize) -> [f64; 3] {
        let idx = self.index(j);
        let mut x = [0.0; 3];
        for i in 0..self.dim {
            x[i] = self.lo[i] + idx[i] as f64 * self.h[i];
        }
        x
    }

    /// Coordinates of the midpoint of face `j` along `axis`.
    pub fn face_coords(&self, j: usize, axis: usize) -> [f64; 3] {
        let mut x = self.coords(j);
        x[axis] += 0.5 * self.h[axis];
        x
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|i| self.hi[i] - self.lo[i]).product()
    }

    /// Whether a ball fits inside the box.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        (0..self.dim).all(|i| center[i] - radius >= self.lo[i] - 1e-12 && center[i] + radius <= self.hi[i] + 1e-12)
    }
}

/// Where the values of a field live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Node,
    Face(usize),
}

/// Values of a scalar function on a grid.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    loc: Location,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            loc: Location::Node,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            loc: Location::Node,
            values,
        })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|j| {
                let x = grid.coords(j);
                f(&x[..grid.dim])
            })
            .collect();
        Self {
            grid: grid.clone(),
            loc: Location::Node,
            values,
        }
    }

    /// Like [`from_fn`](Self::from_fn) but zero on the boundary.
    pub fn from_fn_dirichlet(grid: &Arc<Grid>, f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut out = Self::from_fn(grid, f);
        out.zero_boundary();
        out
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn location(&self) -> Location {
        self.loc
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn zero_boundary(&mut self) {
        for (v, &inside) in self.values.iter_mut().zip(&self.grid.interior) {
            if !inside {
                *v = 0.0;
            }
        }
    }

    /// Whether every boundary node carries zero.
    pub fn is_dirichlet(&self) -> bool {
        self.values
            .iter()
            .zip(&self.grid.interior)
            .all(|(v, &inside)| inside || *v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            loc: self.loc,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self {
            grid: self.grid.clone(),
            loc: self.loc,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Sup norm of `self - other`.
    pub fn dist_sup(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn weights(&self) -> &[f64] {
        match self.loc {
            Location::Node => &self.grid.node_w,
            Location::Face(a) => &self.grid.face_w[a],
        }
    }

    /// Serializes to the plain-text snapshot format: one header line
    /// `dim <d> res <r_1..r_d> box <lo_1 hi_1 ..>` followed by one node value
    /// per line in row-major order (last axis fastest).
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = String::with_capacity(24 * g.len + 64);
        s.push_str(&format!("dim {} res", g.dim));
        for r in &g.res {
            let _ = write!(s, " {r}");
        }
        s.push_str(" box");
        for i in 0..g.dim {
            let _ = write!(s, " {:e} {:e}", g.lo[i], g.hi[i]);
        }
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    /// Parses the format written by [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let bad = |m: &str| Error::Parse(format!("bad field header `{header}`: {m}"));
        if tok.first() != Some(&"dim") {
            return Err(bad("expected `dim`"));
        }
        let dim: usize = tok.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| bad("dim"))?;
        if tok.get(2) != Some(&"res") || tok.get(3 + dim) != Some(&"box") || tok.len() != 4 + 3 * dim {
            return Err(bad("layout"));
        }
        let res = tok[3..3 + dim]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| bad("res")))
            .collect::<Result<Vec<_>>>()?;
        let bx = tok[4 + dim..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| bad("box")))
            .collect::<Result<Vec<_>>>()?;
        let lo = (0..dim).map(|i| bx[2 * i]).collect();
        let hi = (0..dim).map(|i| bx[2 * i + 1]).collect();
        let grid = Grid::new(lo, hi, res)?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(&grid, values)
    }

    /// CSV with one row per node: coordinates then value.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let names = ["x", "y", "z"];
        let mut s = String::new();
        for name in names.iter().take(g.dim) {
            s.push_str(name);
            s.push(',');
        }
        s.push_str("value\n");
        for j in 0..g.len {
            let x = g.coords(j);
            for xi in x.iter().take(g.dim) {
                let _ = write!(s, "{xi:e},");
            }
            let _ = writeln!(s, "{:e}", self.values[j]);
        }
        s
    }
}

/// Forward difference along `axis`, stored on faces.
pub fn axis_diff(f: &GridField, axis: usize) -> GridField {
    let g = &f.grid;
    let s = g.strides[axis];
    let inv_h = 1.0 / g.h[axis];
    let fw = &g.face_w[axis];
    let mut out = vec![0.0; g.len];
    for j in 0..g.len {
        if fw[j] > 0.0 {
            out[j] = (f.values[j + s] - f.values[j]) * inv_h;
        }
    }
    GridField {
        grid: g.clone(),
        loc: Location::Face(axis),
        values: out,
    }
}

/// Backward-difference divergence of a face field along its axis; faces outside
/// the box count as zero. `⟨D_i f, g⟩ = -⟨f, div_i g⟩` for zero-boundary `f`.
pub fn divergence(g_face: &GridField) -> GridField {
    let axis = match g_face.loc {
        Location::Face(a) => a,
        Location::Node => panic!("divergence expects a face field"),
    };
    let g = &g_face.grid;
    let s = g.strides[axis];
    let inv_h = 1.0 / g.h[axis];
    let fw = &g.face_w[axis];
    let v = &g_face.values;
    let mut out = vec![0.0; g.len];
    for j in 0..g.len {
        let here = if fw[j] > 0.0 { v[j] } else { 0.0 };
        let before = if j >= s && fw[j - s] > 0.0 && g.index(j)[axis] > 0 {
            v[j - s]
        } else {
            0.0
        };
        out[j] = (here - before) * inv_h;
    }
    GridField {
        grid: g.clone(),
        loc: Location::Node,
        values: out,
    }
}

/// Signed power `|d|^{p-2} d`.
#[inline]
pub fn signed_pow(d: f64, p: f64) -> f64 {
    if p == 2.0 {
        d
    } else {
        d.abs().powf(p - 1.0).copysign(d)
    }
}

/// Unnormalized gradient of `Σ_i (1/p_i) Σ_faces w |D_i u|^{p_i}` with respect
/// to the node values, accumulated into `out` (which is overwritten).
pub fn p_energy_gradient(u: &[f64], grid: &Grid, p: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (axis, &pi) in p.iter().enumerate() {
        let s = grid.strides[axis];
        let inv_h = 1.0 / grid.h[axis];
        let fw = &grid.face_w[axis];
        for j in 0..grid.len {
            let w = fw[j];
            if w > 0.0 {
                let d = (u[j + s] - u[j]) * inv_h;
                let flux = w * signed_pow(d, pi) * inv_h;
                out[j] -= flux;
                out[j + s] += flux;
            }
        }
    }
}

/// `Σ_i (1/p_i) ∫ |D_i u|^{p_i}` with face quadrature.
pub fn p_energy(u: &[f64], grid: &Grid, p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (axis, &pi) in p.iter().enumerate() {
        let s = grid.strides[axis];
        let inv_h = 1.0 / grid.h[axis];
        let fw = &grid.face_w[axis];
        let mut acc = 0.0;
        for j in 0..grid.len {
            let w = fw[j];
            if w > 0.0 {
                let d = ((u[j + s] - u[j]) * inv_h).abs();
                acc += w * if pi == 2.0 { d * d } else { d.powf(pi) };
            }
        }
        total += acc / pi;
    }
    total
}

/// Discrete anisotropic p-Laplacian `-Σ_i div_i(|D_i u|^{p_i-2} D_i u)` at
/// interior nodes; boundary entries are zero.
pub fn p_laplacian_apply(u: &GridField, e: &ExponentData) -> Result<GridField> {
    let g = &u.grid;
    if e.dim() != g.dim {
        return Err(Error::InvalidInput(format!(
            "{} exponents for a {}-dimensional grid",
            e.dim(),
            g.dim
        )));
    }
    let mut out = vec![0.0; g.len];
    p_energy_gradient(&u.values, g, e.p(), &mut out);
    for j in 0..g.len {
        out[j] = if g.interior[j] { out[j] / g.node_w[j] } else { 0.0 };
    }
    Ok(GridField {
        grid: g.clone(),
        loc: Location::Node,
        values: out,
    })
}

/// Trapezoid (node) or midpoint-trapezoid (face) quadrature of `f`.
pub fn integrate(f: &GridField) -> f64 {
    f.values.iter().zip(f.weights()).map(|(v, w)| v * w).sum()
}

/// Quadrature of `f * w`.
pub fn weighted_integrate(f: &GridField, w: &GridField) -> f64 {
    f.values
        .iter()
        .zip(&w.values)
        .zip(f.weights())
        .map(|((a, b), q)| a * b * q)
        .sum()
}

/// Measure of `{u > k}` by summing node weights.
pub fn level_set_measure(u: &GridField, k: f64) -> f64 {
    u.values
        .iter()
        .zip(&u.grid.node_w)
        .filter(|(v, _)| **v > k)
        .map(|(_, w)| w)
        .sum()
}

/// Radial cutoff `ψ_R`: one on `B_R(center)`, zero outside `B_{2R}(center)`,
/// smoothstep in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub radius: f64,
    pub center: Vec<f64>,
}

impl CutoffSpec {
    pub fn new(radius: f64, center: Vec<f64>) -> Self {
        Self { radius, center }
    }

    pub fn at_origin(radius: f64, dim: usize) -> Self {
        Self::new(radius, vec![0.0; dim])
    }

    /// Profile value at distance `r` from the center.
    pub fn profile(&self, r: f64) -> f64 {
        cutoff_profile(r, self.radius)
    }

    /// Radial derivative of the profile.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        cutoff_profile_derivative(r, self.radius)
    }

    /// The constant `C` in `|∇ψ_R| <= C / R`.
    pub const GRADIENT_CONSTANT: f64 = 1.5;
}

/// `1 - 3s^2 + 2s^3` with `s = (r - R)/R`, clamped to `[0, 1]`.
pub fn cutoff_profile(r: f64, radius: f64) -> f64 {
    let s = ((r - radius) / radius).clamp(0.0, 1.0);
    1.0 - s * s * (3.0 - 2.0 * s)
}

pub fn cutoff_profile_derivative(r: f64, radius: f64) -> f64 {
    let s = (r - radius) / radius;
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        -6.0 * s * (1.0 - s) / radius
    }
}

/// Samples `ψ_R` on the grid. The support `B_{2R}` must fit inside the box.
pub fn make_cutoff(spec: &CutoffSpec, grid: &Arc<Grid>) -> Result<GridField> {
    if spec.center.len() != grid.dim {
        return Err(Error::InvalidInput(format!(
            "cutoff center has {} coordinates, grid has {} axes",
            spec.center.len(),
            grid.dim
        )));
    }
    if !(spec.radius > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "cutoff radius must be positive, got {}",
            spec.radius
        )));
    }
    if !grid.contains_ball(&spec.center, 2.0 * spec.radius) {
        return Err(Error::Geometry(format!(
            "B_2R with R = {} around {:?} does not fit in the box {:?}..{:?}",
            spec.radius, spec.center, grid.lo, grid.hi
        )));
    }
    Ok(GridField::from_fn(grid, |x| {
        let r = x
            .iter()
            .zip(&spec.center)
            .map(|(a, c)| (a - c).powi(2))
            .sum::<f64>()
            .sqrt();
        spec.profile(r)
    }))
}
