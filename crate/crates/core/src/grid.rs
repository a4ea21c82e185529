//! Uniform tensor grids on rectangles in (x, y) and (x, y, t), scalar and
//! vector fields on them, and the finite-difference building blocks used by
//! both the forward solver and the inversion.
//!
//! Storage order is fixed everywhere: t-major, then y, then x, i.e.
//! `index = (it * ny + iy) * nx + ix`. All reductions run in that order so
//! results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One side of a rectangular spatial boundary. West/East are the x-faces
/// (outward normals -x/+x), South/North the y-faces (-y/+y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    West,
    East,
    South,
    North,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::West, Face::East, Face::South, Face::North];

    /// True for the x-faces, whose nodes run along the y axis.
    pub fn is_vertical(self) -> bool {
        matches!(self, Face::West | Face::East)
    }
}

/// One uniformly spaced axis with `n` nodes from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::Config(format!(
                "axis range [{min}, {max}] is not a proper interval"
            )));
        }
        if n < 2 {
            return Err(Error::Config(format!("axis needs at least 2 nodes, got {n}")));
        }
        Ok(Self { min, max, n })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    /// Index of the node equal to `value`, if `value` lies on the grid.
    pub fn node_at(&self, value: f64) -> Option<usize> {
        let h = self.spacing();
        let k = (value - self.min) / h;
        let i = k.round();
        if i >= 0.0 && (i as usize) < self.n && (k - i).abs() < 1e-9 {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Trapezoidal quadrature weight of node `i`.
    #[inline]
    pub fn quad_weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i == self.n - 1 {
            0.5 * h
        } else {
            h
        }
    }
}

/// A rectangle in (x, y), optionally extended by a time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: Axis,
    pub y: Axis,
    pub t: Option<Axis>,
}

impl GridSpec {
    pub fn spatial(x: Axis, y: Axis) -> Self {
        Self { x, y, t: None }
    }

    pub fn space_time(x: Axis, y: Axis, t: Axis) -> Self {
        Self { x, y, t: Some(t) }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.x.n
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.y.n
    }

    /// Number of time slices; 1 for a purely spatial grid.
    #[inline]
    pub fn nt(&self) -> usize {
        self.t.map_or(1, |a| a.n)
    }

    #[inline]
    pub fn n_values(&self) -> usize {
        self.nx() * self.ny() * self.nt()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (it * self.ny() + iy) * self.nx() + ix
    }

    /// The spatial part of this grid.
    pub fn spatial_part(&self) -> GridSpec {
        GridSpec::spatial(self.x, self.y)
    }

    pub fn time_axis(&self) -> Result<Axis> {
        self.t
            .ok_or_else(|| Error::Dimension("grid has no time axis".into()))
    }

    /// True when the node (ix, iy) lies on the spatial boundary.
    #[inline]
    pub fn on_spatial_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || ix == self.nx() - 1 || iy == 0 || iy == self.ny() - 1
    }
}

/// Values of a scalar quantity on a grid, in the fixed t/y/x storage order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_values() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.n_values()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                node: k,
                message: "non-finite field value".into(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.n_values();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        let n = grid.n_values();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    /// Build a field by evaluating `f(x, y, t)` at every node (t = 0 on
    /// spatial grids).
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let (nx, ny, nt) = (grid.nx(), grid.ny(), grid.nt());
        let mut values = Vec::with_capacity(grid.n_values());
        for it in 0..nt {
            let t = grid.t.map_or(0.0, |a| a.coord(it));
            for iy in 0..ny {
                let y = grid.y.coord(iy);
                for ix in 0..nx {
                    values.push(f(grid.x.coord(ix), y, t));
                }
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, it: usize) -> f64 {
        self.values[self.grid.index(ix, iy, it)]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize, it: usize) -> &mut f64 {
        let k = self.grid.index(ix, iy, it);
        &mut self.values[k]
    }

    /// Extract the spatial slice at time index `it`.
    pub fn time_slice(&self, it: usize) -> Result<ScalarField> {
        if it >= self.grid.nt() {
            return Err(Error::Dimension(format!(
                "time index {it} out of range (nt = {})",
                self.grid.nt()
            )));
        }
        let ns = self.grid.nx() * self.grid.ny();
        Ok(ScalarField {
            grid: self.grid.spatial_part(),
            values: self.values[it * ns..(it + 1) * ns].to_vec(),
        })
    }

    /// Bilinear interpolation of a spatial slice at (x, y).
    pub fn sample_bilinear(&self, x: f64, y: f64, it: usize) -> Result<f64> {
        let (cx, wx) = cell_of(&self.grid.x, x)?;
        let (cy, wy) = cell_of(&self.grid.y, y)?;
        let f = |ix, iy| self.at(ix, iy, it);
        Ok(f(cx, cy) * (1.0 - wx) * (1.0 - wy)
            + f(cx + 1, cy) * wx * (1.0 - wy)
            + f(cx, cy + 1) * (1.0 - wx) * wy
            + f(cx + 1, cy + 1) * wx * wy)
    }

    /// Trilinear interpolation on a space-time field: bilinear in space,
    /// linear in time.
    pub fn sample_space_time(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        let taxis = self.grid.time_axis()?;
        let (ct, wt) = cell_of(&taxis, t)?;
        let lo = self.sample_bilinear(x, y, ct)?;
        if wt == 0.0 {
            return Ok(lo);
        }
        let hi = self.sample_bilinear(x, y, ct + 1)?;
        Ok(lo * (1.0 - wt) + hi * wt)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Locate `v` on `axis`: returns the lower cell index and the fractional
/// position inside the cell. Values outside the axis (beyond a small
/// round-off tolerance) are a configuration error.
fn cell_of(axis: &Axis, v: f64) -> Result<(usize, f64)> {
    let h = axis.spacing();
    let tol = 1e-9 * (axis.max - axis.min);
    if v < axis.min - tol || v > axis.max + tol {
        return Err(Error::Config(format!(
            "sample point {v} outside axis [{}, {}]",
            axis.min, axis.max
        )));
    }
    let k = ((v - axis.min) / h).floor() as isize;
    let c = k.clamp(0, axis.n as isize - 2) as usize;
    let w = ((v - axis.coord(c)) / h).clamp(0.0, 1.0);
    Ok((c, w))
}

/// A 2-vector field: two scalar components on one shared spatial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField2 {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl VectorField2 {
    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        if u.grid != v.grid {
            return Err(Error::Dimension("vector components on different grids".into()));
        }
        Ok(Self { u, v })
    }

    pub fn constant(grid: GridSpec, qx: f64, qy: f64) -> Self {
        Self {
            u: ScalarField::constant(grid, qx),
            v: ScalarField::constant(grid, qy),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.u.grid
    }
}

// ---------------------------------------------------------------------------
// One-dimensional stencils
//
// Interior nodes use central differences; end nodes use second-order
// one-sided formulas. The 4-point one-sided second difference needs n >= 4;
// with n == 3 the plain second difference is used (still exact on
// quadratics). Entries with zero coefficient pad the fixed-size arrays.
// ---------------------------------------------------------------------------

pub(crate) fn d1_stencil(i: usize, n: usize, h: f64) -> [(usize, f64); 3] {
    let c = 1.0 / (2.0 * h);
    if i == 0 {
        [(0, -3.0 * c), (1, 4.0 * c), (2, -c)]
    } else if i == n - 1 {
        [(n - 3, c), (n - 2, -4.0 * c), (n - 1, 3.0 * c)]
    } else {
        [(i - 1, -c), (i, 0.0), (i + 1, c)]
    }
}

pub(crate) fn d2_stencil(i: usize, n: usize, h: f64) -> [(usize, f64); 4] {
    let c = 1.0 / (h * h);
    if i == 0 {
        if n >= 4 {
            [(0, 2.0 * c), (1, -5.0 * c), (2, 4.0 * c), (3, -c)]
        } else {
            [(0, c), (1, -2.0 * c), (2, c), (0, 0.0)]
        }
    } else if i == n - 1 {
        if n >= 4 {
            [(n - 1, 2.0 * c), (n - 2, -5.0 * c), (n - 3, 4.0 * c), (n - 4, -c)]
        } else {
            [(n - 3, c), (n - 2, -2.0 * c), (n - 1, c), (0, 0.0)]
        }
    } else {
        [(i - 1, c), (i, -2.0 * c), (i + 1, c), (i, 0.0)]
    }
}

fn require_spatial(f: &ScalarField, op: &str) -> Result<()> {
    if f.grid.t.is_some() {
        return Err(Error::Dimension(format!("{op} expects a spatial slice")));
    }
    Ok(())
}

/// 5-point Laplacian on a spatial slice; one-sided second differences at the
/// boundary so the output grid equals the input grid.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    require_spatial(f, "laplacian")?;
    let (nx, ny) = (f.grid.nx(), f.grid.ny());
    if nx < 3 || ny < 3 {
        return Err(Error::Dimension(format!(
            "laplacian needs at least 3 nodes per axis, got {nx}x{ny}"
        )));
    }
    let (hx, hy) = (f.grid.x.spacing(), f.grid.y.spacing());
    let mut out = ScalarField::zeros(f.grid);
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (j, c) in d2_stencil(ix, nx, hx) {
                acc += c * f.at(j, iy, 0);
            }
            for (j, c) in d2_stencil(iy, ny, hy) {
                acc += c * f.at(ix, j, 0);
            }
            *out.at_mut(ix, iy, 0) = acc;
        }
    }
    Ok(out)
}

/// div(f q) = d/dx (f q_x) + d/dy (f q_y) on a spatial slice.
pub fn divergence(f: &ScalarField, q: &VectorField2) -> Result<ScalarField> {
    require_spatial(f, "divergence")?;
    if *q.grid() != f.grid {
        return Err(Error::Dimension("divergence: field and velocity grids differ".into()));
    }
    let (nx, ny) = (f.grid.nx(), f.grid.ny());
    if nx < 3 || ny < 3 {
        return Err(Error::Dimension(format!(
            "divergence needs at least 3 nodes per axis, got {nx}x{ny}"
        )));
    }
    let (hx, hy) = (f.grid.x.spacing(), f.grid.y.spacing());
    let mut out = ScalarField::zeros(f.grid);
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (j, c) in d1_stencil(ix, nx, hx) {
                acc += c * f.at(j, iy, 0) * q.u.at(j, iy, 0);
            }
            for (j, c) in d1_stencil(iy, ny, hy) {
                acc += c * f.at(ix, j, 0) * q.v.at(ix, j, 0);
            }
            *out.at_mut(ix, iy, 0) = acc;
        }
    }
    Ok(out)
}

/// First derivative along x (per y-row and time slice), central in the
/// interior and one-sided at the ends.
pub fn d_dx(f: &ScalarField) -> Result<ScalarField> {
    let (nx, ny, nt) = (f.grid.nx(), f.grid.ny(), f.grid.nt());
    if nx < 3 {
        return Err(Error::Dimension(format!("d_dx needs nx >= 3, got {nx}")));
    }
    let hx = f.grid.x.spacing();
    let mut out = ScalarField::zeros(f.grid);
    for it in 0..nt {
        for iy in 0..ny {
            for ix in 0..nx {
                let mut acc = 0.0;
                for (j, c) in d1_stencil(ix, nx, hx) {
                    acc += c * f.at(j, iy, it);
                }
                *out.at_mut(ix, iy, it) = acc;
            }
        }
    }
    Ok(out)
}

/// First derivative along y; see [`d_dx`].
pub fn d_dy(f: &ScalarField) -> Result<ScalarField> {
    let (nx, ny, nt) = (f.grid.nx(), f.grid.ny(), f.grid.nt());
    if ny < 3 {
        return Err(Error::Dimension(format!("d_dy needs ny >= 3, got {ny}")));
    }
    let hy = f.grid.y.spacing();
    let mut out = ScalarField::zeros(f.grid);
    for it in 0..nt {
        for iy in 0..ny {
            for ix in 0..nx {
                let mut acc = 0.0;
                for (j, c) in d1_stencil(iy, ny, hy) {
                    acc += c * f.at(ix, j, it);
                }
                *out.at_mut(ix, iy, it) = acc;
            }
        }
    }
    Ok(out)
}

/// Time derivative of a space-time field: central in the interior,
/// second-order one-sided at t = 0 and t = T.
pub fn d_dt(f: &ScalarField) -> Result<ScalarField> {
    let taxis = f.grid.time_axis()?;
    let nt = taxis.n;
    if nt < 3 {
        return Err(Error::Dimension(format!("d_dt needs nt >= 3, got {nt}")));
    }
    let ht = taxis.spacing();
    let (nx, ny) = (f.grid.nx(), f.grid.ny());
    let mut out = ScalarField::zeros(f.grid);
    for it in 0..nt {
        let stencil = d1_stencil(it, nt, ht);
        for iy in 0..ny {
            for ix in 0..nx {
                let mut acc = 0.0;
                for (j, c) in stencil {
                    acc += c * f.at(ix, iy, j);
                }
                *out.at_mut(ix, iy, it) = acc;
            }
        }
    }
    Ok(out)
}

/// Signed cumulative trapezoidal integral from `t0` to every grid time,
/// negative for t < t0 and exactly zero at the slice t = t0. `t0` must be a
/// grid node.
pub fn time_integral_from_mid(f: &ScalarField, t0: f64) -> Result<ScalarField> {
    let taxis = f.grid.time_axis()?;
    let i0 = taxis.node_at(t0).ok_or_else(|| {
        Error::Config(format!("integration origin {t0} is not a grid time node"))
    })?;
    let ht = taxis.spacing();
    let (nx, ny, nt) = (f.grid.nx(), f.grid.ny(), f.grid.nt());
    let ns = nx * ny;
    let mut out = ScalarField::zeros(f.grid);
    for iy in 0..ny {
        for ix in 0..nx {
            let k = iy * nx + ix;
            // forward from i0
            let mut acc = 0.0;
            for it in i0 + 1..nt {
                acc += 0.5 * ht * (f.values[(it - 1) * ns + k] + f.values[it * ns + k]);
                out.values[it * ns + k] = acc;
            }
            // backward from i0
            let mut acc = 0.0;
            for it in (0..i0).rev() {
                acc -= 0.5 * ht * (f.values[(it + 1) * ns + k] + f.values[it * ns + k]);
                out.values[it * ns + k] = acc;
            }
        }
    }
    Ok(out)
}

/// Tensor-product trapezoidal quadrature weights; their sum equals the
/// measure of the grid's domain.
pub fn quadrature_weights(grid: &GridSpec) -> ScalarField {
    let (nx, ny, nt) = (grid.nx(), grid.ny(), grid.nt());
    let mut values = Vec::with_capacity(grid.n_values());
    for it in 0..nt {
        let wt = grid.t.map_or(1.0, |a| a.quad_weight(it));
        for iy in 0..ny {
            let wy = grid.y.quad_weight(iy);
            for ix in 0..nx {
                values.push(grid.x.quad_weight(ix) * wy * wt);
            }
        }
    }
    ScalarField { grid: *grid, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_spatial(n: usize) -> GridSpec {
        GridSpec::spatial(Axis::new(0.0, 1.0, n).unwrap(), Axis::new(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn axis_rejects_bad_ranges() {
        assert!(Axis::new(1.0, 1.0, 5).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
        assert!(Axis::new(f64::NAN, 1.0, 5).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = ScalarField::constant(unit_spatial(9), 3.7);
        let lap = laplacian(&f).unwrap();
        for v in lap.values {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let f = ScalarField::from_fn(unit_spatial(11), |x, y, _| x * x + y * y);
        let lap = laplacian(&f).unwrap();
        for iy in 1..10 {
            for ix in 1..10 {
                assert_relative_eq!(lap.at(ix, iy, 0), 4.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_sine_error_bound() {
        use std::f64::consts::PI;
        let g = unit_spatial(65);
        let f = ScalarField::from_fn(g, |x, y, _| (PI * x).sin() * (PI * y).sin());
        let lap = laplacian(&f).unwrap();
        let h = g.x.spacing().max(g.y.spacing());
        let bound = 4.0 * (PI.powi(4) / 12.0) * h * h;
        let mut max_err: f64 = 0.0;
        for iy in 1..64 {
            for ix in 1..64 {
                let exact = -2.0 * PI * PI * f.at(ix, iy, 0);
                max_err = max_err.max((lap.at(ix, iy, 0) - exact).abs());
            }
        }
        assert!(max_err < bound, "max interior error {max_err} vs bound {bound}");
    }

    #[test]
    fn laplacian_rejects_tiny_grids() {
        let g = GridSpec::spatial(Axis::new(0.0, 1.0, 2).unwrap(), Axis::new(0.0, 1.0, 5).unwrap());
        assert!(laplacian(&ScalarField::zeros(g)).is_err());
    }

    #[test]
    fn divergence_of_constant_product_is_zero() {
        let g = unit_spatial(9);
        let f = ScalarField::constant(g, 2.0);
        let q = VectorField2::constant(g, 0.3, -0.4);
        let div = divergence(&f, &q).unwrap();
        for v in div.values {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn divergence_exact_on_linear_product() {
        let g = unit_spatial(9);
        let f = ScalarField::from_fn(g, |x, _, _| x);
        let q = VectorField2::constant(g, 1.0, 0.0);
        let div = divergence(&f, &q).unwrap();
        for v in div.values {
            assert_relative_eq!(v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn divergence_matches_analytic_for_xy_field() {
        // f = xy, q = (x, y): div(x^2 y, x y^2) = 2xy + 2xy = 4xy, and the
        // one-sided/central first differences are exact on these quadratic
        // per-axis products.
        let g = unit_spatial(33);
        let f = ScalarField::from_fn(g, |x, y, _| x * y);
        let q = VectorField2::new(
            ScalarField::from_fn(g, |x, _, _| x),
            ScalarField::from_fn(g, |_, y, _| y),
        )
        .unwrap();
        let div = divergence(&f, &q).unwrap();
        for iy in 0..33 {
            for ix in 0..33 {
                let exact = 4.0 * g.x.coord(ix) * g.y.coord(iy);
                assert!(
                    (div.at(ix, iy, 0) - exact).abs() < 1e-10,
                    "node ({ix},{iy}): {} vs {}",
                    div.at(ix, iy, 0),
                    exact
                );
            }
        }
    }

    #[test]
    fn divergence_rejects_grid_mismatch() {
        let f = ScalarField::constant(unit_spatial(9), 1.0);
        let q = VectorField2::constant(unit_spatial(11), 1.0, 1.0);
        assert!(divergence(&f, &q).is_err());
    }

    fn space_time(n: usize, nt: usize) -> GridSpec {
        GridSpec::space_time(
            Axis::new(0.0, 1.0, n).unwrap(),
            Axis::new(0.0, 1.0, n).unwrap(),
            Axis::new(0.0, 1.0, nt).unwrap(),
        )
    }

    #[test]
    fn d_dt_exact_on_quadratic_time() {
        let g = space_time(4, 11);
        let f = ScalarField::from_fn(g, |_, _, t| t * t);
        let df = d_dt(&f).unwrap();
        let taxis = g.t.unwrap();
        for it in 1..10 {
            assert_relative_eq!(df.at(1, 2, it), 2.0 * taxis.coord(it), epsilon = 1e-10);
        }
        // one-sided ends are exact on quadratics as well
        assert_relative_eq!(df.at(0, 0, 0), 0.0, epsilon = 1e-10);
        assert_relative_eq!(df.at(0, 0, 10), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn d_dt_requires_three_slices() {
        let g = space_time(3, 2);
        assert!(d_dt(&ScalarField::zeros(g)).is_err());
    }

    #[test]
    fn d_dt_convergence_on_exponential() {
        let mut errs = Vec::new();
        for nt in [26, 51, 101] {
            let g = space_time(3, nt);
            let f = ScalarField::from_fn(g, |_, _, t| t.exp());
            let df = d_dt(&f).unwrap();
            let taxis = g.t.unwrap();
            let mut e: f64 = 0.0;
            for it in 0..nt {
                e = e.max((df.at(1, 1, it) - taxis.coord(it).exp()).abs());
            }
            errs.push(e);
        }
        let order = (errs[0] / errs[2]).log2() / 2.0;
        assert!(order > 1.9, "observed order {order}, errors {errs:?}");
    }

    #[test]
    fn integral_from_mid_of_one_is_t_minus_t0() {
        let g = space_time(3, 11);
        let f = ScalarField::constant(g, 1.0);
        let int = time_integral_from_mid(&f, 0.5).unwrap();
        let taxis = g.t.unwrap();
        for it in 0..11 {
            assert_relative_eq!(int.at(1, 1, it), taxis.coord(it) - 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn integral_from_mid_is_zero_at_origin_slice() {
        let g = space_time(3, 11);
        let f = ScalarField::from_fn(g, |x, y, t| (x + y + t).sin());
        let int = time_integral_from_mid(&f, 0.5).unwrap();
        for iy in 0..3 {
            for ix in 0..3 {
                assert_eq!(int.at(ix, iy, 5), 0.0);
            }
        }
    }

    #[test]
    fn integral_of_linear_is_exact() {
        let g = space_time(3, 11);
        let f = ScalarField::from_fn(g, |_, _, t| t);
        let int = time_integral_from_mid(&f, 0.5).unwrap();
        // int_{0.5}^{1} tau dtau = 0.375
        assert_relative_eq!(int.at(0, 0, 10), 0.375, epsilon = 1e-12);
    }

    #[test]
    fn integral_origin_must_be_node() {
        let g = space_time(3, 10); // even nt: 0.5 is between nodes
        let f = ScalarField::constant(g, 1.0);
        assert!(time_integral_from_mid(&f, 0.5).is_err());
    }

    #[test]
    fn quadrature_sums_to_measure() {
        let g = space_time(7, 5);
        let w = quadrature_weights(&g);
        let sum: f64 = w.values.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);

        let two = GridSpec::spatial(Axis::new(0.0, 1.0, 2).unwrap(), Axis::new(0.0, 1.0, 2).unwrap());
        let w2 = quadrature_weights(&two);
        for v in w2.values {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn quadrature_paper_grid() {
        // Omega x (0,1) at 33x33x11 has measure 1.
        let g = GridSpec::space_time(
            Axis::new(1.0, 2.0, 33).unwrap(),
            Axis::new(-0.5, 0.5, 33).unwrap(),
            Axis::new(0.0, 1.0, 11).unwrap(),
        );
        let sum: f64 = quadrature_weights(&g).values.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn integral_then_ddt_recovers_field() {
        let g = space_time(3, 41);
        let f = ScalarField::from_fn(g, |_, _, t| (3.0 * t).sin());
        let int = time_integral_from_mid(&f, 0.5).unwrap();
        let back = d_dt(&int).unwrap();
        let ht = g.t.unwrap().spacing();
        let mut max_err: f64 = 0.0;
        for it in 1..40 {
            max_err = max_err.max((back.at(1, 1, it) - f.at(1, 1, it)).abs());
        }
        assert!(max_err < 10.0 * ht * ht, "err {max_err} vs O(ht^2)");
    }

    #[test]
    fn trilinear_sampling_exact_on_linear_fields() {
        let g = space_time(5, 5);
        let f = ScalarField::from_fn(g, |x, y, t| 1.0 + 2.0 * x - y + 0.5 * t);
        let v = f.sample_space_time(0.33, 0.71, 0.59).unwrap();
        assert_relative_eq!(v, 1.0 + 2.0 * 0.33 - 0.71 + 0.5 * 0.59, epsilon = 1e-12);
        assert!(f.sample_space_time(1.2, 0.5, 0.5).is_err());
    }
}
