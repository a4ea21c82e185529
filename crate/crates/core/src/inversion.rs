//! The six-component inverse solve.
//!
//! Unknowns are the grid values of W = (v1, v2, v3, dt v1, dt v2, dt v3) on
//! the inverse grid over Omega x (0, T). Each outer iteration freezes the
//! nonlinearity Y at the previous iterate, which turns the minimization
//! into a sparse weighted linear least-squares problem:
//!
//! * residual rows L(W) = -Y(W_prev) at every spatially interior node, one
//!   per component and time slice, weighted by the square root of the
//!   quadrature weight times the normalized Carleman weight;
//! * one-sided Neumann rows dn W = G1 on every lateral boundary node;
//! * Dirichlet values W = G0 on the east side eliminated as hard
//!   constraints;
//! * regularization rows: sqrt(xi) times identity and first/second
//!   discrete derivatives in x, y, t (a discrete space-time H^2 norm with
//!   trapezoidal weights).
//!
//! The outer loop stops when the RMS step between consecutive iterates
//! falls below `stop_tol`.

use serde::{Deserialize, Serialize};

use crate::carleman::CarlemanWeight;
use crate::error::{Error, Result};
use crate::grid::{
    d1_stencil, d2_stencil, d_dt, quadrature_weights, time_integral_from_mid, Face, GridSpec,
    ScalarField, VectorField2,
};
use crate::observation::DerivedData;
use crate::sparse::{lsqr, CsrMatrix, LsqrSummary, SystemBuilder};

/// The six-component unknown on the inverse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WField {
    pub comps: [ScalarField; 6],
}

impl WField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            comps: std::array::from_fn(|_| ScalarField::zeros(grid)),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.comps[0].grid
    }

    pub fn rms(&self) -> f64 {
        let n: usize = self.comps.iter().map(|c| c.values.len()).sum();
        let ss: f64 = self
            .comps
            .iter()
            .flat_map(|c| c.values.iter())
            .map(|v| v * v)
            .sum();
        (ss / n as f64).sqrt()
    }

    pub fn rms_diff(&self, other: &WField) -> f64 {
        let n: usize = self.comps.iter().map(|c| c.values.len()).sum();
        let mut ss = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.values.iter().zip(&b.values) {
                ss += (x - y) * (x - y);
            }
        }
        (ss / n as f64).sqrt()
    }

    /// RMS of dt(w_j) - w_{j+3} over the first three components: how far
    /// the iterate is from its own time-derivative pairing.
    pub fn compat_defect(&self) -> Result<f64> {
        let mut ss = 0.0;
        let mut n = 0usize;
        for j in 0..3 {
            let dj = d_dt(&self.comps[j])?;
            for (a, b) in dj.values.iter().zip(&self.comps[j + 3].values) {
                ss += (a - b) * (a - b);
                n += 1;
            }
        }
        Ok((ss / n as f64).sqrt())
    }
}

/// Error between two iterates in the Carleman-weighted L2 norm
/// (quadrature weights times the normalized weight).
pub fn cwf_weighted_error(a: &WField, b: &WField, lambda: f64, b_omega: f64) -> Result<f64> {
    let grid = *a.grid();
    let taxis = grid.time_axis()?;
    let w = CarlemanWeight::new(lambda, b_omega, taxis.max)?;
    let phi = w.normalized_field(&grid)?;
    let qw = quadrature_weights(&grid);
    let mut ss = 0.0;
    for (ca, cb) in a.comps.iter().zip(&b.comps) {
        for k in 0..ca.values.len() {
            let d = ca.values[k] - cb.values[k];
            ss += qw.values[k] * phi.values[k] * d * d;
        }
    }
    Ok(ss.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseConfig {
    pub lambda: f64,
    pub xi: f64,
    /// Weight of the Neumann rows; `None` selects 1000 times the median
    /// residual-row weight.
    pub kappa_n: Option<f64>,
    /// Weight of the optional compatibility rows dt(w_j) = w_{j+3};
    /// 0 disables them.
    pub kappa_c: f64,
    /// Regularization order; only the discrete H^2 norm is implemented.
    pub reg_order: u8,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub ls_tol: f64,
    pub ls_max_iter: usize,
    pub seed: u64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            xi: 1e-2,
            kappa_n: None,
            kappa_c: 0.0,
            reg_order: 2,
            stop_tol: 1e-5,
            max_iter: 10,
            ls_tol: 1e-9,
            ls_max_iter: 60_000,
            seed: 0,
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config(format!("xi = {} must be positive", self.xi)));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Config(format!("stop_tol = {} must be positive", self.stop_tol)));
        }
        if self.reg_order != 2 {
            return Err(Error::Config(format!(
                "reg_order = {} unsupported; only the H^2 norm is implemented",
                self.reg_order
            )));
        }
        Ok(())
    }
}

/// Velocity fields attached to the six components: (q_S, q_I, q_R) for
/// components (1, 4), (2, 5), (3, 6) respectively.
#[derive(Debug, Clone)]
pub struct Velocities {
    pub q_s: VectorField2,
    pub q_i: VectorField2,
    pub q_r: VectorField2,
}

impl Velocities {
    pub fn constant(grid: &GridSpec, q: (f64, f64)) -> Self {
        let sp = grid.spatial_part();
        Self {
            q_s: VectorField2::constant(sp, q.0, q.1),
            q_i: VectorField2::constant(sp, q.0, q.1),
            q_r: VectorField2::constant(sp, q.0, q.1),
        }
    }

    fn for_comp(&self, comp: usize) -> &VectorField2 {
        match comp % 3 {
            0 => &self.q_s,
            1 => &self.q_i,
            _ => &self.q_r,
        }
    }
}

#[inline]
fn global_index(grid: &GridSpec, comp: usize, ix: usize, iy: usize, it: usize) -> usize {
    comp * grid.n_values() + grid.index(ix, iy, it)
}

/// Coefficients of one L-residual row: dt w_j - d lap w_j + div(w_j q).
/// Only valid at spatially interior nodes.
fn l_row_into(
    grid: &GridSpec,
    q: &VectorField2,
    d: f64,
    comp: usize,
    ix: usize,
    iy: usize,
    it: usize,
    out: &mut Vec<(usize, f64)>,
) {
    let (nx, ny, nt) = (grid.nx(), grid.ny(), grid.nt());
    let (hx, hy) = (grid.x.spacing(), grid.y.spacing());
    let ht = grid.t.expect("space-time grid").spacing();
    out.clear();
    for (j, c) in d1_stencil(it, nt, ht) {
        out.push((global_index(grid, comp, ix, iy, j), c));
    }
    for (j, c) in d2_stencil(ix, nx, hx) {
        out.push((global_index(grid, comp, j, iy, it), -d * c));
    }
    for (j, c) in d2_stencil(iy, ny, hy) {
        out.push((global_index(grid, comp, ix, j, it), -d * c));
    }
    for (j, c) in d1_stencil(ix, nx, hx) {
        out.push((global_index(grid, comp, j, iy, it), c * q.u.at(j, iy, 0)));
    }
    for (j, c) in d1_stencil(iy, ny, hy) {
        out.push((global_index(grid, comp, ix, j, it), c * q.v.at(ix, j, 0)));
    }
}

/// Apply L to a W iterate; the result is only meaningful at spatially
/// interior nodes (boundary nodes are left at zero).
pub fn apply_l(w: &WField, vel: &Velocities, d: f64) -> Result<[ScalarField; 6]> {
    let grid = *w.grid();
    grid.time_axis()?;
    let packed = pack(w);
    let mut out: [ScalarField; 6] = std::array::from_fn(|_| ScalarField::zeros(grid));
    let mut row = Vec::with_capacity(16);
    for comp in 0..6 {
        for it in 0..grid.nt() {
            for iy in 1..grid.ny() - 1 {
                for ix in 1..grid.nx() - 1 {
                    l_row_into(&grid, vel.for_comp(comp), d, comp, ix, iy, it, &mut row);
                    let mut acc = 0.0;
                    for &(g, c) in &row {
                        acc += c * packed[g];
                    }
                    *out[comp].at_mut(ix, iy, it) = acc;
                }
            }
        }
    }
    Ok(out)
}

fn pack(w: &WField) -> Vec<f64> {
    let mut v = Vec::with_capacity(6 * w.grid().n_values());
    for c in &w.comps {
        v.extend_from_slice(&c.values);
    }
    v
}

/// The frozen nonlinearity: six fields on the full grid built from the
/// previous iterate, the s-coefficients, and the midpoint snapshots.
pub fn eval_y(
    w_prev: &WField,
    s: &[ScalarField; 4],
    p1: &ScalarField,
    p2: &ScalarField,
) -> Result<[ScalarField; 6]> {
    let grid = *w_prev.grid();
    let taxis = grid.time_axis()?;
    let t_mid = 0.5 * (taxis.min + taxis.max);
    let i1 = time_integral_from_mid(&w_prev.comps[0], t_mid)?;
    let i2 = time_integral_from_mid(&w_prev.comps[1], t_mid)?;
    let i4 = time_integral_from_mid(&w_prev.comps[3], t_mid)?;
    let i6 = time_integral_from_mid(&w_prev.comps[5], t_mid)?;

    let ns = grid.nx() * grid.ny();
    let mut out: [ScalarField; 6] = std::array::from_fn(|_| ScalarField::zeros(grid));
    for it in 0..grid.nt() {
        for k in 0..ns {
            let node = it * ns + k;
            let w1 = w_prev.comps[0].values[node];
            let w2 = w_prev.comps[1].values[node];
            let w3 = w_prev.comps[2].values[node];
            let w4 = w_prev.comps[3].values[node];
            let w5 = w_prev.comps[4].values[node];
            let rho_s = i1.values[node] + p1.values[k];
            let rho_i = i2.values[node] + p2.values[k];
            let b = (w1 - i4.values[node]) * s[0].values[k] + s[1].values[k];
            let g = (w3 - i6.values[node]) * s[2].values[k] + s[3].values[k];

            let y1 = b * (w1 * rho_i + rho_s * w2);
            let y3 = -g * w2;
            let y4 = b * (w4 * rho_i + 2.0 * w1 * w2 + rho_s * w5);
            let y6 = -g * w5;
            let vals = [y1, -y1, y3, y4, -y4, y6];
            for (c, v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Evaluation {
                        node,
                        message: format!("nonlinearity component {} non-finite", c + 1),
                    });
                }
                out[c].values[node] = *v;
            }
        }
    }
    Ok(out)
}

/// The data-driven coefficient fields B(x, t) and Gamma(x, t) whose exact
/// values are beta(x) and gamma(x); used both inside the nonlinearity and
/// as reconstruction diagnostics.
pub fn coefficient_fields(w: &WField, s: &[ScalarField; 4]) -> Result<(ScalarField, ScalarField)> {
    let grid = *w.grid();
    let taxis = grid.time_axis()?;
    let t_mid = 0.5 * (taxis.min + taxis.max);
    let i4 = time_integral_from_mid(&w.comps[3], t_mid)?;
    let i6 = time_integral_from_mid(&w.comps[5], t_mid)?;
    let ns = grid.nx() * grid.ny();
    let mut b = ScalarField::zeros(grid);
    let mut g = ScalarField::zeros(grid);
    for it in 0..grid.nt() {
        for k in 0..ns {
            let node = it * ns + k;
            b.values[node] =
                (w.comps[0].values[node] - i4.values[node]) * s[0].values[k] + s[1].values[k];
            g.values[node] =
                (w.comps[2].values[node] - i6.values[node]) * s[2].values[k] + s[3].values[k];
        }
    }
    Ok((b, g))
}

/// Mean and variance over time of a space-time field, per spatial node.
pub fn time_mean_var(f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    let grid = f.grid;
    let nt = grid.time_axis()?.n;
    let ns = grid.nx() * grid.ny();
    let sp = grid.spatial_part();
    let mut mean = ScalarField::zeros(sp);
    let mut var = ScalarField::zeros(sp);
    for k in 0..ns {
        let mut m = 0.0;
        for it in 0..nt {
            m += f.values[it * ns + k];
        }
        m /= nt as f64;
        let mut v = 0.0;
        for it in 0..nt {
            let d = f.values[it * ns + k] - m;
            v += d * d;
        }
        mean.values[k] = m;
        var.values[k] = v / nt as f64;
    }
    Ok((mean, var))
}

/// The assembled least-squares system of one outer iteration, with the
/// Dirichlet unknowns already eliminated.
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub grid: GridSpec,
    /// Maps a global unknown index to its compact free index, or usize::MAX
    /// when the unknown is hard-constrained.
    free_of_global: Vec<usize>,
    global_of_free: Vec<usize>,
    fixed_values: Vec<f64>,
    pub kappa_n: f64,
    pub n_pde_rows: usize,
}

impl AssembledSystem {
    pub fn n_free(&self) -> usize {
        self.global_of_free.len()
    }

    /// Free-vector form of a W iterate (drops the fixed entries).
    pub fn project(&self, w: &WField) -> Vec<f64> {
        let packed = pack(w);
        self.global_of_free.iter().map(|&g| packed[g]).collect()
    }

    /// Rebuild a W iterate from a free vector and the fixed values.
    pub fn restore(&self, x: &[f64]) -> WField {
        let mut w = WField::zeros(self.grid);
        let nn = self.grid.n_values();
        for (g, &fk) in self.free_of_global.iter().enumerate() {
            let v = if fk == usize::MAX {
                self.fixed_values[g]
            } else {
                x[fk]
            };
            w.comps[g / nn].values[g % nn] = v;
        }
        w
    }

    /// J(x) = ||R x - c||^2 over the free unknowns.
    pub fn functional(&self, x: &[f64]) -> f64 {
        let mut r = vec![0.0; self.matrix.nrows];
        self.matrix.mul_add(x, &mut r);
        r.iter()
            .zip(&self.rhs)
            .map(|(a, c)| (a - c) * (a - c))
            .sum()
    }

    /// grad J = 2 R^T (R x - c).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.matrix.nrows];
        self.matrix.mul_add(x, &mut r);
        for (ri, ci) in r.iter_mut().zip(&self.rhs) {
            *ri -= ci;
        }
        let mut g = vec![0.0; self.matrix.ncols];
        self.matrix.tr_mul_add(&r, &mut g);
        for gi in g.iter_mut() {
            *gi *= 2.0;
        }
        g
    }

    /// The homogeneous quadratic form ||R h||^2; by the exact second-order
    /// expansion of the quadratic functional,
    /// J(x + h) - J(x) - grad J(x) . h equals this for every h.
    pub fn quadratic_form(&self, h: &[f64]) -> f64 {
        let mut r = vec![0.0; self.matrix.nrows];
        self.matrix.mul_add(h, &mut r);
        r.iter().map(|v| v * v).sum()
    }
}

/// Assemble the weighted system of minimization problem number n. With
/// `w_prev == None` the nonlinearity term is absent (problem number zero).
pub fn assemble_functional(
    data: &DerivedData,
    vel: &Velocities,
    d: f64,
    w_prev: Option<&WField>,
    grid: &GridSpec,
    cfg: &InverseConfig,
) -> Result<AssembledSystem> {
    cfg.validate()?;
    let taxis = grid.time_axis()?;
    let (nx, ny, nt) = (grid.nx(), grid.ny(), taxis.n);
    if nx < 4 || ny < 4 || nt < 3 {
        return Err(Error::Assembly(format!(
            "inverse grid {nx}x{ny}x{nt} too small for the one-sided stencils"
        )));
    }
    for comp in 0..6 {
        if data.g0[comp].space.n != ny || data.g0[comp].time.n != nt {
            return Err(Error::Assembly("dirichlet data does not match the grid".into()));
        }
    }

    let nn = grid.n_values();
    let n_global = 6 * nn;

    // hard Dirichlet eliminations on the east side x = b
    let mut fixed_values = vec![0.0; n_global];
    let mut free_of_global = vec![0usize; n_global];
    for comp in 0..6 {
        for it in 0..nt {
            for iy in 0..ny {
                let g = global_index(grid, comp, nx - 1, iy, it);
                free_of_global[g] = usize::MAX;
                fixed_values[g] = data.g0[comp].at(iy, it);
            }
        }
    }
    let mut global_of_free = Vec::with_capacity(n_global);
    for g in 0..n_global {
        if free_of_global[g] != usize::MAX {
            free_of_global[g] = global_of_free.len();
            global_of_free.push(g);
        }
    }

    let qw = quadrature_weights(grid);
    let cw = CarlemanWeight::new(cfg.lambda, grid.x.max.abs().max(grid.x.min.abs()), taxis.max)?;
    let y_fields = match w_prev {
        Some(w) => Some(eval_y(w, &data.s, &data.p1, &data.p2)?),
        None => None,
    };

    let mut builder = SystemBuilder::new();
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(20);
    let mut folded: Vec<(usize, f64)> = Vec::with_capacity(20);
    let mut fold_and_add = |builder: &mut SystemBuilder,
                            row: &[(usize, f64)],
                            weight: f64,
                            rhs: f64|
     -> bool {
        folded.clear();
        let mut b = rhs;
        for &(g, c) in row {
            if free_of_global[g] == usize::MAX {
                b -= c * fixed_values[g];
            } else {
                folded.push((free_of_global[g], c * weight));
            }
        }
        builder.add_row(&folded, b * weight)
    };

    // (a) residual rows at spatially interior nodes, all time slices
    let mut pde_weights = Vec::with_capacity(6 * (nx - 2) * (ny - 2) * nt);
    for comp in 0..6 {
        let q = vel.for_comp(comp);
        for it in 0..nt {
            let t = taxis.coord(it);
            for iy in 1..ny - 1 {
                for ix in 1..nx - 1 {
                    let node = grid.index(ix, iy, it);
                    let w = (qw.values[node]
                        * cw.log_normalized(grid.x.coord(ix), t).exp())
                    .sqrt();
                    pde_weights.push(w);
                    let rhs = match &y_fields {
                        Some(y) => -y[comp].values[node],
                        None => 0.0,
                    };
                    l_row_into(grid, q, d, comp, ix, iy, it, &mut row);
                    fold_and_add(&mut builder, &row, w, rhs);
                }
            }
        }
    }
    let n_pde_rows = builder.n_rows();

    // (b) Neumann rows on every lateral boundary node
    let kappa_n = match cfg.kappa_n {
        Some(k) => k,
        None => {
            let mut sorted = pde_weights.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            1e3 * sorted[sorted.len() / 2]
        }
    };
    let (hx, hy) = (grid.x.spacing(), grid.y.spacing());
    for comp in 0..6 {
        for face in Face::ALL {
            let trace = data.g1[comp].face(face);
            if face.is_vertical() {
                if trace.space.n != ny || trace.time.n != nt {
                    return Err(Error::Assembly("neumann trace does not match the grid".into()));
                }
            } else if trace.space.n != nx || trace.time.n != nt {
                return Err(Error::Assembly("neumann trace does not match the grid".into()));
            }
            let c2 = 1.0 / (2.0 * if face.is_vertical() { hx } else { hy });
            for it in 0..nt {
                let n_space = if face.is_vertical() { ny } else { nx };
                for is in 0..n_space {
                    row.clear();
                    // outward one-sided stencil (3, -4, 1)/(2h) from the face
                    let idx3 = |k: usize| match face {
                        Face::West => global_index(grid, comp, k, is, it),
                        Face::East => global_index(grid, comp, nx - 1 - k, is, it),
                        Face::South => global_index(grid, comp, is, k, it),
                        Face::North => global_index(grid, comp, is, ny - 1 - k, it),
                    };
                    row.push((idx3(0), 3.0 * c2));
                    row.push((idx3(1), -4.0 * c2));
                    row.push((idx3(2), c2));
                    fold_and_add(&mut builder, &row, kappa_n, trace.at(is, it));
                }
            }
        }
    }

    // (c) optional compatibility rows dt(w_j) - w_{j+3} = 0
    if cfg.kappa_c > 0.0 {
        let ht = taxis.spacing();
        for comp in 0..3 {
            for it in 0..nt {
                for iy in 0..ny {
                    for ix in 0..nx {
                        row.clear();
                        for (j, c) in d1_stencil(it, nt, ht) {
                            row.push((global_index(grid, comp, ix, iy, j), c));
                        }
                        row.push((global_index(grid, comp + 3, ix, iy, it), -1.0));
                        let w = cfg.kappa_c * qw.values[grid.index(ix, iy, it)].sqrt();
                        fold_and_add(&mut builder, &row, w, 0.0);
                    }
                }
            }
        }
    }

    // (d) regularization rows: discrete H^2 norm with trapezoidal weights
    let sqrt_xi = cfg.xi.sqrt();
    let ht = taxis.spacing();
    for comp in 0..6 {
        for it in 0..nt {
            for iy in 0..ny {
                for ix in 0..nx {
                    let w = sqrt_xi * qw.values[grid.index(ix, iy, it)].sqrt();
                    let g0 = global_index(grid, comp, ix, iy, it);
                    row.clear();
                    row.push((g0, 1.0));
                    fold_and_add(&mut builder, &row, w, 0.0);

                    row.clear();
                    for (j, c) in d1_stencil(ix, nx, hx) {
                        row.push((global_index(grid, comp, j, iy, it), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);
                    row.clear();
                    for (j, c) in d1_stencil(iy, ny, hy) {
                        row.push((global_index(grid, comp, ix, j, it), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);
                    row.clear();
                    for (j, c) in d1_stencil(it, nt, ht) {
                        row.push((global_index(grid, comp, ix, iy, j), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);

                    row.clear();
                    for (j, c) in d2_stencil(ix, nx, hx) {
                        row.push((global_index(grid, comp, j, iy, it), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);
                    row.clear();
                    for (j, c) in d2_stencil(iy, ny, hy) {
                        row.push((global_index(grid, comp, ix, j, it), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);
                    row.clear();
                    for (j, c) in d2_stencil(it, nt, ht) {
                        row.push((global_index(grid, comp, ix, iy, j), c));
                    }
                    fold_and_add(&mut builder, &row, w, 0.0);
                }
            }
        }
    }

    let n_free = global_of_free.len();
    let (matrix, rhs) = builder.build(n_free);
    Ok(AssembledSystem {
        matrix,
        rhs,
        grid: *grid,
        free_of_global,
        global_of_free,
        fixed_values,
        kappa_n,
        n_pde_rows,
    })
}

/// Solve one quasi-reversibility step: the minimizer of the assembled
/// quadratic, with the hard-constrained values re-inserted.
pub fn solve_qrm_step(sys: &AssembledSystem, cfg: &InverseConfig) -> Result<(WField, LsqrSummary)> {
    let (x, summary) = lsqr(&sys.matrix, &sys.rhs, cfg.ls_tol, cfg.ls_max_iter)?;
    Ok((sys.restore(&x), summary))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// RMS of W_n - W_{n-1} (for iteration 0, the RMS of W_0 itself).
    pub step_rms: f64,
    pub functional: f64,
    pub compat_defect: f64,
    pub b_time_variance: f64,
    pub gamma_time_variance: f64,
    /// Monitored iterate magnitude (RMS over all components and nodes).
    pub w_norm: f64,
    pub ls_iterations: usize,
}

#[derive(Debug)]
pub struct CcmmResult {
    pub w: WField,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub stagnation: bool,
}

impl CcmmResult {
    /// Number of outer updates after the zeroth minimization.
    pub fn steps(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

fn record(
    iter: usize,
    w: &WField,
    step_rms: f64,
    functional: f64,
    ls_iterations: usize,
    s: &[ScalarField; 4],
) -> Result<IterationRecord> {
    let (b, g) = coefficient_fields(w, s)?;
    let (_, bvar) = time_mean_var(&b)?;
    let (_, gvar) = time_mean_var(&g)?;
    let mean = |f: &ScalarField| f.values.iter().sum::<f64>() / f.values.len() as f64;
    Ok(IterationRecord {
        iter,
        step_rms,
        functional,
        compat_defect: w.compat_defect()?,
        b_time_variance: mean(&bvar),
        gamma_time_variance: mean(&gvar),
        w_norm: w.rms(),
        ls_iterations,
    })
}

/// The outer contraction loop: minimize the functional with the
/// nonlinearity frozen at the previous iterate until the step norm drops
/// below `stop_tol` or the iteration cap is reached.
pub fn ccmm_iterate(
    data: &DerivedData,
    vel: &Velocities,
    d: f64,
    grid: &GridSpec,
    cfg: &InverseConfig,
) -> Result<CcmmResult> {
    cfg.validate()?;
    let sys0 = assemble_functional(data, vel, d, None, grid, cfg)?;
    let (mut w, summary0) = solve_qrm_step(&sys0, cfg)?;
    let x0 = sys0.project(&w);
    let mut history = vec![record(
        0,
        &w,
        w.rms(),
        sys0.functional(&x0),
        summary0.iterations,
        &data.s,
    )?];

    let mut converged = false;
    let mut stagnation = false;
    for n in 1..=cfg.max_iter {
        let sys = assemble_functional(data, vel, d, Some(&w), grid, cfg)?;
        let (w_next, summary) = solve_qrm_step(&sys, cfg)?;
        let step = w_next.rms_diff(&w);
        let x = sys.project(&w_next);
        history.push(record(n, &w_next, step, sys.functional(&x), summary.iterations, &data.s)?);
        w = w_next;
        let k = history.len();
        if k >= 4
            && history[k - 1].step_rms >= history[k - 2].step_rms
            && history[k - 2].step_rms >= history[k - 3].step_rms
        {
            stagnation = true;
        }
        if step < cfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(CcmmResult {
        w,
        history,
        converged,
        stagnation,
    })
}

/// Plain gradient descent on the assembled quadratic; an alternate
/// minimizer mainly used to cross-check the QRM step. The functional trace
/// must decrease monotonically, otherwise the step size is too large.
pub fn gradient_descent_minimize(
    sys: &AssembledSystem,
    gamma: f64,
    iters: usize,
) -> Result<(WField, Vec<f64>)> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("step size {gamma} must be positive")));
    }
    let mut x = vec![0.0; sys.n_free()];
    let mut trace = vec![sys.functional(&x)];
    for _ in 0..iters {
        let g = sys.gradient(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
        let j = sys.functional(&x);
        let prev = *trace.last().unwrap();
        if !j.is_finite() || j > prev {
            return Err(Error::StepSize {
                gamma,
                suggested: gamma / 2.0,
            });
        }
        trace.push(j);
    }
    Ok((sys.restore(&x), trace))
}

/// Power-iteration estimate of the largest eigenvalue of R^T R, from which
/// a safe gradient step is gamma < 1 / lambda_max.
pub fn estimate_curvature(sys: &AssembledSystem, iters: usize) -> f64 {
    let n = sys.n_free();
    let mut v: Vec<f64> = (0..n)
        .map(|k| ((k * 2654435761 + 1) % 1000) as f64 / 1000.0 - 0.5)
        .collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|e| *e /= norm);
        let mut r = vec![0.0; sys.matrix.nrows];
        sys.matrix.mul_add(&v, &mut r);
        let mut w = vec![0.0; n];
        sys.matrix.tr_mul_add(&r, &mut w);
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
    }
    lambda
}
