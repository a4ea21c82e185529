//! Forward solver for the SIR reaction-diffusion system on a rectangle G.
//!
//! The march is semi-implicit: diffusion is treated implicitly by a
//! direction-split backward Euler step (one tridiagonal solve per direction,
//! factored once), advection and reaction are explicit. Neumann flux data
//! enter through second-order one-sided normal-derivative rows at the
//! boundary nodes of each directional solve. The scheme is first order in
//! time and second order in space.

use crate::error::{Error, Result};
use crate::grid::{divergence, Axis, Face, GridSpec, ScalarField, VectorField2};

/// Coefficients and data of the initial-boundary-value problem.
#[derive(Debug, Clone)]
pub struct SirParams {
    /// Shared viscosity d > 0.
    pub d: f64,
    pub q_s: VectorField2,
    pub q_i: VectorField2,
    pub q_r: VectorField2,
    pub beta: ScalarField,
    pub gamma: ScalarField,
    /// Initial states (rho_S, rho_I, rho_R) on the spatial grid.
    pub rho0: [ScalarField; 3],
}

impl SirParams {
    /// Spatially constant parameters; the usual starting point for scenarios.
    pub fn constant(
        grid: &GridSpec,
        d: f64,
        q: (f64, f64),
        beta: f64,
        gamma: f64,
        rho0: (f64, f64, f64),
    ) -> Self {
        let sp = grid.spatial_part();
        Self {
            d,
            q_s: VectorField2::constant(sp, q.0, q.1),
            q_i: VectorField2::constant(sp, q.0, q.1),
            q_r: VectorField2::constant(sp, q.0, q.1),
            beta: ScalarField::constant(sp, beta),
            gamma: ScalarField::constant(sp, gamma),
            rho0: [
                ScalarField::constant(sp, rho0.0),
                ScalarField::constant(sp, rho0.1),
                ScalarField::constant(sp, rho0.2),
            ],
        }
    }

    fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.d <= 0.0 || !self.d.is_finite() {
            return Err(Error::Config(format!("viscosity d = {} must be positive", self.d)));
        }
        let sp = grid.spatial_part();
        for (name, f) in [
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("rho0_s", &self.rho0[0]),
            ("rho0_i", &self.rho0[1]),
            ("rho0_r", &self.rho0[2]),
        ] {
            if f.grid != sp {
                return Err(Error::Dimension(format!("{name} not on the solver grid")));
            }
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} contains non-finite values")));
            }
        }
        for (name, q) in [("q_s", &self.q_s), ("q_i", &self.q_i), ("q_r", &self.q_r)] {
            if *q.grid() != sp {
                return Err(Error::Dimension(format!("{name} not on the solver grid")));
            }
        }
        Ok(())
    }
}

/// Neumann flux g(face, coordinate-along-face, t).
pub type FluxFn<'a> = &'a dyn Fn(Face, f64, f64) -> f64;
/// Volume source f(x, y, t); used by manufactured-solution tests.
pub type ForcingFn<'a> = &'a dyn Fn(f64, f64, f64) -> f64;

pub struct ForwardOptions<'a> {
    /// Keep every `record_every`-th time slice (the first and last are
    /// always kept); `(nt - 1) % record_every` must be 0.
    pub record_every: usize,
    pub flux: Option<[FluxFn<'a>; 3]>,
    pub forcing: Option<[ForcingFn<'a>; 3]>,
}

impl Default for ForwardOptions<'_> {
    fn default() -> Self {
        Self {
            record_every: 1,
            flux: None,
            forcing: None,
        }
    }
}

/// Population densities on the spatial grid x the recorded time axis.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub rho: [ScalarField; 3],
}

impl ForwardSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.rho[0].grid
    }
}

/// Tridiagonal backward-Euler sweep along one axis with the Neumann rows
/// already eliminated into the band; the factorization is computed once and
/// reused every step.
struct SweepSolver {
    n: usize,
    up: Vec<f64>,
    dp: Vec<f64>,
    m: Vec<f64>,
    f_lo: f64,
    f_hi: f64,
}

impl SweepSolver {
    fn new(n: usize, h: f64, kappa: f64) -> Self {
        let c = kappa / (h * h);
        let mut lo = vec![-c; n];
        let mut di = vec![1.0 + 2.0 * c; n];
        let mut up = vec![-c; n];

        // Low-end row: (3 u0 - 4 u1 + u2) / (2h) = g. Eliminate u2 with the
        // interior row 1 whose u2 coefficient is -c.
        let inv2h = 1.0 / (2.0 * h);
        let f_lo = inv2h / (-c);
        di[0] = 3.0 * inv2h - f_lo * lo[1];
        up[0] = -4.0 * inv2h - f_lo * di[1];
        lo[0] = 0.0;
        // High-end row: (3 u_{n-1} - 4 u_{n-2} + u_{n-3}) / (2h) = g.
        let f_hi = inv2h / (-c);
        di[n - 1] = 3.0 * inv2h - f_hi * up[n - 2];
        lo[n - 1] = -4.0 * inv2h - f_hi * di[n - 2];
        up[n - 1] = 0.0;

        // Thomas factorization
        let mut dp = vec![0.0; n];
        let mut m = vec![0.0; n];
        dp[0] = di[0];
        for i in 1..n {
            m[i] = lo[i] / dp[i - 1];
            dp[i] = di[i] - m[i] * up[i - 1];
        }
        Self { n, up, dp, m, f_lo, f_hi }
    }

    /// Solve in place; `rhs[0]` and `rhs[n-1]` hold the Neumann values g,
    /// the rest the backward-Euler right-hand side.
    fn solve(&self, rhs: &mut [f64]) {
        let n = self.n;
        rhs[0] -= self.f_lo * rhs[1];
        rhs[n - 1] -= self.f_hi * rhs[n - 2];
        for i in 1..n {
            rhs[i] -= self.m[i] * rhs[i - 1];
        }
        rhs[n - 1] /= self.dp[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] = (rhs[i] - self.up[i] * rhs[i + 1]) / self.dp[i];
        }
    }
}

fn max_component(q: &VectorField2) -> f64 {
    q.u.max_abs().max(q.v.max_abs())
}

/// Largest admissible time step for the explicit advection and reaction
/// terms of this parameter set.
pub fn admissible_ht(params: &SirParams, grid: &GridSpec) -> f64 {
    let q_max = max_component(&params.q_s)
        .max(max_component(&params.q_i))
        .max(max_component(&params.q_r));
    let (hx, hy) = (grid.x.spacing(), grid.y.spacing());
    let adv = if q_max > 0.0 {
        1.0 / (q_max * (1.0 / hx + 1.0 / hy))
    } else {
        f64::INFINITY
    };
    let rho_cap = 10.0
        * params.rho0.iter().fold(0.0f64, |m, f| m.max(f.max_abs()))
        + 1e-12;
    let rate = (params.beta.max_abs() * rho_cap).max(params.gamma.max_abs());
    let react = if rate > 0.0 { 0.5 / rate } else { f64::INFINITY };
    adv.min(react)
}

pub fn forward_solve(
    params: &SirParams,
    grid: &GridSpec,
    opts: &ForwardOptions,
) -> Result<ForwardSolution> {
    let taxis = grid.time_axis()?;
    params.validate(grid)?;
    let (nx, ny, nt) = (grid.nx(), grid.ny(), taxis.n);
    if nx < 4 || ny < 4 {
        return Err(Error::Dimension(format!(
            "forward grid needs at least 4 nodes per spatial axis, got {nx}x{ny}"
        )));
    }
    if opts.record_every == 0 || (nt - 1) % opts.record_every != 0 {
        return Err(Error::Config(format!(
            "record_every {} does not divide {} time steps",
            opts.record_every,
            nt - 1
        )));
    }
    let ht = taxis.spacing();
    let ht_max = admissible_ht(params, grid);
    if ht > ht_max {
        return Err(Error::Stability { ht, ht_max });
    }

    let kappa = params.d * ht;
    let x_solver = SweepSolver::new(nx, grid.x.spacing(), kappa);
    let y_solver = SweepSolver::new(ny, grid.y.spacing(), kappa);

    let sp = grid.spatial_part();
    let n_rec = (nt - 1) / opts.record_every + 1;
    let rec_axis = Axis::new(taxis.min, taxis.max, n_rec)?;
    let rec_grid = GridSpec::space_time(grid.x, grid.y, rec_axis);
    let ns = nx * ny;

    let mut state: [ScalarField; 3] = [
        params.rho0[0].clone(),
        params.rho0[1].clone(),
        params.rho0[2].clone(),
    ];
    let mut recorded: [Vec<f64>; 3] = [
        Vec::with_capacity(n_rec * ns),
        Vec::with_capacity(n_rec * ns),
        Vec::with_capacity(n_rec * ns),
    ];
    for c in 0..3 {
        recorded[c].extend_from_slice(&state[c].values);
    }

    let zero_flux = |_: Face, _: f64, _: f64| 0.0;
    let flux: [&dyn Fn(Face, f64, f64) -> f64; 3] = match &opts.flux {
        Some(f) => [f[0], f[1], f[2]],
        None => [&zero_flux, &zero_flux, &zero_flux],
    };

    let q = [&params.q_s, &params.q_i, &params.q_r];
    let mut row_buf = vec![0.0; nx.max(ny)];

    for step in 1..nt {
        let t_old = taxis.coord(step - 1);
        let t_new = taxis.coord(step);

        // explicit advection + reaction (+ optional forcing) at t_old
        let mut rhs: [ScalarField; 3] = [
            ScalarField::zeros(sp),
            ScalarField::zeros(sp),
            ScalarField::zeros(sp),
        ];
        for c in 0..3 {
            let adv = divergence(&state[c], q[c])?;
            for k in 0..ns {
                rhs[c].values[k] = state[c].values[k] - ht * adv.values[k];
            }
        }
        for k in 0..ns {
            let r = params.beta.values[k] * state[0].values[k] * state[1].values[k];
            rhs[0].values[k] -= ht * r;
            rhs[1].values[k] += ht * r;
            rhs[2].values[k] += ht * params.gamma.values[k] * state[1].values[k];
        }
        if let Some(force) = &opts.forcing {
            for c in 0..3 {
                for iy in 0..ny {
                    for ix in 0..nx {
                        rhs[c].values[iy * nx + ix] +=
                            ht * force[c](grid.x.coord(ix), grid.y.coord(iy), t_old);
                    }
                }
            }
        }

        for c in 0..3 {
            // x sweep: one tridiagonal solve per y-row
            for iy in 0..ny {
                let y = grid.y.coord(iy);
                let row = &mut row_buf[..nx];
                row.copy_from_slice(&rhs[c].values[iy * nx..(iy + 1) * nx]);
                row[0] = flux[c](Face::West, y, t_new);
                row[nx - 1] = flux[c](Face::East, y, t_new);
                x_solver.solve(row);
                rhs[c].values[iy * nx..(iy + 1) * nx].copy_from_slice(row);
            }
            // y sweep: one tridiagonal solve per x-column
            for ix in 0..nx {
                let x = grid.x.coord(ix);
                let col = &mut row_buf[..ny];
                for iy in 0..ny {
                    col[iy] = rhs[c].values[iy * nx + ix];
                }
                col[0] = flux[c](Face::South, x, t_new);
                col[ny - 1] = flux[c](Face::North, x, t_new);
                y_solver.solve(col);
                for iy in 0..ny {
                    rhs[c].values[iy * nx + ix] = col[iy];
                }
            }
            if rhs[c].values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    message: format!("component {c} lost finiteness"),
                });
            }
            state[c] = rhs[c].clone();
        }

        if step % opts.record_every == 0 {
            for c in 0..3 {
                recorded[c].extend_from_slice(&state[c].values);
            }
        }
    }

    let [r0, r1, r2] = recorded;
    Ok(ForwardSolution {
        rho: [
            ScalarField::new(rec_grid, r0)?,
            ScalarField::new(rec_grid, r1)?,
            ScalarField::new(rec_grid, r2)?,
        ],
    })
}

/// Interpolate a fine space-time field onto the inverse grid: bilinear in
/// space, linear in time.
pub fn restrict_to_inverse_grid(fine: &ScalarField, target: &GridSpec) -> Result<ScalarField> {
    let taxis = target.time_axis()?;
    fine.grid.time_axis()?;
    let mut out = ScalarField::zeros(*target);
    for it in 0..taxis.n {
        let t = taxis.coord(it);
        for iy in 0..target.ny() {
            let y = target.y.coord(iy);
            for ix in 0..target.nx() {
                *out.at_mut(ix, iy, it) = fine.sample_space_time(target.x.coord(ix), y, t)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use approx::assert_relative_eq;

    fn grid(nx: usize, ny: usize, nt: usize, t_max: f64) -> GridSpec {
        GridSpec::space_time(
            Axis::new(0.0, 1.0, nx).unwrap(),
            Axis::new(0.0, 1.0, ny).unwrap(),
            Axis::new(0.0, t_max, nt).unwrap(),
        )
    }

    #[test]
    fn all_terms_vanishing_keeps_state_constant() {
        let g = grid(9, 9, 21, 1.0);
        let params = SirParams::constant(&g, 0.1, (0.0, 0.0), 0.0, 0.0, (0.6, 0.8, 0.3));
        let sol = forward_solve(&params, &g, &ForwardOptions::default()).unwrap();
        for (c, want) in [(0usize, 0.6), (1, 0.8), (2, 0.3)] {
            for &v in &sol.rho[c].values {
                assert_relative_eq!(v, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stability_violation_names_admissible_step() {
        let g = grid(9, 9, 3, 10.0); // ht = 5, far beyond the advection limit
        let params = SirParams::constant(&g, 0.1, (0.5, 0.5), 0.1, 0.1, (0.6, 0.8, 0.0));
        match forward_solve(&params, &g, &ForwardOptions::default()) {
            Err(Error::Stability { ht, ht_max }) => {
                assert!(ht > ht_max);
                assert!(ht_max > 0.0);
            }
            other => panic!("expected stability error, got {other:?}"),
        }
    }

    #[test]
    fn record_every_must_divide_steps() {
        let g = grid(6, 6, 11, 1.0);
        let params = SirParams::constant(&g, 0.1, (0.0, 0.0), 0.0, 0.0, (1.0, 0.0, 0.0));
        let opts = ForwardOptions {
            record_every: 3,
            ..Default::default()
        };
        assert!(forward_solve(&params, &g, &opts).is_err());
    }

    #[test]
    fn homogeneous_reduction_matches_ode_oracle() {
        // Spatially constant data with q = 0 reduce to the reaction ODE
        // system; compare against a fine RK4 integration.
        let g = grid(8, 8, 5001, 1.0);
        let params = SirParams::constant(&g, 0.1, (0.0, 0.0), 0.1, 0.1, (0.6, 0.8, 0.0));
        let opts = ForwardOptions {
            record_every: 5000,
            ..Default::default()
        };
        let sol = forward_solve(&params, &g, &opts).unwrap();

        // RK4 oracle for S' = -b S I, I' = +b S I, R' = +g I
        let (b, ga) = (0.1, 0.1);
        let mut y = [0.6, 0.8, 0.0];
        let n = 20000;
        let h = 1.0 / n as f64;
        let f = |y: [f64; 3]| {
            let r = b * y[0] * y[1];
            [-r, r, ga * y[1]]
        };
        for _ in 0..n {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1], y[2] + 0.5 * h * k1[2]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1], y[2] + 0.5 * h * k2[2]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1], y[2] + h * k3[2]]);
            for c in 0..3 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        for c in 0..3 {
            let final_slice = sol.rho[c].time_slice(1).unwrap();
            // spatially constant to machine precision
            let spread = final_slice
                .values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            assert!(spread.1 - spread.0 < 1e-12);
            assert!(
                (final_slice.values[0] - y[c]).abs() < 1e-6,
                "component {c}: {} vs oracle {}",
                final_slice.values[0],
                y[c]
            );
        }
    }

    #[test]
    fn s_plus_i_mass_is_conserved_without_recovery() {
        // With q = 0, g = 0 and gamma = 0 the reaction terms cancel in
        // rho_S + rho_I and zero-flux diffusion conserves the total.
        let g = grid(41, 41, 201, 1.0);
        let sp = g.spatial_part();
        let mut params = SirParams::constant(&g, 0.1, (0.0, 0.0), 0.0, 0.0, (0.6, 0.8, 0.0));
        params.beta = ScalarField::from_fn(sp, |x, y, _| {
            0.1 + 0.5 * (-50.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
        });
        // non-constant initial data so diffusion is actually exercised
        params.rho0[0] = ScalarField::from_fn(sp, |x, y, _| {
            0.6 + 0.1 * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
        });
        let sol = forward_solve(&params, &g, &ForwardOptions { record_every: 200, ..Default::default() }).unwrap();
        let w = crate::grid::quadrature_weights(&sp);
        let mass = |it: usize| -> f64 {
            let s = sol.rho[0].time_slice(it).unwrap();
            let i = sol.rho[1].time_slice(it).unwrap();
            w.values
                .iter()
                .zip(s.values.iter().zip(i.values.iter()))
                .map(|(&wk, (&sv, &iv))| wk * (sv + iv))
                .sum()
        };
        let m0 = mass(0);
        let m1 = mass(1);
        assert!(
            (m1 - m0).abs() < 1e-6,
            "mass drift {} from {m0}",
            (m1 - m0).abs()
        );
    }

    #[test]
    fn restriction_is_exact_on_constants_and_linears() {
        let fine = grid(17, 17, 9, 1.0);
        let coarse = GridSpec::space_time(
            Axis::new(0.2, 0.8, 5).unwrap(),
            Axis::new(0.1, 0.9, 5).unwrap(),
            Axis::new(0.0, 1.0, 5).unwrap(),
        );
        let c = ScalarField::constant(fine, 2.5);
        let rc = restrict_to_inverse_grid(&c, &coarse).unwrap();
        assert!(rc.values.iter().all(|&v| (v - 2.5).abs() < 1e-12));

        let lin = ScalarField::from_fn(fine, |x, y, t| 1.0 + x - 2.0 * y + 0.3 * t);
        let rl = restrict_to_inverse_grid(&lin, &coarse).unwrap();
        let want = ScalarField::from_fn(coarse, |x, y, t| 1.0 + x - 2.0 * y + 0.3 * t);
        for (a, b) in rl.values.iter().zip(&want.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn restriction_rejects_nodes_outside_hull() {
        let fine = grid(9, 9, 5, 1.0);
        let outside = GridSpec::space_time(
            Axis::new(0.5, 1.5, 3).unwrap(),
            Axis::new(0.0, 1.0, 3).unwrap(),
            Axis::new(0.0, 1.0, 3).unwrap(),
        );
        let f = ScalarField::constant(fine, 1.0);
        assert!(restrict_to_inverse_grid(&f, &outside).is_err());
    }

    #[test]
    fn determinism_bitwise() {
        let g = grid(15, 13, 41, 0.5);
        let params = SirParams::constant(&g, 0.1, (0.2, 0.2), 0.3, 0.2, (0.6, 0.8, 0.0));
        let a = forward_solve(&params, &g, &ForwardOptions::default()).unwrap();
        let b = forward_solve(&params, &g, &ForwardOptions::default()).unwrap();
        for c in 0..3 {
            assert_eq!(a.rho[c].values, b.rho[c].values);
        }
    }
}
