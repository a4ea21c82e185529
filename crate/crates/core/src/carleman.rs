//! The Carleman weight function, numerical probes of the two estimates that
//! drive the convergence analysis, and the theory parameter schedules.
//!
//! The weight is phi_lambda(x, t) = exp[2 lambda (x^2 - (t - T/2)^2)]. It
//! peaks at (|x| = b, t = T/2); the normalized variant divides by the peak
//! value exp(2 lambda b^2) so it lies in (0, 1] on the closure of Q_T. All
//! evaluations go through the log to keep large lambda safe from overflow.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{d_dt, d_dx, d_dy, laplacian, quadrature_weights, GridSpec, ScalarField};
use crate::grid::time_integral_from_mid;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CarlemanWeight {
    pub lambda: f64,
    /// x_max of Omega; the weight is normalized by its peak exp(2 lambda b^2).
    pub b: f64,
    pub t_final: f64,
}

impl CarlemanWeight {
    pub fn new(lambda: f64, b: f64, t_final: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!("lambda = {lambda} must be finite and >= 0")));
        }
        if b <= 0.0 || t_final <= 0.0 {
            return Err(Error::Config("b and T must be positive".into()));
        }
        Ok(Self { lambda, b, t_final })
    }

    /// log phi_lambda(x, t) = 2 lambda (x^2 - (t - T/2)^2).
    #[inline]
    pub fn log_weight(&self, x: f64, t: f64) -> f64 {
        let tau = t - 0.5 * self.t_final;
        2.0 * self.lambda * (x * x - tau * tau)
    }

    /// log of the normalized weight, shifted so the peak value is 1.
    #[inline]
    pub fn log_normalized(&self, x: f64, t: f64) -> f64 {
        self.log_weight(x, t) - 2.0 * self.lambda * self.b * self.b
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<f64> {
        let lw = self.log_weight(x, t);
        if lw > 700.0 {
            return Err(Error::Evaluation {
                node: 0,
                message: format!("carleman weight overflows: log value {lw}"),
            });
        }
        Ok(lw.exp())
    }

    pub fn eval_normalized(&self, x: f64, t: f64) -> Result<f64> {
        let lw = self.log_normalized(x, t);
        if lw > 700.0 {
            return Err(Error::Evaluation {
                node: 0,
                message: format!("normalized carleman weight overflows: log value {lw}"),
            });
        }
        Ok(lw.exp())
    }

    /// Normalized weight at every node of a space-time grid.
    pub fn normalized_field(&self, grid: &GridSpec) -> Result<ScalarField> {
        let taxis = grid.time_axis()?;
        let mut out = ScalarField::zeros(*grid);
        for it in 0..taxis.n {
            let t = taxis.coord(it);
            for iy in 0..grid.ny() {
                for ix in 0..grid.nx() {
                    *out.at_mut(ix, iy, it) = self.eval_normalized(grid.x.coord(ix), t)?;
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Estimate probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolterraRow {
    pub lambda: f64,
    /// max over trials of the weighted concentration ratio
    /// R(lambda, f) = int (int_{T/2}^t f)^2 phi / int f^2 phi.
    pub max_ratio: f64,
    /// lambda * max_ratio: the empirical constant of the bound
    /// int (int f)^2 phi <= (C / lambda) int f^2 phi.
    pub c_emp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolterraReport {
    pub rows: Vec<VolterraRow>,
    /// Ratio of the largest to the smallest per-lambda maximum of R.
    pub spread: f64,
    /// True when the per-lambda maxima of R never increase along the
    /// lambda list by more than a factor of 3 (the weight sharpens around
    /// t = T/2, so R actually decreases; the slack absorbs sampling noise).
    pub pass: bool,
}

/// Monte-Carlo check of the weighted Volterra bound: for random discrete f
/// the concentration ratio R(lambda, f) must not grow with lambda, which
/// pins the empirical constant lambda * R of the 1/lambda bound.
pub fn check_volterra_estimate(
    lambdas: &[f64],
    trials: usize,
    seed: u64,
    grid: &GridSpec,
) -> Result<VolterraReport> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    for &l in lambdas {
        if l <= 0.0 {
            return Err(Error::Config(format!("volterra check needs lambda > 0, got {l}")));
        }
    }
    let taxis = grid.time_axis()?;
    let t_mid = 0.5 * (taxis.min + taxis.max);
    let qw = quadrature_weights(grid);
    let b = grid.x.max.abs().max(grid.x.min.abs());
    let t_final = taxis.max;

    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let w = CarlemanWeight::new(lambda, b, t_final)?;
        let phi = w.normalized_field(grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_ratio: f64 = 0.0;
        for _ in 0..trials {
            let mut f = ScalarField::zeros(*grid);
            for v in f.values.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let int_f = time_integral_from_mid(&f, t_mid)?;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..f.values.len() {
                num += qw.values[k] * int_f.values[k] * int_f.values[k] * phi.values[k];
                den += qw.values[k] * f.values[k] * f.values[k] * phi.values[k];
            }
            let ratio = if den == 0.0 { 0.0 } else { num / den };
            max_ratio = max_ratio.max(ratio);
        }
        rows.push(VolterraRow {
            lambda,
            max_ratio,
            c_emp: lambda * max_ratio,
        });
    }

    let hi = rows.iter().fold(0.0f64, |m, r| m.max(r.max_ratio));
    let lo = rows.iter().fold(f64::INFINITY, |m, r| m.min(r.max_ratio));
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut pass = true;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[j].max_ratio > 3.0 * rows[i].max_ratio {
                pass = false;
            }
        }
    }
    Ok(VolterraReport { rows, spread, pass })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarlemanRow {
    pub lambda: f64,
    /// min over trials of lhs / (main right-hand term).
    pub c_emp: f64,
    /// mean ratio of the lambda^3 zero-order term to the lambda gradient
    /// term on the right-hand side.
    pub cubic_dominance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub rows: Vec<CarlemanRow>,
    /// Monitoring flag: empirical constant at the largest lambda is at
    /// least half of the one calibrated at the smallest lambda.
    pub monitor_ok: bool,
}

/// Discrete probe of the parabolic Carleman estimate on test fields that
/// satisfy the homogeneous lateral conditions (zero normal derivative on
/// the whole lateral boundary, zero trace on the east side). This is a
/// monitoring check, never a hard gate: the continuum estimate need not
/// hold exactly for discrete operators.
pub fn check_carleman_estimate(
    lambdas: &[f64],
    trials: usize,
    seed: u64,
    grid: &GridSpec,
    d: f64,
) -> Result<CarlemanReport> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    let taxis = grid.time_axis()?;
    let qw = quadrature_weights(grid);
    let b = grid.x.max.abs().max(grid.x.min.abs());
    let t_final = taxis.max;

    // Cutoff vanishing to second order on every face: both the value and
    // the normal derivative of cutoff * (smooth) vanish on the boundary.
    let (x0, x1) = (grid.x.min, grid.x.max);
    let (y0, y1) = (grid.y.min, grid.y.max);
    let sx = 2.0 / (x1 - x0);
    let sy = 2.0 / (y1 - y0);
    let cutoff = move |x: f64, y: f64| -> f64 {
        let ax = (x - x0) * (x1 - x) * sx * sx;
        let by = (y - y0) * (y1 - y) * sy * sy;
        ax * ax * by * by
    };

    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let w = CarlemanWeight::new(lambda, b, t_final)?;
        let phi = w.normalized_field(grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_emp = f64::INFINITY;
        let mut dom_sum = 0.0;
        for _ in 0..trials {
            // random smooth mode mixture under the cutoff
            let mut modes = Vec::new();
            for _ in 0..3 {
                let kx = rng.random_range(1..=2) as f64;
                let ky = rng.random_range(1..=2) as f64;
                let kt = rng.random_range(1..=2) as f64;
                let (px, py, pt) = (
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                );
                let c: f64 = rng.random_range(-1.0..1.0);
                modes.push((kx, ky, kt, px, py, pt, c));
            }
            let u = ScalarField::from_fn(*grid, |x, y, t| {
                let xt = (x - x0) / (x1 - x0);
                let yt = (y - y0) / (y1 - y0);
                let tt = (t - taxis.min) / (taxis.max - taxis.min);
                let g: f64 = modes
                    .iter()
                    .map(|(kx, ky, kt, px, py, pt, c)| {
                        c * (std::f64::consts::PI * kx * xt + px).cos()
                            * (std::f64::consts::PI * ky * yt + py).cos()
                            * (std::f64::consts::PI * kt * tt + pt).cos()
                    })
                    .sum();
                cutoff(x, y) * g
            });

            let ut = d_dt(&u)?;
            let ux = d_dx(&u)?;
            let uy = d_dy(&u)?;
            let mut lap = ScalarField::zeros(*grid);
            for it in 0..taxis.n {
                let slice = laplacian(&u.time_slice(it)?)?;
                let ns = grid.nx() * grid.ny();
                lap.values[it * ns..(it + 1) * ns].copy_from_slice(&slice.values);
            }

            let mut lhs = 0.0;
            let mut grad_term = 0.0;
            let mut zero_term = 0.0;
            for k in 0..u.values.len() {
                let resid = ut.values[k] - d * lap.values[k];
                lhs += qw.values[k] * resid * resid * phi.values[k];
                let g2 = ux.values[k] * ux.values[k] + uy.values[k] * uy.values[k];
                grad_term += qw.values[k] * lambda * g2 * phi.values[k];
                zero_term +=
                    qw.values[k] * lambda.powi(3) * u.values[k] * u.values[k] * phi.values[k];
            }
            let rhs_main = grad_term + zero_term;
            if rhs_main > 0.0 {
                c_emp = c_emp.min(lhs / rhs_main);
            }
            if grad_term > 0.0 {
                dom_sum += zero_term / grad_term;
            }
        }
        rows.push(CarlemanRow {
            lambda,
            c_emp,
            cubic_dominance: dom_sum / trials as f64,
        });
    }

    let first = rows.first().map(|r| r.c_emp).unwrap_or(0.0);
    let last = rows.last().map(|r| r.c_emp).unwrap_or(0.0);
    let monitor_ok = last >= 0.5 * first;
    Ok(CarlemanReport { rows, monitor_ok })
}

// ---------------------------------------------------------------------------
// Theory parameter schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoryParams {
    pub alpha: f64,
    pub m: f64,
    pub s: f64,
    pub lambda: f64,
    pub xi: f64,
    pub rho: f64,
}

/// Noise-driven parameter schedule: lambda(delta) = ln(delta^(-1/m)) and
/// xi(delta) = 2 exp(-lambda(delta) T^2 / 4), valid only for geometries
/// with T^2 > 8 b^2 / (1 - 2 alpha^2).
pub fn theory_schedule(
    delta: f64,
    alpha: f64,
    b: f64,
    t_final: f64,
    lambda_floor: f64,
) -> Result<TheoryParams> {
    if !(0.0 < alpha && alpha < std::f64::consts::FRAC_1_SQRT_2) {
        return Err(Error::Schedule(format!(
            "alpha = {alpha} outside (0, 1/sqrt(2))"
        )));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::Schedule(format!("delta = {delta} outside (0, 1)")));
    }
    let t2 = t_final * t_final;
    let b2 = b * b;
    let gate = 8.0 * b2 / (1.0 - 2.0 * alpha * alpha);
    if t2 <= gate {
        return Err(Error::Schedule(format!(
            "T^2 = {t2:.4} must exceed 8 b^2 / (1 - 2 alpha^2) = {gate:.4}; \
             increase T or decrease alpha/b"
        )));
    }
    let m = alpha * alpha * t2 / 2.0 + 2.0 * b2;
    let s = (t2 / 4.0) * ((1.0 - 2.0 * alpha * alpha) - 8.0 * b2 / t2);
    let lambda = -delta.ln() / m;
    if lambda < lambda_floor * (1.0 - 1e-12) - 1e-12 {
        return Err(Error::Schedule(format!(
            "lambda(delta) = {lambda:.4} below the required floor {lambda_floor}"
        )));
    }
    let xi = 2.0 * (-lambda * t2 / 4.0).exp();
    let rho = (s / m).max(1.0);
    Ok(TheoryParams {
        alpha,
        m,
        s,
        lambda,
        xi,
        rho,
    })
}
