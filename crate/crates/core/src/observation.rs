//! From a forward solution to the data of the inverse problem.
//!
//! The measured data are the three population snapshots p_j on Omega at
//! t = T/2, the Neumann traces r_j on the whole lateral boundary, and the
//! Dirichlet traces f_j on the east side x = b. Noise is multiplicative in
//! the sup norm: A + delta * ||A||_inf * U with U uniform on (-1, 1).
//! First and second time derivatives of the traces are produced by cubic
//! smoothing splines fitted per boundary node; spatial derivatives of the
//! p_j go through a per-row/per-column spline pass before differencing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardSolution;
use crate::grid::{divergence, laplacian, Axis, Face, GridSpec, ScalarField, VectorField2};
use crate::spline;

/// Values on one boundary face over time, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTrace {
    pub face: Face,
    /// y axis for West/East faces, x axis for South/North.
    pub space: Axis,
    pub time: Axis,
    pub values: Vec<f64>,
}

impl FaceTrace {
    pub fn zeros(face: Face, space: Axis, time: Axis) -> Self {
        Self {
            face,
            space,
            time,
            values: vec![0.0; space.n * time.n],
        }
    }

    #[inline]
    pub fn at(&self, is: usize, it: usize) -> f64 {
        self.values[it * self.space.n + is]
    }

    #[inline]
    pub fn at_mut(&mut self, is: usize, it: usize) -> &mut f64 {
        let k = it * self.space.n + is;
        &mut self.values[k]
    }

    /// As a 2d matrix field (first axis = position along the face, second
    /// axis = time) for file export; the layout matches the trace storage.
    pub fn to_matrix_field(&self) -> ScalarField {
        ScalarField {
            grid: GridSpec::spatial(self.space, self.time),
            values: self.values.clone(),
        }
    }

    /// Inverse of [`to_matrix_field`].
    pub fn from_matrix_field(face: Face, field: &ScalarField) -> Self {
        Self {
            face,
            space: field.grid.x,
            time: field.grid.y,
            values: field.values.clone(),
        }
    }
}

/// One scalar component's Neumann trace on all four faces, in the fixed
/// order West, East, South, North.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTraces {
    pub faces: [FaceTrace; 4],
}

impl BoundaryTraces {
    pub fn face(&self, f: Face) -> &FaceTrace {
        &self.faces[Face::ALL.iter().position(|&g| g == f).unwrap()]
    }
}

/// The measured Cauchy data of the inverse problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CauchyData {
    pub p: [ScalarField; 3],
    pub r: [BoundaryTraces; 3],
    pub f: [FaceTrace; 3],
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub delta: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("noise level {} outside [0, 1)", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Smoothing-spline parameter in (0, 1]; 1 is the interpolating limit.
    pub p_sm: f64,
    /// Lower bound required of |p1| and |p2|.
    pub c_floor: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            p_sm: 0.99,
            c_floor: 1e-3,
        }
    }
}

/// Data-derived quantities consumed by the inversion: boundary vectors,
/// s-coefficients, and the midpoint snapshots entering the nonlinearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedData {
    /// Dirichlet vector on the east face: (dt f1..f3, dtt f1..f3).
    pub g0: [FaceTrace; 6],
    /// Neumann vector on the whole boundary: (dt r1..r3, dtt r1..r3).
    pub g1: [BoundaryTraces; 6],
    pub s: [ScalarField; 4],
    pub p1: ScalarField,
    pub p2: ScalarField,
    pub c_floor: f64,
}

fn check_floor(p1: &ScalarField, p2: &ScalarField, c_floor: f64) -> Result<()> {
    let m1 = p1.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let m2 = p2.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if m1 < c_floor || m2 < c_floor {
        return Err(Error::DataValidity(format!(
            "min |p1| = {m1:.3e}, min |p2| = {m2:.3e} below the floor {c_floor:.3e}"
        )));
    }
    Ok(())
}

fn face_axis(face: Face, grid: &GridSpec) -> Axis {
    if face.is_vertical() {
        grid.y
    } else {
        grid.x
    }
}

/// Outward normal derivative of a fine space-time field on one face of the
/// inverse rectangle, by a second-order one-sided stencil with the fine
/// spacing, evaluated at the inverse trace nodes.
fn normal_derivative_trace(
    fine: &ScalarField,
    inverse: &GridSpec,
    face: Face,
) -> Result<FaceTrace> {
    let taxis = inverse.time_axis()?;
    let space = face_axis(face, inverse);
    let mut out = FaceTrace::zeros(face, space, taxis);
    let hs = if face.is_vertical() {
        fine.grid.x.spacing()
    } else {
        fine.grid.y.spacing()
    };
    for it in 0..taxis.n {
        let t = taxis.coord(it);
        for is in 0..space.n {
            let s = space.coord(is);
            // walk two steps inward from the face along the outward normal
            let probe = |k: f64| -> Result<f64> {
                let (x, y) = match face {
                    Face::West => (inverse.x.min + k * hs, s),
                    Face::East => (inverse.x.max - k * hs, s),
                    Face::South => (s, inverse.y.min + k * hs),
                    Face::North => (s, inverse.y.max - k * hs),
                };
                fine.sample_space_time(x, y, t)
            };
            let u0 = probe(0.0)?;
            let u1 = probe(1.0)?;
            let u2 = probe(2.0)?;
            *out.at_mut(is, it) = (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * hs);
        }
    }
    Ok(out)
}

/// Extract the Cauchy data (interior snapshot, Neumann traces, east-side
/// Dirichlet traces) from a forward solution onto the inverse grid.
pub fn extract_measurements(
    sol: &ForwardSolution,
    inverse: &GridSpec,
    c_floor: f64,
) -> Result<CauchyData> {
    let taxis = inverse.time_axis()?;
    let t_mid = 0.5 * (taxis.min + taxis.max);
    if taxis.node_at(t_mid).is_none() {
        return Err(Error::Config(format!(
            "inverse grid must contain the midpoint time {t_mid} as a node (odd nt)"
        )));
    }

    let mut p = Vec::with_capacity(3);
    let mut r = Vec::with_capacity(3);
    let mut f = Vec::with_capacity(3);
    for c in 0..3 {
        let fine = &sol.rho[c];
        let sp = inverse.spatial_part();
        let mut pc = ScalarField::zeros(sp);
        for iy in 0..inverse.ny() {
            for ix in 0..inverse.nx() {
                *pc.at_mut(ix, iy, 0) =
                    fine.sample_space_time(inverse.x.coord(ix), inverse.y.coord(iy), t_mid)?;
            }
        }
        p.push(pc);

        let faces = [
            normal_derivative_trace(fine, inverse, Face::West)?,
            normal_derivative_trace(fine, inverse, Face::East)?,
            normal_derivative_trace(fine, inverse, Face::South)?,
            normal_derivative_trace(fine, inverse, Face::North)?,
        ];
        r.push(BoundaryTraces { faces });

        let mut fc = FaceTrace::zeros(Face::East, inverse.y, taxis);
        for it in 0..taxis.n {
            let t = taxis.coord(it);
            for iy in 0..inverse.ny() {
                *fc.at_mut(iy, it) =
                    fine.sample_space_time(inverse.x.max, inverse.y.coord(iy), t)?;
            }
        }
        f.push(fc);
    }

    check_floor(&p[0], &p[1], c_floor)?;
    let p: [ScalarField; 3] = p.try_into().unwrap();
    let r: [BoundaryTraces; 3] = r.try_into().unwrap();
    let f: [FaceTrace; 3] = f.try_into().unwrap();
    Ok(CauchyData {
        p,
        r,
        f,
        delta: 0.0,
        seed: 0,
    })
}

fn perturb(values: &mut [f64], delta: f64, rng: &mut ChaCha8Rng) {
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = delta * sup;
    for v in values.iter_mut() {
        let u: f64 = rng.random_range(-1.0..1.0);
        *v += scale * u;
    }
}

/// Apply the multiplicative-bound noise model. Each of the nine matrices
/// p1..p3, r1..r3, f1..f3 gets its own random substream, split from the
/// master seed in that fixed order (r faces drawn in West, East, South,
/// North order within one stream).
pub fn add_noise(data: &CauchyData, model: &NoiseModel) -> Result<CauchyData> {
    model.validate()?;
    let mut out = data.clone();
    out.delta = model.delta;
    out.seed = model.seed;
    if model.delta == 0.0 {
        return Ok(out);
    }
    let stream_rng = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(k);
        rng
    };
    for (k, pc) in out.p.iter_mut().enumerate() {
        perturb(&mut pc.values, model.delta, &mut stream_rng(k as u64));
    }
    for (k, rc) in out.r.iter_mut().enumerate() {
        // one matrix spanning all faces: a single sup norm and one stream
        let sup = rc
            .faces
            .iter()
            .flat_map(|f| f.values.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rng = stream_rng(3 + k as u64);
        let scale = model.delta * sup;
        for face in rc.faces.iter_mut() {
            for v in face.values.iter_mut() {
                let u: f64 = rng.random_range(-1.0..1.0);
                *v += scale * u;
            }
        }
    }
    for (k, fc) in out.f.iter_mut().enumerate() {
        perturb(&mut fc.values, model.delta, &mut stream_rng(6 + k as u64));
    }
    Ok(out)
}

/// Per-node smoothing-spline time derivatives of a boundary trace.
pub fn smooth_diff_time(trace: &FaceTrace, p_sm: f64) -> Result<(FaceTrace, FaceTrace)> {
    if trace.time.n < 5 {
        return Err(Error::Dimension(format!(
            "smooth_diff_time needs nt >= 5, got {}",
            trace.time.n
        )));
    }
    let times: Vec<f64> = (0..trace.time.n).map(|i| trace.time.coord(i)).collect();
    let mut d1 = trace.clone();
    let mut d2 = trace.clone();
    let mut series = vec![0.0; trace.time.n];
    for is in 0..trace.space.n {
        for it in 0..trace.time.n {
            series[it] = trace.at(is, it);
        }
        let curve = spline::fit(&times, &series, p_sm)?;
        for (it, &t) in times.iter().enumerate() {
            *d1.at_mut(is, it) = curve.deriv1(t);
            *d2.at_mut(is, it) = curve.deriv2(t);
        }
    }
    Ok((d1, d2))
}

/// Smooth a spatial field with the spline machinery: a pass over the rows
/// (along x) followed by a pass over the columns (along y). `p_eff` is the
/// spline smoothing parameter used for both passes.
pub fn smooth_field_2d(f: &ScalarField, p_eff: f64) -> Result<ScalarField> {
    let (nx, ny) = (f.grid.nx(), f.grid.ny());
    let xs: Vec<f64> = (0..nx).map(|i| f.grid.x.coord(i)).collect();
    let ys: Vec<f64> = (0..ny).map(|i| f.grid.y.coord(i)).collect();
    let mut out = f.clone();
    let mut row = vec![0.0; nx];
    for iy in 0..ny {
        for ix in 0..nx {
            row[ix] = out.at(ix, iy, 0);
        }
        let curve = spline::fit(&xs, &row, p_eff)?;
        for ix in 0..nx {
            *out.at_mut(ix, iy, 0) = curve.knot_values()[ix];
        }
    }
    let mut col = vec![0.0; ny];
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = out.at(ix, iy, 0);
        }
        let curve = spline::fit(&ys, &col, p_eff)?;
        for iy in 0..ny {
            *out.at_mut(ix, iy, 0) = curve.knot_values()[iy];
        }
    }
    Ok(out)
}

/// The four data coefficient fields built from the midpoint snapshots:
/// s1 = -1/(p1 p2), s2 = -s1 [d lap p1 - div(p1 q_S)],
/// s3 = 1/p2, s4 = -s3 [d lap p3 - div(p3 q_R)].
///
/// The s4 sign follows from evaluating the recovered-population equation at
/// t = T/2: gamma p2 = v3(T/2) - d lap p3 + div(p3 q_R), so the bracket
/// enters with the opposite sign to the v3 term. (The consistency of the
/// whole transformation is enforced by the residual oracle in the tests.)
pub fn compute_s_coefficients(
    p: &[ScalarField; 3],
    q_s: &VectorField2,
    q_r: &VectorField2,
    d: f64,
    cfg: &ObservationConfig,
) -> Result<[ScalarField; 4]> {
    check_floor(&p[0], &p[1], cfg.c_floor)?;
    // temporary experiment hook
    let scale: f64 = std::env::var("EPI_SPACE_MU_SCALE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let p_eff = if cfg.p_sm >= 1.0 {
        cfg.p_sm
    } else {
        1.0 / (1.0 + scale * (1.0 - cfg.p_sm) / cfg.p_sm)
    };
    let p1s = smooth_field_2d(&p[0], p_eff)?;
    let p2s = smooth_field_2d(&p[1], p_eff)?;
    let p3s = smooth_field_2d(&p[2], p_eff)?;
    check_floor(&p1s, &p2s, cfg.c_floor)?;

    let lap1 = laplacian(&p1s)?;
    let lap3 = laplacian(&p3s)?;
    let div1 = divergence(&p1s, q_s)?;
    let div3 = divergence(&p3s, q_r)?;

    let grid = p[0].grid;
    let n = grid.n_values();
    let mut s1 = ScalarField::zeros(grid);
    let mut s2 = ScalarField::zeros(grid);
    let mut s3 = ScalarField::zeros(grid);
    let mut s4 = ScalarField::zeros(grid);
    for k in 0..n {
        s1.values[k] = -1.0 / (p1s.values[k] * p2s.values[k]);
        s2.values[k] = -s1.values[k] * (d * lap1.values[k] - div1.values[k]);
        s3.values[k] = 1.0 / p2s.values[k];
        s4.values[k] = -s3.values[k] * (d * lap3.values[k] - div3.values[k]);
    }
    for (name, f) in [("s1", &s1), ("s2", &s2), ("s3", &s3), ("s4", &s4)] {
        if let Some(k) = f.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                node: k,
                message: format!("{name} non-finite"),
            });
        }
    }
    Ok([s1, s2, s3, s4])
}

/// Assemble the boundary vectors: the Dirichlet vector on the east face
/// from the f traces and the Neumann vector on the whole boundary from the
/// r traces, components ordered (dt of 1..3, dtt of 1..3).
pub fn build_boundary_vectors(
    data: &CauchyData,
    p_sm: f64,
) -> Result<([FaceTrace; 6], [BoundaryTraces; 6])> {
    let mut g0: Vec<FaceTrace> = Vec::with_capacity(6);
    let mut g0_second: Vec<FaceTrace> = Vec::with_capacity(3);
    for fc in &data.f {
        let (d1, d2) = smooth_diff_time(fc, p_sm)?;
        g0.push(d1);
        g0_second.push(d2);
    }
    g0.extend(g0_second);

    let mut g1: Vec<BoundaryTraces> = Vec::with_capacity(6);
    let mut g1_second: Vec<BoundaryTraces> = Vec::with_capacity(3);
    for rc in &data.r {
        let mut d1_faces = Vec::with_capacity(4);
        let mut d2_faces = Vec::with_capacity(4);
        for face in &rc.faces {
            let (d1, d2) = smooth_diff_time(face, p_sm)?;
            d1_faces.push(d1);
            d2_faces.push(d2);
        }
        g1.push(BoundaryTraces {
            faces: d1_faces.try_into().unwrap(),
        });
        g1_second.push(BoundaryTraces {
            faces: d2_faces.try_into().unwrap(),
        });
    }
    g1.extend(g1_second);

    Ok((g0.try_into().unwrap(), g1.try_into().unwrap()))
}

/// Everything the inversion needs, derived from (possibly noisy) data.
pub fn derive_data(
    data: &CauchyData,
    q_s: &VectorField2,
    q_r: &VectorField2,
    d: f64,
    cfg: &ObservationConfig,
) -> Result<DerivedData> {
    let (g0, g1) = build_boundary_vectors(data, cfg.p_sm)?;
    let s = compute_s_coefficients(&data.p, q_s, q_r, d, cfg)?;
    Ok(DerivedData {
        g0,
        g1,
        s,
        p1: data.p[0].clone(),
        p2: data.p[1].clone(),
        c_floor: cfg.c_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{forward_solve, ForwardOptions, SirParams};
    use approx::assert_relative_eq;

    fn omega_grid(n: usize, nt: usize) -> GridSpec {
        GridSpec::space_time(
            Axis::new(1.0, 2.0, n).unwrap(),
            Axis::new(-0.5, 0.5, n).unwrap(),
            Axis::new(0.0, 1.0, nt).unwrap(),
        )
    }

    fn fine_g_grid(n: usize, nt: usize) -> GridSpec {
        GridSpec::space_time(
            Axis::new(0.45, 2.55, n).unwrap(),
            Axis::new(-1.05, 1.05, n).unwrap(),
            Axis::new(0.0, 1.0, nt).unwrap(),
        )
    }

    fn constant_solution(c: [f64; 3]) -> ForwardSolution {
        let g = fine_g_grid(41, 9);
        ForwardSolution {
            rho: [
                ScalarField::constant(g, c[0]),
                ScalarField::constant(g, c[1]),
                ScalarField::constant(g, c[2]),
            ],
        }
    }

    #[test]
    fn constant_field_gives_constant_p_f_and_zero_r() {
        let sol = constant_solution([0.7, 0.5, 0.2]);
        let inv = omega_grid(9, 5);
        let data = extract_measurements(&sol, &inv, 1e-3).unwrap();
        assert!(data.p[0].values.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        assert!(data.f[1].values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        for rc in &data.r {
            for face in &rc.faces {
                assert!(face.values.iter().all(|&v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn linear_field_has_unit_normal_derivatives() {
        let g = fine_g_grid(41, 9);
        let sol = ForwardSolution {
            rho: [
                ScalarField::from_fn(g, |x, _, _| x),
                ScalarField::constant(g, 1.0),
                ScalarField::constant(g, 0.0),
            ],
        };
        let inv = omega_grid(9, 5);
        let data = extract_measurements(&sol, &inv, 1e-3).unwrap();
        let r0 = &data.r[0];
        assert!(r0.face(Face::East).values.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!(r0.face(Face::West).values.iter().all(|&v| (v + 1.0).abs() < 1e-9));
        assert!(r0.face(Face::South).values.iter().all(|&v| v.abs() < 1e-9));
        assert!(r0.face(Face::North).values.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn floor_violation_is_reported() {
        let sol = constant_solution([0.7, 1e-6, 0.2]);
        let inv = omega_grid(9, 5);
        match extract_measurements(&sol, &inv, 1e-3) {
            Err(Error::DataValidity(_)) => {}
            other => panic!("expected data validity error, got {other:?}"),
        }
    }

    #[test]
    fn midpoint_must_be_a_time_node() {
        let sol = constant_solution([0.7, 0.5, 0.2]);
        let inv = omega_grid(9, 4); // even nt
        assert!(extract_measurements(&sol, &inv, 1e-3).is_err());
    }

    #[test]
    fn paper_scenario_p2_stays_positive() {
        // default parameter set: the infected snapshot stays well above zero
        let g = fine_g_grid(57, 41);
        let params = SirParams::constant(&g, 0.1, (0.2, 0.2), 0.1, 0.1, (0.6, 0.8, 0.0));
        let sol = forward_solve(&params, &g, &ForwardOptions { record_every: 5, ..Default::default() }).unwrap();
        let inv = omega_grid(17, 9);
        let data = extract_measurements(&sol, &inv, 1e-3).unwrap();
        let min_p2 = data.p[1].values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_p2 > 0.1, "min p2 = {min_p2}");
    }

    fn demo_data() -> CauchyData {
        let sol = constant_solution([0.7, 0.5, 0.2]);
        let inv = omega_grid(9, 11);
        let mut data = extract_measurements(&sol, &inv, 1e-3).unwrap();
        // make traces non-trivial so sup norms differ
        for (k, v) in data.f[0].values.iter_mut().enumerate() {
            *v += (k as f64 * 0.01).sin() * 0.1;
        }
        data
    }

    #[test]
    fn zero_noise_is_identity() {
        let data = demo_data();
        let noisy = add_noise(&data, &NoiseModel { delta: 0.0, seed: 42 }).unwrap();
        assert_eq!(data.p[0].values, noisy.p[0].values);
        assert_eq!(data.f[0].values, noisy.f[0].values);
        assert_eq!(data.r[2].faces[3].values, noisy.r[2].faces[3].values);
    }

    #[test]
    fn noise_respects_entrywise_bound_and_seed() {
        let data = demo_data();
        let model = NoiseModel { delta: 0.02, seed: 42 };
        let a = add_noise(&data, &model).unwrap();
        let b = add_noise(&data, &model).unwrap();
        assert_eq!(a.p[0].values, b.p[0].values);
        assert_eq!(a.f[2].values, b.f[2].values);

        let sup = data.f[0].values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in data.f[0].values.iter().zip(&a.f[0].values) {
            assert!((x - y).abs() <= 0.02 * sup + 1e-15);
        }

        // different seed, different draw
        let c = add_noise(&data, &NoiseModel { delta: 0.02, seed: 7 }).unwrap();
        assert_ne!(a.f[0].values, c.f[0].values);
    }

    #[test]
    fn noise_scales_linearly_in_delta_for_fixed_seed() {
        let data = demo_data();
        let a = add_noise(&data, &NoiseModel { delta: 0.01, seed: 5 }).unwrap();
        let b = add_noise(&data, &NoiseModel { delta: 0.02, seed: 5 }).unwrap();
        for ((x, ya), yb) in data.f[0]
            .values
            .iter()
            .zip(&a.f[0].values)
            .zip(&b.f[0].values)
        {
            let da = ya - x;
            let db = yb - x;
            assert_relative_eq!(2.0 * da, db, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_trace_derivatives_exact_at_interpolating_limit() {
        let space = Axis::new(-0.5, 0.5, 5).unwrap();
        let time = Axis::new(0.0, 1.0, 11).unwrap();
        let mut trace = FaceTrace::zeros(Face::East, space, time);
        for it in 0..11 {
            let t = time.coord(it);
            for is in 0..5 {
                *trace.at_mut(is, it) = t * t;
            }
        }
        let (d1, d2) = smooth_diff_time(&trace, 1.0).unwrap();
        for it in 0..11 {
            let t = time.coord(it);
            for is in 0..5 {
                assert_relative_eq!(d1.at(is, it), 2.0 * t, epsilon = 1e-9);
                assert_relative_eq!(d2.at(is, it), 2.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constant_trace_derivatives_vanish_under_any_smoothing() {
        let space = Axis::new(-0.5, 0.5, 4).unwrap();
        let time = Axis::new(0.0, 1.0, 11).unwrap();
        let mut trace = FaceTrace::zeros(Face::East, space, time);
        trace.values.iter_mut().for_each(|v| *v = 3.3);
        for p in [0.5, 0.99, 1.0] {
            let (d1, d2) = smooth_diff_time(&trace, p).unwrap();
            assert!(d1.values.iter().all(|&v| v.abs() < 1e-9));
            assert!(d2.values.iter().all(|&v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn noisy_sine_derivative_stays_in_band() {
        // Monte-Carlo band: 11 samples of sin(2 pi t) with 2% noise; the
        // spline derivative must track 2 pi cos(2 pi t) within 0.5.
        use std::f64::consts::TAU;
        let space = Axis::new(0.0, 1.0, 2).unwrap();
        let time = Axis::new(0.0, 1.0, 11).unwrap();
        let cfg = ObservationConfig::default();
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = FaceTrace::zeros(Face::East, space, time);
            for it in 0..11 {
                let t = time.coord(it);
                let clean = (TAU * t).sin();
                for is in 0..2 {
                    *trace.at_mut(is, it) = clean + 0.02 * rng.random_range(-1.0..1.0);
                }
            }
            let (d1, _) = smooth_diff_time(&trace, cfg.p_sm).unwrap();
            for it in 0..11 {
                let t = time.coord(it);
                let err = (d1.at(0, it) - TAU * (TAU * t).cos()).abs();
                worst = worst.max(err);
            }
        }
        assert!(worst < 0.5, "worst derivative error {worst}");
    }

    fn spatial_omega(n: usize) -> GridSpec {
        GridSpec::spatial(
            Axis::new(1.0, 2.0, n).unwrap(),
            Axis::new(-0.5, 0.5, n).unwrap(),
        )
    }

    #[test]
    fn s_coefficients_for_constant_snapshots() {
        let g = spatial_omega(17);
        let p = [
            ScalarField::constant(g, 0.5),
            ScalarField::constant(g, 0.5),
            ScalarField::constant(g, 0.2),
        ];
        let q = VectorField2::constant(g, 0.2, 0.2);
        let cfg = ObservationConfig::default();
        let s = compute_s_coefficients(&p, &q, &q, 0.1, &cfg).unwrap();
        for v in &s[0].values {
            assert_relative_eq!(*v, -4.0, epsilon = 1e-9); // -1/c0^2
        }
        for v in &s[1].values {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-9);
        }
        for v in &s[2].values {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-9); // 1/p2
        }
    }

    #[test]
    fn s2_matches_manufactured_quadratic() {
        // p1 = x^2, p2 = 1, q_S = (1,0), d = 0.1:
        // s1 = -1/x^2, s2 = -s1 (0.2 - 2x) wait: d lap p1 = 0.2,
        // div(p1 q_S) = 2x, so s2 = -s1 (0.2 - 2x).
        let g = spatial_omega(33);
        let p = [
            ScalarField::from_fn(g, |x, _, _| x * x),
            ScalarField::constant(g, 1.0),
            ScalarField::constant(g, 0.0),
        ];
        let q = VectorField2::constant(g, 1.0, 0.0);
        let cfg = ObservationConfig {
            p_sm: 1.0,
            c_floor: 1e-3,
        };
        let s = compute_s_coefficients(&p, &q, &q, 0.1, &cfg).unwrap();
        for iy in 0..33 {
            for ix in 0..33 {
                let x = g.x.coord(ix);
                let s1 = -1.0 / (x * x);
                let want = -s1 * (0.2 - 2.0 * x);
                assert_relative_eq!(s[1].at(ix, iy, 0), want, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn s_sign_invariants_hold() {
        let g = spatial_omega(9);
        let p = [
            ScalarField::from_fn(g, |x, y, _| 0.4 + 0.1 * (x + y)),
            ScalarField::from_fn(g, |x, _, _| 0.6 + 0.05 * x),
            ScalarField::constant(g, 0.2),
        ];
        let q = VectorField2::constant(g, 0.2, 0.2);
        let s = compute_s_coefficients(&p, &q, &q, 0.1, &ObservationConfig::default()).unwrap();
        assert!(s[0].values.iter().all(|&v| v < 0.0));
        assert!(s[2].values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn boundary_vectors_of_linear_traces() {
        let sol = constant_solution([0.7, 0.5, 0.2]);
        let inv = omega_grid(9, 11);
        let mut data = extract_measurements(&sol, &inv, 1e-3).unwrap();
        // f_j linear in t: dt constant, dtt zero
        for j in 0..3 {
            let slope = 0.3 + j as f64 * 0.1;
            for it in 0..11 {
                let t = data.f[j].time.coord(it);
                for is in 0..9 {
                    *data.f[j].at_mut(is, it) = 1.0 + slope * t;
                }
            }
        }
        let (g0, g1) = build_boundary_vectors(&data, 1.0).unwrap();
        for j in 0..3 {
            let slope = 0.3 + j as f64 * 0.1;
            assert!(g0[j].values.iter().all(|&v| (v - slope).abs() < 1e-8));
            assert!(g0[j + 3].values.iter().all(|&v| v.abs() < 1e-7));
        }
        // r = 0 gives G1 = 0
        for comp in &g1 {
            for face in &comp.faces {
                assert!(face.values.iter().all(|&v| v.abs() < 1e-8));
            }
        }
    }
}
