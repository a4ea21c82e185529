//! End-to-end orchestration: named scenarios, bundle directories, and
//! content-hash provenance chaining.
//!
//! Every stage writes its outputs plus a `manifest.json` recording the
//! configuration, a hash of the payload files, and the hash of the bundle
//! it consumed. Timestamps live in a `manifest.time` sidecar so reruns with
//! identical inputs produce byte-identical bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fld;
use crate::forward::{forward_solve, ForwardOptions, ForwardSolution, SirParams};
use crate::grid::{Axis, Face, GridSpec, ScalarField, VectorField2};
use crate::inversion::{ccmm_iterate, InverseConfig, Velocities, WField};
use crate::observation::{
    add_noise, derive_data, extract_measurements, BoundaryTraces, CauchyData, DerivedData,
    FaceTrace, NoiseModel, ObservationConfig,
};
use crate::phantom::{build_phantom, default_frame, rasterize_mask, Inclusion, PhantomSpec, Target};
use crate::recon::{error_metrics, reconstruct_coefficients, MaskInfo, Metrics, ReconMode};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

fn default_one() -> f64 {
    1.0
}

/// Flat configuration of a full pipeline run. Every key has a default
/// matching the shipped reference scenario, so configs may be partial.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: String,

    // domain geometry
    pub omega_x0: f64,
    pub omega_x1: f64,
    pub omega_y0: f64,
    pub omega_y1: f64,
    /// The forward rectangle G extends Omega by this margin on every side.
    pub g_margin: f64,
    #[serde(default = "default_one")]
    pub t_final: f64,

    // phantom
    pub beta_bg: f64,
    pub gamma_bg: f64,
    pub beta_letter: Option<String>,
    pub beta_inside: f64,
    pub gamma_letter: Option<String>,
    pub gamma_inside: f64,

    // forward solver
    pub fine_nx: usize,
    pub fine_ny: usize,
    pub fine_nt: usize,
    pub d: f64,
    pub qx: f64,
    pub qy: f64,
    pub rho0_s: f64,
    pub rho0_i: f64,
    pub rho0_r: f64,

    // inverse grid
    pub inv_nx: usize,
    pub inv_ny: usize,
    pub inv_nt: usize,

    // observation
    pub delta: f64,
    pub seed: u64,
    pub p_sm: f64,
    pub c_floor: f64,

    // inversion
    pub lambda: f64,
    pub xi: f64,
    pub kappa_n: Option<f64>,
    pub kappa_c: f64,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub ls_tol: f64,
    pub ls_max_iter: usize,

    // reconstruction
    pub recon_mode: ReconMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "custom".into(),
            omega_x0: 1.0,
            omega_x1: 2.0,
            omega_y0: -0.5,
            omega_y1: 0.5,
            g_margin: 0.55,
            t_final: 1.0,
            beta_bg: 0.1,
            gamma_bg: 0.1,
            beta_letter: None,
            beta_inside: 0.6,
            gamma_letter: None,
            gamma_inside: 0.4,
            fine_nx: 337,
            fine_ny: 337,
            fine_nt: 241,
            d: 0.1,
            qx: 0.2,
            qy: 0.2,
            rho0_s: 0.6,
            rho0_i: 0.8,
            rho0_r: 0.0,
            inv_nx: 33,
            inv_ny: 33,
            inv_nt: 11,
            delta: 0.0,
            seed: 42,
            p_sm: 0.99,
            c_floor: 1e-3,
            lambda: 5.0,
            xi: 1e-2,
            kappa_n: None,
            kappa_c: 0.0,
            stop_tol: 1e-5,
            max_iter: 10,
            ls_tol: 1e-9,
            ls_max_iter: 60_000,
            recon_mode: ReconMode::Midpoint,
        }
    }
}

/// The named scenarios; letter assignments and inside values of the
/// reference experiments.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        scenario: name.to_string(),
        ..Default::default()
    };
    match name {
        "A-M" => {
            cfg.gamma_letter = Some("A".into());
            cfg.gamma_inside = 0.4;
            cfg.beta_letter = Some("M".into());
            cfg.beta_inside = 0.6;
            cfg.delta = 0.0;
        }
        "Omega-B-low" => {
            cfg.gamma_letter = Some("Omega".into());
            cfg.gamma_inside = 0.4;
            cfg.beta_letter = Some("B".into());
            cfg.beta_inside = 0.6;
            cfg.delta = 0.02;
        }
        "Omega-B-high" => {
            cfg.gamma_letter = Some("Omega".into());
            cfg.gamma_inside = 0.8;
            cfg.beta_letter = Some("B".into());
            cfg.beta_inside = 1.0;
            cfg.delta = 0.02;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (available: A-M, Omega-B-low, Omega-B-high)"
            )))
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega_x0 >= self.omega_x1 || self.omega_y0 >= self.omega_y1 {
            return Err(Error::Config("omega rectangle is degenerate".into()));
        }
        if self.g_margin <= 0.0 {
            return Err(Error::Config("g_margin must be positive".into()));
        }
        if self.inv_nt % 2 == 0 {
            return Err(Error::Config(format!(
                "inv_nt = {} must be odd so that T/2 is a grid node",
                self.inv_nt
            )));
        }
        if self.inv_nx < 4 || self.inv_ny < 4 || self.inv_nt < 5 {
            return Err(Error::Config("inverse grid too small (needs 4x4x5)".into()));
        }
        if (self.fine_nt - 1) % (self.inv_nt - 1) != 0 {
            return Err(Error::Config(format!(
                "fine_nt - 1 = {} must be a multiple of inv_nt - 1 = {}",
                self.fine_nt - 1,
                self.inv_nt - 1
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta = {} outside [0, 1)", self.delta)));
        }
        if !(0.0 < self.p_sm && self.p_sm <= 1.0) {
            return Err(Error::Config(format!("p_sm = {} outside (0, 1]", self.p_sm)));
        }
        self.inverse_config().validate()?;
        Ok(())
    }

    pub fn fine_grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::space_time(
            Axis::new(self.omega_x0 - self.g_margin, self.omega_x1 + self.g_margin, self.fine_nx)?,
            Axis::new(self.omega_y0 - self.g_margin, self.omega_y1 + self.g_margin, self.fine_ny)?,
            Axis::new(0.0, self.t_final, self.fine_nt)?,
        ))
    }

    pub fn inverse_grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::space_time(
            Axis::new(self.omega_x0, self.omega_x1, self.inv_nx)?,
            Axis::new(self.omega_y0, self.omega_y1, self.inv_ny)?,
            Axis::new(0.0, self.t_final, self.inv_nt)?,
        ))
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let frame = default_frame(
            (self.omega_x0, self.omega_x1),
            (self.omega_y0, self.omega_y1),
        );
        let mut inclusions = Vec::new();
        if let Some(letter) = &self.gamma_letter {
            inclusions.push(Inclusion {
                target: Target::Gamma,
                letter: letter.parse()?,
                value: self.gamma_inside,
                frame,
            });
        }
        if let Some(letter) = &self.beta_letter {
            inclusions.push(Inclusion {
                target: Target::Beta,
                letter: letter.parse()?,
                value: self.beta_inside,
                frame,
            });
        }
        Ok(PhantomSpec {
            beta_bg: self.beta_bg,
            gamma_bg: self.gamma_bg,
            omega_x: (self.omega_x0, self.omega_x1),
            omega_y: (self.omega_y0, self.omega_y1),
            inclusions,
        })
    }

    pub fn observation_config(&self) -> ObservationConfig {
        ObservationConfig {
            p_sm: self.p_sm,
            c_floor: self.c_floor,
        }
    }

    pub fn inverse_config(&self) -> InverseConfig {
        InverseConfig {
            lambda: self.lambda,
            xi: self.xi,
            kappa_n: self.kappa_n,
            kappa_c: self.kappa_c,
            reg_order: 2,
            stop_tol: self.stop_tol,
            max_iter: self.max_iter,
            ls_tol: self.ls_tol,
            ls_max_iter: self.ls_max_iter,
            seed: self.seed,
        }
    }

    pub fn velocities(&self, grid: &GridSpec) -> Velocities {
        Velocities::constant(grid, (self.qx, self.qy))
    }

    /// True coefficients and masks rasterized on a spatial grid.
    pub fn truth_on(&self, grid: &GridSpec) -> Result<(ScalarField, ScalarField, Vec<bool>, Vec<bool>)> {
        let spec = self.phantom_spec()?;
        let (beta, gamma) = build_phantom(&spec, grid)?;
        let beta_mask = rasterize_mask(&spec, Target::Beta, grid);
        let gamma_mask = rasterize_mask(&spec, Target::Gamma, grid);
        Ok((beta, gamma, beta_mask, gamma_mask))
    }
}

// ---------------------------------------------------------------------------
// Bundle plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Hash of the payload files of the bundle this stage consumed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    /// Hash of this bundle's payload files (manifest and sidecars excluded).
    pub bundle_hash: String,
}

/// Hash the payload of a bundle directory: every regular file except
/// `manifest.json` and `*.time`, in name order.
pub fn bundle_hash(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.file_name().map_or(false, |n| {
                    n != "manifest.json" && !n.to_string_lossy().ends_with(".time")
                })
        })
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for path in names {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = fs::read(&path)?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(
    dir: &Path,
    stage: &str,
    cfg: &RunConfig,
    input_hash: Option<String>,
) -> Result<Manifest> {
    let manifest = Manifest {
        stage: stage.to_string(),
        version: VERSION.to_string(),
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        input_hash,
        bundle_hash: bundle_hash(dir)?,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(dir.join("manifest.time"), format!("{now}\n"))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::Provenance(format!(
            "no manifest.json in {}",
            dir.display()
        )));
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(m)
}

/// Verify a bundle against its recorded hash and return it for chaining.
pub fn verify_bundle(dir: &Path) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    let actual = bundle_hash(dir)?;
    if actual != manifest.bundle_hash {
        return Err(Error::Provenance(format!(
            "bundle {} content hash {} does not match the recorded {}",
            dir.display(),
            actual,
            manifest.bundle_hash
        )));
    }
    Ok(manifest)
}

fn face_tag(face: Face) -> &'static str {
    match face {
        Face::West => "west",
        Face::East => "east",
        Face::South => "south",
        Face::North => "north",
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Simulate the forward problem and write the population densities (on the
/// fine spatial grid at the observation times) plus the ground truth.
pub fn run_forward(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let fine = cfg.fine_grid()?;
    let (beta, gamma) = build_phantom(&cfg.phantom_spec()?, &fine)?;
    let sp = fine.spatial_part();
    let params = SirParams {
        d: cfg.d,
        q_s: VectorField2::constant(sp, cfg.qx, cfg.qy),
        q_i: VectorField2::constant(sp, cfg.qx, cfg.qy),
        q_r: VectorField2::constant(sp, cfg.qx, cfg.qy),
        beta: beta.clone(),
        gamma: gamma.clone(),
        rho0: [
            ScalarField::constant(sp, cfg.rho0_s),
            ScalarField::constant(sp, cfg.rho0_i),
            ScalarField::constant(sp, cfg.rho0_r),
        ],
    };
    let opts = ForwardOptions {
        record_every: (cfg.fine_nt - 1) / (cfg.inv_nt - 1),
        ..Default::default()
    };
    let sol = forward_solve(&params, &fine, &opts)?;

    for (name, field) in [("rho_s", &sol.rho[0]), ("rho_i", &sol.rho[1]), ("rho_r", &sol.rho[2])] {
        fld::write_field(field, &out.join(format!("{name}.fld")))?;
    }
    fld::write_field(&beta, &out.join("beta_true_fine.fld"))?;
    fld::write_field(&gamma, &out.join("gamma_true_fine.fld"))?;
    // truth on the inverse spatial grid, for the report stage
    let inv_sp = cfg.inverse_grid()?.spatial_part();
    let (beta_inv, gamma_inv, bmask, gmask) = cfg.truth_on(&inv_sp)?;
    fld::write_field(&beta_inv, &out.join("beta_true_inv.fld"))?;
    fld::write_field(&gamma_inv, &out.join("gamma_true_inv.fld"))?;
    let mask_field = |m: &[bool]| ScalarField {
        grid: inv_sp,
        values: m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    };
    fld::write_field(&mask_field(&bmask), &out.join("beta_mask_inv.fld"))?;
    fld::write_field(&mask_field(&gmask), &out.join("gamma_mask_inv.fld"))?;
    write_manifest(out, "forward", cfg, None)
}

fn read_forward_solution(dir: &Path) -> Result<ForwardSolution> {
    Ok(ForwardSolution {
        rho: [
            fld::read_field(&dir.join("rho_s.fld"))?,
            fld::read_field(&dir.join("rho_i.fld"))?,
            fld::read_field(&dir.join("rho_r.fld"))?,
        ],
    })
}

/// Extract, perturb, smooth, and differentiate the measurements.
pub fn run_observe(cfg: &RunConfig, forward_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let upstream = verify_bundle(forward_dir)?;
    fs::create_dir_all(out)?;
    let sol = read_forward_solution(forward_dir)?;
    let inverse = cfg.inverse_grid()?;
    let clean = extract_measurements(&sol, &inverse, cfg.c_floor)?;
    let noisy = add_noise(
        &clean,
        &NoiseModel {
            delta: cfg.delta,
            seed: cfg.seed,
        },
    )?;
    let vel = cfg.velocities(&inverse);
    let derived = derive_data(&noisy, &vel.q_s, &vel.q_r, cfg.d, &cfg.observation_config())?;

    for (tag, data) in [("clean", &clean), ("noisy", &noisy)] {
        for j in 0..3 {
            fld::write_field(&data.p[j], &out.join(format!("p{}_{tag}.fld", j + 1)))?;
            fld::write_field(
                &data.f[j].to_matrix_field(),
                &out.join(format!("f{}_{tag}.fld", j + 1)),
            )?;
            for face in Face::ALL {
                fld::write_field(
                    &data.r[j].face(face).to_matrix_field(),
                    &out.join(format!("r{}_{}_{tag}.fld", j + 1, face_tag(face))),
                )?;
            }
        }
    }
    for k in 0..4 {
        fld::write_field(&derived.s[k], &out.join(format!("s{}.fld", k + 1)))?;
    }
    for c in 0..6 {
        fld::write_field(
            &derived.g0[c].to_matrix_field(),
            &out.join(format!("g0_c{}.fld", c + 1)),
        )?;
        for face in Face::ALL {
            fld::write_field(
                &derived.g1[c].face(face).to_matrix_field(),
                &out.join(format!("g1_c{}_{}.fld", c + 1, face_tag(face))),
            )?;
        }
    }
    write_manifest(out, "observe", cfg, Some(upstream.bundle_hash))
}

/// Rebuild the derived data of an observation bundle.
pub fn read_derived_data(dir: &Path, cfg: &RunConfig) -> Result<DerivedData> {
    let inverse = cfg.inverse_grid()?;
    let read_trace = |name: String, face: Face| -> Result<FaceTrace> {
        let f = fld::read_field(&dir.join(name))?;
        Ok(FaceTrace::from_matrix_field(face, &f))
    };
    let mut g0 = Vec::with_capacity(6);
    let mut g1 = Vec::with_capacity(6);
    for c in 0..6 {
        g0.push(read_trace(format!("g0_c{}.fld", c + 1), Face::East)?);
        let faces = [
            read_trace(format!("g1_c{}_west.fld", c + 1), Face::West)?,
            read_trace(format!("g1_c{}_east.fld", c + 1), Face::East)?,
            read_trace(format!("g1_c{}_south.fld", c + 1), Face::South)?,
            read_trace(format!("g1_c{}_north.fld", c + 1), Face::North)?,
        ];
        g1.push(BoundaryTraces { faces });
    }
    let s = [
        fld::read_field(&dir.join("s1.fld"))?,
        fld::read_field(&dir.join("s2.fld"))?,
        fld::read_field(&dir.join("s3.fld"))?,
        fld::read_field(&dir.join("s4.fld"))?,
    ];
    let p1 = fld::read_field(&dir.join("p1_noisy.fld"))?;
    let p2 = fld::read_field(&dir.join("p2_noisy.fld"))?;
    let taxis = inverse.time_axis()?;
    for t in &g0 {
        if t.time != taxis || t.space != inverse.y {
            return Err(Error::Provenance(
                "observation bundle grids do not match the configured inverse grid".into(),
            ));
        }
    }
    Ok(DerivedData {
        g0: g0.try_into().unwrap(),
        g1: g1.try_into().unwrap(),
        s,
        p1,
        p2,
        c_floor: cfg.c_floor,
    })
}

/// Read back the noisy Cauchy data of an observation bundle.
pub fn read_cauchy_data(dir: &Path, cfg: &RunConfig, tag: &str) -> Result<CauchyData> {
    let inverse = cfg.inverse_grid()?;
    let _ = inverse;
    let mut p = Vec::with_capacity(3);
    let mut r = Vec::with_capacity(3);
    let mut f = Vec::with_capacity(3);
    for j in 0..3 {
        p.push(fld::read_field(&dir.join(format!("p{}_{tag}.fld", j + 1)))?);
        let faces = [
            FaceTrace::from_matrix_field(
                Face::West,
                &fld::read_field(&dir.join(format!("r{}_west_{tag}.fld", j + 1)))?,
            ),
            FaceTrace::from_matrix_field(
                Face::East,
                &fld::read_field(&dir.join(format!("r{}_east_{tag}.fld", j + 1)))?,
            ),
            FaceTrace::from_matrix_field(
                Face::South,
                &fld::read_field(&dir.join(format!("r{}_south_{tag}.fld", j + 1)))?,
            ),
            FaceTrace::from_matrix_field(
                Face::North,
                &fld::read_field(&dir.join(format!("r{}_north_{tag}.fld", j + 1)))?,
            ),
        ];
        r.push(BoundaryTraces { faces });
        f.push(FaceTrace::from_matrix_field(
            Face::East,
            &fld::read_field(&dir.join(format!("f{}_{tag}.fld", j + 1)))?,
        ));
    }
    Ok(CauchyData {
        p: p.try_into().unwrap(),
        r: r.try_into().unwrap(),
        f: f.try_into().unwrap(),
        delta: cfg.delta,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertSummary {
    pub iterations: usize,
    pub converged: bool,
    pub stagnation: bool,
    pub final_step_rms: f64,
}

/// Run the contraction loop on an observation bundle.
pub fn run_invert(cfg: &RunConfig, observe_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let upstream = verify_bundle(observe_dir)?;
    fs::create_dir_all(out)?;
    let data = read_derived_data(observe_dir, cfg)?;
    let inverse = cfg.inverse_grid()?;
    let vel = cfg.velocities(&inverse);
    let result = ccmm_iterate(&data, &vel, cfg.d, &inverse, &cfg.inverse_config())?;

    for (k, comp) in result.w.comps.iter().enumerate() {
        fld::write_field(comp, &out.join(format!("w{}.fld", k + 1)))?;
    }
    // carry the s-fields forward so the report stage is self-contained
    for k in 0..4 {
        fld::write_field(&data.s[k], &out.join(format!("s{}.fld", k + 1)))?;
    }
    let mut csv = String::from(
        "iter,step_rms,functional,compat_defect,b_time_variance,gamma_time_variance,w_norm,ls_iterations\n",
    );
    for rec in &result.history {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rec.iter,
            rec.step_rms,
            rec.functional,
            rec.compat_defect,
            rec.b_time_variance,
            rec.gamma_time_variance,
            rec.w_norm,
            rec.ls_iterations
        ));
    }
    fs::write(out.join("history.csv"), csv)?;
    let summary = InvertSummary {
        iterations: result.steps(),
        converged: result.converged,
        stagnation: result.stagnation,
        final_step_rms: result.history.last().map(|r| r.step_rms).unwrap_or(f64::NAN),
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    write_manifest(out, "invert", cfg, Some(upstream.bundle_hash))
}

pub fn read_wfield(dir: &Path) -> Result<WField> {
    let comps: Vec<ScalarField> = (1..=6)
        .map(|k| fld::read_field(&dir.join(format!("w{k}.fld"))))
        .collect::<Result<_>>()?;
    Ok(WField {
        comps: comps.try_into().unwrap(),
    })
}

/// Reconstruct the coefficients, score them, and export plot matrices.
pub fn run_report(cfg: &RunConfig, invert_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let upstream = verify_bundle(invert_dir)?;
    fs::create_dir_all(out)?;
    let w = read_wfield(invert_dir)?;
    let s = [
        fld::read_field(&invert_dir.join("s1.fld"))?,
        fld::read_field(&invert_dir.join("s2.fld"))?,
        fld::read_field(&invert_dir.join("s3.fld"))?,
        fld::read_field(&invert_dir.join("s4.fld"))?,
    ];
    let rec = reconstruct_coefficients(&w, &s, cfg.recon_mode)?;
    let inv_sp = cfg.inverse_grid()?.spatial_part();
    let (beta_true, gamma_true, bmask, gmask) = cfg.truth_on(&inv_sp)?;
    let beta_info = MaskInfo {
        mask: bmask,
        inside_value: cfg.beta_inside,
        background: cfg.beta_bg,
    };
    let gamma_info = MaskInfo {
        mask: gmask,
        inside_value: cfg.gamma_inside,
        background: cfg.gamma_bg,
    };
    let has_beta_mask = cfg.beta_letter.is_some();
    let has_gamma_mask = cfg.gamma_letter.is_some();
    let metrics = error_metrics(
        &rec,
        &beta_true,
        &gamma_true,
        has_beta_mask.then_some(&beta_info),
        has_gamma_mask.then_some(&gamma_info),
    )?;

    fld::write_field(&rec.beta, &out.join("beta_rec.fld"))?;
    fld::write_field(&rec.gamma, &out.join("gamma_rec.fld"))?;
    fld::write_field(&rec.beta_tvar, &out.join("beta_tvar.fld"))?;
    fld::write_field(&rec.gamma_tvar, &out.join("gamma_tvar.fld"))?;
    crate::recon::export_heatmaps(
        &[
            ("beta_rec", &rec.beta),
            ("gamma_rec", &rec.gamma),
            ("beta_true", &beta_true),
            ("gamma_true", &gamma_true),
        ],
        out,
    )?;
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    write_manifest(out, "report", cfg, Some(upstream.bundle_hash))
}

pub fn read_metrics(report_dir: &Path) -> Result<Metrics> {
    let m: Metrics = serde_json::from_str(&fs::read_to_string(report_dir.join("metrics.json"))?)?;
    Ok(m)
}

/// Run all four stages under one root directory; returns the metrics.
pub fn run_pipeline(cfg: &RunConfig, root: &Path) -> Result<Metrics> {
    let fdir = root.join("forward");
    let odir = root.join("observe");
    let idir = root.join("invert");
    let rdir = root.join("report");
    run_forward(cfg, &fdir)?;
    run_observe(cfg, &fdir, &odir)?;
    run_invert(cfg, &odir, &idir)?;
    run_report(cfg, &idir, &rdir)?;
    read_metrics(&rdir)
}

/// Rerun the inverse side for several lambda values against one shared
/// forward/observation bundle; returns (lambda -> metrics) and writes a
/// summary CSV.
pub fn sweep_lambda(cfg: &RunConfig, lambdas: &[f64], root: &Path) -> Result<BTreeMap<String, Metrics>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    let fdir = root.join("forward");
    let odir = root.join("observe");
    run_forward(cfg, &fdir)?;
    run_observe(cfg, &fdir, &odir)?;
    let mut out = BTreeMap::new();
    let mut csv = String::from("lambda,rel_l2_beta,rel_l2_gamma,iterations\n");
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.lambda = lambda;
        let idir = root.join(format!("invert_lambda{lambda}"));
        let rdir = root.join(format!("report_lambda{lambda}"));
        run_invert(&c, &odir, &idir)?;
        run_report(&c, &idir, &rdir)?;
        let metrics = read_metrics(&rdir)?;
        let summary: InvertSummary =
            serde_json::from_str(&fs::read_to_string(idir.join("summary.json"))?)?;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            lambda, metrics.rel_l2_beta, metrics.rel_l2_gamma, summary.iterations
        ));
        out.insert(format!("{lambda}"), metrics);
    }
    fs::write(root.join("sweep_lambda.csv"), csv)?;
    Ok(out)
}

/// Rerun observation + inversion for several noise levels against one
/// shared forward solve.
pub fn sweep_noise(cfg: &RunConfig, deltas: &[f64], root: &Path) -> Result<BTreeMap<String, Metrics>> {
    if deltas.is_empty() {
        return Err(Error::Config("empty delta list".into()));
    }
    let fdir = root.join("forward");
    run_forward(cfg, &fdir)?;
    let mut out = BTreeMap::new();
    let mut csv = String::from("delta,rel_l2_beta,rel_l2_gamma,jaccard_beta,jaccard_gamma\n");
    for &delta in deltas {
        let mut c = cfg.clone();
        c.delta = delta;
        let odir = root.join(format!("observe_delta{delta}"));
        let idir = root.join(format!("invert_delta{delta}"));
        let rdir = root.join(format!("report_delta{delta}"));
        run_observe(&c, &fdir, &odir)?;
        run_invert(&c, &odir, &idir)?;
        run_report(&c, &idir, &rdir)?;
        let metrics = read_metrics(&rdir)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            delta,
            metrics.rel_l2_beta,
            metrics.rel_l2_gamma,
            metrics.jaccard_beta.map(|v| v.to_string()).unwrap_or_default(),
            metrics.jaccard_gamma.map(|v| v.to_string()).unwrap_or_default(),
        ));
        out.insert(format!("{delta}"), metrics);
    }
    fs::write(root.join("sweep_noise.csv"), csv)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_reference_values() {
        let am = preset("A-M").unwrap();
        assert_eq!(am.gamma_letter.as_deref(), Some("A"));
        assert_eq!(am.gamma_inside, 0.4);
        assert_eq!(am.beta_letter.as_deref(), Some("M"));
        assert_eq!(am.beta_inside, 0.6);
        let high = preset("Omega-B-high").unwrap();
        assert_eq!(high.gamma_inside, 0.8);
        assert_eq!(high.beta_inside, 1.0);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = RunConfig::default();
        cfg.inv_nt = 10; // even
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.fine_nt = 240; // (240-1) not multiple of 10
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"delta": 0.02, "lambda": 3.0}"#).unwrap();
        assert_eq!(cfg.delta, 0.02);
        assert_eq!(cfg.lambda, 3.0);
        assert_eq!(cfg.inv_nx, 33);
        cfg.validate().unwrap();
    }

    #[test]
    fn bundle_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.bin"), b"hello").unwrap();
        std::fs::write(dir.path().join("manifest.time"), b"123").unwrap();
        let h1 = bundle_hash(dir.path()).unwrap();
        // sidecar changes do not matter
        std::fs::write(dir.path().join("manifest.time"), b"456").unwrap();
        assert_eq!(h1, bundle_hash(dir.path()).unwrap());
        // payload changes do
        std::fs::write(dir.path().join("a.bin"), b"hellX").unwrap();
        assert_ne!(h1, bundle_hash(dir.path()).unwrap());
    }
}
