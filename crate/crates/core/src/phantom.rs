//! Letter-shaped coefficient phantoms.
//!
//! True coefficients are piecewise constant: a background value everywhere
//! and a different value inside letter-like inclusions (non-convex shapes
//! with voids). Glyphs are defined in unit coordinates as unions of thick
//! strokes (capsules) and annulus sectors, then placed inside Omega through
//! a rectangular frame and rasterized on any target grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Letter {
    A,
    M,
    B,
    Omega,
}

impl std::str::FromStr for Letter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Letter::A),
            "M" | "m" => Ok(Letter::M),
            "B" | "b" => Ok(Letter::B),
            "Omega" | "omega" | "O" => Ok(Letter::Omega),
            other => Err(Error::Config(format!("unknown letter '{other}'"))),
        }
    }
}

/// Which coefficient an inclusion modifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Beta,
    Gamma,
}

/// Placement rectangle in domain coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Inclusion {
    pub target: Target,
    pub letter: Letter,
    pub value: f64,
    pub frame: Frame,
}

/// Background values plus an ordered inclusion list; a later inclusion wins
/// where two overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub beta_bg: f64,
    pub gamma_bg: f64,
    /// The rectangle Omega = (omega_x0, omega_x1) x (omega_y0, omega_y1)
    /// inside which inclusions must lie.
    pub omega_x: (f64, f64),
    pub omega_y: (f64, f64),
    pub inclusions: Vec<Inclusion>,
}

enum Shape {
    Capsule {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        w: f64,
    },
    AnnulusSector {
        cx: f64,
        cy: f64,
        r_in: f64,
        r_out: f64,
        /// radians; the sector covers angles in [a0, a1]
        a0: f64,
        a1: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Capsule { x0, y0, x1, y1, w } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
                };
                let (px, py) = (x0 + t * dx, y0 + t * dy);
                (x - px).powi(2) + (y - py).powi(2) <= w * w
            }
            Shape::AnnulusSector {
                cx,
                cy,
                r_in,
                r_out,
                a0,
                a1,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let r = (dx * dx + dy * dy).sqrt();
                if r < r_in || r > r_out {
                    return false;
                }
                let phi = dy.atan2(dx);
                [phi, phi + std::f64::consts::TAU, phi - std::f64::consts::TAU]
                    .iter()
                    .any(|&a| a >= a0 && a <= a1)
            }
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Capsule { x0, y0, x1, y1, w } => {
                (x0.min(x1) - w, x0.max(x1) + w, y0.min(y1) - w, y0.max(y1) + w)
            }
            Shape::AnnulusSector {
                cx, cy, r_out, ..
            } => (cx - r_out, cx + r_out, cy - r_out, cy + r_out),
        }
    }
}

fn deg(d: f64) -> f64 {
    d.to_radians()
}

fn glyph_shapes(letter: Letter) -> Vec<Shape> {
    use Shape::*;
    match letter {
        Letter::A => vec![
            Capsule { x0: 0.12, y0: 0.06, x1: 0.50, y1: 0.93, w: 0.075 },
            Capsule { x0: 0.88, y0: 0.06, x1: 0.50, y1: 0.93, w: 0.075 },
            Capsule { x0: 0.30, y0: 0.40, x1: 0.70, y1: 0.40, w: 0.065 },
        ],
        Letter::M => vec![
            Capsule { x0: 0.10, y0: 0.07, x1: 0.10, y1: 0.93, w: 0.068 },
            Capsule { x0: 0.90, y0: 0.07, x1: 0.90, y1: 0.93, w: 0.068 },
            Capsule { x0: 0.10, y0: 0.93, x1: 0.50, y1: 0.42, w: 0.068 },
            Capsule { x0: 0.90, y0: 0.93, x1: 0.50, y1: 0.42, w: 0.068 },
        ],
        Letter::B => vec![
            Capsule { x0: 0.18, y0: 0.07, x1: 0.18, y1: 0.93, w: 0.066 },
            Capsule { x0: 0.18, y0: 0.88, x1: 0.40, y1: 0.88, w: 0.058 },
            Capsule { x0: 0.18, y0: 0.50, x1: 0.40, y1: 0.50, w: 0.058 },
            Capsule { x0: 0.18, y0: 0.12, x1: 0.40, y1: 0.12, w: 0.058 },
            AnnulusSector { cx: 0.40, cy: 0.69, r_in: 0.085, r_out: 0.245, a0: deg(-90.0), a1: deg(90.0) },
            AnnulusSector { cx: 0.40, cy: 0.31, r_in: 0.085, r_out: 0.245, a0: deg(-90.0), a1: deg(90.0) },
        ],
        Letter::Omega => vec![
            AnnulusSector { cx: 0.50, cy: 0.56, r_in: 0.185, r_out: 0.335, a0: deg(-55.0), a1: deg(235.0) },
            Capsule { x0: 0.345, y0: 0.32, x1: 0.295, y1: 0.115, w: 0.062 },
            Capsule { x0: 0.655, y0: 0.32, x1: 0.705, y1: 0.115, w: 0.062 },
            Capsule { x0: 0.13, y0: 0.095, x1: 0.37, y1: 0.095, w: 0.062 },
            Capsule { x0: 0.63, y0: 0.095, x1: 0.87, y1: 0.095, w: 0.062 },
        ],
    }
}

/// Test whether a domain point lies inside the placed glyph.
fn inclusion_contains(inc: &Inclusion, x: f64, y: f64) -> bool {
    let u = (x - inc.frame.x0) / inc.frame.width;
    let v = (y - inc.frame.y0) / inc.frame.height;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return false;
    }
    glyph_shapes(inc.letter).iter().any(|s| s.contains(u, v))
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    for inc in &spec.inclusions {
        if inc.value <= 0.0 {
            return Err(Error::Config(format!(
                "inclusion value {} must be positive",
                inc.value
            )));
        }
        for shape in glyph_shapes(inc.letter) {
            let (u0, u1, v0, v1) = shape.bbox();
            let x0 = inc.frame.x0 + u0 * inc.frame.width;
            let x1 = inc.frame.x0 + u1 * inc.frame.width;
            let y0 = inc.frame.y0 + v0 * inc.frame.height;
            let y1 = inc.frame.y0 + v1 * inc.frame.height;
            let tol = 1e-12;
            if x0 < spec.omega_x.0 - tol
                || x1 > spec.omega_x.1 + tol
                || y0 < spec.omega_y.0 - tol
                || y1 > spec.omega_y.1 + tol
            {
                return Err(Error::Config(format!(
                    "inclusion '{:?}' exceeds Omega: bbox x [{x0}, {x1}], y [{y0}, {y1}]",
                    inc.letter
                )));
            }
        }
    }
    Ok(())
}

/// Rasterize the phantom onto a spatial grid: background outside all
/// inclusions, the inclusion value inside (later inclusions win overlaps).
pub fn build_phantom(spec: &PhantomSpec, grid: &GridSpec) -> Result<(ScalarField, ScalarField)> {
    validate(spec)?;
    let mut beta = ScalarField::constant(grid.spatial_part(), spec.beta_bg);
    let mut gamma = ScalarField::constant(grid.spatial_part(), spec.gamma_bg);
    for iy in 0..grid.ny() {
        let y = grid.y.coord(iy);
        for ix in 0..grid.nx() {
            let x = grid.x.coord(ix);
            for inc in &spec.inclusions {
                if inclusion_contains(inc, x, y) {
                    match inc.target {
                        Target::Beta => *beta.at_mut(ix, iy, 0) = inc.value,
                        Target::Gamma => *gamma.at_mut(ix, iy, 0) = inc.value,
                    }
                }
            }
        }
    }
    Ok((beta, gamma))
}

/// Boolean mask of the union of one coefficient's inclusions on a grid.
pub fn rasterize_mask(spec: &PhantomSpec, target: Target, grid: &GridSpec) -> Vec<bool> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut mask = vec![false; nx * ny];
    for iy in 0..ny {
        let y = grid.y.coord(iy);
        for ix in 0..nx {
            let x = grid.x.coord(ix);
            mask[iy * nx + ix] = spec
                .inclusions
                .iter()
                .filter(|inc| inc.target == target)
                .any(|inc| inclusion_contains(inc, x, y));
        }
    }
    mask
}

/// The frame used by the shipped scenarios: Omega with a 15% margin.
pub fn default_frame(omega_x: (f64, f64), omega_y: (f64, f64)) -> Frame {
    let wx = omega_x.1 - omega_x.0;
    let wy = omega_y.1 - omega_y.0;
    Frame {
        x0: omega_x.0 + 0.15 * wx,
        y0: omega_y.0 + 0.15 * wy,
        width: 0.70 * wx,
        height: 0.70 * wy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn omega_grid(n: usize) -> GridSpec {
        GridSpec::spatial(
            Axis::new(1.0, 2.0, n).unwrap(),
            Axis::new(-0.5, 0.5, n).unwrap(),
        )
    }

    fn spec_with(letter: Letter, target: Target, value: f64) -> PhantomSpec {
        PhantomSpec {
            beta_bg: 0.1,
            gamma_bg: 0.1,
            omega_x: (1.0, 2.0),
            omega_y: (-0.5, 0.5),
            inclusions: vec![Inclusion {
                target,
                letter,
                value,
                frame: default_frame((1.0, 2.0), (-0.5, 0.5)),
            }],
        }
    }

    #[test]
    fn empty_inclusions_give_constant_background() {
        let spec = PhantomSpec {
            beta_bg: 0.1,
            gamma_bg: 0.1,
            omega_x: (1.0, 2.0),
            omega_y: (-0.5, 0.5),
            inclusions: vec![],
        };
        let (beta, gamma) = build_phantom(&spec, &omega_grid(33)).unwrap();
        assert!(beta.values.iter().all(|&v| v == 0.1));
        assert!(gamma.values.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn letter_a_gives_exactly_two_values() {
        let spec = spec_with(Letter::A, Target::Gamma, 0.4);
        let (beta, gamma) = build_phantom(&spec, &omega_grid(33)).unwrap();
        assert!(beta.values.iter().all(|&v| v == 0.1));
        let mut distinct: Vec<f64> = gamma.values.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert_eq!(distinct, vec![0.1, 0.4]);
        // the letter occupies a plausible fraction of Omega
        let inside = gamma.values.iter().filter(|&&v| v == 0.4).count();
        let frac = inside as f64 / gamma.values.len() as f64;
        assert!((0.03..0.4).contains(&frac), "mask fraction {frac}");
    }

    #[test]
    fn every_letter_rasterizes_nonempty_with_void() {
        for letter in [Letter::A, Letter::M, Letter::B, Letter::Omega] {
            let spec = spec_with(letter, Target::Beta, 0.6);
            let grid = omega_grid(65);
            let mask = rasterize_mask(&spec, Target::Beta, &grid);
            let count = mask.iter().filter(|&&m| m).count();
            assert!(count > 60, "{letter:?} too small: {count}");
            // a letter is not a filled blob: its bounding box contains holes
            let (nx, ny) = (grid.nx(), grid.ny());
            let (mut x0, mut x1, mut y0, mut y1) = (nx, 0, ny, 0);
            for iy in 0..ny {
                for ix in 0..nx {
                    if mask[iy * nx + ix] {
                        x0 = x0.min(ix);
                        x1 = x1.max(ix);
                        y0 = y0.min(iy);
                        y1 = y1.max(iy);
                    }
                }
            }
            let bbox = (x1 - x0 + 1) * (y1 - y0 + 1);
            assert!(count < bbox * 3 / 4, "{letter:?} fills its bbox: {count}/{bbox}");
        }
    }

    #[test]
    fn later_inclusion_wins_overlap() {
        let frame = default_frame((1.0, 2.0), (-0.5, 0.5));
        let spec = PhantomSpec {
            beta_bg: 0.1,
            gamma_bg: 0.1,
            omega_x: (1.0, 2.0),
            omega_y: (-0.5, 0.5),
            inclusions: vec![
                Inclusion { target: Target::Beta, letter: Letter::A, value: 0.4, frame },
                Inclusion { target: Target::Beta, letter: Letter::A, value: 0.7, frame },
            ],
        };
        let (beta, _) = build_phantom(&spec, &omega_grid(33)).unwrap();
        // identical masks: the second value must shadow the first everywhere
        assert!(beta.values.iter().all(|&v| v == 0.1 || v == 0.7));
    }

    #[test]
    fn mask_exceeding_omega_is_rejected() {
        let mut spec = spec_with(Letter::M, Target::Beta, 0.6);
        spec.inclusions[0].frame.width = 3.0;
        assert!(build_phantom(&spec, &omega_grid(17)).is_err());
    }
}
