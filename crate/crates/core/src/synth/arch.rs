use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{deform, nominal_size, subdivided_sphere, ToothKind, TEMPLATE_PATCH_SIZE};
use crate::error::{Error, Result};
use crate::geometry::{Jaw, JawModel, Mat3, ToothLabel, ToothMesh, Vec3};

/// Lower arch size relative to the upper one.
const LOWER_ARCH_FACTOR: f64 = 0.95;
/// Space between neighboring crowns along the arch, mm (before scaling).
const INTERPROXIMAL_GAP: f64 = 0.5;
/// The arch is sampled on φ ∈ [0, MAX_SWEEP].
const MAX_SWEEP: f64 = 0.95 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSpec {
    /// Lateral extent of the upper arch ellipse, mm.
    pub arch_width: f64,
    /// Anteroposterior extent of the upper arch ellipse, mm.
    pub arch_depth: f64,
    pub n_teeth_per_jaw: usize,
    /// Per-patient scale drawn uniformly from this range; applies to tooth
    /// sizes and the arch together.
    pub tooth_scale_range: (f64, f64),
    /// Vertical gap between the upper and lower occlusal planes, mm.
    pub jaw_separation: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            arch_width: 50.0,
            arch_depth: 45.0,
            n_teeth_per_jaw: 14,
            tooth_scale_range: (0.9, 1.1),
            jaw_separation: 1.0,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.arch_width > 0.0 && self.arch_depth > 0.0 && self.jaw_separation > 0.0) {
            return bad("arch_width, arch_depth and jaw_separation must be positive".into());
        }
        if !(8..=16).contains(&self.n_teeth_per_jaw) {
            return bad(format!("n_teeth_per_jaw must be in 8..=16, got {}", self.n_teeth_per_jaw));
        }
        let (lo, hi) = self.tooth_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("tooth_scale_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

/// Where one tooth sits on the arch, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct ToothPlacement {
    pub label: ToothLabel,
    pub origin: Vec3,
    /// Columns: mesiodistal, labial, occlusal directions.
    pub frame: Mat3,
    pub width: f64,
}

/// Arc-length table of the ellipse `(a sin φ, b cos φ)`.
struct ArcTable {
    a: f64,
    b: f64,
    phi: Vec<f64>,
    length: Vec<f64>,
}

impl ArcTable {
    fn new(a: f64, b: f64) -> Self {
        const STEPS: usize = 8192;
        let mut phi = Vec::with_capacity(STEPS + 1);
        let mut length = Vec::with_capacity(STEPS + 1);
        let mut acc = 0.0;
        let speed = |p: f64| (a * p.cos()).hypot(b * p.sin());
        let dp = MAX_SWEEP / STEPS as f64;
        for i in 0..=STEPS {
            let p = i as f64 * dp;
            if i > 0 {
                // Simpson on each sub-interval
                let p0 = p - dp;
                acc += dp / 6.0 * (speed(p0) + 4.0 * speed(p0 + dp * 0.5) + speed(p));
            }
            phi.push(p);
            length.push(acc);
        }
        ArcTable { a, b, phi, length }
    }

    fn phi_at(&self, s: f64) -> Result<f64> {
        let total = *self.length.last().unwrap_or(&0.0);
        if s > total {
            return Err(Error::Config(format!("teeth need {s:.1} mm of arch but only {total:.1} mm are available")));
        }
        let i = self.length.partition_point(|&l| l < s).clamp(1, self.length.len() - 1);
        let (l0, l1) = (self.length[i - 1], self.length[i]);
        let t = if l1 > l0 { (s - l0) / (l1 - l0) } else { 0.0 };
        Ok(self.phi[i - 1] + t * (self.phi[i] - self.phi[i - 1]))
    }

    fn point(&self, phi: f64) -> (f64, f64) {
        (self.a * phi.sin(), self.b * phi.cos())
    }

    fn tangent(&self, phi: f64) -> (f64, f64) {
        let (x, y) = (self.a * phi.cos(), -self.b * phi.sin());
        let n = x.hypot(y);
        (x / n, y / n)
    }

    fn normal(&self, phi: f64) -> (f64, f64) {
        let (x, y) = (self.b * phi.sin(), self.a * phi.cos());
        let n = x.hypot(y);
        (x / n, y / n)
    }
}

fn jaw_quadrants(jaw: Jaw) -> (u32, u32) {
    // (patient-right, patient-left)
    match jaw {
        Jaw::Upper => (1, 2),
        Jaw::Lower => (4, 3),
    }
}

/// Tooth placements for one patient: scale and the per-tooth height jitter
/// come from `seed`.
pub fn arch_layout(spec: &ArchSpec, seed: u64) -> Result<(Vec<ToothPlacement>, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.tooth_scale_range;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let n_right = spec.n_teeth_per_jaw.div_ceil(2) as u32;
    let n_left = (spec.n_teeth_per_jaw / 2) as u32;

    let mut placements = Vec::new();
    let mut heights = Vec::new();
    for jaw in [Jaw::Upper, Jaw::Lower] {
        let upper = jaw == Jaw::Upper;
        let factor = if upper { 1.0 } else { LOWER_ARCH_FACTOR };
        let table = ArcTable::new(0.5 * spec.arch_width * scale * factor, spec.arch_depth * scale * factor);
        let (q_right, q_left) = jaw_quadrants(jaw);
        for (quadrant, count, mirror) in [(q_right, n_right, -1.0), (q_left, n_left, 1.0)] {
            let gap = INTERPROXIMAL_GAP * scale;
            let mut arc = 0.5 * gap;
            for position in 1..=count {
                let size = nominal_size(position, upper);
                let width = size.width * scale;
                let s = arc + 0.5 * width;
                arc += width + gap;
                let phi = table.phi_at(s)?;
                let (px, py) = table.point(phi);
                let (tx, ty) = table.tangent(phi);
                let (nx, ny) = table.normal(phi);
                let distal = Vec3::new(mirror * tx, ty, 0.0);
                let labial = Vec3::new(mirror * nx, ny, 0.0);
                let occlusal = if upper { -Vec3::z() } else { Vec3::z() };
                let mut ex = distal;
                if ex.cross(&labial).dot(&occlusal) < 0.0 {
                    ex = -ex;
                }
                let frame = Mat3::from_columns(&[ex, labial, occlusal]);
                let height = size.height * scale * rng.random_range(0.95..1.05);
                let z = if upper {
                    0.5 * spec.jaw_separation + 0.5 * height
                } else {
                    -0.5 * spec.jaw_separation - 0.5 * height
                };
                placements.push(ToothPlacement {
                    label: ToothLabel::from_parts(quadrant, position)?,
                    origin: Vec3::new(mirror * px, py, z),
                    frame,
                    width,
                });
                heights.push(height);
            }
        }
    }
    Ok((placements, heights))
}

/// Builds an aligned (post-treatment) dental model centered at the origin.
pub fn generate_jaw(spec: &ArchSpec, seed: u64) -> Result<JawModel> {
    let (placements, heights) = arch_layout(spec, seed)?;
    let (sphere, faces) = subdivided_sphere();
    let mut teeth = Vec::with_capacity(placements.len());
    for (pl, height) in placements.iter().zip(&heights) {
        let upper = pl.label.is_upper();
        let mut size = nominal_size(pl.label.position(), upper);
        let scale = pl.width / size.width;
        size.width = pl.width;
        size.depth *= scale;
        size.height = *height;
        let kind = ToothKind::from_position(pl.label.position());
        let vertices = sphere.iter().map(|p| pl.origin + pl.frame * deform(p, kind, &size)).collect();
        teeth.push(ToothMesh::new(pl.label, vertices, faces.clone(), TEMPLATE_PATCH_SIZE)?);
    }
    let mut model = JawModel::new(format!("jaw{seed}"), teeth)?;
    model.normalize();
    Ok(model)
}
