//! Synthetic paired volumes. Not patient data.
//!
//! Each case is a brain-shaped ellipsoid containing soft-edged regions with
//! per-region T1w/FLAIR intensities. ADC is `phantom_adc(t1w, flair)` inside
//! the brain plus uniform noise of amplitude [`PHANTOM_NOISE`], and 0 outside.
//!
//! The largest intensity of every modality sits on a structure present in all
//! cases with fixed values (base tissue for T1w, the cortical rim for FLAIR,
//! the ventricles for ADC), each covering well over 0.5% of the volume. The
//! 99.5th percentile is therefore the same in every case, and so is the map
//! between normalized inputs and normalized target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Modality, PatientCase, Volume};
use crate::error::{Error, Result};

pub const PHANTOM_NOISE: f32 = 0.005;

const DESCRIPTION: &str = "synthetic phantom (not patient data)";

/// `(t1w, flair)` of the fixed-intensity structures.
const BASE_TISSUE: (f32, f32) = (0.8, 0.45);
const RIM: (f32, f32) = (0.55, 0.9);
const VENTRICLE: (f32, f32) = (0.2, 0.15);

/// Width of the soft edge, in units of the region radius.
const EDGE: f32 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhantomConfig {
    pub cases: usize,
    /// `(X, Y, Z)`.
    pub extents: [usize; 3],
    pub seed: u64,
}

/// The generating map from structural intensities to ADC.
pub fn phantom_adc(t1w: f32, flair: f32) -> f32 {
    0.15 + 0.75 * (1.0 - t1w).max(0.0).powf(1.5) * (0.6 + 0.4 * (1.0 - flair))
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f32; 3],
    axes: [f32; 3],
}

impl Ellipsoid {
    /// Normalized radius: 1 on the surface.
    fn radius(&self, p: [f32; 3]) -> f32 {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.axes[i]).powi(2))
            .sum::<f32>()
            .sqrt()
    }
}

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Weight 1 deep inside, falling smoothly to 0 at the surface.
fn inside(e: &Ellipsoid, p: [f32; 3]) -> f32 {
    smoothstep((1.0 - e.radius(p)) / EDGE)
}

struct Region {
    shape: Ellipsoid,
    t1w: f32,
    flair: f32,
}

struct Layout {
    brain: Ellipsoid,
    regions: Vec<Region>,
}

fn layout(rng: &mut ChaCha8Rng) -> Layout {
    let brain = Ellipsoid {
        center: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0],
        axes: [rng.gen_range(0.72..0.82), rng.gen_range(0.78..0.88), 1.6],
    };
    let [bx, by, _] = brain.center;
    let mut regions = Vec::new();
    let in_brain = |rng: &mut ChaCha8Rng, reach: f32| {
        let a = rng.gen_range(0.0..std::f32::consts::TAU);
        let r = rng.gen_range(0.0..reach);
        [
            bx + r * a.cos() * brain.axes[0],
            by + r * a.sin() * brain.axes[1],
            rng.gen_range(-0.6..0.6),
        ]
    };
    for _ in 0..rng.gen_range(2..=4) {
        let center = in_brain(rng, 0.6);
        let s = rng.gen_range(0.1..0.25);
        regions.push(Region {
            shape: Ellipsoid {
                center,
                axes: [s, s * rng.gen_range(0.7..1.3), rng.gen_range(0.4..1.2)],
            },
            t1w: rng.gen_range(0.35..0.75),
            flair: rng.gen_range(0.3..0.7),
        });
    }
    let center = in_brain(rng, 0.55);
    let s = rng.gen_range(0.12..0.22);
    regions.push(Region {
        shape: Ellipsoid {
            center,
            axes: [s, s * rng.gen_range(0.8..1.2), rng.gen_range(0.5..1.0)],
        },
        t1w: rng.gen_range(0.35..0.5),
        flair: rng.gen_range(0.65..0.85),
    });
    for side in [-1.0f32, 1.0] {
        regions.push(Region {
            shape: Ellipsoid {
                center: [bx + side * 0.22 * brain.axes[0], by - 0.05, 0.0],
                axes: [0.12, 0.28, 1.2],
            },
            t1w: VENTRICLE.0,
            flair: VENTRICLE.1,
        });
    }
    Layout { brain, regions }
}

fn generate_case(index: usize, extents: [usize; 3], seed: u64) -> Result<PatientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let lay = layout(&mut rng);
    let [nx, ny, nz] = extents;
    let n = nx * ny * nz;
    let (mut t1, mut fl, mut adc, mut mask) =
        (vec![0f32; n], vec![0f32; n], vec![0f32; n], vec![0f32; n]);
    let coord = |i: usize, len: usize| (i as f32 + 0.5) / len as f32 * 2.0 - 1.0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let p = [coord(x, nx), coord(y, ny), coord(z, nz)];
                let r = lay.brain.radius(p);
                // Noise is drawn for every voxel so the stream position never depends on geometry.
                let noise = rng.gen_range(-PHANTOM_NOISE..=PHANTOM_NOISE);
                if r > 1.0 {
                    continue;
                }
                let (mut a, mut b) = BASE_TISSUE;
                for reg in &lay.regions {
                    let w = inside(&reg.shape, p);
                    a += w * (reg.t1w - a);
                    b += w * (reg.flair - b);
                }
                let w = smoothstep((r - 0.85) / 0.08);
                a += w * (RIM.0 - a);
                b += w * (RIM.1 - b);
                t1[i] = a;
                fl[i] = b;
                adc[i] = phantom_adc(a, b) + noise;
                mask[i] = 1.0;
            }
        }
    }
    let vol = |data, m| -> Result<Volume> {
        let mut v = Volume::new(extents, [1.0; 3], data, m)?;
        v.description = DESCRIPTION.into();
        Ok(v)
    };
    PatientCase::new(
        format!("phantom{index:03}"),
        vol(t1, Modality::T1w)?,
        vol(fl, Modality::Flair)?,
        vol(adc, Modality::Adc)?,
        Some(vol(mask, Modality::Mask)?),
    )
}

/// `n_cases` phantoms; case `i` depends only on `(seed, i)`.
pub fn phantom_generate(
    n_cases: usize,
    extents: [usize; 3],
    seed: u64,
) -> Result<Vec<PatientCase>> {
    let [nx, ny, nz] = extents;
    if nx < 8 || ny < 8 || nz == 0 {
        return Err(Error::Contract(format!(
            "phantom extents {extents:?} are too small"
        )));
    }
    (0..n_cases)
        .map(|i| generate_case(i, extents, seed))
        .collect()
}
