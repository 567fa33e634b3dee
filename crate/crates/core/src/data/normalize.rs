use super::Volume;
use crate::error::{Error, Result};
use crate::tensor::ops::bicubic_resize;
use crate::tensor::Tensor;

/// Lower and upper clipping percentiles.
pub const CLIP_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Affine map between a clipped intensity range `[lo, hi]` and `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub lo: f64,
    pub hi: f64,
}

impl NormParams {
    pub fn forward(&self, v: f64) -> f64 {
        let c = v.clamp(self.lo, self.hi);
        2.0 * (c - self.lo) / (self.hi - self.lo) - 1.0
    }

    /// `[−1, 1]` back to intensity; inverse of [`forward`](Self::forward) on `[lo, hi]`.
    pub fn restore(&self, v: f64) -> f64 {
        self.lo + (v + 1.0) * 0.5 * (self.hi - self.lo)
    }

    /// `[−1, 1]` to `[0, 1]`, the range metrics are computed on.
    pub fn to_unit(v: f64) -> f64 {
        (v + 1.0) * 0.5
    }
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of finite samples.
pub fn percentile(values: &[f32], q: f64) -> Result<f64> {
    let mut v: Vec<f32> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::Degenerate("percentile of an empty sample".into()));
    }
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    let (_, &mut a, upper) = v.select_nth_unstable_by(i, f32::total_cmp);
    let a = a as f64;
    if frac == 0.0 || upper.is_empty() {
        return Ok(a);
    }
    let b = upper.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    Ok(a + frac * (b - a))
}

/// Clips to the 0.5/99.5 percentiles and maps linearly onto `[−1, 1]`.
pub fn normalize_volume(v: &Volume) -> Result<(Volume, NormParams)> {
    let lo = percentile(v.data(), CLIP_PERCENTILES.0)?;
    let hi = percentile(v.data(), CLIP_PERCENTILES.1)?;
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "{} volume has no intensity spread between its clip percentiles ({lo} .. {hi})",
            v.modality
        )));
    }
    let p = NormParams { lo, hi };
    let data = v
        .data()
        .iter()
        .map(|&x| p.forward(x as f64) as f32)
        .collect();
    Ok((v.with_data(data), p))
}

/// Halves the in-plane resolution, slice by slice, with bicubic interpolation.
pub fn downsample_volume(v: &Volume) -> Result<Volume> {
    let [nx, ny, nz] = v.extents();
    if nx < 8 || ny < 8 {
        return Err(Error::dim(format!(
            "in-plane extents {nx}×{ny} are below 8"
        )));
    }
    let (ox, oy) = (nx.div_ceil(2), ny.div_ceil(2));
    let planes = Tensor::new(&[1, nz, ny, nx], v.data().to_vec())?;
    let out = bicubic_resize(&planes, oy, ox)?;
    let [sx, sy, sz] = v.spacing();
    let mut r = Volume::new(
        [ox, oy, nz],
        [2.0 * sx, 2.0 * sy, sz],
        out.into_data(),
        v.modality,
    )?;
    r.description = v.description.clone();
    Ok(r)
}
