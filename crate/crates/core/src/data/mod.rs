//! Volumes, NIfTI-1 I/O, intensity normalization, patient-level splits,
//! axial slice extraction and a synthetic phantom generator.
//!
//! Voxel order is NIfTI order: `x` fastest, then `y`, then `z`. An axial slice
//! `z` is therefore a contiguous `Y×X` image whose columns run along `x`.

mod dataset;
mod nifti;
mod normalize;
mod phantom;
mod slices;
mod split;

pub use dataset::{
    read_dataset, read_manifest, write_dataset, Dataset, ManifestEntry, MANIFEST_FILE,
};
pub use nifti::{nifti_read, nifti_write, HEADER_SIZE, VOX_OFFSET};
pub use normalize::{
    downsample_volume, normalize_volume, percentile, NormParams, CLIP_PERCENTILES,
};
pub use phantom::{phantom_adc, phantom_generate, PhantomConfig, PHANTOM_NOISE};
pub use slices::{
    assemble_volume, extract_slices, qualifying_slices, stack_slice, Modalities, MIN_COVERAGE,
};
pub use split::{make_splits, Split, SplitManifest};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    T1w,
    Flair,
    Adc,
    Mask,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::T1w,
        Modality::Flair,
        Modality::Adc,
        Modality::Mask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::T1w => "t1w",
            Modality::Flair => "flair",
            Modality::Adc => "adc",
            Modality::Mask => "mask",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?}")))
    }
}

/// A 3-D scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
    pub modality: Modality,
    /// Free text carried in the NIfTI `descrip` field.
    pub description: String,
}

impl Volume {
    pub fn new(
        extents: [usize; 3],
        spacing: [f32; 3],
        data: Vec<f32>,
        modality: Modality,
    ) -> Result<Self> {
        let n: usize = extents.iter().product();
        if data.len() != n {
            return Err(Error::dim(format!(
                "volume {extents:?} needs {n} voxels, got {}",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Contract(format!(
                "voxel spacing {spacing:?} must be positive"
            )));
        }
        Ok(Self {
            extents,
            spacing,
            data,
            modality,
            description: String::new(),
        })
    }

    pub fn filled(
        extents: [usize; 3],
        spacing: [f32; 3],
        value: f32,
        modality: Modality,
    ) -> Result<Self> {
        Self::new(
            extents,
            spacing,
            vec![value; extents.iter().product()],
            modality,
        )
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let [nx, ny, _] = self.extents;
        x + nx * (y + ny * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Axial slice `z` as a row-major `Y×X` buffer.
    pub fn axial(&self, z: usize) -> &[f32] {
        let plane = self.extents[0] * self.extents[1];
        &self.data[z * plane..(z + 1) * plane]
    }

    /// Same geometry and tag, new voxels.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }

    fn same_grid(&self, other: &Volume) -> bool {
        self.extents == other.extents && self.spacing == other.spacing
    }
}

/// One patient's co-registered volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientCase {
    pub id: String,
    pub t1w: Volume,
    pub flair: Volume,
    pub adc: Volume,
    pub mask: Option<Volume>,
}

impl PatientCase {
    pub fn new(
        id: impl Into<String>,
        t1w: Volume,
        flair: Volume,
        adc: Volume,
        mask: Option<Volume>,
    ) -> Result<Self> {
        let id = id.into();
        let others = [Some(&flair), Some(&adc), mask.as_ref()];
        if others.into_iter().flatten().any(|v| !t1w.same_grid(v)) {
            return Err(Error::Pairing(format!(
                "case {id}: volumes differ in extents or spacing"
            )));
        }
        Ok(Self {
            id,
            t1w,
            flair,
            adc,
            mask,
        })
    }

    pub fn volume(&self, m: Modality) -> Option<&Volume> {
        match m {
            Modality::T1w => Some(&self.t1w),
            Modality::Flair => Some(&self.flair),
            Modality::Adc => Some(&self.adc),
            Modality::Mask => self.mask.as_ref(),
        }
    }

    /// Every intensity volume percentile-normalized to `[−1, 1]`; the mask is kept as is.
    pub fn normalized(&self) -> Result<(PatientCase, [NormParams; 3])> {
        let (t1w, a) = normalize_volume(&self.t1w)?;
        let (flair, b) = normalize_volume(&self.flair)?;
        let (adc, c) = normalize_volume(&self.adc)?;
        let case = PatientCase {
            id: self.id.clone(),
            t1w,
            flair,
            adc,
            mask: self.mask.clone(),
        };
        Ok((case, [a, b, c]))
    }
}

/// A training example: `C×H×W` input channels and a `1×H×W` target.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub patient_id: String,
    pub slice_index: usize,
}

impl SlicePair {
    pub fn height(&self) -> usize {
        self.input.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.input.shape()[2]
    }

    /// Stacks `pairs` into `B×C×H×W` inputs and `B×1×H×W` targets.
    pub fn batch<'a>(
        pairs: impl IntoIterator<Item = &'a SlicePair>,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let first = pairs
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (ish, tsh) = (first.input.shape().to_vec(), first.target.shape().to_vec());
        let mut xs = Vec::with_capacity(pairs.len() * first.input.numel());
        let mut ys = Vec::with_capacity(pairs.len() * first.target.numel());
        for p in &pairs {
            if p.input.shape() != ish || p.target.shape() != tsh {
                return Err(Error::dim(format!(
                    "slice {}:{} has shape {:?}/{:?}, batch expects {ish:?}/{tsh:?}",
                    p.patient_id,
                    p.slice_index,
                    p.input.shape(),
                    p.target.shape()
                )));
            }
            xs.extend_from_slice(p.input.data());
            ys.extend_from_slice(p.target.data());
        }
        let b = pairs.len();
        Ok((
            Tensor::new(&[b, ish[0], ish[1], ish[2]], xs)?,
            Tensor::new(&[b, tsh[0], tsh[1], tsh[2]], ys)?,
        ))
    }
}
