use super::{Modality, PatientCase, SlicePair, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Minimum fraction of foreground pixels for a slice to be used.
pub const MIN_COVERAGE: f64 = 0.01;

/// Input channels of a slice pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modalities {
    /// `[t1w, flair]`.
    Both,
    T1w,
    Flair,
}

impl Modalities {
    pub fn list(self) -> &'static [Modality] {
        match self {
            Modalities::Both => &[Modality::T1w, Modality::Flair],
            Modalities::T1w => &[Modality::T1w],
            Modalities::Flair => &[Modality::Flair],
        }
    }

    pub fn channels(self) -> usize {
        self.list().len()
    }
}

impl std::fmt::Display for Modalities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.list().iter().map(|m| m.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

impl std::str::FromStr for Modalities {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "t1w,flair" => Ok(Modalities::Both),
            "t1w" => Ok(Modalities::T1w),
            "flair" => Ok(Modalities::Flair),
            other => Err(Error::Config(format!(
                "modalities {other:?}; use t1w,flair or t1w or flair"
            ))),
        }
    }
}

/// Axial indices with at least [`MIN_COVERAGE`] foreground.
///
/// Foreground is the brain mask when present; otherwise any pixel where an
/// input channel lies above that volume's minimum (the background level).
pub fn qualifying_slices(inputs: &[&Volume], mask: Option<&Volume>) -> Vec<usize> {
    let Some(first) = inputs.first() else {
        return Vec::new();
    };
    let floors: Vec<f32> = inputs
        .iter()
        .map(|v| v.data().iter().copied().fold(f32::INFINITY, f32::min))
        .collect();
    let [nx, ny, nz] = first.extents();
    let plane = nx * ny;
    (0..nz)
        .filter(|&z| {
            let covered = match mask {
                Some(m) => m.axial(z).iter().filter(|&&v| v > 0.5).count(),
                None => (0..plane)
                    .filter(|&i| inputs.iter().zip(&floors).any(|(v, &f)| v.axial(z)[i] > f))
                    .count(),
            };
            covered > 0 && covered as f64 >= MIN_COVERAGE * plane as f64
        })
        .collect()
}

/// Channel-stacked `C×Y×X` input of axial slice `z`.
pub fn stack_slice(inputs: &[&Volume], z: usize) -> Result<Tensor<f32>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Contract("no input volumes".into()))?;
    let [nx, ny, _] = first.extents();
    let mut x = Vec::with_capacity(nx * ny * inputs.len());
    for v in inputs {
        x.extend_from_slice(v.axial(z));
    }
    Tensor::new(&[inputs.len(), ny, nx], x)
}

/// One pair per axial index accepted by [`qualifying_slices`].
pub fn extract_slices(case: &PatientCase, modalities: Modalities) -> Vec<SlicePair> {
    let inputs: Vec<&Volume> = modalities
        .list()
        .iter()
        .map(|&m| {
            case.volume(m)
                .expect("intensity modalities are always present")
        })
        .collect();
    let [nx, ny, _] = case.t1w.extents();
    qualifying_slices(&inputs, case.mask.as_ref())
        .into_iter()
        .map(|z| SlicePair {
            input: stack_slice(&inputs, z).expect("case volumes share a grid"),
            target: Tensor::new(&[1, ny, nx], case.adc.axial(z).to_vec()).expect("slice geometry"),
            patient_id: case.id.clone(),
            slice_index: z,
        })
        .collect()
}

/// Places axial slices into a volume shaped like `template`; absent slices hold `fill`.
pub fn assemble_volume<'a>(
    template: &Volume,
    slices: impl IntoIterator<Item = (usize, &'a [f32])>,
    fill: f32,
) -> Result<Volume> {
    let [nx, ny, nz] = template.extents();
    let plane = nx * ny;
    let mut data = vec![fill; plane * nz];
    for (z, s) in slices {
        if z >= nz || s.len() != plane {
            return Err(Error::dim(format!(
                "slice {z} with {} pixels does not fit a {nx}×{ny}×{nz} volume",
                s.len()
            )));
        }
        data[z * plane..(z + 1) * plane].copy_from_slice(s);
    }
    Ok(template.with_data(data))
}
