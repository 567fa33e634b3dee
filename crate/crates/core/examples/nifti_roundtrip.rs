//! Writes a phantom volume as NIfTI-1, reads it back bit for bit, and shows
//! the percentile normalization and its inverse.
//!
//! ```text
//! cargo run --release --example nifti_roundtrip
//! ```

use mprvit::data::{
    downsample_volume, nifti_read, nifti_write, normalize_volume, phantom_generate, Modality,
};

fn main() -> mprvit::Result<()> {
    let case = phantom_generate(1, [64, 64, 4], 1)?.remove(0);
    let path = std::env::temp_dir().join("mprvit_roundtrip_t1w.nii");
    nifti_write(&path, &case.t1w)?;
    let back = nifti_read(&path, Modality::T1w)?;
    let identical = back
        .data()
        .iter()
        .zip(case.t1w.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{}: {} bytes, extents {:?}, bitwise identical {identical}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        back.extents()
    );
    println!("description {:?}", back.description);

    let (norm, p) = normalize_volume(&back)?;
    let worst = norm
        .data()
        .iter()
        .zip(back.data())
        .map(|(&n, &v)| (p.restore(n as f64) - (v as f64).clamp(p.lo, p.hi)).abs())
        .fold(0.0, f64::max);
    println!(
        "clip range {:.4} .. {:.4}, worst restore error {worst:.2e}",
        p.lo, p.hi
    );

    let half = downsample_volume(&back)?;
    println!(
        "downsampled to {:?} with spacing {:?}",
        half.extents(),
        half.spacing()
    );
    Ok(())
}
