//! Uncompressed single-file NIfTI-1 (`.nii`), float32 and int16 payloads.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::{Modality, Volume};
use crate::error::{Error, Result};

/// `sizeof_hdr`.
pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const VOX_OFFSET: usize = 352;

const DIM: usize = 40;
const DATATYPE: usize = 70;
const BITPIX: usize = 72;
const PIXDIM: usize = 76;
const VOX_OFFSET_FIELD: usize = 108;
const SCL_SLOPE: usize = 112;
const SCL_INTER: usize = 116;
const XYZT_UNITS: usize = 123;
const DESCRIP: usize = 148;
const SFORM_CODE: usize = 254;
const SROW: usize = 280;
const MAGIC: usize = 344;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Reads a volume and tags it with `modality`.
pub fn nifti_read(path: impl AsRef<Path>, modality: Modality) -> Result<Volume> {
    let bytes = fs::read(path.as_ref())?;
    parse(&bytes, modality)
}

fn parse(bytes: &[u8], modality: Modality) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            bytes.len() as u64,
            "header truncated before 348 bytes",
        ));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_with::<LittleEndian>(bytes, modality)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_with::<BigEndian>(bytes, modality)
    } else {
        Err(Error::format(0, "sizeof_hdr is not 348"))
    }
}

fn parse_with<E: ByteOrder>(h: &[u8], modality: Modality) -> Result<Volume> {
    match &h[MAGIC..MAGIC + 4] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::Unsupported(
                "detached header/image pair (magic ni1); only single-file n+1 is read".into(),
            ))
        }
        _ => return Err(Error::format(MAGIC as u64, "magic is not n+1")),
    }
    let dim: Vec<i16> = (0..8).map(|i| E::read_i16(&h[DIM + 2 * i..])).collect();
    if !(3..=7).contains(&dim[0])
        || dim[1..=3].iter().any(|&d| d < 1)
        || dim[4..=dim[0] as usize].iter().any(|&d| d != 1)
    {
        return Err(Error::format(
            DIM as u64,
            format!("dim {dim:?} is not a single 3-D volume"),
        ));
    }
    let extents = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let datatype = E::read_i16(&h[DATATYPE..]);
    let (width, expect_bitpix) = match datatype {
        DT_FLOAT32 => (4, 32),
        DT_INT16 => (2, 16),
        other => {
            return Err(Error::Unsupported(format!(
                "datatype {other}; only float32 (16) and int16 (4)"
            )))
        }
    };
    if E::read_i16(&h[BITPIX..]) != expect_bitpix {
        return Err(Error::format(
            BITPIX as u64,
            "bitpix disagrees with datatype",
        ));
    }
    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = E::read_f32(&h[PIXDIM + 4 * (i + 1)..]);
    }
    if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::format(
            PIXDIM as u64 + 4,
            format!("pixdim spacing {spacing:?} must be positive"),
        ));
    }
    let offset = E::read_f32(&h[VOX_OFFSET_FIELD..]);
    if !(offset >= HEADER_SIZE as f32) || offset.fract() != 0.0 {
        return Err(Error::format(
            VOX_OFFSET_FIELD as u64,
            format!("vox_offset {offset} is invalid"),
        ));
    }
    let start = offset as usize;
    let n: usize = extents.iter().product();
    let end = start + n * width;
    if h.len() < end {
        return Err(Error::format(
            h.len() as u64,
            format!("payload truncated: need {end} bytes, file has {}", h.len()),
        ));
    }
    let payload = &h[start..end];
    let mut data: Vec<f32> = match datatype {
        DT_FLOAT32 => payload.chunks_exact(4).map(E::read_f32).collect(),
        _ => payload
            .chunks_exact(2)
            .map(|c| E::read_i16(c) as f32)
            .collect(),
    };
    let slope = E::read_f32(&h[SCL_SLOPE..]);
    let inter = E::read_f32(&h[SCL_INTER..]);
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    let mut vol = Volume::new(extents, spacing, data, modality)?;
    let descrip = &h[DESCRIP..DESCRIP + 80];
    let len = descrip.iter().position(|&b| b == 0).unwrap_or(80);
    vol.description = String::from_utf8_lossy(&descrip[..len]).into_owned();
    Ok(vol)
}

/// Writes little-endian float32 with no intensity scaling.
pub fn nifti_write(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    fs::write(path.as_ref(), encode(v)?)?;
    Ok(())
}

fn encode(v: &Volume) -> Result<Vec<u8>> {
    let ext = v.extents();
    if ext.iter().any(|&e| e > i16::MAX as usize) {
        return Err(Error::Unsupported(format!(
            "extents {ext:?} exceed the NIfTI-1 limit"
        )));
    }
    let mut out = vec![0u8; VOX_OFFSET + 4 * v.data().len()];
    let h = &mut out[..VOX_OFFSET];
    type E = LittleEndian;
    E::write_i32(&mut h[0..], HEADER_SIZE as i32);
    let dim = [3, ext[0] as i16, ext[1] as i16, ext[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.into_iter().enumerate() {
        E::write_i16(&mut h[DIM + 2 * i..], d);
    }
    E::write_i16(&mut h[DATATYPE..], DT_FLOAT32);
    E::write_i16(&mut h[BITPIX..], 32);
    let sp = v.spacing();
    let pixdim = [1.0, sp[0], sp[1], sp[2], 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.into_iter().enumerate() {
        E::write_f32(&mut h[PIXDIM + 4 * i..], p);
    }
    E::write_f32(&mut h[VOX_OFFSET_FIELD..], VOX_OFFSET as f32);
    E::write_f32(&mut h[SCL_SLOPE..], 0.0);
    E::write_f32(&mut h[SCL_INTER..], 0.0);
    // Millimetres.
    h[XYZT_UNITS] = 2;
    let desc = v.description.as_bytes();
    let n = desc.len().min(79);
    h[DESCRIP..DESCRIP + n].copy_from_slice(&desc[..n]);
    E::write_i16(&mut h[SFORM_CODE..], 1);
    for (row, s) in sp.into_iter().enumerate() {
        E::write_f32(&mut h[SROW + 16 * row + 4 * row..], s);
    }
    h[MAGIC..MAGIC + 4].copy_from_slice(b"n+1\0");
    for (chunk, &x) in out[VOX_OFFSET..].chunks_exact_mut(4).zip(v.data()) {
        E::write_f32(chunk, x);
    }
    Ok(out)
}
