//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reader and writer.
//!
//! Little-endian only. Supported voxel types: uint8, int16, float32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Matrix4;

use super::{DataType, Geometry, LabelVolume, Mask, Volume};
use crate::error::{Error, Result};
use crate::scalar::Real;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Decoded subset of the NIfTI-1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub datatype: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

fn i16_at(b: &[u8], o: usize) -> i16 {
    i16::from_le_bytes([b[o], b[o + 1]])
}

fn i32_at(b: &[u8], o: usize) -> i32 {
    i32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

fn f32_at(b: &[u8], o: usize) -> f32 {
    f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

impl NiftiHeader {
    pub fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::Format(format!("file too short for a NIfTI-1 header ({} bytes)", b.len())));
        }
        let sizeof_hdr = i32_at(b, offset::SIZEOF_HDR);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
                return Err(Error::Unsupported("big-endian NIfTI files".into()));
            }
            return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
        }
        let magic = &b[offset::MAGIC..offset::MAGIC + 4];
        if magic != b"n+1\0" {
            return Err(Error::Format(format!("bad magic {magic:?}; only single-file NIfTI-1 is supported")));
        }
        let ndim = i16_at(b, offset::DIM);
        if !(1..=7).contains(&ndim) {
            return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
        }
        let mut dims = [1usize; 3];
        for d in 1..=ndim as usize {
            let n = i16_at(b, offset::DIM + 2 * d);
            if n < 1 {
                return Err(Error::Format(format!("dim[{d}] = {n} is not positive")));
            }
            if d <= 3 {
                dims[d - 1] = n as usize;
            } else if n != 1 {
                return Err(Error::Unsupported(format!("{ndim}-dimensional images")));
            }
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f32_at(b, offset::PIXDIM + 4 * i);
        }
        let vox_offset = f32_at(b, offset::VOX_OFFSET);
        if !(vox_offset >= HEADER_SIZE as f32) {
            return Err(Error::Format(format!("vox_offset {vox_offset} inside the header")));
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(b, offset::SROW_X + 16 * r + 4 * c);
            }
        }
        Ok(NiftiHeader {
            dims,
            datatype: i16_at(b, offset::DATATYPE),
            pixdim,
            vox_offset: vox_offset as usize,
            scl_slope: f32_at(b, offset::SCL_SLOPE),
            scl_inter: f32_at(b, offset::SCL_INTER),
            qform_code: i16_at(b, offset::QFORM_CODE),
            sform_code: i16_at(b, offset::SFORM_CODE),
            quatern: [0, 1, 2].map(|i| f32_at(b, offset::QUATERN_B + 4 * i)),
            qoffset: [0, 1, 2].map(|i| f32_at(b, offset::QOFFSET_X + 4 * i)),
            srow,
        })
    }

    fn spacing(&self) -> [f64; 3] {
        [1, 2, 3].map(|i| {
            let p = self.pixdim[i].abs() as f64;
            if p > 0.0 && p.is_finite() {
                p
            } else {
                1.0
            }
        })
    }

    fn sform(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = self.srow[r][c] as f64;
            }
        }
        m
    }

    fn qform(&self) -> Matrix4<f64> {
        let [b, c, d] = self.quatern.map(|q| q as f64);
        let mut a2 = 1.0 - (b * b + c * c + d * d);
        let (b, c, d) = if a2 < 1e-7 {
            // quaternion sits on the boundary; renormalise (b, c, d)
            let n = (b * b + c * c + d * d).sqrt();
            a2 = 0.0;
            (b / n, c / n, d / n)
        } else {
            (b, c, d)
        };
        let a = a2.sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let s = self.spacing();
        let scale = [s[0], s[1], s[2] * qfac];
        let mut m = Matrix4::identity();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = r[row][col] * scale[col];
            }
            m[(row, 3)] = self.qoffset[row] as f64;
        }
        m
    }

    /// Voxel-to-world matrix: sform when its code is set and it is
    /// invertible, otherwise qform, otherwise a plain spacing diagonal.
    pub fn voxel_to_world(&self) -> Matrix4<f64> {
        if self.sform_code > 0 {
            let m = self.sform();
            if m.determinant().abs() > 1e-12 {
                return m;
            }
        }
        if self.qform_code > 0 {
            return self.qform();
        }
        let s = self.spacing();
        Matrix4::new_nonuniform_scaling(&nalgebra::Vector3::new(s[0], s[1], s[2]))
    }
}

fn dtype_of(code: i16) -> Result<(DataType, usize)> {
    match code {
        DT_UINT8 => Ok((DataType::Uint8, 1)),
        DT_INT16 => Ok((DataType::Int16, 2)),
        DT_FLOAT32 => Ok((DataType::Float32, 4)),
        other => Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
    }
}

/// Decodes an uncompressed or gzip-compressed NIfTI-1 byte stream.
pub fn decode_nifti<T: Real>(bytes: &[u8]) -> Result<Volume<T>> {
    let raw;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut buf = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut buf)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        raw = buf;
        &raw[..]
    } else {
        bytes
    };
    let hdr = NiftiHeader::parse(bytes)?;
    let (dtype, width) = dtype_of(hdr.datatype)?;
    let geom = Geometry::from_affine(hdr.dims, hdr.spacing(), hdr.voxel_to_world())?;
    let n = geom.len();
    let need = hdr.vox_offset + n * width;
    if bytes.len() < need {
        return Err(Error::Format(format!("voxel data truncated: {} of {need} bytes", bytes.len())));
    }
    let payload = &bytes[hdr.vox_offset..need];
    let scaling = (hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite())
        .then(|| (hdr.scl_slope as f64, if hdr.scl_inter.is_finite() { hdr.scl_inter as f64 } else { 0.0 }));
    let raw_value = |i: usize| -> f64 {
        match dtype {
            DataType::Uint8 => payload[i] as f64,
            DataType::Int16 => i16_at(payload, 2 * i) as f64,
            DataType::Float32 => f32_at(payload, 4 * i) as f64,
        }
    };
    let data = (0..n)
        .map(|i| {
            let v = raw_value(i);
            T::lit(match scaling {
                Some((s, c)) => v * s + c,
                None => v,
            })
        })
        .collect();
    Ok(Volume::new(geom, data)?.with_dtype(dtype))
}

/// Encodes `vol` as an uncompressed NIfTI-1 image in its own data type.
pub fn encode_nifti<T: Real>(vol: &Volume<T>) -> Vec<u8> {
    let g = vol.geometry();
    let (code, width, bitpix) = match vol.dtype() {
        DataType::Uint8 => (DT_UINT8, 1, 8i16),
        DataType::Int16 => (DT_INT16, 2, 16),
        DataType::Float32 => (DT_FLOAT32, 4, 32),
    };
    let mut b = vec![0u8; VOX_OFFSET + g.len() * width];
    let put_i16 = |b: &mut [u8], o: usize, v: i16| b[o..o + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |b: &mut [u8], o: usize, v: f32| b[o..o + 4].copy_from_slice(&v.to_le_bytes());
    b[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dims = g.dims();
    put_i16(&mut b, offset::DIM, 3);
    for a in 0..3 {
        put_i16(&mut b, offset::DIM + 2 * (a + 1), dims[a] as i16);
    }
    for a in 4..8 {
        put_i16(&mut b, offset::DIM + 2 * a, 1);
    }
    put_i16(&mut b, offset::DATATYPE, code);
    put_i16(&mut b, offset::BITPIX, bitpix);
    let sp = g.spacing();
    put_f32(&mut b, offset::PIXDIM, 1.0);
    for a in 0..3 {
        put_f32(&mut b, offset::PIXDIM + 4 * (a + 1), sp[a] as f32);
    }
    put_f32(&mut b, offset::VOX_OFFSET, VOX_OFFSET as f32);
    // slope 0 means "no scaling", which keeps float32 payloads bit-exact
    put_f32(&mut b, offset::SCL_SLOPE, 0.0);
    put_f32(&mut b, offset::SCL_INTER, 0.0);
    b[offset::XYZT_UNITS] = 2; // millimetres
    put_i16(&mut b, offset::QFORM_CODE, 0);
    put_i16(&mut b, offset::SFORM_CODE, 2);
    let m = g.voxel_to_world();
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut b, offset::SROW_X + 16 * r + 4 * c, m[(r, c)] as f32);
        }
    }
    b[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    let payload = &mut b[VOX_OFFSET..];
    for (i, v) in vol.data().iter().enumerate() {
        match vol.dtype() {
            DataType::Uint8 => payload[i] = v.as_f64().round().clamp(0.0, 255.0) as u8,
            DataType::Int16 => {
                let x = v.as_f64().round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                payload[2 * i..2 * i + 2].copy_from_slice(&x.to_le_bytes());
            }
            DataType::Float32 => {
                let x = v.to_f32().unwrap_or(f32::NAN);
                payload[4 * i..4 * i + 4].copy_from_slice(&x.to_le_bytes());
            }
        }
    }
    b
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn load_nifti<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes)
}

/// Writes `vol`; gzip-compressed when the path ends in `.gz`.
pub fn save_nifti<T: Real>(vol: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol);
    let out = if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    save_nifti(&mask.to_volume::<f32>(), path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(load_nifti::<f32>(path)?.threshold(0.5))
}

pub fn save_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    save_nifti(&labels.to_volume::<f32>(), path)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    Ok(LabelVolume::from_volume(&load_nifti::<f32>(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_volume() -> Volume<f32> {
        let g = Geometry::centered([5, 4, 3], [1.5, 2.0, 2.5], [1.0, -2.0, 3.0]).unwrap();
        Volume::from_world_fn(g, |p| (p[0] * 0.37 - p[1] * 1.1 + p[2]) as f32)
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let v = sample_volume();
        let back: Volume<f32> = decode_nifti(&encode_nifti(&v)).unwrap();
        assert_eq!(back.dims(), v.dims());
        for (a, b) in back.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(back.geometry().approx_eq(v.geometry(), 1e-5));
    }

    #[test]
    fn scaling_is_applied() {
        let g = Geometry::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::<f32>::filled(g, 3.0).with_dtype(DataType::Int16);
        let mut bytes = encode_nifti(&v);
        bytes[offset::SCL_SLOPE..offset::SCL_SLOPE + 4].copy_from_slice(&2f32.to_le_bytes());
        bytes[offset::SCL_INTER..offset::SCL_INTER + 4].copy_from_slice(&1f32.to_le_bytes());
        let back: Volume<f64> = decode_nifti(&bytes).unwrap();
        assert_eq!(back.data(), &[7.0]);
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut bytes = encode_nifti(&sample_volume());
        bytes[offset::MAGIC] = b'x';
        assert!(matches!(decode_nifti::<f32>(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_nifti(&sample_volume());
        bytes[offset::DATATYPE..offset::DATATYPE + 2].copy_from_slice(&8i16.to_le_bytes());
        assert!(matches!(decode_nifti::<f32>(&bytes), Err(Error::Unsupported(_))));
        assert!(matches!(decode_nifti::<f32>(&bytes[..100]), Err(Error::Format(_))));
    }

    #[test]
    fn qform_used_when_sform_absent() {
        let mut bytes = encode_nifti(&sample_volume());
        bytes[offset::SFORM_CODE..offset::SFORM_CODE + 2].copy_from_slice(&0i16.to_le_bytes());
        bytes[offset::QFORM_CODE..offset::QFORM_CODE + 2].copy_from_slice(&1i16.to_le_bytes());
        // 90 degrees about z: (b, c, d) = (0, 0, sin 45)
        let s = std::f32::consts::FRAC_1_SQRT_2;
        bytes[offset::QUATERN_B + 8..offset::QUATERN_B + 12].copy_from_slice(&s.to_le_bytes());
        bytes[offset::QOFFSET_X..offset::QOFFSET_X + 4].copy_from_slice(&10f32.to_le_bytes());
        let v: Volume<f32> = decode_nifti(&bytes).unwrap();
        let p = v.geometry().to_world([1.0, 0.0, 0.0]);
        assert!((p[0] - 10.0).abs() < 1e-5 && (p[1] - 1.5).abs() < 1e-5, "{p:?}");
    }

    #[test]
    fn gzip_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        let v = sample_volume();
        save_nifti(&v, &path).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
        let back: Volume<f32> = load_nifti(&path).unwrap();
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let v = sample_volume();
        let err = save_nifti(&v, "/nonexistent-dir/x/y.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
