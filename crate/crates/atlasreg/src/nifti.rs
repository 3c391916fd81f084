//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Images are returned in Hounsfield units (`scl_slope`/`scl_inter`
//! applied), labels as `u16`, displacement fields as 5-D float vectors
//! (`dim[5] = 3`, intent `VECTOR`) in voxel units of their grid. Orientation
//! comes from the `sform` when set, else the `qform`, else the bare voxel
//! spacing. Written files carry matching `sform` and `qform`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use atlasreg_core::field::{DisplacementField, Resolution};
use atlasreg_core::geometry::GridGeometry;
use atlasreg_core::linalg::{det3, Mat3, Vec3};
use atlasreg_core::volume::{ImageVolume, LabelVolume, Volume, AIR_HU};
use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const INTENT_VECTOR: i16 = 1007;
/// Columns whose dot product exceeds this are treated as sheared.
const SHEAR_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => DataType::U8,
            256 => DataType::I8,
            4 => DataType::I16,
            512 => DataType::U16,
            8 => DataType::I32,
            768 => DataType::U32,
            1024 => DataType::I64,
            1280 => DataType::U64,
            16 => DataType::F32,
            64 => DataType::F64,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I8 => 256,
            DataType::I16 => 4,
            DataType::U16 => 512,
            DataType::I32 => 8,
            DataType::U32 => 768,
            DataType::I64 => 1024,
            DataType::U64 => 1280,
            DataType::F32 => 16,
            DataType::F64 => 64,
        }
    }

    fn size(self) -> usize {
        match self {
            DataType::U8 | DataType::I8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::I64 | DataType::U64 | DataType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Header {
    dim: [i16; 8],
    intent_code: i16,
    datatype: DataType,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
}

impl Header {
    fn parse<B: ByteOrder>(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let bad = |e: std::io::Error| Error::format(path, format!("truncated header: {e}"));
        c.set_position(40);
        let mut dim = [0i16; 8];
        for d in &mut dim {
            *d = c.read_i16::<B>().map_err(bad)?;
        }
        c.set_position(68);
        let intent_code = c.read_i16::<B>().map_err(bad)?;
        let code = c.read_i16::<B>().map_err(bad)?;
        let datatype =
            DataType::from_code(code).ok_or_else(|| Error::format(path, format!("unsupported datatype {code}")))?;
        c.set_position(76);
        let mut pixdim = [0f32; 8];
        for p in &mut pixdim {
            *p = c.read_f32::<B>().map_err(bad)?;
        }
        let vox_offset = c.read_f32::<B>().map_err(bad)?;
        let scl_slope = c.read_f32::<B>().map_err(bad)?;
        let scl_inter = c.read_f32::<B>().map_err(bad)?;
        c.set_position(252);
        let qform_code = c.read_i16::<B>().map_err(bad)?;
        let sform_code = c.read_i16::<B>().map_err(bad)?;
        let mut quatern = [0f32; 3];
        for q in &mut quatern {
            *q = c.read_f32::<B>().map_err(bad)?;
        }
        let mut qoffset = [0f32; 3];
        for q in &mut qoffset {
            *q = c.read_f32::<B>().map_err(bad)?;
        }
        let mut srow = [[0f32; 4]; 3];
        for row in &mut srow {
            for v in row.iter_mut() {
                *v = c.read_f32::<B>().map_err(bad)?;
            }
        }
        if &bytes[344..348] != MAGIC {
            return Err(Error::format(path, "missing single-file magic \"n+1\""));
        }
        Ok(Header {
            dim,
            intent_code,
            datatype,
            pixdim,
            vox_offset,
            scl_slope,
            scl_inter,
            qform_code,
            sform_code,
            quatern,
            qoffset,
            srow,
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; DATA_OFFSET];
        let mut c = Cursor::new(&mut out[..]);
        let w = |c: &mut Cursor<&mut [u8]>, pos: u64| c.set_position(pos);
        // writes into a fixed in-memory buffer cannot fail
        c.write_i32::<LittleEndian>(HEADER_SIZE as i32).unwrap();
        w(&mut c, 38);
        c.write_u8(b'r').unwrap();
        w(&mut c, 40);
        for d in self.dim {
            c.write_i16::<LittleEndian>(d).unwrap();
        }
        w(&mut c, 68);
        c.write_i16::<LittleEndian>(self.intent_code).unwrap();
        c.write_i16::<LittleEndian>(self.datatype.code()).unwrap();
        c.write_i16::<LittleEndian>((self.datatype.size() * 8) as i16).unwrap();
        w(&mut c, 76);
        for p in self.pixdim {
            c.write_f32::<LittleEndian>(p).unwrap();
        }
        c.write_f32::<LittleEndian>(self.vox_offset).unwrap();
        c.write_f32::<LittleEndian>(self.scl_slope).unwrap();
        c.write_f32::<LittleEndian>(self.scl_inter).unwrap();
        w(&mut c, 123);
        c.write_u8(2).unwrap(); // xyzt_units: millimetres
        w(&mut c, 252);
        c.write_i16::<LittleEndian>(self.qform_code).unwrap();
        c.write_i16::<LittleEndian>(self.sform_code).unwrap();
        for q in self.quatern.iter().chain(&self.qoffset) {
            c.write_f32::<LittleEndian>(*q).unwrap();
        }
        for row in self.srow {
            for v in row {
                c.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out[344..348].copy_from_slice(MAGIC);
        out
    }

    /// Header for `geometry` with `extra` trailing dimensions (dims 4..).
    fn for_geometry(geometry: &GridGeometry, datatype: DataType, extra: &[i16]) -> Self {
        let dims = geometry.dims();
        let spacing = geometry.spacing();
        let origin = geometry.origin();
        let dir = geometry.direction();
        let mut dim = [1i16; 8];
        dim[0] = (3 + extra.len()) as i16;
        for a in 0..3 {
            dim[a + 1] = dims[a] as i16;
        }
        for (e, d) in extra.iter().zip(&mut dim[4..]) {
            *d = *e;
        }
        let (quatern, qfac) = rotation_to_quatern(dir);
        let mut pixdim = [1f32; 8];
        pixdim[0] = qfac as f32;
        for a in 0..3 {
            pixdim[a + 1] = spacing[a] as f32;
        }
        let mut srow = [[0f32; 4]; 3];
        for r in 0..3 {
            for c in 0..3 {
                srow[r][c] = (dir[r][c] * spacing[c]) as f32;
            }
            srow[r][3] = origin[r] as f32;
        }
        Header {
            dim,
            intent_code: if extra.len() >= 2 { INTENT_VECTOR } else { 0 },
            datatype,
            pixdim,
            vox_offset: DATA_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            qform_code: 1,
            sform_code: 1,
            quatern: quatern.map(|q| q as f32),
            qoffset: origin.map(|o| o as f32),
            srow,
        }
    }

    fn spatial_dims(&self, path: &Path) -> Result<[usize; 3]> {
        let n = self.dim[0];
        if !(1..=7).contains(&n) {
            return Err(Error::format(path, format!("dim[0] = {n}")));
        }
        let mut dims = [1usize; 3];
        for a in 0..3 {
            if a < n as usize {
                let d = self.dim[a + 1];
                if d < 1 {
                    return Err(Error::format(path, format!("dim[{}] = {d}", a + 1)));
                }
                dims[a] = d as usize;
            }
        }
        Ok(dims)
    }

    /// Sizes of dimensions 4..=dim[0].
    fn extra_dims(&self) -> Vec<usize> {
        (4..=self.dim[0].max(3) as usize)
            .map(|a| self.dim[a].max(1) as usize)
            .collect()
    }

    fn geometry(&self, path: &Path) -> Result<GridGeometry> {
        let dims = self.spatial_dims(path)?;
        let (columns, origin): ([Vec3; 3], Vec3) = if self.sform_code > 0 {
            let cols = core::array::from_fn(|c| core::array::from_fn(|r| self.srow[r][c] as f64));
            (cols, core::array::from_fn(|r| self.srow[r][3] as f64))
        } else if self.qform_code > 0 {
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let rot = quatern_to_rotation(self.quatern.map(|q| q as f64), qfac);
            let cols = core::array::from_fn(|c| {
                let s = self.pixdim[c + 1].abs() as f64;
                core::array::from_fn(|r| rot[r][c] * s)
            });
            (cols, self.qoffset.map(|q| q as f64))
        } else {
            let cols = core::array::from_fn(|c| {
                let mut v = [0.0; 3];
                v[c] = self.pixdim[c + 1].abs() as f64;
                v
            });
            (cols, [0.0; 3])
        };
        let mut spacing = [0.0; 3];
        let mut dir: Mat3 = [[0.0; 3]; 3];
        for c in 0..3 {
            let n = columns[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::format(path, format!("degenerate orientation column {c}")));
            }
            spacing[c] = n;
            for r in 0..3 {
                dir[r][c] = columns[c][r] / n;
            }
        }
        let dir = orthonormalize(dir, path)?;
        Ok(GridGeometry::new(dims, spacing, origin, dir)?)
    }
}

/// Gram–Schmidt on the columns after checking they are orthogonal up to
/// float storage precision.
fn orthonormalize(m: Mat3, path: &Path) -> Result<Mat3> {
    let col = |m: &Mat3, c: usize| -> Vec3 { [m[0][c], m[1][c], m[2][c]] };
    let dot = |a: Vec3, b: Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        if dot(col(&m, a), col(&m, b)).abs() > SHEAR_TOL {
            return Err(Error::UnsupportedShape {
                path: path.into(),
                reason: "sheared orientation matrix".into(),
            });
        }
    }
    let mut cols: [Vec3; 3] = [col(&m, 0), col(&m, 1), col(&m, 2)];
    for c in 0..3 {
        for p in 0..c {
            let d = dot(cols[c], cols[p]);
            for r in 0..3 {
                cols[c][r] -= d * cols[p][r];
            }
        }
        let n = dot(cols[c], cols[c]).sqrt();
        for r in 0..3 {
            cols[c][r] /= n;
        }
    }
    Ok(core::array::from_fn(|r| core::array::from_fn(|c| cols[c][r])))
}

fn quatern_to_rotation(q: [f64; 3], qfac: f64) -> Mat3 {
    let [b, c, d] = q;
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            qfac * 2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            qfac * 2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            qfac * (a * a + d * d - c * c - b * b),
        ],
    ]
}

/// Quaternion `(b, c, d)` and `qfac` of an orthonormal direction matrix.
fn rotation_to_quatern(dir: &Mat3) -> ([f64; 3], f64) {
    let mut r = *dir;
    let qfac = if det3(&r) < 0.0 {
        for row in &mut r {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], qfac)
}

/// Whole file contents, gunzipped when gzip magic is present.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_bytes(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let result = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(&header.to_bytes())
            .and_then(|_| enc.write_all(payload))
            .and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&header.to_bytes())
            .and_then(|_| w.write_all(payload))
            .and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

/// Parsed header plus the payload decoded to `f64`, in file order.
fn read_values(path: &Path) -> Result<(Header, Vec<f64>)> {
    let bytes = read_bytes(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            path,
            format!("{} bytes is shorter than a header", bytes.len()),
        ));
    }
    let big = if LittleEndian::read_i32(&bytes[..4]) == HEADER_SIZE as i32 {
        false
    } else if BigEndian::read_i32(&bytes[..4]) == HEADER_SIZE as i32 {
        true
    } else {
        return Err(Error::format(path, "sizeof_hdr is not 348"));
    };
    let header = if big {
        Header::parse::<BigEndian>(&bytes, path)?
    } else {
        Header::parse::<LittleEndian>(&bytes, path)?
    };
    let dims = header.spatial_dims(path)?;
    let count = dims.iter().product::<usize>() * header.extra_dims().iter().product::<usize>();
    let start = header.vox_offset as usize;
    let size = header.datatype.size();
    let end = start + count * size;
    if start < HEADER_SIZE || bytes.len() < end {
        return Err(Error::format(
            path,
            format!("payload needs bytes {start}..{end}, file has {}", bytes.len()),
        ));
    }
    let data = &bytes[start..end];
    let values = if big {
        decode::<BigEndian>(data, header.datatype)
    } else {
        decode::<LittleEndian>(data, header.datatype)
    };
    Ok((header, values))
}

fn decode<B: ByteOrder>(data: &[u8], t: DataType) -> Vec<f64> {
    let n = t.size();
    data.chunks_exact(n)
        .map(|c| match t {
            DataType::U8 => c[0] as f64,
            DataType::I8 => c[0] as i8 as f64,
            DataType::I16 => B::read_i16(c) as f64,
            DataType::U16 => B::read_u16(c) as f64,
            DataType::I32 => B::read_i32(c) as f64,
            DataType::U32 => B::read_u32(c) as f64,
            DataType::I64 => B::read_i64(c) as f64,
            DataType::U64 => B::read_u64(c) as f64,
            DataType::F32 => B::read_f32(c) as f64,
            DataType::F64 => B::read_f64(c),
        })
        .collect()
}

/// Scalar 3-D payload with the header's linear scaling applied.
fn read_scalar(path: &Path) -> Result<(GridGeometry, Vec<f64>)> {
    let (header, values) = read_values(path)?;
    if header.extra_dims().iter().any(|&d| d > 1) {
        return Err(Error::UnsupportedShape {
            path: path.into(),
            reason: format!(
                "expected a 3-D volume, dims are {:?}",
                &header.dim[..=header.dim[0] as usize]
            ),
        });
    }
    let geometry = header.geometry(path)?;
    let (slope, inter) = if header.scl_slope == 0.0 || !header.scl_slope.is_finite() {
        (1.0, 0.0)
    } else {
        (header.scl_slope as f64, header.scl_inter as f64)
    };
    let scaled = if slope == 1.0 && inter == 0.0 {
        values
    } else {
        values.into_iter().map(|v| slope * v + inter).collect()
    };
    Ok((geometry, scaled))
}

/// Reads a CT volume in HU; out-of-domain samples read as air.
pub fn read_volume(path: impl AsRef<Path>) -> Result<ImageVolume> {
    let path = path.as_ref();
    let (geometry, values) = read_scalar(path)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, format!("non-finite intensity at voxel {i}")));
    }
    let data = values.into_iter().map(|v| v as f32).collect();
    Ok(Volume::new(geometry, data, AIR_HU)?)
}

/// Reads a label volume; every value must be a non-negative integer that
/// fits in `u16`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (geometry, values) = read_scalar(path)?;
    let mut data = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        if !(v >= 0.0 && v <= u16::MAX as f64 && v.fract() == 0.0) {
            return Err(Error::format(path, format!("voxel {i} holds {v}, not a label id")));
        }
        data.push(v as u16);
    }
    Ok(Volume::new(geometry, data, 0)?)
}

pub fn write_volume(vol: &ImageVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = Header::for_geometry(vol.geometry(), DataType::F32, &[]);
    let mut payload = vec![0u8; vol.data().len() * 4];
    LittleEndian::write_f32_into(vol.data(), &mut payload);
    write_bytes(path.as_ref(), &header, &payload)
}

pub fn write_labels(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = Header::for_geometry(vol.geometry(), DataType::U16, &[]);
    let mut payload = vec![0u8; vol.data().len() * 2];
    LittleEndian::write_u16_into(vol.data(), &mut payload);
    write_bytes(path.as_ref(), &header, &payload)
}

/// Writes a dense field as a 5-D vector image, components slowest.
pub fn write_field(field: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    let header = Header::for_geometry(field.geometry(), DataType::F32, &[1, 3]);
    let v = field.vectors();
    let n = v.len();
    let mut payload = vec![0u8; n * 3 * 4];
    for c in 0..3 {
        for (o, vec) in v.iter().enumerate() {
            LittleEndian::write_f32(&mut payload[(c * n + o) * 4..], vec[c]);
        }
    }
    write_bytes(path.as_ref(), &header, &payload)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let (header, values) = read_values(path)?;
    let extra = header.extra_dims();
    if extra.len() < 2 || extra[0] != 1 || extra[1] != 3 || extra[2..].iter().any(|&d| d > 1) {
        return Err(Error::UnsupportedShape {
            path: path.into(),
            reason: format!(
                "expected a 3-component vector field, dims are {:?}",
                &header.dim[..=header.dim[0] as usize]
            ),
        });
    }
    let geometry = header.geometry(path)?;
    let n = geometry.len();
    let vectors = (0..n)
        .map(|o| [values[o] as f32, values[n + o] as f32, values[2 * n + o] as f32])
        .collect();
    Ok(DisplacementField::new(geometry, vectors, Resolution::Dense)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        (dir, p)
    }

    fn raw_header(datatype: DataType, dims: [i16; 3], slope: f32, inter: f32) -> Header {
        let g = GridGeometry::unit(dims.map(|d| d as usize));
        let mut h = Header::for_geometry(&g, datatype, &[]);
        h.scl_slope = slope;
        h.scl_inter = inter;
        h
    }

    #[test]
    fn scaled_integer_payload_converts_to_hu() {
        let (_d, p) = tmp("scaled.nii");
        let h = raw_header(DataType::I16, [1, 1, 1], 2.0, -1024.0);
        let mut payload = vec![0u8; 2];
        LittleEndian::write_i16(&mut payload, 600);
        write_bytes(&p, &h, &payload).unwrap();
        assert_eq!(read_volume(&p).unwrap().data(), &[176.0]);
    }

    #[test]
    fn four_d_payload_is_rejected() {
        let (_d, p) = tmp("four.nii");
        let g = GridGeometry::unit([2, 2, 2]);
        let h = Header::for_geometry(&g, DataType::F32, &[3]);
        write_bytes(&p, &h, &[0u8; 8 * 3 * 4]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::UnsupportedShape { .. })));
    }

    #[test]
    fn quaternion_round_trip() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        for dir in [
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[c, -c, 0.0], [c, c, 0.0], [0.0, 0.0, 1.0]],
            [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        ] {
            let (q, qfac) = rotation_to_quatern(&dir);
            let back = quatern_to_rotation(q, qfac);
            for r in 0..3 {
                for k in 0..3 {
                    assert!((back[r][k] - dir[r][k]).abs() < 1e-12, "{dir:?} -> {back:?}");
                }
            }
        }
    }

    #[test]
    fn qform_only_header_gives_geometry() {
        let (_d, p) = tmp("qform.nii");
        let dir = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let g = GridGeometry::new([2, 3, 4], [0.5, 1.0, 2.0], [10.0, -4.0, 3.0], dir).unwrap();
        let mut h = Header::for_geometry(&g, DataType::F32, &[]);
        h.sform_code = 0;
        write_bytes(&p, &h, &[0u8; 24 * 4]).unwrap();
        assert!(read_volume(&p).unwrap().geometry().approx_eq(&g, 1e-6));
    }

    #[test]
    fn missing_magic_is_a_format_error() {
        let (_d, p) = tmp("bad.nii");
        let mut bytes = raw_header(DataType::U8, [1, 1, 1], 1.0, 0.0).to_bytes();
        bytes[344] = b'x';
        bytes.push(0);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { .. })));
    }
}
