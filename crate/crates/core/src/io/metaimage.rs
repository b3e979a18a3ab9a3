//! MetaImage (`.mha` / `.mhd` + raw) volumes and 3-channel deformation files.
//!
//! Only uncompressed little-endian payloads are handled. Element types are
//! `MET_SHORT`, `MET_FLOAT` and `MET_DOUBLE`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, Image3};
use crate::real::{Precision, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Short,
    Float,
    Double,
}

impl ElementType {
    pub fn tag(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }

    fn of_precision(p: Precision) -> Self {
        match p {
            Precision::F32 => ElementType::Float,
            Precision::F64 => ElementType::Double,
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaHeader {
    pub grid: Grid3,
    pub element_type: ElementType,
    pub channels: usize,
    /// `None` when the payload follows the header in the same file.
    pub data_file: Option<PathBuf>,
}

impl MetaHeader {
    pub fn payload_len(&self) -> usize {
        self.grid.len() * self.channels * self.element_type.size()
    }
}

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn parse_numbers<V: std::str::FromStr>(path: &Path, key: &str, value: &str, n: usize) -> Result<Vec<V>> {
    let out: Vec<V> = value
        .split_whitespace()
        .map(|t| t.parse::<V>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| malformed(path, format!("{key}: cannot parse '{value}'")))?;
    if out.len() != n {
        return Err(malformed(path, format!("{key}: expected {n} values, got {}", out.len())));
    }
    Ok(out)
}

fn is_true(v: &str) -> bool {
    matches!(v.to_ascii_lowercase().as_str(), "true" | "1")
}

/// Parse the header at the start of `bytes`; returns it with the offset of
/// the first payload byte.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<(MetaHeader, usize)> {
    let mut pos = 0;
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut ty = None;
    let mut channels = 1usize;
    let data_file = loop {
        if pos >= bytes.len() {
            return Err(malformed(path, "missing ElementDataFile"));
        }
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| malformed(path, "header is not text"))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| malformed(path, format!("line without '=': '{line}'")))?;
        match key {
            "ObjectType" if !value.eq_ignore_ascii_case("image") => {
                return Err(malformed(path, format!("ObjectType {value} is not Image")))
            }
            "NDims" => ndims = Some(parse_numbers::<usize>(path, key, value, 1)?[0]),
            "DimSize" => dims = Some(value.to_string()),
            "ElementSpacing" | "ElementSize" if key == "ElementSpacing" || spacing.is_none() => {
                spacing = Some(value.to_string())
            }
            "Offset" | "Origin" | "Position" => origin = Some(value.to_string()),
            "ElementNumberOfChannels" => channels = parse_numbers::<usize>(path, key, value, 1)?[0],
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if is_true(value) => {
                return Err(malformed(path, "big-endian payloads are not supported"))
            }
            "CompressedData" if is_true(value) => {
                return Err(malformed(path, "compressed payloads are not supported"))
            }
            "ElementType" => {
                ty = Some(match value {
                    "MET_SHORT" => ElementType::Short,
                    "MET_FLOAT" => ElementType::Float,
                    "MET_DOUBLE" => ElementType::Double,
                    other => {
                        return Err(Error::UnsupportedElementType {
                            path: path.to_path_buf(),
                            ty: other.to_string(),
                        })
                    }
                })
            }
            "ElementDataFile" => break value.to_string(),
            _ => {}
        }
    };
    if ndims != Some(3) {
        return Err(malformed(path, format!("NDims must be 3, got {ndims:?}")));
    }
    let dims = parse_numbers::<usize>(path, "DimSize", dims.as_deref().ok_or_else(|| malformed(path, "missing DimSize"))?, 3)?;
    let spacing = match spacing {
        Some(s) => parse_numbers::<f64>(path, "ElementSpacing", &s, 3)?,
        None => vec![1.0; 3],
    };
    let origin = match origin {
        Some(s) => parse_numbers::<f64>(path, "Offset", &s, 3)?,
        None => vec![0.0; 3],
    };
    let grid = Grid3::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], [origin[0], origin[1], origin[2]])
        .map_err(|e| malformed(path, e.to_string()))?;
    let element_type = ty.ok_or_else(|| malformed(path, "missing ElementType"))?;
    if channels == 0 {
        return Err(malformed(path, "ElementNumberOfChannels must be positive"));
    }
    let data_file = if data_file.eq_ignore_ascii_case("local") {
        None
    } else {
        Some(path.parent().unwrap_or(Path::new("")).join(data_file))
    };
    Ok((
        MetaHeader {
            grid,
            element_type,
            channels,
            data_file,
        },
        pos,
    ))
}

fn read_raw(path: &Path) -> Result<(MetaHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (header, start) = parse_header(path, &bytes)?;
    let external;
    let (payload, payload_path): (&[u8], &Path) = match &header.data_file {
        None => (&bytes[start..], path),
        Some(p) => {
            external = fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            (&external, p.as_path())
        }
    };
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: payload_path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    let values = match header.element_type {
        ElementType::Short => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        ElementType::Float => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        ElementType::Double => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((header, values))
}

/// Read only the header of a volume file.
pub fn read_header(path: impl AsRef<Path>) -> Result<MetaHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_header(path, &bytes).map(|(h, _)| h)
}

/// Read a scalar volume. Integer data is promoted to `f64`.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Image3<f64>> {
    let path = path.as_ref();
    let (header, values) = read_raw(path)?;
    if header.channels != 1 {
        return Err(malformed(path, format!("expected a scalar volume, got {} channels", header.channels)));
    }
    Image3::new(header.grid, values)
}

fn header_text(grid: &Grid3, ty: ElementType, channels: usize, data_file: &str) -> String {
    let fmt3 = |v: [f64; 3]| format!("{:?} {:?} {:?}", v[0], v[1], v[2]);
    let d = grid.dims();
    let mut s = String::new();
    s.push_str("ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\nCompressedData = False\n");
    s.push_str("TransformMatrix = 1 0 0 0 1 0 0 0 1\n");
    s.push_str(&format!("Offset = {}\n", fmt3(grid.origin())));
    s.push_str(&format!("ElementSpacing = {}\n", fmt3(grid.spacing())));
    s.push_str(&format!("DimSize = {} {} {}\n", d[0], d[1], d[2]));
    if channels != 1 {
        s.push_str(&format!("ElementNumberOfChannels = {channels}\n"));
    }
    s.push_str(&format!("ElementType = {}\nElementDataFile = {data_file}\n", ty.tag()));
    s
}

fn write_raw(path: &Path, grid: &Grid3, ty: ElementType, channels: usize, payload: &[u8]) -> Result<()> {
    let is_mhd = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    let werr = |p: &Path, e| Error::io(format!("writing {}", p.display()), e);
    if is_mhd {
        let raw = path.with_extension("raw");
        let name = raw.file_name().unwrap().to_string_lossy().into_owned();
        fs::write(path, header_text(grid, ty, channels, &name)).map_err(|e| werr(path, e))?;
        fs::write(&raw, payload).map_err(|e| werr(&raw, e))
    } else {
        let mut f = fs::File::create(path).map_err(|e| werr(path, e))?;
        f.write_all(header_text(grid, ty, channels, "LOCAL").as_bytes())
            .and_then(|_| f.write_all(payload))
            .map_err(|e| werr(path, e))
    }
}

/// Write a scalar volume at its native precision. A `.mhd` path gets a
/// sibling `.raw` payload; anything else is written as one file.
pub fn write_volume<T: Real>(img: &Image3<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut payload = Vec::with_capacity(img.values().len() * 8);
    for &v in img.values() {
        v.write_le(&mut payload);
    }
    write_raw(path.as_ref(), img.grid(), ElementType::of_precision(T::PRECISION), 1, &payload)
}

/// Write world-coordinate deformation components, channel-interleaved.
pub fn write_deformation<T: Real>(y: &DeformationField<T>, path: impl AsRef<Path>) -> Result<()> {
    let n = y.grid().len();
    let mut payload = Vec::with_capacity(n * 3 * 8);
    for i in 0..n {
        for d in 0..3 {
            y.component(d)[i].write_le(&mut payload);
        }
    }
    write_raw(path.as_ref(), y.grid(), ElementType::of_precision(T::PRECISION), 3, &payload)
}

pub fn read_deformation(path: impl AsRef<Path>) -> Result<DeformationField<f64>> {
    let path = path.as_ref();
    let (header, values) = read_raw(path)?;
    if header.channels != 3 {
        return Err(malformed(path, format!("deformation needs 3 channels, got {}", header.channels)));
    }
    let mut comps = [Vec::new(), Vec::new(), Vec::new()];
    for (d, c) in comps.iter_mut().enumerate() {
        *c = values.iter().skip(d).step_by(3).copied().collect();
    }
    DeformationField::new(header.grid, comps)
}
