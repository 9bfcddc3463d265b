//! Attached-header NRRD reading and writing.
//!
//! Supported subset: `dimension: 3`, sample types uint8/uint16/float,
//! `encoding: raw|gzip`, little-endian payloads, geometry from `spacings:`
//! or a diagonal `space directions:` block. Unrecognised fields are ignored.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Dims, IntensityType, Mask, Spacing, Volume, VolumeData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Raw,
    Gzip,
}

impl Encoding {
    fn header_name(&self) -> &'static str {
        match self {
            Encoding::Raw => "raw",
            Encoding::Gzip => "gzip",
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(Encoding::Raw),
            "gzip" | "gz" => Ok(Encoding::Gzip),
            other => Err(Error::UnsupportedEncoding(other.to_string())),
        }
    }
}

/// How to interpret the payload of a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridKind {
    /// 8-bit files whose values are all 0 or 1 become masks.
    #[default]
    Auto,
    Volume,
    Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Volume(Volume),
    Mask(Mask),
}

impl Grid {
    pub fn dims(&self) -> Dims {
        match self {
            Grid::Volume(v) => v.dims(),
            Grid::Mask(m) => m.dims(),
        }
    }

    pub fn spacing(&self) -> Spacing {
        match self {
            Grid::Volume(v) => v.spacing(),
            Grid::Mask(m) => m.spacing(),
        }
    }

    pub fn into_mask(self) -> Result<Mask> {
        match self {
            Grid::Mask(m) => Ok(m),
            Grid::Volume(v) => volume_to_mask(v),
        }
    }

    pub fn into_volume(self) -> Volume {
        match self {
            Grid::Volume(v) => v,
            Grid::Mask(m) => mask_to_volume(&m),
        }
    }
}

/// Parsed header fields that matter to this reader.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u8,
    pub kind: IntensityType,
    pub dims: Dims,
    pub spacing: Spacing,
    pub encoding: Encoding,
}

pub fn read_nrrd(path: impl AsRef<Path>) -> Result<Grid> {
    read_nrrd_as(path, GridKind::Auto)
}

pub fn read_nrrd_as(path: impl AsRef<Path>, kind: GridKind) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, kind)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read_nrrd_as(path, GridKind::Volume).map(Grid::into_volume)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_nrrd_as(path, GridKind::Mask)?.into_mask()
}

/// Decodes an in-memory NRRD file.
pub fn decode(bytes: &[u8], kind: GridKind) -> Result<Grid> {
    let mut reader = BufReader::new(bytes);
    let (header, consumed) = parse_header(&mut reader)?;
    let payload = &bytes[consumed..];
    let raw = match header.encoding {
        Encoding::Raw => payload.to_vec(),
        Encoding::Gzip => {
            let mut out = Vec::new();
            GzDecoder::new(payload)
                .read_to_end(&mut out)
                .map_err(|e| Error::Parse(format!("gzip payload: {e}")))?;
            out
        }
    };
    let expected = header.dims.len() * header.kind.byte_width();
    if raw.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: raw.len(),
        });
    }
    let data = match header.kind {
        IntensityType::U8 => VolumeData::U8(raw),
        IntensityType::U16 => VolumeData::U16(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
        IntensityType::F32 => VolumeData::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    let volume = Volume::new(header.dims, header.spacing, data)?;
    match kind {
        GridKind::Volume => Ok(Grid::Volume(volume)),
        GridKind::Mask => volume_to_mask(volume).map(Grid::Mask),
        GridKind::Auto => {
            let binary = matches!(volume.data(), VolumeData::U8(d) if d.iter().all(|&b| b <= 1));
            if binary {
                volume_to_mask(volume).map(Grid::Mask)
            } else {
                Ok(Grid::Volume(volume))
            }
        }
    }
}

fn parse_header(reader: &mut impl BufRead) -> Result<(Header, usize)> {
    let mut consumed = 0usize;
    let mut line = String::new();

    let mut next_line = |line: &mut String| -> Result<Option<()>> {
        line.clear();
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        consumed += n;
        *line = String::from_utf8_lossy(&buf).trim_end_matches(['\n', '\r']).to_string();
        Ok(Some(()))
    };

    next_line(&mut line)?.ok_or_else(|| Error::BadMagic(String::new()))?;
    let version = parse_magic(&line)?;

    let mut kind = None;
    let mut dimension = None;
    let mut sizes = None;
    let mut encoding = None;
    let mut endian = None;
    let mut spacings = None;
    let mut directions = None;

    loop {
        if next_line(&mut line)?.is_none() {
            // header without a payload separator
            break;
        }
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        // key/value pairs (`key:=value`) carry no geometry
        if line.contains(":=") {
            continue;
        }
        let Some((field, value)) = line.split_once(": ") else {
            return Err(Error::MalformedHeader {
                field: line.clone(),
                reason: "expected `field: value`".into(),
            });
        };
        let value = value.trim();
        match field.trim() {
            "type" => kind = Some(parse_type(value)?),
            "dimension" => {
                let d: usize = value.parse().map_err(|_| malformed("dimension", value))?;
                dimension = Some(d);
            }
            "sizes" => sizes = Some(parse_list::<usize>("sizes", value)?),
            "encoding" => encoding = Some(value.parse::<Encoding>()?),
            "endian" => endian = Some(value.to_string()),
            "spacings" => spacings = Some(parse_list::<f64>("spacings", value)?),
            "space directions" => directions = Some(parse_directions(value)?),
            _ => {}
        }
    }

    let kind = kind.ok_or(Error::MissingHeaderField("type"))?;
    let dimension = dimension.ok_or(Error::MissingHeaderField("dimension"))?;
    let sizes = sizes.ok_or(Error::MissingHeaderField("sizes"))?;
    let encoding = encoding.ok_or(Error::MissingHeaderField("encoding"))?;

    if dimension != 3 || sizes.len() != 3 {
        return Err(Error::MalformedHeader {
            field: "dimension".into(),
            reason: format!(
                "only 3D grids are supported (dimension {dimension}, {} sizes)",
                sizes.len()
            ),
        });
    }
    if kind.byte_width() > 1 {
        match endian.as_deref() {
            Some("little") => {}
            Some(other) => return Err(Error::UnsupportedEndian(other.to_string())),
            None => return Err(Error::MissingHeaderField("endian")),
        }
    }

    let spacing = match (spacings, directions) {
        (Some(s), _) => {
            if s.len() != 3 {
                return Err(malformed("spacings", &format!("{s:?}")));
            }
            [s[0], s[1], s[2]]
        }
        (None, Some(d)) => d,
        (None, None) => [1.0; 3],
    };
    let spacing = Spacing(spacing);
    spacing.validate()?;

    let dims = Dims::new(sizes[0], sizes[1], sizes[2]);
    if dims.is_empty() {
        return Err(Error::ZeroDim(dims.as_array()));
    }

    Ok((
        Header {
            version,
            kind,
            dims,
            spacing,
            encoding,
        },
        consumed,
    ))
}

fn parse_magic(line: &str) -> Result<u8> {
    let bad = || Error::BadMagic(line.to_string());
    let rest = line.strip_prefix("NRRD000").ok_or_else(bad)?;
    let v: u8 = rest.parse().map_err(|_| bad())?;
    if (1..=5).contains(&v) {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn parse_type(value: &str) -> Result<IntensityType> {
    match value {
        "uchar" | "unsigned char" | "uint8" | "uint8_t" => Ok(IntensityType::U8),
        "ushort" | "unsigned short" | "unsigned short int" | "uint16" | "uint16_t" => Ok(IntensityType::U16),
        "float" => Ok(IntensityType::F32),
        other => Err(Error::UnsupportedType(other.to_string())),
    }
}

fn malformed(field: &str, value: &str) -> Error {
    Error::MalformedHeader {
        field: field.to_string(),
        reason: format!("cannot parse `{value}`"),
    }
}

fn parse_list<T: std::str::FromStr>(field: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| malformed(field, tok)))
        .collect()
}

/// Parses `(a,0,0) (0,b,0) (0,0,c)`; off-diagonal entries are rejected.
fn parse_directions(value: &str) -> Result<[f64; 3]> {
    let vectors: Vec<&str> = value
        .split(')')
        .map(|s| s.trim().trim_start_matches('('))
        .filter(|s| !s.is_empty())
        .collect();
    if vectors.len() != 3 {
        return Err(malformed("space directions", value));
    }
    let mut out = [0.0; 3];
    for (axis, vec) in vectors.iter().enumerate() {
        let comps = vec
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| malformed("space directions", c)))
            .collect::<Result<Vec<_>>>()?;
        if comps.len() != 3 {
            return Err(malformed("space directions", vec));
        }
        for (j, c) in comps.iter().enumerate() {
            if j != axis && *c != 0.0 {
                return Err(Error::MalformedHeader {
                    field: "space directions".into(),
                    reason: "non-orthogonal or rotated directions are not supported".into(),
                });
            }
        }
        out[axis] = comps[axis].abs();
    }
    Ok(out)
}

fn volume_to_mask(v: Volume) -> Result<Mask> {
    let dims = v.dims();
    let spacing = v.spacing();
    let bits = match v.into_data() {
        VolumeData::U8(d) => d
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::NotBinary),
            })
            .collect::<Result<Vec<_>>>()?,
        VolumeData::U16(d) => d
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::NotBinary),
            })
            .collect::<Result<Vec<_>>>()?,
        VolumeData::F32(d) => d
            .into_iter()
            .map(|b| {
                if b == 0.0 {
                    Ok(false)
                } else if b == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::NotBinary)
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Mask::new(dims, spacing, bits)
}

fn mask_to_volume(m: &Mask) -> Volume {
    let data = VolumeData::U8(m.bits().iter().map(|&b| b as u8).collect());
    Volume::new(m.dims(), m.spacing(), data).expect("mask geometry is valid")
}

pub fn write_nrrd(grid: &Grid, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(grid, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_parts(v.dims(), v.spacing(), v.data(), encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_mask(m: &Mask, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let data = VolumeData::U8(m.bits().iter().map(|&b| b as u8).collect());
    let bytes = encode_parts(m.dims(), m.spacing(), &data, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode(grid: &Grid, encoding: Encoding) -> Result<Vec<u8>> {
    match grid {
        Grid::Volume(v) => encode_parts(v.dims(), v.spacing(), v.data(), encoding),
        Grid::Mask(m) => {
            let data = VolumeData::U8(m.bits().iter().map(|&b| b as u8).collect());
            encode_parts(m.dims(), m.spacing(), &data, encoding)
        }
    }
}

fn encode_parts(dims: Dims, spacing: Spacing, data: &VolumeData, encoding: Encoding) -> Result<Vec<u8>> {
    let type_name = match data {
        VolumeData::U8(_) => "uint8",
        VolumeData::U16(_) => "uint16",
        VolumeData::F32(_) => "float",
    };
    let s = spacing.0;
    let header = format!(
        "NRRD0004\n\
         type: {type_name}\n\
         dimension: 3\n\
         sizes: {} {} {}\n\
         spacings: {} {} {}\n\
         endian: little\n\
         encoding: {}\n\n",
        dims.nx,
        dims.ny,
        dims.nz,
        s[0],
        s[1],
        s[2],
        encoding.header_name()
    );
    let payload: Vec<u8> = match data {
        VolumeData::U8(d) => d.clone(),
        VolumeData::U16(d) => d.iter().flat_map(|v| v.to_le_bytes()).collect(),
        VolumeData::F32(d) => d.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    let mut out = header.into_bytes();
    match encoding {
        Encoding::Raw => out.extend_from_slice(&payload),
        Encoding::Gzip => {
            let mut enc = GzEncoder::new(out, Compression::fast());
            enc.write_all(&payload)?;
            out = enc.finish()?;
        }
    }
    Ok(out)
}
