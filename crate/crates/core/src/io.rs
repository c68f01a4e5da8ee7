//! File formats: PFM depth maps, binary PGM/PPM images, raw feature maps,
//! calibration JSON and plain-text XYZ point clouds.
//!
//! PFM files are written little-endian (scale `-1.0`) with rows stored
//! bottom-to-top as the format prescribes; invalid depths are written as NaN.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::{DepthMap, Grid, Image3};
use crate::imagery::FeatureMap;

/// Magic bytes opening a feature-map file.
pub const FEATURE_MAGIC: [u8; 4] = *b"XFM1";

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| file_error(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| file_error(path, e))
}

fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| file_error(path, e))
}

/// Header fields of a PNM-family file.
struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    /// `maxval` for PGM/PPM, scale for PFM.
    extra: String,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a PNM header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing raster after PNM header".into()));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Format(format!("bad image dimension {s:?}")))
    };
    Ok(PnmHeader {
        magic,
        width: parse_dim(&tokens[0])?,
        height: parse_dim(&tokens[1])?,
        extra: tokens[2].clone(),
        data_offset: pos + 1,
    })
}

/// Reads a single-channel PFM (`Pf`) file. NaN, infinite and non-positive
/// samples become invalid depths.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let bytes = read_bytes(path.as_ref())?;
    Ok(DepthMap::from_values(decode_pfm(&bytes)?))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Grid<f64>> {
    let header = parse_pnm_header(bytes)?;
    if &header.magic != b"Pf" {
        return Err(Error::Format(
            "only single-channel PFM (Pf) files are supported".into(),
        ));
    }
    let scale: f64 = header
        .extra
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {:?}", header.extra)))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let (w, h) = (header.width, header.height);
    let raster = &bytes[header.data_offset..];
    if raster.len() < w * h * 4 {
        return Err(Error::Format(format!(
            "PFM raster holds {} bytes, expected {}",
            raster.len(),
            w * h * 4
        )));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in raster.chunks_exact(4).take(w * h).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        // rows are stored bottom-to-top
        let (x, row) = (i % w, i / w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn encode_pfm(values: &Grid<f64>) -> Vec<u8> {
    let (w, h) = values.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*values.get(x, row) as f32).to_le_bytes());
        }
    }
    out
}

/// Writes a depth map as PFM; invalid pixels are written as NaN.
pub fn write_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), encode_pfm(depth.values()))?;
    Ok(())
}

/// A decoded binary PGM.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub pixels: Grid<u16>,
    pub maxval: u16,
}

impl Pgm {
    /// Intensities scaled to `[0, 1]` by `maxval`.
    pub fn normalized(&self) -> Grid<f64> {
        let m = self.maxval as f64;
        self.pixels.map(|&v| v as f64 / m)
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let header = parse_pnm_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(Error::Format("expected a binary PGM (P5)".into()));
    }
    let maxval: u32 = header
        .extra
        .parse()
        .ok()
        .filter(|&m| (1..=65535).contains(&m))
        .ok_or_else(|| Error::Format(format!("bad PGM maxval {:?}", header.extra)))?;
    let (w, h) = (header.width, header.height);
    let raster = &bytes[header.data_offset..];
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    if raster.len() < need {
        return Err(Error::Format(format!(
            "PGM raster holds {} bytes, expected {need}",
            raster.len()
        )));
    }
    let data: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        pixels: Grid::from_vec(w, h, data)?,
        maxval: maxval as u16,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    decode_pgm(&read_bytes(path.as_ref())?)
}

/// Encodes a 16-bit PGM (maxval 65535, big-endian samples).
pub fn encode_pgm16(pixels: &Grid<u16>) -> Vec<u8> {
    let (w, h) = pixels.dims();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in pixels.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: impl AsRef<Path>, pixels: &Grid<u16>) -> Result<()> {
    write_bytes(path.as_ref(), encode_pgm16(pixels))?;
    Ok(())
}

/// Decodes an 8-bit binary PPM (P6) into `[0, 1]` RGB.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image3> {
    let header = parse_pnm_header(bytes)?;
    if &header.magic != b"P6" {
        return Err(Error::Format("expected a binary PPM (P6)".into()));
    }
    let maxval: u32 = header
        .extra
        .parse()
        .ok()
        .filter(|&m| (1..=255).contains(&m))
        .ok_or_else(|| Error::Format(format!("unsupported PPM maxval {:?}", header.extra)))?;
    let (w, h) = (header.width, header.height);
    let raster = &bytes[header.data_offset..];
    if raster.len() < w * h * 3 {
        return Err(Error::Format("truncated PPM raster".into()));
    }
    let m = maxval as f64;
    let data = raster[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / m, c[1] as f64 / m, c[2] as f64 / m])
        .collect();
    Grid::from_vec(w, h, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image3> {
    decode_ppm(&read_bytes(path.as_ref())?)
}

/// Encodes `[0, 1]` RGB as an 8-bit PPM (values are clamped and rounded).
pub fn encode_ppm(image: &Image3) -> Vec<u8> {
    let (w, h) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in image.iter() {
        for &c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image3) -> Result<()> {
    write_bytes(path.as_ref(), encode_ppm(image))?;
    Ok(())
}

/// Feature map layout: 4 magic bytes, then `H`, `W`, `C` as little-endian
/// `u32`, then `H·W·C` little-endian `f32` values, channel-last.
pub fn encode_features(features: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + features.data().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    for d in [features.height(), features.width(), features.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 16 || bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("not a feature-map file".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(4), dim(8), dim(12));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("feature map dimensions overflow".into()))?;
    if bytes.len() - 16 < n * 4 {
        return Err(Error::Format("truncated feature-map payload".into()));
    }
    let data = bytes[16..16 + n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureMap::new(w, h, c, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_features(&read_bytes(path.as_ref())?)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMap) -> Result<()> {
    write_bytes(path.as_ref(), encode_features(features))?;
    Ok(())
}

/// Reads an RGB/thermal calibration file. Intrinsics and the rotation are
/// validated after parsing.
pub fn read_calibration(path: impl AsRef<Path>) -> Result<CameraRig> {
    let text = read_text(path.as_ref())?;
    let rig: CameraRig = serde_json::from_str(&text)?;
    rig.validate()?;
    Ok(rig)
}

pub fn write_calibration(path: impl AsRef<Path>, rig: &CameraRig) -> Result<()> {
    write_bytes(path.as_ref(), serde_json::to_string_pretty(rig)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path.as_ref())?)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| file_error(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads `x y z` triples, one per line. Blank lines and `#` comments are
/// ignored.
pub fn read_xyz(reader: impl Read) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        match vals.as_slice() {
            [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => {
                out.push(Vector3::new(*x, *y, *z))
            }
            _ => {
                return Err(Error::Format(format!(
                    "line {}: expected three finite numbers",
                    n + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn write_xyz(mut writer: impl Write, points: &[Vector3<f64>]) -> Result<()> {
    for p in points {
        writeln!(writer, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}
