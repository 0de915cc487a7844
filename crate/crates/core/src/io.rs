//! File formats.
//!
//! - Raw float arrays: one ASCII header line `height width channels`, then
//!   `h*w*c` little-endian 64-bit floats in planar (channel-major) order.
//!   The exact interchange format for images, sinograms, point clouds
//!   (rows x columns x 1), and dense matrices.
//! - 16-bit binary PGM (`P5`, maxval 65535) for viewing grayscale images.
//! - Mask files: either whitespace-separated kept indices (0-based) or a
//!   single `box x0 y0 w h` line hiding that region in every channel.
//! - CSV tables with a `# mcg-<name> v1` schema line preceding the header.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};
use crate::operators::InpaintingMask;

/// A raw float array with its planar shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Array1<f64>,
}

impl RawArray {
    pub fn new(height: usize, width: usize, channels: usize, data: Array1<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(McgError::DimensionMismatch {
                expected: height * width * channels,
                got: data.len(),
                context: "raw array payload",
            });
        }
        Ok(RawArray {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel image from a 2D array.
    pub fn from_image(img: &Array2<f64>) -> Self {
        RawArray {
            height: img.nrows(),
            width: img.ncols(),
            channels: 1,
            data: Array1::from_iter(img.iter().cloned()),
        }
    }

    /// Point cloud / matrix: `rows x cols x 1`.
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self::from_image(m)
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        if self.channels != 1 {
            return Err(McgError::Parse("expected a single-channel raw array".into()));
        }
        Array2::from_shape_vec((self.height, self.width), self.data.to_vec())
            .map_err(|e| McgError::Parse(e.to_string()))
    }
}

pub fn write_raw(path: impl AsRef<Path>, arr: &RawArray) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + arr.data.len() * 8);
    writeln!(buf, "{} {} {}", arr.height, arr.width, arr.channels)?;
    for v in arr.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawArray> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| McgError::Parse("raw file missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| McgError::Parse("raw header not utf-8".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| McgError::Parse(format!("bad raw header: {header}")))?;
    if dims.len() != 3 {
        return Err(McgError::Parse(format!("raw header needs 3 dims: {header}")));
    }
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let payload = &bytes[newline + 1..];
    if payload.len() != h * w * c * 8 {
        return Err(McgError::Parse(format!(
            "raw payload is {} bytes, expected {}",
            payload.len(),
            h * w * c * 8
        )));
    }
    let data = Array1::from_iter(
        payload
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap())),
    );
    RawArray::new(h, w, c, data)
}

/// Binary 16-bit PGM of values clamped to `[0, 1]`.
pub fn write_pgm(path: impl AsRef<Path>, img: &Array2<f64>) -> Result<()> {
    let (h, w) = (img.nrows(), img.ncols());
    let mut buf = Vec::with_capacity(64 + h * w * 2);
    write!(buf, "P5\n{w} {h}\n65535\n")?;
    for v in img.iter() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parses a mask file against a planar image shape.
pub fn parse_mask(text: &str, height: usize, width: usize, channels: usize) -> Result<InpaintingMask> {
    let trimmed = text.trim();
    let n = height * width * channels;
    if let Some(rest) = trimmed.strip_prefix("box") {
        let vals: Vec<usize> = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| McgError::Parse(format!("bad box spec: {trimmed}")))?;
        if vals.len() != 4 {
            return Err(McgError::Parse("box spec needs: box x0 y0 w h".into()));
        }
        return InpaintingMask::hide_box(height, width, channels, vals[0], vals[1], vals[2], vals[3]);
    }
    let kept: Vec<usize> = trimmed
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| McgError::Parse("mask file must list kept indices".into()))?;
    InpaintingMask::new(n, kept)
}

pub fn read_mask(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<InpaintingMask> {
    let text = std::fs::read_to_string(path)?;
    parse_mask(&text, height, width, channels)
}

pub fn write_mask_indices(path: impl AsRef<Path>, mask: &InpaintingMask) -> Result<()> {
    let mut text = String::new();
    for idx in mask.kept() {
        writeln!(text, "{idx}").expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Formats a float for CSV: shortest round-trip, `inf` / `nan` lowercase,
/// empty string for absent values.
pub fn csv_float(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) if x.is_infinite() => {
            if x > 0.0 { "inf".into() } else { "-inf".into() }
        }
        Some(x) => format!("{x}"),
    }
}

/// A CSV table with a versioned schema line. `schema` is e.g.
/// `mcg-metrics v1`; `header` the column names.
pub struct CsvTable {
    path: std::path::PathBuf,
    schema: &'static str,
    header: &'static str,
}

impl CsvTable {
    pub fn new(path: impl AsRef<Path>, schema: &'static str, header: &'static str) -> Self {
        CsvTable {
            path: path.as_ref().to_path_buf(),
            schema,
            header,
        }
    }

    /// Appends one row, creating the file with its schema line and header
    /// first if needed.
    pub fn append(&self, row: &str) -> Result<()> {
        let exists = self.path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        if !exists {
            writeln!(file, "# {}", self.schema)?;
            writeln!(file, "{}", self.header)?;
        }
        writeln!(file, "{row}")?;
        Ok(())
    }

    /// Writes the whole table at once (schema, header, rows).
    pub fn write_all(&self, rows: &[String]) -> Result<()> {
        let mut text = format!("# {}\n{}\n", self.schema, self.header);
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(&self.path, text)?;
        Ok(())
    }
}

/// Plain-text training loss log: `iteration loss` per line.
pub fn write_loss_log(path: impl AsRef<Path>, history: &[(usize, f64)]) -> Result<()> {
    let mut text = String::new();
    for (iter, loss) in history {
        writeln!(text, "{iter} {loss}").expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}
