//! Speech feature carriers, the EMO1 binary file format and fixed-length
//! context windowing.
//!
//! Every on-disk feature kind (F0 contours, momenta, MFCC-like spectra) uses
//! the same EMO1 container; only the column count differs. An EMO1 file is
//! little-endian: the magic `EMO1`, a `u32` version (1), `u32` rows, `u32`
//! cols, then `rows * cols` binary64 values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const EMO1_MAGIC: &[u8; 4] = b"EMO1";
pub const EMO1_VERSION: u32 = 1;
pub const EMO1_HEADER_LEN: usize = 16;

/// Analysis frame step in milliseconds.
pub const DEFAULT_FRAME_STEP_MS: f64 = 5.0;
/// Spectral feature dimension (23 MFCCs).
pub const DEFAULT_MFCC_DIM: usize = 23;
/// Context length in frames; 640 ms at 5 ms per frame.
pub const DEFAULT_CONTEXT_FRAMES: usize = 128;

/// Dense row-major matrix of binary64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Precondition(format!(
                "feature matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Precondition(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let rows = values.len();
        Self::new(rows, 1, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.rows {
            return Err(Error::Precondition(format!(
                "row range {start}..{} out of bounds for {} rows",
                start + len,
                self.rows
            )));
        }
        let data = self.data[start * self.cols..(start + len) * self.cols].to_vec();
        Self::new(len, self.cols, data)
    }

    /// Encodes the matrix as an EMO1 byte buffer.
    pub fn to_emo1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMO1_HEADER_LEN + 8 * self.data.len());
        encode_emo1(&mut out, self.rows, self.cols, &self.data);
        out
    }

    /// Decodes an EMO1 buffer that must contain exactly one matrix.
    pub fn from_emo1_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, used) = decode_emo1(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after EMO1 payload",
                bytes.len() - used
            )));
        }
        Ok(m)
    }
}

pub(crate) fn encode_emo1(out: &mut Vec<u8>, rows: usize, cols: usize, data: &[f64]) {
    out.extend_from_slice(EMO1_MAGIC);
    out.extend_from_slice(&EMO1_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one EMO1 record from the front of `bytes`, returning the matrix
/// and the number of bytes consumed.
pub(crate) fn decode_emo1(bytes: &[u8]) -> Result<(FeatureMatrix, usize)> {
    if bytes.len() < EMO1_HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != EMO1_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != EMO1_VERSION {
        return Err(Error::Format(format!("unsupported EMO1 version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("shape overflow".into()))?;
    let end = EMO1_HEADER_LEN + 8 * count;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "truncated payload: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let data = bytes[EMO1_HEADER_LEN..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = FeatureMatrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((m, end))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_emo1_bytes(&bytes)
}

pub fn write_feature_file(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    if m.rows * m.cols != m.data.len() || m.rows == 0 || m.cols == 0 {
        return Err(Error::Precondition(format!(
            "{}x{} matrix carries {} values",
            m.rows,
            m.cols,
            m.data.len()
        )));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&m.to_emo1_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Per-frame fundamental frequency in Hz with a voicing mask.
///
/// In raw form unvoiced frames carry 0 Hz. [`F0Contour::interpolate_unvoiced`]
/// fills them while keeping the mask, so downstream metrics can still select
/// voiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    values: Vec<f64>,
    voiced: Vec<bool>,
    frame_step: f64,
}

impl F0Contour {
    pub fn new(values: Vec<f64>, voiced: Vec<bool>, frame_step: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("empty F0 contour".into()));
        }
        if values.len() != voiced.len() {
            return Err(Error::Precondition(format!(
                "{} F0 values but {} voicing flags",
                values.len(),
                voiced.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NumericInput(format!(
                "F0 frame {i} is {}",
                values[i]
            )));
        }
        if !(frame_step > 0.0) {
            return Err(Error::Precondition(format!("frame step {frame_step}")));
        }
        Ok(Self {
            values,
            voiced,
            frame_step,
        })
    }

    /// Raw contour: a frame is voiced iff its value is positive.
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        let voiced = values.iter().map(|v| *v > 0.0).collect();
        Self::new(values, voiced, DEFAULT_FRAME_STEP_MS)
    }

    /// Fully voiced contour.
    pub fn voiced(values: Vec<f64>) -> Result<Self> {
        let voiced = vec![true; values.len()];
        Self::new(values, voiced, DEFAULT_FRAME_STEP_MS)
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Result<Self> {
        if m.cols() != 1 {
            return Err(Error::Shape(format!(
                "F0 file must have one column, got {}",
                m.cols()
            )));
        }
        Self::from_raw(m.data().to_vec())
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::column(self.values.clone()).expect("contour is non-empty")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voiced_mask(&self) -> &[bool] {
        &self.voiced
    }

    pub fn frame_step(&self) -> f64 {
        self.frame_step
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.voiced.clone(), self.frame_step)
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start..start + len].to_vec(),
            voiced: self.voiced[start..start + len].to_vec(),
            frame_step: self.frame_step,
        }
    }

    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.values.reverse();
        out.voiced.reverse();
        out
    }

    /// Fills unvoiced frames by linear interpolation between the nearest
    /// voiced neighbours, holding the edge value at either boundary.
    pub fn interpolate_unvoiced(&self) -> Result<Self> {
        let anchors: Vec<usize> = (0..self.len())
            .filter(|&i| self.voiced[i] && self.values[i] > 0.0)
            .collect();
        let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
            return Err(Error::Data("contour has no voiced frames".into()));
        };
        let mut values = self.values.clone();
        values[..first].fill(self.values[first]);
        values[last + 1..].fill(self.values[last]);
        for w in anchors.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (self.values[a], self.values[b]);
            for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
                let frac = (i - a) as f64 / (b - a) as f64;
                *v = va + frac * (vb - va);
            }
        }
        Ok(Self {
            values,
            voiced: self.voiced.clone(),
            frame_step: self.frame_step,
        })
    }
}

/// T x D spectral frames (MFCC-like coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    data: FeatureMatrix,
}

impl SpectralFrames {
    pub fn new(data: FeatureMatrix) -> Result<Self> {
        if let Some(v) = data.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("spectral value {v}")));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.data
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            data: self.data.slice_rows(start, len)?,
        })
    }
}

/// Per-frame initial momenta of a registration.
#[derive(Debug, Clone, PartialEq)]
pub struct Momenta {
    values: Vec<f64>,
}

impl Momenta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("momentum {i} is {}", values[i])));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Result<Self> {
        if m.cols() != 1 {
            return Err(Error::Shape(format!(
                "momenta file must have one column, got {}",
                m.cols()
            )));
        }
        Self::new(m.data().to_vec())
    }

    pub fn to_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::column(self.values.clone())
    }
}

/// One fixed-length slice of an utterance.
#[derive(Debug, Clone)]
pub struct Window {
    pub start: usize,
    pub f0: F0Contour,
    pub spec: SpectralFrames,
}

/// Window start offsets covering `0..len`: `0, hop, 2*hop, ...` while the
/// window fits, plus one right-aligned tail window when the last aligned
/// window stops short of `len`.
pub fn window_starts(len: usize, context: usize, hop: usize) -> Result<Vec<usize>> {
    if context == 0 || hop == 0 {
        return Err(Error::Precondition(format!(
            "context {context} and hop {hop} must be positive"
        )));
    }
    if len < context {
        return Err(Error::InputTooShort { len, context });
    }
    let mut starts: Vec<usize> = (0..=len - context).step_by(hop).collect();
    if (len - context) % hop != 0 {
        starts.push(len - context);
    }
    Ok(starts)
}

pub fn window_contexts(
    f0: &F0Contour,
    spec: &SpectralFrames,
    context: usize,
    hop: usize,
) -> Result<Vec<Window>> {
    if f0.len() != spec.frames() {
        return Err(Error::Shape(format!(
            "F0 has {} frames, spectrum has {}",
            f0.len(),
            spec.frames()
        )));
    }
    window_starts(f0.len(), context, hop)?
        .into_iter()
        .map(|start| {
            Ok(Window {
                start,
                f0: f0.slice(start, context),
                spec: spec.slice(start, context)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_one_matrix_matches_hand_encoded_bytes() {
        let m = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = m.to_emo1_bytes();
        let expected: Vec<u8> = [
            "454d4f31", // EMO1
            "01000000", // version
            "02000000", // rows
            "01000000", // cols
            "000000000000f03f", // 1.0
            "0000000000000040", // 2.0
        ]
        .concat()
        .as_bytes()
        .chunks(2)
        .map(|h| u8::from_str_radix(std::str::from_utf8(h).unwrap(), 16).unwrap())
        .collect();
        assert_eq!(bytes.len(), 32);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = FeatureMatrix::column(vec![1.0]).unwrap().to_emo1_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureMatrix::from_emo1_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_and_wrong_version_are_format_errors() {
        let bytes = FeatureMatrix::column(vec![1.0, 2.0]).unwrap().to_emo1_bytes();
        assert!(matches!(
            FeatureMatrix::from_emo1_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            FeatureMatrix::from_emo1_bytes(&v2),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            FeatureMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn missing_file_is_io_not_format() {
        let err = read_feature_file("/nonexistent/definitely/missing.emo1").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_starts(128, 128, 64).unwrap(), vec![0]);
        assert_eq!(window_starts(200, 128, 64).unwrap(), vec![0, 64, 72]);
        assert_eq!(window_starts(1280, 128, 128).unwrap().len(), 10);
        assert!(matches!(
            window_starts(100, 128, 64),
            Err(Error::InputTooShort { len: 100, context: 128 })
        ));
    }

    #[test]
    fn default_context_is_640_ms() {
        assert_eq!(DEFAULT_CONTEXT_FRAMES as f64 * DEFAULT_FRAME_STEP_MS, 640.0);
    }

    #[test]
    fn interpolation_fills_gaps_and_holds_edges() {
        let c = F0Contour::from_raw(vec![0.0, 100.0, 0.0, 0.0, 130.0, 0.0]).unwrap();
        let filled = c.interpolate_unvoiced().unwrap();
        assert_eq!(filled.values(), &[100.0, 100.0, 110.0, 120.0, 130.0, 130.0]);
        assert_eq!(filled.voiced_mask(), c.voiced_mask());
        assert!(F0Contour::from_raw(vec![0.0; 4])
            .unwrap()
            .interpolate_unvoiced()
            .is_err());
    }

    #[test]
    fn negative_f0_rejected() {
        assert!(F0Contour::from_raw(vec![100.0, -1.0]).is_err());
    }
}
