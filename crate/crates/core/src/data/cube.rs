use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::io_util::{dim_u32, put_u32, read_file, write_file, ByteReader};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";

/// A hyperspectral cube with its label map.
///
/// Reflectance is stored band-interleaved-by-pixel (`H×W×C`, row-major).
/// Labels are `H×W` with 0 for unlabeled pixels and classes `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    reflectance: Vec<f32>,
    labels: Vec<i32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, reflectance: Vec<f32>, labels: Vec<i32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!(
                "cube extents must be positive, got {height}×{width}×{bands}"
            )));
        }
        if reflectance.len() != height * width * bands {
            return Err(Error::Data(format!(
                "reflectance has {} values, expected {height}·{width}·{bands}",
                reflectance.len()
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Data(format!(
                "label map has {} values, expected {height}·{width}",
                labels.len()
            )));
        }
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite reflectance at element {i}")));
        }
        if let Some(i) = labels.iter().position(|&l| l < 0) {
            return Err(Error::Data(format!("negative label {} at pixel {i}", labels[i])));
        }
        Ok(Self {
            height,
            width,
            bands,
            reflectance,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Largest label value, `K`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn label(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.width + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.reflectance[start..start + self.bands]
    }

    /// Number of pixels with a nonzero label.
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    pub fn encode_reflectance(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + 4 * self.reflectance.len());
        out.extend_from_slice(CUBE_MAGIC);
        put_u32(&mut out, dim_u32("height", self.height)?);
        put_u32(&mut out, dim_u32("width", self.width)?);
        put_u32(&mut out, dim_u32("bands", self.bands)?);
        for v in &self.reflectance {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn encode_labels(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + 4 * self.labels.len());
        out.extend_from_slice(LABEL_MAGIC);
        put_u32(&mut out, dim_u32("height", self.height)?);
        put_u32(&mut out, dim_u32("width", self.width)?);
        for v in &self.labels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses an HSC1 payload and an HSL1 payload.
    pub fn decode(cube: &[u8], labels: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(cube);
        r.magic(CUBE_MAGIC)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let bands = r.u32()? as usize;
        if height == 0 || width == 0 || bands == 0 {
            return Err(FormatError::InvalidValue {
                offset: 4,
                detail: format!("zero extent in {height}×{width}×{bands}"),
            });
        }
        let start = r.offset();
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| FormatError::InvalidValue {
                offset: 4,
                detail: "cube extents overflow".into(),
            })?;
        let reflectance = r.f32s(count)?;
        r.finish()?;
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::InvalidValue {
                offset: start + 4 * i,
                detail: format!("non-finite reflectance {}", reflectance[i]),
            });
        }

        let mut r = ByteReader::new(labels);
        r.magic(LABEL_MAGIC)?;
        let lh = r.u32()? as usize;
        let lw = r.u32()? as usize;
        if (lh, lw) != (height, width) {
            return Err(FormatError::ShapeMismatch {
                offset: 4,
                detail: format!("label map is {lh}×{lw} but cube is {height}×{width}"),
            });
        }
        let start = r.offset();
        let labels = r.i32s(height * width)?;
        r.finish()?;
        if let Some(i) = labels.iter().position(|&l| l < 0) {
            return Err(FormatError::InvalidValue {
                offset: start + 4 * i,
                detail: format!("negative label {}", labels[i]),
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            reflectance,
            labels,
        })
    }

    /// Writes the reflectance (HSC1) and label (HSL1) files.
    pub fn save(&self, cube_path: &Path, label_path: &Path) -> Result<()> {
        write_file(cube_path, &self.encode_reflectance()?)?;
        write_file(label_path, &self.encode_labels()?)
    }

    pub fn load(cube_path: &Path, label_path: &Path) -> Result<Self> {
        let cube = read_file(cube_path)?;
        let labels = read_file(label_path)?;
        Ok(Self::decode(&cube, &labels)?)
    }
}

/// Conventional label-file path next to a cube file: `scene.hsc` → `scene.hsl`.
pub fn label_path_for(cube_path: &Path) -> std::path::PathBuf {
    cube_path.with_extension("hsl")
}
