//! Hyperspectral cube ingestion, center-pixel patch extraction, splits and
//! normalization, plus a synthetic scene generator.
//!
//! # File formats
//!
//! All integers and floats are little-endian.
//!
//! * HSC1 reflectance: `"HSC1" | u32 H | u32 W | u32 C | f32[H·W·C]`,
//!   band-interleaved-by-pixel.
//! * HSL1 labels: `"HSL1" | u32 H | u32 W | i32[H·W]`, 0 = unlabeled.
//!
//! # Converting public scenes
//!
//! Public benchmark scenes usually ship as MATLAB `.mat` files holding an
//! `H×W×C` reflectance array and an `H×W` ground-truth array. Export them
//! with any array tool by writing the magic, the three extents as `u32`,
//! then the reflectance as `f32` in row-major `(row, col, band)` order; do
//! the same for labels with `i32`. In NumPy:
//!
//! ```text
//! with open("scene.hsc", "wb") as f:
//!     f.write(b"HSC1"); f.write(np.array(cube.shape, "<u4").tobytes())
//!     f.write(cube.astype("<f4").tobytes())
//! with open("scene.hsl", "wb") as f:
//!     f.write(b"HSL1"); f.write(np.array(gt.shape, "<u4").tobytes())
//!     f.write(gt.astype("<i4").tobytes())
//! ```

mod cube;
mod patches;
mod synth;

pub use cube::{label_path_for, HsiCube, CUBE_MAGIC, LABEL_MAGIC};
pub use patches::{
    extract_patches, reflect_index, split_dataset, split_indices, BandStats, DataConfig, Patch, PatchDataset,
    SplitIndices,
};
pub use synth::{prototypes, synth_generate, SynthConfig};
