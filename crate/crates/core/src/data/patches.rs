use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cube::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A square neighborhood around one labeled pixel, stored band-first
/// (`C×P×P`) as the model consumes it.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub data: Tensor,
    /// 0-based class index (cube label minus one).
    pub class: usize,
    /// `(row, col)` of the center pixel in the source cube.
    pub coord: (usize, usize),
}

impl Patch {
    /// Leading `size×size` corner of the patch.
    pub fn crop(&self, size: usize) -> Result<Patch> {
        let [c, p, _] = self.data.shape()[..] else {
            unreachable!("patches are three-dimensional");
        };
        if size == 0 || size > p {
            return Err(Error::Data(format!("cannot crop a {p}×{p} patch to {size}×{size}")));
        }
        let src = self.data.data();
        let data = Tensor::from_fn(&[c, size, size], |i| {
            let (b, rest) = (i / (size * size), i % (size * size));
            src[b * p * p + (rest / size) * p + rest % size]
        });
        Ok(Patch {
            data,
            class: self.class,
            coord: self.coord,
        })
    }
}

/// Mirror index without repeating the edge sample: for `n = 4`,
/// `-1 → 1`, `-2 → 2`, `4 → 2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// One patch per labeled pixel, in raster order. Borders are reflect-padded.
pub fn extract_patches(cube: &HsiCube, p: usize) -> Result<Vec<Patch>> {
    if p.is_multiple_of(2) {
        return Err(Error::Data(format!("patch size must be odd, got {p}")));
    }
    let (h, w, c) = (cube.height(), cube.width(), cube.bands());
    let half = (p / 2) as isize;
    let refl = cube.reflectance();
    let mut out = Vec::with_capacity(cube.labeled_count());
    for row in 0..h {
        for col in 0..w {
            let label = cube.label(row, col);
            if label == 0 {
                continue;
            }
            let data = Tensor::from_fn(&[c, p, p], |i| {
                let (b, rest) = (i / (p * p), i % (p * p));
                let sy = reflect_index(row as isize + (rest / p) as isize - half, h);
                let sx = reflect_index(col as isize + (rest % p) as isize - half, w);
                f64::from(refl[(sy * w + sx) * c + b])
            });
            out.push(Patch {
                data,
                class: label as usize - 1,
                coord: (row, col),
            });
        }
    }
    Ok(out)
}

/// Train and test positions into the input slice, each in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Seeded train/test split over class labels. Stratified splits round the
/// per-class train count and keep at least one sample of each class on both
/// sides.
pub fn split_indices(classes: &[usize], train_fraction: f64, seed: u64, stratified: bool) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Data(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "cannot split {} samples into two nonempty sets",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    if stratified {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in classes.iter().enumerate() {
            groups.entry(c).or_default().push(i);
        }
        for (class, mut members) in groups {
            if members.len() < 2 {
                return Err(Error::Data(format!(
                    "class {} has {} sample(s); stratified splitting needs at least 2",
                    class + 1,
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..train_count(members.len(), train_fraction)]);
        }
    } else {
        let mut all: Vec<usize> = (0..classes.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(train_count(classes.len(), train_fraction));
        train = all;
    }
    train.sort_unstable();
    let mut in_train = vec![false; classes.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..classes.len()).filter(|&i| !in_train[i]).collect();
    Ok(SplitIndices { train, test })
}

pub fn split_dataset(
    patches: Vec<Patch>,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    let classes: Vec<usize> = patches.iter().map(|p| p.class).collect();
    let split = split_indices(&classes, train_fraction, seed, stratified)?;
    let mut in_train = vec![false; patches.len()];
    for &i in &split.train {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, t) in patches.into_iter().zip(in_train) {
        if t {
            train.push(p);
        } else {
            test.push(p);
        }
    }
    Ok((train, test))
}

/// Per-band mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    /// Statistics over every element of every patch. Constant bands get a
    /// unit deviation.
    pub fn fit(patches: &[Patch]) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::Data("cannot fit band statistics on zero patches".into()))?;
        let c = first.data.shape()[0];
        let per_band = first.data.numel() / c;
        let mut sum = vec![0.0; c];
        for p in patches {
            for (b, chunk) in p.data.data().chunks_exact(per_band).enumerate() {
                sum[b] += chunk.iter().sum::<f64>();
            }
        }
        let count = (patches.len() * per_band) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0; c];
        for p in patches {
            for (b, chunk) in p.data.data().chunks_exact(per_band).enumerate() {
                sq[b] += chunk.iter().map(|v| (v - mean[b]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, patch: &mut Patch) {
        let c = self.mean.len();
        let per_band = patch.data.numel() / c;
        for (b, chunk) in patch.data.data_mut().chunks_exact_mut(per_band).enumerate() {
            for v in chunk {
                *v = (*v - self.mean[b]) / self.std[b];
            }
        }
    }
}

/// How a cube becomes model-ready patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Odd extraction window centered on the labeled pixel.
    pub patch_size: usize,
    /// Side of the leading square kept for the model (`≤ patch_size`).
    pub input_size: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub stratified: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch_size: 9,
            input_size: 8,
            train_fraction: 0.2,
            split_seed: 0,
            stratified: true,
        }
    }
}

/// Normalized train and test patches plus the train-split statistics.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    pub train: Vec<Patch>,
    pub test: Vec<Patch>,
    pub stats: BandStats,
    pub num_classes: usize,
    pub bands: usize,
    pub config: DataConfig,
}

impl PatchDataset {
    pub fn build(cube: &HsiCube, cfg: &DataConfig) -> Result<Self> {
        if cfg.input_size == 0 || cfg.input_size > cfg.patch_size {
            return Err(Error::Data(format!(
                "input size {} must lie in 1..={}",
                cfg.input_size, cfg.patch_size
            )));
        }
        let patches = extract_patches(cube, cfg.patch_size)?
            .iter()
            .map(|p| p.crop(cfg.input_size))
            .collect::<Result<Vec<_>>>()?;
        if patches.is_empty() {
            return Err(Error::Data("cube has no labeled pixels".into()));
        }
        let (mut train, mut test) = split_dataset(patches, cfg.train_fraction, cfg.split_seed, cfg.stratified)?;
        let stats = BandStats::fit(&train)?;
        for p in train.iter_mut().chain(test.iter_mut()) {
            stats.apply(p);
        }
        Ok(Self {
            train,
            test,
            stats,
            num_classes: cube.num_classes(),
            bands: cube.bands(),
            config: cfg.clone(),
        })
    }
}
