use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::HsiCube;
use crate::error::{Error, Result};

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub noise_sigma: f64,
    /// Approximate side of one label region; the scene gets about
    /// `H·W / blob²` Voronoi sites.
    pub blob_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            height: 32,
            width: 32,
            bands: 16,
            noise_sigma: 0.05,
            blob_size: 8,
            seed: 7,
        }
    }
}

const BASELINE: f64 = 0.2;
const AMPLITUDE: f64 = 0.6;

/// Class spectra: a flat baseline plus one Gaussian bump per class, centered
/// at evenly spaced bands with width `C / (2K)`.
pub fn prototypes(classes: usize, bands: usize) -> Vec<Vec<f64>> {
    let width = bands as f64 / (2.0 * classes as f64);
    (0..classes)
        .map(|k| {
            let center = (k as f64 + 0.5) * bands as f64 / classes as f64 - 0.5;
            (0..bands)
                .map(|b| {
                    let d = (b as f64 - center) / width;
                    BASELINE + AMPLITUDE * (-0.5 * d * d).exp()
                })
                .collect()
        })
        .collect()
}

/// Fully labeled synthetic cube: seeded Voronoi label regions, each pixel
/// its class prototype plus `N(0, σ²)` noise per band.
pub fn synth_generate(cfg: &SynthConfig) -> Result<HsiCube> {
    let SynthConfig {
        classes: k,
        height: h,
        width: w,
        bands: c,
        noise_sigma,
        blob_size,
        seed,
    } = *cfg;
    if k < 2 {
        return Err(Error::Data(format!("synthetic scenes need at least 2 classes, got {k}")));
    }
    if c < k {
        return Err(Error::Data(format!("need at least as many bands as classes ({c} < {k})")));
    }
    if h == 0 || w == 0 || blob_size == 0 {
        return Err(Error::Data("synthetic extents and blob size must be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Data(format!("noise sigma must be finite and ≥ 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = ((h * w) as f64 / (blob_size * blob_size) as f64).round().max(k as f64) as usize;
    // Site i carries class i mod K so every class is present.
    let sites: Vec<(f64, f64, i32)> = (0..sites)
        .map(|i| {
            let y = rng.random::<f64>() * h as f64;
            let x = rng.random::<f64>() * w as f64;
            (y, x, (i % k) as i32 + 1)
        })
        .collect();
    let mut labels = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (py, px) = (row as f64 + 0.5, col as f64 + 0.5);
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - py).powi(2) + (a.1 - px).powi(2);
                    let db = (b.0 - py).powi(2) + (b.1 - px).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one site");
            labels.push(nearest.2);
        }
    }
    let protos = prototypes(k, c);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Data(format!("noise distribution: {e}")))?;
    let mut reflectance = Vec::with_capacity(h * w * c);
    for &label in &labels {
        for &v in &protos[label as usize - 1] {
            let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            reflectance.push((v + n) as f32);
        }
    }
    HsiCube::new(h, w, c, reflectance, labels)
}
