//! Seeded synthetic segmentation data: Voronoi partitions painted with one color
//! per label, optionally perturbed by uniform noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Scalar;

use super::model::Features;
use super::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub nx: usize,
    pub ny: usize,
    pub labels: usize,
    pub images: usize,
    /// The first `noiseless` images carry no noise.
    pub noiseless: usize,
    /// Half-width of the uniform noise added to the remaining images.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            labels: 3,
            images: 4,
            noiseless: 2,
            noise: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage<T> {
    pub features: Features<T>,
    pub gt: Vec<usize>,
    pub noiseless: bool,
}

/// Color of label `k`: channel `k mod 3` high, the others low.
fn palette(k: usize, ch: usize) -> f64 {
    if k % 3 == ch {
        0.9
    } else {
        0.1 + 0.2 * (k / 3) as f64
    }
}

/// Three-channel images whose label regions are the Voronoi cells of `labels`
/// distinct random sites (cell `k` gets label `k`).
pub fn synthetic_dataset<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<SyntheticImage<T>>> {
    let grid = Grid::new(spec.nx, spec.ny)?;
    let n = grid.npix();
    if spec.labels == 0 || spec.labels > n {
        return Err(Error::Config(format!(
            "need between 1 and {n} labels, got {}",
            spec.labels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.images);
    for img in 0..spec.images {
        let sites: Vec<(f64, f64)> = sample(&mut rng, n, spec.labels)
            .into_iter()
            .map(|pi| ((pi % grid.nx) as f64, (pi / grid.nx) as f64))
            .collect();
        let gt: Vec<usize> = (0..n)
            .map(|pi| {
                let (x, y) = ((pi % grid.nx) as f64, (pi / grid.nx) as f64);
                let mut best = 0;
                let mut dbest = f64::INFINITY;
                for (k, &(sx, sy)) in sites.iter().enumerate() {
                    let d = (x - sx).powi(2) + (y - sy).powi(2);
                    if d < dbest {
                        best = k;
                        dbest = d;
                    }
                }
                best
            })
            .collect();
        let noiseless = img < spec.noiseless;
        let mut data = Vec::with_capacity(3 * n);
        for ch in 0..3 {
            for &k in &gt {
                let mut v = palette(k, ch);
                if !noiseless && spec.noise > 0.0 {
                    v += rng.gen_range(-spec.noise..=spec.noise);
                }
                data.push(T::lit(v.clamp(0.0, 1.0)));
            }
        }
        out.push(SyntheticImage {
            features: Features::new(grid, 3, data)?,
            gt,
            noiseless,
        });
    }
    Ok(out)
}
