//! Synthetic two-phase media, mask geometries and dataset assembly.
//!
//! Media are built by thresholding a smooth random field at the rank that
//! realizes the target porosity exactly (up to pixel quantization), so `phi`
//! is an invariant of the construction rather than a statistical outcome.
//! Everything derives from (spec, seed) and is bit-reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{make_conditional_input, save_image, BinaryImage, GridError, Mask};
use crate::train::Sample;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid medium spec: {0}")]
    BadMedium(String),
    #[error("mask does not fit: {0}")]
    MaskDoesNotFit(String),
    #[error("could not place {placed} of {wanted} non-overlapping squares after {attempts} attempts")]
    MaskPlacement { placed: usize, wanted: usize, attempts: usize },
    #[error("dataset needs at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediumKind {
    /// Thresholded isotropically smoothed Gaussian noise.
    Blob,
    /// Boolean model: union of random disks.
    Disks,
    /// Noise smoothed along the (+1,+1) diagonal, giving elongated pores.
    AnisotropicBlob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub kind: MediumKind,
    pub phi: f64,
    pub correlation_length: f64,
    pub seed: u64,
}

impl MediumSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(SynthError::BadMedium(format!("phi {} not in (0, 1)", self.phi)));
        }
        if self.correlation_length < 1.0 {
            return Err(SynthError::BadMedium(format!(
                "correlation length {} must be >= 1 pixel",
                self.correlation_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MaskSpec {
    /// `side x side` square in the top-left corner.
    CornerSquare { side: usize },
    /// `count` non-overlapping squares placed uniformly at random.
    RandomSquares { side: usize, count: usize },
    /// Full-width strip of the given height at the top.
    HorizontalStrip { height: usize },
    /// Full-height strip of the given width at the left.
    VerticalStrip { width: usize },
}

/// Separable reflect-padded 1D Gaussian blur along a direction.
fn directional_blur(field: &[f64], width: usize, height: usize, sigma: f64, dir: (i64, i64)) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|t| (-0.5 * (t as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let reflect = |v: i64, len: i64| -> usize {
        // mirror without repeating the edge sample
        let mut v = v;
        loop {
            if v < 0 {
                v = -v;
            } else if v >= len {
                v = 2 * len - 2 - v;
            } else {
                return v as usize;
            }
        }
    };
    let mut out = vec![0.0; field.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                let t = i as i64 - radius;
                let sx = reflect(x + t * dir.0, width as i64);
                let sy = reflect(y + t * dir.1, height as i64);
                acc += w * field[sy * width + sx];
            }
            out[y as usize * width + x as usize] = acc / norm;
        }
    }
    out
}

/// Binarizes a scalar field so that exactly `round(phi * len)` pixels (the
/// largest values) become pore.
fn threshold_by_rank(field: &[f64], phi: f64) -> Vec<u8> {
    let pore_count = ((phi * field.len() as f64).round() as usize).min(field.len());
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| {
        field[b]
            .partial_cmp(&field[a])
            .expect("field values are finite")
            .then(a.cmp(&b))
    });
    let mut data = vec![0u8; field.len()];
    for &idx in order.iter().take(pore_count) {
        data[idx] = 1;
    }
    data
}

pub fn generate_medium(spec: &MediumSpec, size: usize) -> Result<BinaryImage, SynthError> {
    spec.validate()?;
    if size == 0 {
        return Err(SynthError::BadMedium("size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = match spec.kind {
        MediumKind::Blob => {
            let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
            let bx = directional_blur(&noise, size, size, spec.correlation_length, (1, 0));
            directional_blur(&bx, size, size, spec.correlation_length, (0, 1))
        }
        MediumKind::AnisotropicBlob => {
            let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
            // strong smoothing along the SE diagonal, mild isotropic cleanup
            let diag = directional_blur(&noise, size, size, spec.correlation_length, (1, 1));
            let bx = directional_blur(&diag, size, size, 1.0, (1, 0));
            directional_blur(&bx, size, size, 1.0, (0, 1))
        }
        MediumKind::Disks => {
            let r_mean = 1.5 * spec.correlation_length;
            let area = std::f64::consts::PI * r_mean * r_mean;
            let count = ((size * size) as f64 * spec.phi * 2.0 / area).ceil().max(8.0) as usize;
            let disks: Vec<(f64, f64, f64)> = (0..count)
                .map(|_| {
                    (
                        rng.random_range(0.0..size as f64),
                        rng.random_range(0.0..size as f64),
                        r_mean * rng.random_range(0.7..1.3),
                    )
                })
                .collect();
            // signed "depth inside the nearest disk"
            let mut field = vec![f64::NEG_INFINITY; size * size];
            for (i, slot) in field.iter_mut().enumerate() {
                let (px, py) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                for &(cx, cy, r) in &disks {
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    let v = r - d;
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
            field
        }
    };
    Ok(BinaryImage::new(size, size, threshold_by_rank(&field, spec.phi)))
}

pub fn generate_mask(spec: &MaskSpec, size: usize, seed: u64) -> Result<Mask, SynthError> {
    let mut mask = Mask::all_unknown(size, size);
    let fit = |ok: bool, what: String| if ok { Ok(()) } else { Err(SynthError::MaskDoesNotFit(what)) };
    match *spec {
        MaskSpec::CornerSquare { side } => {
            fit(side >= 1 && side <= size, format!("{side}px square on {size}px image"))?;
            for y in 0..side {
                for x in 0..side {
                    mask.set(x, y, true);
                }
            }
        }
        MaskSpec::HorizontalStrip { height } => {
            fit(height >= 1 && height <= size, format!("{height}px strip on {size}px image"))?;
            for y in 0..height {
                for x in 0..size {
                    mask.set(x, y, true);
                }
            }
        }
        MaskSpec::VerticalStrip { width } => {
            fit(width >= 1 && width <= size, format!("{width}px strip on {size}px image"))?;
            for y in 0..size {
                for x in 0..width {
                    mask.set(x, y, true);
                }
            }
        }
        MaskSpec::RandomSquares { side, count } => {
            fit(
                side >= 1 && side <= size && count >= 1,
                format!("{count} squares of {side}px on {size}px image"),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut placed: Vec<(usize, usize)> = Vec::with_capacity(count);
            let max_attempts = 1000 * count;
            let mut attempts = 0;
            while placed.len() < count && attempts < max_attempts {
                attempts += 1;
                let x0 = rng.random_range(0..=size - side);
                let y0 = rng.random_range(0..=size - side);
                let overlaps = placed.iter().any(|&(px, py)| {
                    x0 < px + side && px < x0 + side && y0 < py + side && py < y0 + side
                });
                if !overlaps {
                    placed.push((x0, y0));
                }
            }
            if placed.len() < count {
                return Err(SynthError::MaskPlacement {
                    placed: placed.len(),
                    wanted: count,
                    attempts: max_attempts,
                });
            }
            for (x0, y0) in placed {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_count: usize,
    pub image_size: usize,
    pub medium: MediumSpec,
    pub mask: MaskSpec,
    pub per_sample_masks: bool,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-sample seed derivation (splitmix64 over the dataset seed and index).
pub fn derive_seed(seed: u64, index: u64, stream: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E3779B97F4A7C15) ^ stream.wrapping_mul(0xD1B54A32D192ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn pair_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    let pairs = dir.join("pairs");
    (
        pairs.join(format!("{index:04}_input.pgm")),
        pairs.join(format!("{index:04}_mask.pgm")),
        pairs.join(format!("{index:04}_target.pgm")),
    )
}

/// Generates `n` (input, mask, target) PGM triples plus `manifest.json` with a
/// 70/30 train/test split.
pub fn build_dataset(
    dir: &Path,
    n: usize,
    size: usize,
    medium: &MediumSpec,
    mask: &MaskSpec,
    per_sample_masks: bool,
    seed: u64,
) -> Result<DatasetManifest, SynthError> {
    if n < 10 {
        return Err(SynthError::TooFewSamples(n));
    }
    medium.validate()?;
    // fail early on impossible geometry
    generate_mask(mask, size, derive_seed(seed, 0, 1))?;
    let pairs_dir = dir.join("pairs");
    fs::create_dir_all(&pairs_dir).map_err(|source| SynthError::Io {
        path: pairs_dir.display().to_string(),
        source,
    })?;

    let results: Vec<Result<(), SynthError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let med = MediumSpec { seed: derive_seed(seed, i as u64, 0), ..*medium };
            let target = generate_medium(&med, size)?;
            let mask_seed = if per_sample_masks {
                derive_seed(seed, i as u64, 1)
            } else {
                derive_seed(seed, 0, 1)
            };
            let m = generate_mask(mask, size, mask_seed)?;
            let cond = make_conditional_input(&target, &m)?;
            let input_img = BinaryImage::new(
                size,
                size,
                cond.values.data().iter().map(|&v| (v >= 0.5) as u8).collect(),
            );
            let (input_path, mask_path, target_path) = pair_paths(dir, i);
            save_image(&input_img, &input_path)?;
            m.save(&mask_path)?;
            save_image(&target, &target_path)?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 2));
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let train_len = (0.7 * n as f64).round() as usize;
    let mut train: Vec<usize> = indices[..train_len].to_vec();
    let mut test: Vec<usize> = indices[train_len..].to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let manifest = DatasetManifest {
        sample_count: n,
        image_size: size,
        medium: *medium,
        mask: *mask,
        per_sample_masks,
        seed,
        train,
        test,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, json).map_err(|source| SynthError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, SynthError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the samples at the given indices from a dataset directory.
pub fn load_samples(dir: &Path, indices: &[usize]) -> Result<Vec<Sample>, SynthError> {
    indices
        .iter()
        .map(|&i| {
            let (_, mask_path, target_path) = pair_paths(dir, i);
            let target = crate::grid::load_image(&target_path)?;
            let mask = Mask::load(&mask_path)?;
            let cond = make_conditional_input(&target, &mask)?;
            Ok(Sample { cond, target })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::porosity;
    use crate::morph::{lineal_path, Direction, Phase};

    #[test]
    fn blob_medium_hits_target_porosity() {
        for &phi in &[0.1, 0.3, 0.5, 0.9] {
            let spec = MediumSpec {
                kind: MediumKind::Blob,
                phi,
                correlation_length: 3.0,
                seed: 11,
            };
            let img = generate_medium(&spec, 64).unwrap();
            let realized = porosity(&img).unwrap();
            assert!(
                (realized - phi).abs() <= 1.0 / (64.0 * 64.0),
                "phi {phi} -> {realized}"
            );
        }
    }

    #[test]
    fn media_are_seed_deterministic() {
        for kind in [MediumKind::Blob, MediumKind::Disks, MediumKind::AnisotropicBlob] {
            let spec = MediumSpec { kind, phi: 0.3, correlation_length: 2.0, seed: 7 };
            assert_eq!(generate_medium(&spec, 32).unwrap(), generate_medium(&spec, 32).unwrap());
            let other = MediumSpec { seed: 8, ..spec };
            assert_ne!(
                generate_medium(&spec, 32).unwrap(),
                generate_medium(&other, 32).unwrap()
            );
        }
    }

    #[test]
    fn anisotropic_blobs_elongate_along_the_diagonal() {
        let mut se_sum = 0.0;
        let mut x_sum = 0.0;
        for seed in 0..50 {
            let spec = MediumSpec {
                kind: MediumKind::AnisotropicBlob,
                phi: 0.35,
                correlation_length: 4.0,
                seed,
            };
            let img = generate_medium(&spec, 48).unwrap();
            let se = lineal_path(&img, Phase::Pore, Direction::SeDiagonal, 4).unwrap();
            let lx = lineal_path(&img, Phase::Pore, Direction::X, 4).unwrap();
            se_sum += se.values[4];
            x_sum += lx.values[4];
        }
        assert!(
            se_sum / 50.0 > x_sum / 50.0,
            "mean L_se(4)={} should exceed L_x(4)={}",
            se_sum / 50.0,
            x_sum / 50.0
        );
    }

    #[test]
    fn disks_medium_looks_like_disks() {
        let spec = MediumSpec { kind: MediumKind::Disks, phi: 0.25, correlation_length: 3.0, seed: 4 };
        let img = generate_medium(&spec, 64).unwrap();
        let realized = porosity(&img).unwrap();
        assert!((realized - 0.25).abs() <= 1.0 / 4096.0);
    }

    #[test]
    fn mask_pixel_counts_match_geometry() {
        let m = generate_mask(&MaskSpec::CornerSquare { side: 26 }, 128, 0).unwrap();
        assert_eq!(m.informed_count(), 676);
        let m = generate_mask(&MaskSpec::RandomSquares { side: 13, count: 4 }, 128, 1).unwrap();
        assert_eq!(m.informed_count(), 676);
        let m = generate_mask(&MaskSpec::HorizontalStrip { height: 20 }, 128, 0).unwrap();
        assert_eq!(m.informed_count(), 2560);
        let m = generate_mask(&MaskSpec::VerticalStrip { width: 10 }, 128, 0).unwrap();
        assert_eq!(m.informed_count(), 1280);
    }

    #[test]
    fn random_squares_do_not_overlap() {
        let m = generate_mask(&MaskSpec::RandomSquares { side: 8, count: 6 }, 64, 33).unwrap();
        // non-overlap implies the informed count is exactly count * side^2
        assert_eq!(m.informed_count(), 6 * 64);
        // same seed, same placement
        let again = generate_mask(&MaskSpec::RandomSquares { side: 8, count: 6 }, 64, 33).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn impossible_masks_error() {
        assert!(matches!(
            generate_mask(&MaskSpec::CornerSquare { side: 200 }, 128, 0),
            Err(SynthError::MaskDoesNotFit(_))
        ));
        assert!(matches!(
            generate_mask(&MaskSpec::RandomSquares { side: 48, count: 4 }, 64, 0),
            Err(SynthError::MaskPlacement { .. })
        ));
    }

    #[test]
    fn dataset_split_and_reproducibility() {
        let dir = tempfile::tempdir().unwrap();
        let medium = MediumSpec { kind: MediumKind::Blob, phi: 0.3, correlation_length: 2.0, seed: 0 };
        let mask = MaskSpec::CornerSquare { side: 5 };
        let m1 = build_dataset(dir.path(), 20, 16, &medium, &mask, false, 42).unwrap();
        assert_eq!(m1.train.len(), 14);
        assert_eq!(m1.test.len(), 6);
        let mut all: Vec<usize> = m1.train.iter().chain(&m1.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());

        let bytes1 = fs::read(dir.path().join("manifest.json")).unwrap();
        let pair1 = fs::read(dir.path().join("pairs/0003_target.pgm")).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        build_dataset(dir2.path(), 20, 16, &medium, &mask, false, 42).unwrap();
        assert_eq!(bytes1, fs::read(dir2.path().join("manifest.json")).unwrap());
        assert_eq!(pair1, fs::read(dir2.path().join("pairs/0003_target.pgm")).unwrap());
    }

    #[test]
    fn six_hundred_samples_split_420_180() {
        let train_len = (0.7f64 * 600.0).round() as usize;
        assert_eq!(train_len, 420);
        assert_eq!(600 - train_len, 180);
    }

    #[test]
    fn stored_inputs_match_targets_on_informed_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let medium = MediumSpec { kind: MediumKind::Blob, phi: 0.4, correlation_length: 1.5, seed: 9 };
        let mask = MaskSpec::RandomSquares { side: 4, count: 2 };
        let manifest = build_dataset(dir.path(), 10, 16, &medium, &mask, false, 5).unwrap();
        let samples = load_samples(dir.path(), &manifest.train).unwrap();
        assert_eq!(samples.len(), 7);
        for s in &samples {
            for y in 0..16 {
                for x in 0..16 {
                    if s.cond.mask.is_informed(x, y) {
                        assert_eq!(s.cond.values.get(x, y), s.target.get(x, y) as f64);
                    } else {
                        assert_eq!(s.cond.values.get(x, y), 0.0);
                    }
                }
            }
        }
    }
}
