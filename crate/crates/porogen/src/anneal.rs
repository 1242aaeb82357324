//! Simulated-annealing reconstruction: a non-neural baseline that minimizes
//! pattern (+ optional S2) energy with porosity-preserving pixel swaps while
//! informed pixels stay frozen.
//!
//! The pattern histogram is maintained incrementally: every window code is
//! cached and a pixel flip XORs one bit per covering window. Energy deltas are
//! therefore exact in integer counts; the floating-point distance is
//! revalidated against a full recomputation after every sweep.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{binarize, BinaryImage, ConditionalInput};
use crate::morph::{
    pattern_distribution, two_point_correlation, CurveStatistic, Direction, MorphError,
    PatternDistribution, Phase,
};

#[derive(Debug, Error)]
pub enum AnnealError {
    #[error("invalid anneal config: {0}")]
    BadConfig(String),
    #[error("target pattern template {target} does not match config template {cfg}")]
    TemplateMismatch { target: usize, cfg: usize },
    #[error(
        "target porosity {phi} infeasible: needs {needed} pore pixels among {unknown} unknown ones"
    )]
    InfeasiblePorosity { phi: f64, needed: i64, unknown: usize },
    #[error(transparent)]
    Morph(#[from] MorphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealConfig {
    pub initial_temperature: f64,
    /// Geometric cooling factor applied after each sweep.
    pub cooling: f64,
    pub sweeps: usize,
    pub weight_pattern: f64,
    pub weight_porosity: f64,
    /// Adds an XY-averaged pore-phase S2 term with this weight when set.
    pub weight_s2: Option<f64>,
    pub s2_r_max: usize,
    pub template_n: usize,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            initial_temperature: 1e-3,
            cooling: 0.95,
            sweeps: 200,
            weight_pattern: 1.0,
            weight_porosity: 1.0,
            weight_s2: None,
            s2_r_max: 16,
            template_n: 3,
            seed: 0,
        }
    }
}

/// Statistics the annealer drives the image towards.
#[derive(Debug, Clone)]
pub struct TargetStats {
    pub pattern: PatternDistribution,
    pub phi: f64,
    pub s2: Option<CurveStatistic>,
}

/// Extracts target statistics from a reference image.
pub fn target_stats_from_image(
    img: &BinaryImage,
    template_n: usize,
    s2_r_max: Option<usize>,
) -> Result<TargetStats, AnnealError> {
    let pattern = pattern_distribution(img, template_n)?;
    let phi = crate::grid::porosity(img).map_err(|e| AnnealError::BadConfig(e.to_string()))?;
    let s2 = match s2_r_max {
        Some(r) => Some(two_point_correlation(img, Phase::Pore, Direction::XYAveraged, r)?),
        None => None,
    };
    Ok(TargetStats { pattern, phi, s2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub sweep: usize,
    pub temperature: f64,
    pub pattern_energy: f64,
    pub total_energy: f64,
}

pub struct AnnealResult {
    pub image: BinaryImage,
    pub trace: Vec<EnergyRecord>,
    /// Largest |incremental - recomputed| energy gap seen at sweep
    /// validations.
    pub max_validation_drift: f64,
}

pub const TRACE_HEADER: &str = "sweep,temperature,pattern_energy,total_energy";

pub fn write_trace_csv(trace: &[EnergyRecord], out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.sweep, r.temperature, r.pattern_energy, r.total_energy)?;
    }
    Ok(())
}

/// Incrementally maintained pattern histogram and optional S2 counts.
struct EnergyState {
    width: usize,
    height: usize,
    n: usize,
    /// Current pixel phases.
    pixels: Vec<u8>,
    /// Cached code per window, indexed by top-left corner.
    codes: Vec<u32>,
    counts: Vec<i64>,
    window_count: f64,
    target_dense: Vec<f64>,
    pattern_dist: f64,
    /// S2 pair hit counts per lag for X and Y directions.
    s2: Option<S2State>,
}

struct S2State {
    r_max: usize,
    hits_x: Vec<i64>,
    hits_y: Vec<i64>,
    target: Vec<f64>,
    energy: f64,
}

impl EnergyState {
    fn new(img: &BinaryImage, target: &TargetStats, cfg: &AnnealConfig) -> Result<Self, AnnealError> {
        let (w, h, n) = (img.width(), img.height(), cfg.template_n);
        let wx = w - n + 1;
        let wy = h - n + 1;
        let mut codes = vec![0u32; wx * wy];
        for y0 in 0..wy {
            for x0 in 0..wx {
                codes[y0 * wx + x0] = crate::morph::window_code(img, x0, y0, n) as u32;
            }
        }
        let target_dense = target.pattern.to_dense();
        let mut counts = vec![0i64; target_dense.len()];
        for &c in &codes {
            counts[c as usize] += 1;
        }
        let s2 = match (&target.s2, cfg.weight_s2) {
            (Some(curve), Some(_)) => {
                let r_max = cfg.s2_r_max.min(curve.r_max());
                let count_dir = |dx: usize, dy: usize| -> Vec<i64> {
                    (0..=r_max)
                        .map(|r| {
                            let mut hits = 0i64;
                            for y in 0..h - r * dy {
                                for x in 0..w - r * dx {
                                    if img.get(x, y) == 1 && img.get(x + r * dx, y + r * dy) == 1 {
                                        hits += 1;
                                    }
                                }
                            }
                            hits
                        })
                        .collect()
                };
                Some(S2State {
                    r_max,
                    hits_x: count_dir(1, 0),
                    hits_y: count_dir(0, 1),
                    target: curve.values[..=r_max].to_vec(),
                    energy: 0.0,
                })
            }
            _ => None,
        };
        let mut state = Self {
            width: w,
            height: h,
            n,
            pixels: img.data().to_vec(),
            codes,
            counts,
            window_count: (wx * wy) as f64,
            target_dense,
            pattern_dist: 0.0,
            s2,
        };
        state.pattern_dist = state.full_pattern_distance();
        if let Some(s2) = state.s2.as_mut() {
            s2.energy = s2_energy(s2, w, h);
        }
        Ok(state)
    }

    fn full_pattern_distance(&self) -> f64 {
        self.counts
            .iter()
            .zip(&self.target_dense)
            .map(|(&c, &t)| {
                let d = c as f64 / self.window_count - t;
                d * d
            })
            .sum()
    }

    /// Flips one pixel and updates every affected window code and count.
    fn flip(&mut self, idx: usize) {
        let (w, h, n) = (self.width, self.height, self.n);
        let (x, y) = (idx % w, idx / w);
        let new_phase = 1 - self.pixels[idx];
        self.pixels[idx] = new_phase;
        let wx = w - n + 1;
        let x_lo = x.saturating_sub(n - 1).min(w - n);
        let x_hi = x.min(w - n);
        let y_lo = y.saturating_sub(n - 1).min(h - n);
        let y_hi = y.min(h - n);
        let m = n * n;
        let inv = 1.0 / self.window_count;
        for y0 in y_lo..=y_hi {
            if y0 + n <= y {
                continue;
            }
            for x0 in x_lo..=x_hi {
                if x0 + n <= x {
                    continue;
                }
                let widx = y0 * wx + x0;
                let bit = (y - y0) * n + (x - x0);
                let old = self.codes[widx] as usize;
                let new = old ^ (1usize << (m - 1 - bit));
                self.codes[widx] = new as u32;
                for (code, delta) in [(old, -1i64), (new, 1i64)] {
                    let t = self.target_dense[code];
                    let before = self.counts[code] as f64 * inv - t;
                    self.counts[code] += delta;
                    let after = self.counts[code] as f64 * inv - t;
                    self.pattern_dist += after * after - before * before;
                }
            }
        }
        if let Some(s2) = self.s2.as_mut() {
            let sign = if new_phase == 1 { 1i64 } else { -1i64 };
            // r = 0: the (p, p) pair
            s2.hits_x[0] += sign;
            s2.hits_y[0] += sign;
            for r in 1..=s2.r_max {
                if x >= r && self.pixels[idx - r] == 1 {
                    s2.hits_x[r] += sign;
                }
                if x + r < w && self.pixels[idx + r] == 1 {
                    s2.hits_x[r] += sign;
                }
                if y >= r && self.pixels[idx - r * w] == 1 {
                    s2.hits_y[r] += sign;
                }
                if y + r < h && self.pixels[idx + r * w] == 1 {
                    s2.hits_y[r] += sign;
                }
            }
            s2.energy = s2_energy(s2, w, h);
        }
    }

    fn energy(&self, cfg: &AnnealConfig, porosity_term: f64) -> f64 {
        let mut e = cfg.weight_pattern * self.pattern_dist + cfg.weight_porosity * porosity_term;
        if let (Some(s2), Some(ws2)) = (&self.s2, cfg.weight_s2) {
            e += ws2 * s2.energy;
        }
        e
    }

    /// Recomputes the floating-point energies from integer counts.
    fn revalidate(&mut self) -> f64 {
        let full = self.full_pattern_distance();
        let drift = (full - self.pattern_dist).abs();
        self.pattern_dist = full;
        drift
    }
}

fn s2_energy(s2: &S2State, w: usize, h: usize) -> f64 {
    let mut e = 0.0;
    for r in 0..=s2.r_max {
        let tx = ((w - r) * h) as f64;
        let ty = ((h - r) * w) as f64;
        let avg = 0.5 * (s2.hits_x[r] as f64 / tx + s2.hits_y[r] as f64 / ty);
        let d = avg - s2.target[r];
        e += d * d;
    }
    e
}

/// Anneals the unknown pixels of `cond` towards `target` statistics. Informed
/// pixels are never touched; swap proposals preserve porosity exactly.
pub fn anneal_reconstruct(
    cond: &ConditionalInput,
    target: &TargetStats,
    cfg: &AnnealConfig,
) -> Result<AnnealResult, AnnealError> {
    if !(cfg.cooling > 0.0 && cfg.cooling < 1.0) {
        return Err(AnnealError::BadConfig(format!("cooling {} not in (0,1)", cfg.cooling)));
    }
    if cfg.initial_temperature <= 0.0 {
        return Err(AnnealError::BadConfig("initial temperature must be positive".into()));
    }
    if target.pattern.template_size() != cfg.template_n {
        return Err(AnnealError::TemplateMismatch {
            target: target.pattern.template_size(),
            cfg: cfg.template_n,
        });
    }
    if cfg.template_n * cfg.template_n > 16 {
        return Err(AnnealError::BadConfig("template N*N must be <= 16".into()));
    }
    let (w, h) = (cond.width(), cond.height());
    if cfg.template_n > w.min(h) {
        return Err(AnnealError::BadConfig("template larger than image".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut img = binarize(&cond.values, 0.5);
    let unknown: Vec<usize> = cond
        .mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &informed)| !informed)
        .map(|(i, _)| i)
        .collect();

    if unknown.is_empty() {
        // fully informed input: nothing to reconstruct
        return Ok(AnnealResult { image: img, trace: Vec::new(), max_validation_drift: 0.0 });
    }

    // initialize unknown pixels at the target porosity
    let informed_pore: i64 = cond
        .mask
        .data()
        .iter()
        .zip(img.data())
        .filter(|(&m, _)| m)
        .map(|(_, &v)| v as i64)
        .sum();
    let wanted_total = (target.phi * (w * h) as f64).round() as i64;
    let needed = wanted_total - informed_pore;
    if needed < 0 || needed as usize > unknown.len() {
        return Err(AnnealError::InfeasiblePorosity {
            phi: target.phi,
            needed,
            unknown: unknown.len(),
        });
    }
    let mut shuffled = unknown.clone();
    shuffled.shuffle(&mut rng);
    let (pore_part, solid_part) = shuffled.split_at(needed as usize);
    let mut pore_list = pore_part.to_vec();
    let mut solid_list = solid_part.to_vec();
    for &i in &pore_list {
        img.set(i % w, i / w, 1);
    }
    for &i in &solid_list {
        img.set(i % w, i / w, 0);
    }

    let phi_now = img.porosity().map_err(|e| AnnealError::BadConfig(e.to_string()))?;
    let porosity_term = (phi_now - target.phi) * (phi_now - target.phi);

    let mut state = EnergyState::new(&img, target, cfg)?;
    let mut temperature = cfg.initial_temperature;
    let mut trace = Vec::with_capacity(cfg.sweeps + 1);
    trace.push(EnergyRecord {
        sweep: 0,
        temperature,
        pattern_energy: cfg.weight_pattern * state.pattern_dist,
        total_energy: state.energy(cfg, porosity_term),
    });
    let mut max_drift = 0.0f64;

    let moves_per_sweep = unknown.len();
    for sweep in 1..=cfg.sweeps {
        if !pore_list.is_empty() && !solid_list.is_empty() {
            for _ in 0..moves_per_sweep {
                let pi = rng.random_range(0..pore_list.len());
                let si = rng.random_range(0..solid_list.len());
                let (p_idx, s_idx) = (pore_list[pi], solid_list[si]);
                let before = state.energy(cfg, porosity_term);
                state.flip(p_idx);
                state.flip(s_idx);
                let delta = state.energy(cfg, porosity_term) - before;
                let accept = delta < 0.0 || rng.random::<f64>() < (-delta / temperature).exp();
                if accept {
                    pore_list[pi] = s_idx;
                    solid_list[si] = p_idx;
                } else {
                    state.flip(s_idx);
                    state.flip(p_idx);
                }
            }
        }
        let drift = state.revalidate();
        max_drift = max_drift.max(drift);
        trace.push(EnergyRecord {
            sweep,
            temperature,
            pattern_energy: cfg.weight_pattern * state.pattern_dist,
            total_energy: state.energy(cfg, porosity_term),
        });
        temperature *= cfg.cooling;
    }

    let result = BinaryImage::new(w, h, state.pixels);
    // hard-data preservation is structural; re-check anyway
    debug_assert!(cond
        .mask
        .data()
        .iter()
        .zip(result.data())
        .zip(binarize(&cond.values, 0.5).data())
        .all(|((&m, &r), &orig)| !m || r == orig));
    Ok(AnnealResult { image: result, trace, max_validation_drift: max_drift })
}
