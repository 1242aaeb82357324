//! Morphological descriptors of two-phase images: two-point correlation,
//! lineal-path and two-point cluster functions, plus the N×N pattern
//! distribution used by the pattern loss.
//!
//! Conventions (fixed for reproducibility):
//! - boundaries are non-periodic; pairs, segments and windows must lie fully
//!   inside the image,
//! - `L(r)` is the probability that `r + 1` consecutive collinear pixels all
//!   lie in the phase, so `L(0)` equals the phase fraction like `S2(0)`,
//! - pattern codes flatten the window row-major with the first pixel as the
//!   most significant bit,
//! - `XYaveraged` is the arithmetic mean of the X and Y curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as IoWrite;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BinaryImage;

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("lag r_max={r_max} out of range, must be < {limit} for this direction")]
    LagOutOfRange { r_max: usize, limit: usize },
    #[error("template size {n} too large for {width}x{height} image")]
    TemplateTooLarge { n: usize, width: usize, height: usize },
    #[error("template sizes differ: {0} vs {1}")]
    TemplateMismatch(usize, usize),
    #[error("cannot average: {0}")]
    HeterogeneousCurves(String),
    #[error("cannot average an empty curve list")]
    EmptyCurveList,
    #[error("curve csv parse error on line {line}: {message}")]
    CsvParse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorKind {
    S2,
    L,
    C2,
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorKind::S2 => "S2",
            DescriptorKind::L => "L",
            DescriptorKind::C2 => "C2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Pore,
    Solid,
}

impl Phase {
    #[inline]
    pub fn label(self) -> u8 {
        match self {
            Phase::Pore => 1,
            Phase::Solid => 0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pore => "pore",
            Phase::Solid => "solid",
        })
    }
}

/// Sampling direction for the directional descriptors. `SeDiagonal` steps by
/// (+1, +1) per lag unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    X,
    Y,
    XYAveraged,
    SeDiagonal,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::X => "X",
            Direction::Y => "Y",
            Direction::XYAveraged => "XY",
            Direction::SeDiagonal => "SE",
        })
    }
}

/// Descriptor values indexed by integer lag r, 0..=r_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStatistic {
    pub kind: DescriptorKind,
    pub phase: Phase,
    pub direction: Direction,
    pub values: Vec<f64>,
}

impl CurveStatistic {
    pub fn r_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// Largest absolute pointwise gap to another curve of equal length.
    pub fn max_abs_deviation(&self, other: &CurveStatistic) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "curve lengths differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Normalized histogram over N×N window codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDistribution {
    template_size: usize,
    probabilities: BTreeMap<u64, f64>,
}

impl PatternDistribution {
    pub fn new(template_size: usize, probabilities: BTreeMap<u64, f64>) -> Self {
        Self { template_size, probabilities }
    }

    pub fn template_size(&self) -> usize {
        self.template_size
    }

    pub fn probabilities(&self) -> &BTreeMap<u64, f64> {
        &self.probabilities
    }

    pub fn probability(&self, code: u64) -> f64 {
        self.probabilities.get(&code).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// Dense probability vector of length `2^(N*N)`. Only sensible for small
    /// templates; the exponent is capped to keep allocations bounded.
    pub fn to_dense(&self) -> Vec<f64> {
        let bits = self.template_size * self.template_size;
        assert!(bits <= 20, "dense representation needs N*N <= 20");
        let mut dense = vec![0.0; 1usize << bits];
        for (&code, &p) in &self.probabilities {
            dense[code as usize] = p;
        }
        dense
    }

    pub fn from_dense(template_size: usize, dense: &[f64]) -> Self {
        let bits = template_size * template_size;
        assert_eq!(dense.len(), 1usize << bits, "dense length must be 2^(N*N)");
        let probabilities = dense
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(c, &p)| (c as u64, p))
            .collect();
        Self { template_size, probabilities }
    }
}

fn phase_flags(img: &BinaryImage, phase: Phase) -> Vec<bool> {
    let label = phase.label();
    img.data().iter().map(|&v| v == label).collect()
}

fn check_lag(r_max: usize, limit: usize) -> Result<(), MorphError> {
    if r_max >= limit {
        return Err(MorphError::LagOutOfRange { r_max, limit });
    }
    Ok(())
}

/// Counts pairs `(p, p + r*dir)` with both pixels satisfying `pred`, for every
/// lag `0..=r_max`, over all pairs fully inside the image. Returns
/// (hits, totals) per lag.
fn directional_pair_counts(
    width: usize,
    height: usize,
    r_max: usize,
    dir: (usize, usize),
    pred: impl Fn(usize, usize) -> bool,
) -> (Vec<u64>, Vec<u64>) {
    let (dx, dy) = dir;
    let mut hits = vec![0u64; r_max + 1];
    let mut totals = vec![0u64; r_max + 1];
    for (r, (hit, total)) in hits.iter_mut().zip(totals.iter_mut()).enumerate() {
        let span_x = r * dx;
        let span_y = r * dy;
        if span_x >= width || span_y >= height {
            continue;
        }
        let mut count = 0u64;
        for y in 0..height - span_y {
            for x in 0..width - span_x {
                if pred(x, y) && pred(x + span_x, y + span_y) {
                    count += 1;
                }
            }
        }
        *hit = count;
        *total = ((width - span_x) * (height - span_y)) as u64;
    }
    (hits, totals)
}

fn ratio_curve(hits: &[u64], totals: &[u64]) -> Vec<f64> {
    hits.iter()
        .zip(totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect()
}

fn single_direction(d: Direction) -> (usize, usize) {
    match d {
        Direction::X => (1, 0),
        Direction::Y => (0, 1),
        Direction::SeDiagonal => (1, 1),
        Direction::XYAveraged => unreachable!("XYAveraged handled by the caller"),
    }
}

fn direction_limit(img: &BinaryImage, direction: Direction) -> usize {
    match direction {
        Direction::X => img.width(),
        Direction::Y => img.height(),
        Direction::XYAveraged | Direction::SeDiagonal => img.width().min(img.height()),
    }
}

fn averaged_xy(x: CurveStatistic, y: CurveStatistic) -> CurveStatistic {
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    CurveStatistic { direction: Direction::XYAveraged, values, ..x }
}

/// Two-point correlation S2: probability both endpoints of a lag-r pair lie in
/// `phase`.
pub fn two_point_correlation(
    img: &BinaryImage,
    phase: Phase,
    direction: Direction,
    r_max: usize,
) -> Result<CurveStatistic, MorphError> {
    check_lag(r_max, direction_limit(img, direction))?;
    if direction == Direction::XYAveraged {
        let x = two_point_correlation(img, phase, Direction::X, r_max)?;
        let y = two_point_correlation(img, phase, Direction::Y, r_max)?;
        return Ok(averaged_xy(x, y));
    }
    let flags = phase_flags(img, phase);
    let w = img.width();
    let (hits, totals) = directional_pair_counts(w, img.height(), r_max, single_direction(direction), |x, y| {
        flags[y * w + x]
    });
    Ok(CurveStatistic {
        kind: DescriptorKind::S2,
        phase,
        direction,
        values: ratio_curve(&hits, &totals),
    })
}

/// Collects in-phase run lengths along one scan line and adds each run's
/// segment counts into `seg_counts`.
fn accumulate_runs(
    run_iter: impl Iterator<Item = bool>,
    seg_counts: &mut [u64],
) {
    let r_len = seg_counts.len();
    let mut run = 0usize;
    let flush = |run: usize, seg_counts: &mut [u64]| {
        for (r, slot) in seg_counts.iter_mut().enumerate().take(run.min(r_len)) {
            *slot += (run - r) as u64;
        }
    };
    for in_phase in run_iter {
        if in_phase {
            run += 1;
        } else {
            flush(run, seg_counts);
            run = 0;
        }
    }
    flush(run, seg_counts);
}

/// Lineal-path function L: probability that r+1 consecutive collinear pixels
/// all lie in `phase`.
pub fn lineal_path(
    img: &BinaryImage,
    phase: Phase,
    direction: Direction,
    r_max: usize,
) -> Result<CurveStatistic, MorphError> {
    check_lag(r_max, direction_limit(img, direction))?;
    if direction == Direction::XYAveraged {
        let x = lineal_path(img, phase, Direction::X, r_max)?;
        let y = lineal_path(img, phase, Direction::Y, r_max)?;
        return Ok(averaged_xy(x, y));
    }
    let flags = phase_flags(img, phase);
    let (w, h) = (img.width(), img.height());
    let mut segs = vec![0u64; r_max + 1];
    let mut totals = vec![0u64; r_max + 1];
    match direction {
        Direction::X => {
            for y in 0..h {
                accumulate_runs((0..w).map(|x| flags[y * w + x]), &mut segs);
            }
            for (r, t) in totals.iter_mut().enumerate() {
                *t = ((w - r) * h) as u64;
            }
        }
        Direction::Y => {
            for x in 0..w {
                accumulate_runs((0..h).map(|y| flags[y * w + x]), &mut segs);
            }
            for (r, t) in totals.iter_mut().enumerate() {
                *t = ((h - r) * w) as u64;
            }
        }
        Direction::SeDiagonal => {
            let mut diag_lens = Vec::new();
            for y0 in 0..h {
                let len = (h - y0).min(w);
                diag_lens.push(len);
                accumulate_runs((0..len).map(|i| flags[(y0 + i) * w + i]), &mut segs);
            }
            for x0 in 1..w {
                let len = (w - x0).min(h);
                diag_lens.push(len);
                accumulate_runs((0..len).map(|i| flags[i * w + x0 + i]), &mut segs);
            }
            for (r, t) in totals.iter_mut().enumerate() {
                *t = diag_lens.iter().map(|&l| l.saturating_sub(r) as u64).sum();
            }
        }
        Direction::XYAveraged => unreachable!(),
    }
    Ok(CurveStatistic {
        kind: DescriptorKind::L,
        phase,
        direction,
        values: ratio_curve(&segs, &totals),
    })
}

/// Neighborhood rule for cluster labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Per-pixel cluster labels; 0 marks pixels outside the phase, clusters are
/// numbered contiguously from 1 in scan order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub cluster_count: u32,
}

impl ClusterLabels {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Connected-component labelling by breadth-first flood fill.
pub fn label_clusters(img: &BinaryImage, phase: Phase, connectivity: Connectivity) -> ClusterLabels {
    let (w, h) = (img.width(), img.height());
    let flags = phase_flags(img, phase);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = std::collections::VecDeque::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    for start in 0..w * h {
        if !flags[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if flags[nidx] && labels[nidx] == 0 {
                    labels[nidx] = next;
                    queue.push_back(nidx);
                }
            }
        }
    }
    ClusterLabels { width: w, height: h, labels, cluster_count: next }
}

/// Two-point cluster function C2: probability both endpoints of a lag-r pair
/// lie in the same connected cluster (4-connectivity).
pub fn two_point_cluster(
    img: &BinaryImage,
    phase: Phase,
    direction: Direction,
    r_max: usize,
) -> Result<CurveStatistic, MorphError> {
    two_point_cluster_with(img, phase, direction, r_max, Connectivity::Four)
}

pub fn two_point_cluster_with(
    img: &BinaryImage,
    phase: Phase,
    direction: Direction,
    r_max: usize,
    connectivity: Connectivity,
) -> Result<CurveStatistic, MorphError> {
    check_lag(r_max, direction_limit(img, direction))?;
    if direction == Direction::XYAveraged {
        let x = two_point_cluster_with(img, phase, Direction::X, r_max, connectivity)?;
        let y = two_point_cluster_with(img, phase, Direction::Y, r_max, connectivity)?;
        return Ok(averaged_xy(x, y));
    }
    let clusters = label_clusters(img, phase, connectivity);
    let (w, h) = (img.width(), img.height());
    let (dx, dy) = single_direction(direction);
    let mut same = vec![0u64; r_max + 1];
    let mut totals = vec![0u64; r_max + 1];
    for (r, (slot, total)) in same.iter_mut().zip(totals.iter_mut()).enumerate() {
        let (sx, sy) = (r * dx, r * dy);
        let mut count = 0u64;
        for y in 0..h - sy {
            for x in 0..w - sx {
                let a = clusters.labels[y * w + x];
                if a != 0 && a == clusters.labels[(y + sy) * w + x + sx] {
                    count += 1;
                }
            }
        }
        *slot = count;
        *total = ((w - sx) * (h - sy)) as u64;
    }
    Ok(CurveStatistic {
        kind: DescriptorKind::C2,
        phase,
        direction,
        values: ratio_curve(&same, &totals),
    })
}

/// Code of the N×N window at (x0, y0): row-major flatten, first pixel is the
/// most significant bit.
#[inline]
pub fn window_code(img: &BinaryImage, x0: usize, y0: usize, n: usize) -> u64 {
    let mut code = 0u64;
    for dy in 0..n {
        for dx in 0..n {
            code = (code << 1) | img.get(x0 + dx, y0 + dy) as u64;
        }
    }
    code
}

/// Histogram of N×N window codes over all stride-1 windows fully inside the
/// image, normalized by the window count.
pub fn pattern_distribution(img: &BinaryImage, n: usize) -> Result<PatternDistribution, MorphError> {
    let (w, h) = (img.width(), img.height());
    if n == 0 || n > w || n > h || n * n > 64 {
        return Err(MorphError::TemplateTooLarge { n, width: w, height: h });
    }
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            *counts.entry(window_code(img, x0, y0, n)).or_insert(0) += 1;
        }
    }
    let total = ((w - n + 1) * (h - n + 1)) as f64;
    let probabilities = counts
        .into_iter()
        .map(|(code, c)| (code, c as f64 / total))
        .collect();
    Ok(PatternDistribution { template_size: n, probabilities })
}

/// Squared Euclidean distance between two pattern distributions.
pub fn pattern_distance(a: &PatternDistribution, b: &PatternDistribution) -> Result<f64, MorphError> {
    if a.template_size != b.template_size {
        return Err(MorphError::TemplateMismatch(a.template_size, b.template_size));
    }
    let mut sum = 0.0;
    for (&code, &pa) in &a.probabilities {
        let d = pa - b.probability(code);
        sum += d * d;
    }
    for (&code, &pb) in &b.probabilities {
        if !a.probabilities.contains_key(&code) {
            sum += pb * pb;
        }
    }
    Ok(sum)
}

/// Pointwise arithmetic mean of curves sharing kind, phase, direction and
/// length.
pub fn average_curves(curves: &[CurveStatistic]) -> Result<CurveStatistic, MorphError> {
    let first = curves.first().ok_or(MorphError::EmptyCurveList)?;
    for c in curves {
        if c.kind != first.kind || c.phase != first.phase || c.direction != first.direction {
            return Err(MorphError::HeterogeneousCurves(format!(
                "{} {} {} vs {} {} {}",
                c.kind, c.phase, c.direction, first.kind, first.phase, first.direction
            )));
        }
        if c.values.len() != first.values.len() {
            return Err(MorphError::HeterogeneousCurves(format!(
                "lengths {} vs {}",
                c.values.len(),
                first.values.len()
            )));
        }
    }
    let n = curves.len() as f64;
    let mut values = vec![0.0; first.values.len()];
    for c in curves {
        for (acc, v) in values.iter_mut().zip(&c.values) {
            *acc += v;
        }
    }
    for v in &mut values {
        *v /= n;
    }
    Ok(CurveStatistic {
        kind: first.kind,
        phase: first.phase,
        direction: first.direction,
        values,
    })
}

/// Serializes curves as CSV with columns `kind,phase,direction,r,value`.
pub fn write_curves_csv(curves: &[CurveStatistic], out: &mut impl IoWrite) -> std::io::Result<()> {
    writeln!(out, "kind,phase,direction,r,value")?;
    for c in curves {
        for (r, v) in c.values.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", c.kind, c.phase, c.direction, r, v)?;
        }
    }
    Ok(())
}

pub fn save_curves_csv(curves: &[CurveStatistic], path: &Path) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_curves_csv(curves, &mut buf)?;
    std::fs::write(path, buf)
}

/// Parses the CSV format written by [`write_curves_csv`]. Rows must be grouped
/// by curve with lags ascending, which is how this crate writes them.
pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveStatistic>, MorphError> {
    let mut curves: Vec<CurveStatistic> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let parse = |message: String| MorphError::CsvParse { line: idx + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse(format!("expected 5 fields, found {}", fields.len())));
        }
        let kind = match fields[0] {
            "S2" => DescriptorKind::S2,
            "L" => DescriptorKind::L,
            "C2" => DescriptorKind::C2,
            other => return Err(parse(format!("unknown kind {other}"))),
        };
        let phase = match fields[1] {
            "pore" => Phase::Pore,
            "solid" => Phase::Solid,
            other => return Err(parse(format!("unknown phase {other}"))),
        };
        let direction = match fields[2] {
            "X" => Direction::X,
            "Y" => Direction::Y,
            "XY" => Direction::XYAveraged,
            "SE" => Direction::SeDiagonal,
            other => return Err(parse(format!("unknown direction {other}"))),
        };
        let value: f64 = fields[4]
            .parse()
            .map_err(|e| parse(format!("bad value: {e}")))?;
        let matches_last = curves
            .last()
            .map(|c| c.kind == kind && c.phase == phase && c.direction == direction)
            .unwrap_or(false);
        if matches_last && fields[3] != "0" {
            curves.last_mut().unwrap().values.push(value);
        } else {
            curves.push(CurveStatistic { kind, phase, direction, values: vec![value] });
        }
    }
    Ok(curves)
}
