//! Evaluation of trained generators: porosity statistics over many
//! realizations, averaged descriptor curves, hard-data fidelity, diversity,
//! and a dependency-free SVG overlay plot.
//!
//! Reports are pure functions of (checkpoint, input files, seed): reruns
//! produce byte-identical JSON and SVG. Wall-clock timing is returned
//! separately so it never leaks into the deterministic artifacts.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{porosity, BinaryImage, ConditionalInput, GridError};
use crate::models::Generator;
use crate::morph::{
    average_curves, lineal_path, two_point_cluster, two_point_correlation, CurveStatistic,
    DescriptorKind, Direction, MorphError, Phase,
};
use crate::train::{reconstruct_detailed, Reconstruction, TrainError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid eval config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub realizations: usize,
    pub seed: u64,
    pub r_max: usize,
    pub direction: Direction,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { realizations: 20, seed: 0, r_max: 16, direction: Direction::XYAveraged }
    }
}

/// Target, per-realization and averaged values of one descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSet {
    pub kind: DescriptorKind,
    pub phase: Phase,
    pub direction: Direction,
    pub target: Vec<f64>,
    pub mean: Vec<f64>,
    pub realizations: Vec<Vec<f64>>,
}

impl CurveSet {
    pub fn mean_curve(&self) -> CurveStatistic {
        CurveStatistic {
            kind: self.kind,
            phase: self.phase,
            direction: self.direction,
            values: self.mean.clone(),
        }
    }

    pub fn target_curve(&self) -> CurveStatistic {
        CurveStatistic {
            kind: self.kind,
            phase: self.phase,
            direction: self.direction,
            values: self.target.clone(),
        }
    }

    /// Largest pointwise |mean - target| gap.
    pub fn max_gap(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub realizations: usize,
    pub seed: u64,
    pub r_max: usize,
    pub target_porosity: f64,
    pub porosities: Vec<f64>,
    pub porosity_mean: f64,
    pub porosity_std: f64,
    /// Fraction of informed pixels reproduced before the hard-data overwrite.
    pub hard_data_fidelity: f64,
    /// Mean pairwise Hamming distance on unknown pixels, normalized by the
    /// unknown-pixel count.
    pub diversity: f64,
    pub curves: Vec<CurveSet>,
}

impl EvalReport {
    /// The paper-style porosity line, e.g. `0.099 ± 0.003`.
    pub fn porosity_summary(&self) -> String {
        format!("{:.3} ± {:.3}", self.porosity_mean, self.porosity_std)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn curve(&self, kind: DescriptorKind) -> Option<&CurveSet> {
        self.curves.iter().find(|c| c.kind == kind)
    }
}

/// Wall-clock numbers reported alongside (never inside) the report file.
#[derive(Debug, Clone, Copy)]
pub struct EvalTiming {
    pub seconds_per_reconstruction: f64,
    pub total_seconds: f64,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

/// Mean pairwise Hamming distance over unknown pixels, divided by the
/// unknown-pixel count.
pub fn diversity_score(images: &[BinaryImage], cond: &ConditionalInput) -> f64 {
    let unknown: Vec<usize> = cond
        .mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(i, _)| i)
        .collect();
    if unknown.is_empty() || images.len() < 2 {
        return 0.0;
    }
    let mut total = 0u64;
    let mut pairs = 0u64;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let (a, b) = (images[i].data(), images[j].data());
            total += unknown.iter().filter(|&&p| a[p] != b[p]).count() as u64;
            pairs += 1;
        }
    }
    total as f64 / pairs as f64 / unknown.len() as f64
}

/// Fraction of informed pixels whose pre-overwrite phase matches the
/// conditioning data, averaged over realizations.
pub fn hard_data_fidelity(recs: &[Reconstruction], cond: &ConditionalInput) -> f64 {
    let informed: Vec<usize> = cond
        .mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    if informed.is_empty() || recs.is_empty() {
        return 1.0;
    }
    let mut acc = 0.0;
    for rec in recs {
        let matches = informed
            .iter()
            .filter(|&&p| rec.raw.data()[p] as f64 == cond.values.data()[p])
            .count();
        acc += matches as f64 / informed.len() as f64;
    }
    acc / recs.len() as f64
}

fn descriptor(
    img: &BinaryImage,
    kind: DescriptorKind,
    direction: Direction,
    r_max: usize,
) -> Result<CurveStatistic, MorphError> {
    match kind {
        DescriptorKind::S2 => two_point_correlation(img, Phase::Pore, direction, r_max),
        DescriptorKind::L => lineal_path(img, Phase::Pore, direction, r_max),
        DescriptorKind::C2 => two_point_cluster(img, Phase::Pore, direction, r_max),
    }
}

/// Evaluates `cfg.realizations` reconstructions of one conditional input
/// against its ground-truth target.
pub fn evaluate(
    gen: &Generator,
    cond: &ConditionalInput,
    target: &BinaryImage,
    cfg: &EvalConfig,
) -> Result<(EvalReport, EvalTiming), ReportError> {
    if cfg.realizations == 0 {
        return Err(ReportError::BadConfig("need at least one realization".into()));
    }
    let start = Instant::now();
    let recs = reconstruct_detailed(gen, cond, cfg.realizations, cfg.seed)?;
    let total_seconds = start.elapsed().as_secs_f64();

    let images: Vec<BinaryImage> = recs.iter().map(|r| r.image.clone()).collect();
    let porosities: Vec<f64> = images
        .iter()
        .map(|img| porosity(img).expect("nonempty image"))
        .collect();
    let porosity_mean = porosities.iter().sum::<f64>() / porosities.len() as f64;
    let porosity_std = sample_std(&porosities, porosity_mean);

    let mut curves = Vec::new();
    for kind in [DescriptorKind::S2, DescriptorKind::L, DescriptorKind::C2] {
        let target_curve = descriptor(target, kind, cfg.direction, cfg.r_max)?;
        let real_curves: Vec<CurveStatistic> = images
            .par_iter()
            .map(|img| descriptor(img, kind, cfg.direction, cfg.r_max))
            .collect::<Result<_, _>>()?;
        let mean = average_curves(&real_curves)?;
        curves.push(CurveSet {
            kind,
            phase: Phase::Pore,
            direction: cfg.direction,
            target: target_curve.values,
            mean: mean.values,
            realizations: real_curves.into_iter().map(|c| c.values).collect(),
        });
    }

    let report = EvalReport {
        realizations: cfg.realizations,
        seed: cfg.seed,
        r_max: cfg.r_max,
        target_porosity: porosity(target)?,
        porosities,
        porosity_mean,
        porosity_std,
        hard_data_fidelity: hard_data_fidelity(&recs, cond),
        diversity: diversity_score(&images, cond),
        curves,
    };
    let timing = EvalTiming {
        seconds_per_reconstruction: total_seconds / cfg.realizations as f64,
        total_seconds,
    };
    Ok((report, timing))
}

// ----- SVG plotting --------------------------------------------------------------

const PANEL_W: f64 = 440.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_B: f64 = 44.0;
const MARGIN_T: f64 = 34.0;
const GAP: f64 = 36.0;

struct Panel {
    x0: f64,
    y0: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel {
    fn sx(&self, x: f64) -> f64 {
        self.x0 + MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (PANEL_W - MARGIN_L - 12.0)
    }

    fn sy(&self, y: f64) -> f64 {
        self.y0 + MARGIN_T + (1.0 - (y - self.y_min) / (self.y_max - self.y_min))
            * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn polyline(&self, values: &[f64], xs: impl Iterator<Item = f64>, style: &str) -> String {
        let points: Vec<String> = xs
            .zip(values)
            .map(|(x, &y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect();
        format!("<polyline fill=\"none\" {} points=\"{}\"/>\n", style, points.join(" "))
    }

    fn frame(&self, title: &str, x_label: &str, out: &mut String) {
        let left = self.sx(self.x_min);
        let right = self.sx(self.x_max);
        let top = self.sy(self.y_max);
        let bottom = self.sy(self.y_min);
        out.push_str(&format!(
            "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n",
            right - left,
            bottom - top
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"15\" font-family=\"sans-serif\" text-anchor=\"middle\">{title}</text>\n",
            (left + right) / 2.0,
            self.y0 + 18.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\">{x_label}</text>\n",
            (left + right) / 2.0,
            bottom + 32.0
        ));
        for i in 0..=4 {
            let fx = self.x_min + (self.x_max - self.x_min) * i as f64 / 4.0;
            let fy = self.y_min + (self.y_max - self.y_min) * i as f64 / 4.0;
            let tx = self.sx(fx);
            let ty = self.sy(fy);
            out.push_str(&format!(
                "<line x1=\"{tx:.2}\" y1=\"{bottom:.2}\" x2=\"{tx:.2}\" y2=\"{:.2}\" stroke=\"#333\" stroke-width=\"1\"/>\n",
                bottom + 4.0
            ));
            out.push_str(&format!(
                "<text x=\"{tx:.2}\" y=\"{:.2}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"middle\">{fx:.0}</text>\n",
                bottom + 16.0
            ));
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{ty:.2}\" x2=\"{left:.2}\" y2=\"{ty:.2}\" stroke=\"#333\" stroke-width=\"1\"/>\n",
                left - 4.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">{fy:.3}</text>\n",
                left - 7.0,
                ty + 3.5
            ));
        }
    }
}

const REALIZATION_STYLE: &str = "stroke=\"#bbbbbb\" stroke-width=\"1\"";
const MEAN_STYLE: &str = "stroke=\"#1f6fd0\" stroke-width=\"2\" stroke-dasharray=\"6 3\"";
const TARGET_STYLE: &str = "stroke=\"#000000\" stroke-width=\"2\"";

/// Renders the report as a 2x2 figure: porosity per realization plus the
/// three descriptor overlays (realizations, their average, target). Output is
/// deterministic.
pub fn plot_svg(report: &EvalReport) -> String {
    let width = 2.0 * PANEL_W + GAP + 24.0;
    let height = 2.0 * PANEL_H + GAP + 48.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));

    // panel (a): porosity per realization
    let k = report.porosities.len();
    let y_hi = report
        .porosities
        .iter()
        .copied()
        .fold(report.target_porosity, f64::max)
        * 1.3
        + 1e-6;
    let panel = Panel {
        x0: 12.0,
        y0: 12.0,
        x_min: 1.0,
        x_max: k.max(2) as f64,
        y_min: 0.0,
        y_max: y_hi,
    };
    panel.frame("porosity per realization", "realization", &mut out);
    out.push_str(&panel.polyline(
        &vec![report.target_porosity; k],
        (1..=k).map(|i| i as f64),
        TARGET_STYLE,
    ));
    out.push_str(&panel.polyline(
        &vec![report.porosity_mean; k],
        (1..=k).map(|i| i as f64),
        MEAN_STYLE,
    ));
    for (i, &phi) in report.porosities.iter().enumerate() {
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f6fd0\"/>\n",
            panel.sx((i + 1) as f64),
            panel.sy(phi)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"sans-serif\">phi = {}</text>\n",
        panel.sx(1.0) + 6.0,
        panel.y0 + 34.0,
        report.porosity_summary()
    ));

    // panels (b)-(d): descriptor overlays
    for (i, set) in report.curves.iter().enumerate() {
        let (col, row) = ((i + 1) % 2, (i + 1) / 2);
        let y_hi = set
            .target
            .iter()
            .chain(set.realizations.iter().flatten())
            .copied()
            .fold(1e-9, f64::max)
            * 1.15;
        let panel = Panel {
            x0: 12.0 + col as f64 * (PANEL_W + GAP),
            y0: 12.0 + row as f64 * (PANEL_H + GAP),
            x_min: 0.0,
            x_max: (set.target.len() - 1).max(1) as f64,
            y_min: 0.0,
            y_max: y_hi,
        };
        panel.frame(
            &format!("{} ({}, {})", set.kind, set.phase, set.direction),
            "r",
            &mut out,
        );
        for values in &set.realizations {
            out.push_str(&panel.polyline(values, (0..values.len()).map(|r| r as f64), REALIZATION_STYLE));
        }
        out.push_str(&panel.polyline(&set.mean, (0..set.mean.len()).map(|r| r as f64), MEAN_STYLE));
        out.push_str(&panel.polyline(&set.target, (0..set.target.len()).map(|r| r as f64), TARGET_STYLE));
    }

    // legend
    let ly = height - 18.0;
    out.push_str(&format!(
        "<line x1=\"24\" y1=\"{ly:.0}\" x2=\"56\" y2=\"{ly:.0}\" {TARGET_STYLE}/><text x=\"62\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">target</text>\n",
        ly + 4.0
    ));
    out.push_str(&format!(
        "<line x1=\"130\" y1=\"{ly:.0}\" x2=\"162\" y2=\"{ly:.0}\" {MEAN_STYLE}/><text x=\"168\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">average of realizations</text>\n",
        ly + 4.0
    ));
    out.push_str(&format!(
        "<line x1=\"330\" y1=\"{ly:.0}\" x2=\"362\" y2=\"{ly:.0}\" {REALIZATION_STYLE}/><text x=\"368\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">realizations</text>\n",
        ly + 4.0
    ));
    out.push_str("</svg>\n");
    out
}
