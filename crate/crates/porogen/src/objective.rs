//! The four generator/discriminator loss terms as differentiable tape
//! operations, plus plain-value versions for logging and evaluation.
//!
//! The pattern term relaxes the window histogram to a Bernoulli product: each
//! window contributes probability mass `prod_i (p_i if bit_i else 1 - p_i)` to
//! every code, which reduces exactly to the discrete histogram when the image
//! is binary. Probabilities entering logarithms are clamped to
//! `[PROB_EPS, 1 - PROB_EPS]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryImage, ConditionalInput, SoftImage};
use crate::morph::{self, PatternDistribution};
use crate::tensornet::{Graph, Tensor, Var};

/// Clamp bound for discriminator probabilities inside logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("conditional input has no informed pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("template size {n} invalid: need N <= image dims and N*N <= 16")]
    TemplateTooLarge { n: usize },
}

/// Weights of the L1, pattern and porosity terms in the total generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_pattern: f64,
    pub lambda_porosity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_l1: 10.0, lambda_pattern: 5.0e5, lambda_porosity: 1.0e3 }
    }
}

/// Scalar loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub g_adv: f64,
    pub l1: f64,
    pub pattern: f64,
    pub porosity: f64,
    pub total: f64,
    pub d_loss: f64,
}

impl LossReport {
    /// Whether `total` equals the weighted sum of the parts to 1e-9 relative.
    pub fn decomposes(&self, w: &LossWeights) -> bool {
        let expected = total_g_loss(self.g_adv, self.l1, self.pattern, self.porosity, w);
        let scale = expected.abs().max(1.0);
        (self.total - expected).abs() <= 1e-9 * scale
    }
}

/// Weighted sum of the four generator terms.
pub fn total_g_loss(g_adv: f64, l1: f64, pattern: f64, porosity: f64, w: &LossWeights) -> f64 {
    g_adv + w.lambda_l1 * l1 + w.lambda_pattern * pattern + w.lambda_porosity * porosity
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Discriminator loss `-(log d_real + log(1 - d_fake))` on clamped
/// probabilities.
pub fn d_loss(d_real: f64, d_fake: f64) -> f64 {
    -(clamp_prob(d_real).ln() + (1.0 - clamp_prob(d_fake)).ln())
}

/// Adversarial generator loss. The default is the saturating form
/// `log(1 - d_fake)` that the generator minimizes; `non_saturating` switches
/// to `-log(d_fake)`.
pub fn g_adv_loss(d_fake: f64, non_saturating: bool) -> f64 {
    if non_saturating {
        -clamp_prob(d_fake).ln()
    } else {
        (1.0 - clamp_prob(d_fake)).ln()
    }
}

/// Mean absolute difference over informed pixels.
pub fn masked_l1(output: &SoftImage, cond: &ConditionalInput) -> Result<f64, ObjectiveError> {
    if output.width() != cond.width() || output.height() != cond.height() {
        return Err(ObjectiveError::DimMismatch(format!(
            "output {}x{} vs cond {}x{}",
            output.width(),
            output.height(),
            cond.width(),
            cond.height()
        )));
    }
    let informed = cond.mask.informed_count();
    if informed == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    let sum: f64 = output
        .data()
        .iter()
        .zip(cond.values.data())
        .zip(cond.mask.data())
        .filter(|(_, &m)| m)
        .map(|((&o, &x), _)| (x - o).abs())
        .sum();
    Ok(sum / informed as f64)
}

/// Squared porosity gap `(target_phi - mean(output))^2`.
pub fn porosity_loss(output: &SoftImage, target_phi: f64) -> f64 {
    let d = target_phi - output.mean();
    d * d
}

fn check_template(n: usize, width: usize, height: usize) -> Result<(), ObjectiveError> {
    if n == 0 || n > width || n > height || n * n > 16 {
        return Err(ObjectiveError::TemplateTooLarge { n });
    }
    Ok(())
}

/// Dense Bernoulli-product pattern distribution of a soft image. On binary
/// data this equals the discrete histogram exactly.
fn soft_pattern_dense(data: &[f64], width: usize, height: usize, n: usize) -> Vec<f64> {
    let m = n * n;
    let codes = 1usize << m;
    let windows = (width - n + 1) * (height - n + 1);
    let mut dist = vec![0.0; codes];
    let mut probs = vec![0.0; m];
    let mut buf = vec![0.0; codes];
    let mut next = vec![0.0; codes];
    for y0 in 0..=height - n {
        for x0 in 0..=width - n {
            for dy in 0..n {
                for dx in 0..n {
                    probs[dy * n + dx] = data[(y0 + dy) * width + x0 + dx];
                }
            }
            buf[0] = 1.0;
            let mut len = 1;
            for &p in &probs {
                for (i, &v) in buf[..len].iter().enumerate() {
                    next[i << 1] = v * (1.0 - p);
                    next[(i << 1) | 1] = v * p;
                }
                len <<= 1;
                buf[..len].copy_from_slice(&next[..len]);
            }
            for (d, &v) in dist.iter_mut().zip(buf.iter()) {
                *d += v;
            }
        }
    }
    let inv = 1.0 / windows as f64;
    for d in &mut dist {
        *d *= inv;
    }
    dist
}

/// Gradient of `sum_c gout[c] * dist[c]` with respect to the image pixels.
fn soft_pattern_backward(
    data: &[f64],
    width: usize,
    height: usize,
    n: usize,
    gout: &[f64],
    gpixels: &mut [f64],
) {
    let m = n * n;
    let windows = ((width - n + 1) * (height - n + 1)) as f64;
    let inv = 1.0 / windows;
    let mut probs = vec![0.0; m];
    // a_levels[k] holds prefix products over pixels 0..k (2^k entries);
    // b_levels[k] holds gout contracted over pixels k..m (2^k entries).
    let mut a_levels: Vec<Vec<f64>> = (0..m).map(|k| vec![0.0; 1 << k]).collect();
    let mut b_levels: Vec<Vec<f64>> = (0..=m).map(|k| vec![0.0; 1 << k]).collect();
    b_levels[m].copy_from_slice(gout);
    for y0 in 0..=height - n {
        for x0 in 0..=width - n {
            for dy in 0..n {
                for dx in 0..n {
                    probs[dy * n + dx] = data[(y0 + dy) * width + x0 + dx];
                }
            }
            a_levels[0][0] = 1.0;
            for k in 0..m - 1 {
                let (head, tail) = a_levels.split_at_mut(k + 1);
                let (prev, cur) = (&head[k], &mut tail[0]);
                let p = probs[k];
                for (q, &v) in prev.iter().enumerate() {
                    cur[q << 1] = v * (1.0 - p);
                    cur[(q << 1) | 1] = v * p;
                }
            }
            for k in (1..m).rev() {
                let (head, tail) = b_levels.split_at_mut(k + 1);
                let (cur, next) = (&mut head[k], &tail[0]);
                let p = probs[k];
                for (q, slot) in cur.iter_mut().enumerate() {
                    *slot = (1.0 - p) * next[q << 1] + p * next[(q << 1) | 1];
                }
            }
            for i in 0..m {
                let a = &a_levels[i];
                let b = &b_levels[i + 1];
                let mut acc = 0.0;
                for (q, &av) in a.iter().enumerate() {
                    acc += av * (b[(q << 1) | 1] - b[q << 1]);
                }
                let (dy, dx) = (i / n, i % n);
                gpixels[(y0 + dy) * width + x0 + dx] += acc * inv;
            }
        }
    }
}

/// Plain-value soft pattern distribution.
pub fn soft_pattern_distribution(
    output: &SoftImage,
    n: usize,
) -> Result<PatternDistribution, ObjectiveError> {
    check_template(n, output.width(), output.height())?;
    let dense = soft_pattern_dense(output.data(), output.width(), output.height(), n);
    Ok(PatternDistribution::from_dense(n, &dense))
}

/// Squared L2 distance between the relaxed pattern distribution of `output`
/// and the discrete distribution of `target`.
pub fn pattern_loss(
    output: &SoftImage,
    target: &BinaryImage,
    n: usize,
) -> Result<f64, ObjectiveError> {
    if output.width() != target.width() || output.height() != target.height() {
        return Err(ObjectiveError::DimMismatch(format!(
            "output {}x{} vs target {}x{}",
            output.width(),
            output.height(),
            target.width(),
            target.height()
        )));
    }
    let soft = soft_pattern_distribution(output, n)?;
    let discrete = morph::pattern_distribution(target, n)
        .map_err(|_| ObjectiveError::TemplateTooLarge { n })?;
    Ok(morph::pattern_distance(&soft, &discrete).expect("same template size"))
}

// ----- tape builders -----------------------------------------------------------

/// Extracts the `(1, 1, H, W)` image plane behind a tape node.
fn image_dims(g: &Graph, output: Var) -> (usize, usize) {
    let (n, c, h, w) = g.value(output).dims4();
    assert_eq!((n, c), (1, 1), "expected a single-channel image node");
    (h, w)
}

/// Tape version of [`masked_l1`]; `output` must be a `(1, 1, H, W)` node.
pub fn masked_l1_var(g: &mut Graph, output: Var, cond: &ConditionalInput) -> Var {
    let (h, w) = image_dims(g, output);
    assert_eq!((w, h), (cond.width(), cond.height()), "conditional input dims differ");
    let informed = cond.mask.informed_count();
    assert!(informed > 0, "conditional input must have informed pixels");
    let values = g.input(Tensor::new(&[1, 1, h, w], cond.values.data().to_vec()));
    let mask = g.input(Tensor::new(
        &[1, 1, h, w],
        cond.mask.data().iter().map(|&b| b as u8 as f64).collect(),
    ));
    let diff = g.sub(values, output);
    let absdiff = g.abs(diff);
    let masked = g.mul(absdiff, mask);
    let total = g.sum(masked);
    g.affine(total, 1.0 / informed as f64, 0.0)
}

/// The conditioning term of the training objective: the L1 norm (sum, not
/// mean) of `|x - output|` over informed pixels. [`masked_l1`] reports the
/// per-pixel mean; the summed form is what the generator loss weights.
pub fn conditioning_l1_var(g: &mut Graph, output: Var, cond: &ConditionalInput) -> Var {
    let mean = masked_l1_var(g, output, cond);
    g.affine(mean, cond.mask.informed_count() as f64, 0.0)
}

/// Tape version of the relaxed pattern distribution; returns a `(2^(N*N),)`
/// node.
pub fn soft_pattern_distribution_var(g: &mut Graph, output: Var, n: usize) -> Var {
    let (h, w) = image_dims(g, output);
    check_template(n, w, h).expect("valid template size");
    let dense = soft_pattern_dense(g.value(output).data(), w, h, n);
    let value = Tensor::new(&[dense.len()], dense);
    g.custom(
        value,
        &[output],
        Box::new(move |g, grad, sink| {
            let vx = g.value(output);
            let mut gx = Tensor::zeros(vx.shape());
            soft_pattern_backward(vx.data(), w, h, n, grad.data(), gx.data_mut());
            sink.add(output, gx);
        }),
    )
}

/// Tape version of [`pattern_loss`].
pub fn pattern_loss_var(g: &mut Graph, output: Var, target: &BinaryImage, n: usize) -> Var {
    let (h, w) = image_dims(g, output);
    assert_eq!((w, h), (target.width(), target.height()), "target dims differ");
    let soft = soft_pattern_distribution_var(g, output, n);
    let target_dense = morph::pattern_distribution(target, n)
        .expect("valid template size")
        .to_dense();
    let target_var = g.input(Tensor::new(&[target_dense.len()], target_dense));
    let diff = g.sub(soft, target_var);
    let sq = g.mul(diff, diff);
    g.sum(sq)
}

/// Tape version of [`porosity_loss`].
pub fn porosity_loss_var(g: &mut Graph, output: Var, target_phi: f64) -> Var {
    let mean = g.mean(output);
    let gap = g.affine(mean, -1.0, target_phi);
    g.mul(gap, gap)
}

/// Tape version of [`d_loss`] on scalar probability nodes.
pub fn d_loss_var(g: &mut Graph, d_real: Var, d_fake: Var) -> Var {
    let real = g.clamp(d_real, PROB_EPS, 1.0 - PROB_EPS);
    let log_real = g.ln(real);
    let one_minus_fake = g.affine(d_fake, -1.0, 1.0);
    let fake = g.clamp(one_minus_fake, PROB_EPS, 1.0 - PROB_EPS);
    let log_fake = g.ln(fake);
    let sum = g.add(log_real, log_fake);
    g.affine(sum, -1.0, 0.0)
}

/// Tape version of [`g_adv_loss`].
pub fn g_adv_loss_var(g: &mut Graph, d_fake: Var, non_saturating: bool) -> Var {
    if non_saturating {
        let fake = g.clamp(d_fake, PROB_EPS, 1.0 - PROB_EPS);
        let log_fake = g.ln(fake);
        g.affine(log_fake, -1.0, 0.0)
    } else {
        let one_minus_fake = g.affine(d_fake, -1.0, 1.0);
        let clamped = g.clamp(one_minus_fake, PROB_EPS, 1.0 - PROB_EPS);
        g.ln(clamped)
    }
}

/// Tape version of [`total_g_loss`].
pub fn total_g_loss_var(
    g: &mut Graph,
    g_adv: Var,
    l1: Var,
    pattern: Var,
    porosity: Var,
    w: &LossWeights,
) -> Var {
    let wl1 = g.affine(l1, w.lambda_l1, 0.0);
    let wpat = g.affine(pattern, w.lambda_pattern, 0.0);
    let wpor = g.affine(porosity, w.lambda_porosity, 0.0);
    let a = g.add(g_adv, wl1);
    let b = g.add(a, wpat);
    g.add(b, wpor)
}
