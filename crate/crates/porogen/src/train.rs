//! Alternating adversarial training of the generator/discriminator pair and
//! noise-driven reconstruction.
//!
//! Each batch runs one discriminator step (generator frozen) followed by one
//! generator step (discriminator frozen), with fresh Gaussian noise per sample
//! per step. All randomness flows from a single ChaCha8 stream seeded by the
//! config, and every reduction runs in a fixed order, so identical seeds give
//! bit-identical parameters, logs and reconstructions regardless of thread
//! count.

use std::io::Write as IoWrite;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{binarize, porosity, BinaryImage, ConditionalInput};
use crate::models::{
    build_discriminator, build_generator, cond_to_tensor, save_models, Discriminator, Generator,
    ModelError, NetConfig,
};
use crate::objective::{
    conditioning_l1_var, d_loss_var, g_adv_loss_var, pattern_loss_var, porosity_loss_var,
    total_g_loss_var, LossReport, LossWeights,
};
use crate::tensornet::{AdamConfig, AdamState, Graph, LrSchedule, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: image is {found}px, the network expects {expected}px")]
    ShapeMismatch { index: usize, expected: usize, found: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {which} loss at step {step}; aborting")]
    NonFinite { step: u64, which: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One (conditional input, full target) training pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cond: ConditionalInput,
    pub target: BinaryImage,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Pattern-loss template size N.
    pub template_n: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs (when an
    /// output directory is supplied).
    pub checkpoint_every_epochs: Option<usize>,
    pub base_lr: f64,
    /// Epoch at which the linear lr decay starts; defaults to half the run.
    pub decay_start_epoch: Option<usize>,
    /// Use `-log D` instead of `log(1 - D)` for the generator.
    pub non_saturating: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 2,
            weights: LossWeights::default(),
            template_n: 3,
            seed,
            checkpoint_every_epochs: None,
            base_lr: 2e-4,
            decay_start_epoch: None,
            non_saturating: false,
        }
    }
}

/// Losses of one optimization step, in logging order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub report: LossReport,
    pub lr: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,d_loss,g_adv,l1,pattern,porosity,total,lr";

pub fn write_loss_log(records: &[LossRecord], out: &mut impl IoWrite) -> std::io::Result<()> {
    writeln!(out, "{LOSS_LOG_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.report.d_loss,
            r.report.g_adv,
            r.report.l1,
            r.report.pattern,
            r.report.porosity,
            r.report.total,
            r.lr
        )?;
    }
    Ok(())
}

pub struct TrainOutput {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub log: Vec<LossRecord>,
}

fn validate(dataset: &[Sample], netcfg: &NetConfig, cfg: &TrainConfig) -> Result<(), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, s) in dataset.iter().enumerate() {
        let found = s.target.width();
        if s.target.height() != found
            || s.cond.width() != found
            || s.cond.height() != found
            || found != netcfg.image_size
        {
            return Err(TrainError::ShapeMismatch {
                index,
                expected: netcfg.image_size,
                found,
            });
        }
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
    }
    let n = cfg.template_n;
    if n == 0 || n * n > 16 || n > netcfg.image_size {
        return Err(TrainError::InvalidConfig(format!(
            "template_n {n} must satisfy 1 <= N, N*N <= 16, N <= image size"
        )));
    }
    let w = cfg.weights;
    if w.lambda_l1 < 0.0 || w.lambda_pattern < 0.0 || w.lambda_porosity < 0.0 {
        return Err(TrainError::InvalidConfig("loss weights must be nonnegative".into()));
    }
    Ok(())
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Averages per-sample gradient lists in index order.
fn average_grads(mut per_sample: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let count = per_sample.len() as f64;
    let mut acc = per_sample.remove(0);
    for grads in &per_sample {
        for (a, g) in acc.iter_mut().zip(grads) {
            a.add_in_place(g);
        }
    }
    for a in &mut acc {
        a.scale_in_place(1.0 / count);
    }
    acc
}

struct DStepResult {
    grads: Vec<Tensor>,
    d_loss: f64,
}

struct GStepResult {
    grads: Vec<Tensor>,
    g_adv: f64,
    l1: f64,
    pattern: f64,
    porosity: f64,
    total: f64,
}

/// Trains the pair per the alternating scheme. When `out_dir` is given,
/// intermediate checkpoints and `loss_log.csv` are written there.
pub fn train(
    dataset: &[Sample],
    netcfg: &NetConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    validate(dataset, netcfg, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = build_generator(netcfg, &mut rng)?;
    let mut disc = build_discriminator(netcfg, &mut rng)?;

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let decay_start = cfg
        .decay_start_epoch
        .unwrap_or(cfg.epochs / 2)
        .min(cfg.epochs);
    let hold_steps = (decay_start * steps_per_epoch) as u64;
    let schedule = if total_steps > hold_steps {
        LrSchedule { base_lr: cfg.base_lr, hold_steps, total_steps }
    } else {
        LrSchedule::constant(cfg.base_lr)
    };
    let gen_shapes: Vec<Vec<usize>> = gen
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let disc_shapes: Vec<Vec<usize>> = disc
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam_g = AdamState::new(&gen_shapes, AdamConfig::default(), schedule);
    let mut adam_d = AdamState::new(&disc_shapes, AdamConfig::default(), schedule);

    let mut log = Vec::with_capacity(total_steps as usize);
    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| {
                TrainError::InvalidConfig(format!("cannot create {}: {e}", dir.display()))
            })?;
            let mut f = std::fs::File::create(dir.join("loss_log.csv")).map_err(|e| {
                TrainError::InvalidConfig(format!("cannot write loss log: {e}"))
            })?;
            writeln!(f, "{LOSS_LOG_HEADER}").ok();
            Some(f)
        }
        None => None,
    };

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let lr = adam_g.current_lr();

            // discriminator step: G frozen
            let z_d: Vec<Vec<f64>> = batch.iter().map(|_| gaussian_vec(&mut rng, netcfg.n_z)).collect();
            let d_results: Vec<DStepResult> = batch
                .par_iter()
                .zip(z_d.par_iter())
                .map(|(&idx, z)| d_step(&gen, &disc, &dataset[idx], z))
                .collect();
            let d_loss_mean =
                d_results.iter().map(|r| r.d_loss).sum::<f64>() / d_results.len() as f64;
            let d_grads = average_grads(d_results.into_iter().map(|r| r.grads).collect());
            adam_d.apply(&mut disc.params_mut(), &d_grads);

            // generator step: D frozen
            let z_g: Vec<Vec<f64>> = batch.iter().map(|_| gaussian_vec(&mut rng, netcfg.n_z)).collect();
            let g_results: Vec<GStepResult> = batch
                .par_iter()
                .zip(z_g.par_iter())
                .map(|(&idx, z)| g_step(&gen, &disc, &dataset[idx], z, cfg))
                .collect();
            let count = g_results.len() as f64;
            let report = LossReport {
                g_adv: g_results.iter().map(|r| r.g_adv).sum::<f64>() / count,
                l1: g_results.iter().map(|r| r.l1).sum::<f64>() / count,
                pattern: g_results.iter().map(|r| r.pattern).sum::<f64>() / count,
                porosity: g_results.iter().map(|r| r.porosity).sum::<f64>() / count,
                total: g_results.iter().map(|r| r.total).sum::<f64>() / count,
                d_loss: d_loss_mean,
            };
            let g_grads = average_grads(g_results.into_iter().map(|r| r.grads).collect());
            adam_g.apply(&mut gen.params_mut(), &g_grads);

            for (value, which) in [
                (report.d_loss, "discriminator"),
                (report.g_adv, "adversarial"),
                (report.l1, "l1"),
                (report.pattern, "pattern"),
                (report.porosity, "porosity"),
                (report.total, "total"),
            ] {
                if !value.is_finite() {
                    return Err(TrainError::NonFinite { step, which });
                }
            }
            let record = LossRecord { step, report, lr };
            if let Some(f) = log_file.as_mut() {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    record.step,
                    report.d_loss,
                    report.g_adv,
                    report.l1,
                    report.pattern,
                    report.porosity,
                    report.total,
                    record.lr
                )
                .ok();
            }
            log.push(record);
            step += 1;
        }

        if let (Some(dir), Some(every)) = (out_dir, cfg.checkpoint_every_epochs) {
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.epochs {
                let path = dir.join(format!("checkpoint_epoch{:04}.ckpt", epoch + 1));
                save_models(&path, &gen, &disc, serde_json::json!({"epoch": epoch + 1}))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_models(
            &dir.join("checkpoint.ckpt"),
            &gen,
            &disc,
            serde_json::json!({"epoch": cfg.epochs}),
        )?;
    }
    Ok(TrainOutput { generator: gen, discriminator: disc, log })
}

fn d_step(gen: &Generator, disc: &Discriminator, sample: &Sample, z: &[f64]) -> DStepResult {
    let mut g = Graph::new();
    let gen_vars = gen.bind(&mut g, false);
    let disc_vars = disc.bind(&mut g, true);
    let cond = g.input(cond_to_tensor(&sample.cond));
    let noise = g.input(Tensor::new(&[z.len()], z.to_vec()));
    let fake = gen_vars.forward(&mut g, &gen.cfg, cond, noise);
    let real = g.input(crate::models::binary_to_tensor(&sample.target));
    let d_real = disc_vars.forward(&mut g, &disc.cfg, cond, real);
    let d_fake = disc_vars.forward(&mut g, &disc.cfg, cond, fake);
    let loss = d_loss_var(&mut g, d_real, d_fake);
    let grads = g.backward(loss);
    DStepResult {
        grads: disc_vars.collect_grads(&g, &grads),
        d_loss: g.value(loss).item(),
    }
}

fn g_step(
    gen: &Generator,
    disc: &Discriminator,
    sample: &Sample,
    z: &[f64],
    cfg: &TrainConfig,
) -> GStepResult {
    let mut g = Graph::new();
    let gen_vars = gen.bind(&mut g, true);
    let disc_vars = disc.bind(&mut g, false);
    let cond = g.input(cond_to_tensor(&sample.cond));
    let noise = g.input(Tensor::new(&[z.len()], z.to_vec()));
    let out = gen_vars.forward(&mut g, &gen.cfg, cond, noise);
    let d_fake = disc_vars.forward(&mut g, &disc.cfg, cond, out);
    let g_adv = g_adv_loss_var(&mut g, d_fake, cfg.non_saturating);
    let l1 = conditioning_l1_var(&mut g, out, &sample.cond);
    let pattern = pattern_loss_var(&mut g, out, &sample.target, cfg.template_n);
    let target_phi = porosity(&sample.target).expect("validated nonempty target");
    let por = porosity_loss_var(&mut g, out, target_phi);
    let total = total_g_loss_var(&mut g, g_adv, l1, pattern, por, &cfg.weights);
    let grads = g.backward(total);
    GStepResult {
        grads: gen_vars.collect_grads(&g, &grads),
        g_adv: g.value(g_adv).item(),
        l1: g.value(l1).item(),
        pattern: g.value(pattern).item(),
        porosity: g.value(por).item(),
        total: g.value(total).item(),
    }
}

/// One reconstruction: the thresholded network output before and after the
/// informed pixels are overwritten with the conditioning data.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Binarized output as produced by the network.
    pub raw: BinaryImage,
    /// Final image with hard data enforced.
    pub image: BinaryImage,
}

/// Copies informed conditioning pixels over the image.
pub fn overwrite_hard_data(img: &mut BinaryImage, cond: &ConditionalInput) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            if cond.mask.is_informed(x, y) {
                img.set(x, y, (cond.values.get(x, y) >= 0.5) as u8);
            }
        }
    }
}

/// Draws `k` reconstructions with independent noise, binarized at 0.5 and with
/// hard data enforced. Deterministic in (parameters, cond, seed).
pub fn reconstruct(
    gen: &Generator,
    cond: &ConditionalInput,
    k: usize,
    seed: u64,
) -> Result<Vec<BinaryImage>, TrainError> {
    Ok(reconstruct_detailed(gen, cond, k, seed)?
        .into_iter()
        .map(|r| r.image)
        .collect())
}

pub fn reconstruct_detailed(
    gen: &Generator,
    cond: &ConditionalInput,
    k: usize,
    seed: u64,
) -> Result<Vec<Reconstruction>, TrainError> {
    if cond.width() != gen.cfg.image_size || cond.height() != gen.cfg.image_size {
        return Err(TrainError::ShapeMismatch {
            index: 0,
            expected: gen.cfg.image_size,
            found: cond.width(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, gen.cfg.n_z)).collect();
    Ok(zs
        .par_iter()
        .map(|z| {
            let soft = crate::models::generator_forward(gen, cond, z);
            let raw = binarize(&soft, 0.5);
            let mut image = raw.clone();
            overwrite_hard_data(&mut image, cond);
            Reconstruction { raw, image }
        })
        .collect())
}
