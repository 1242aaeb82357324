//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Tests serialize on a mutex so the timed criteria see
//! the whole machine.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use common::*;
use porogen::anneal::{anneal_reconstruct, target_stats_from_image, AnnealConfig};
use porogen::grid::{load_image, porosity, save_image, BinaryImage, Mask};
use porogen::models::{
    build_discriminator, build_generator, cond_to_tensor, generator_forward, NetConfig,
};
use porogen::morph::{
    average_curves, lineal_path, pattern_distribution, two_point_cluster, two_point_correlation,
    Direction, Phase,
};
use porogen::objective::{
    conditioning_l1_var, g_adv_loss_var, pattern_loss_var, porosity_loss_var, total_g_loss_var,
    LossWeights,
};
use porogen::report::{diversity_score, evaluate, hard_data_fidelity, plot_svg, EvalConfig};
use porogen::synthdata::{build_dataset, load_samples, MaskSpec, MediumKind, MediumSpec};
use porogen::tensornet::{Graph, Tensor};
use porogen::train::{reconstruct, reconstruct_detailed, train, write_loss_log, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn exclusive() -> std::sync::MutexGuard<'static, ()> {
    EXCLUSIVE.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// criterion 1: descriptor oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_descriptor_oracle_equivalence() {
    let _guard = exclusive();
    let start = Instant::now();
    let dirs = [
        (Direction::X, (1usize, 0usize)),
        (Direction::Y, (0, 1)),
        (Direction::SeDiagonal, (1, 1)),
    ];
    for seed in 0..50u64 {
        let img = random_image(16, 16, 0.4, 31_000 + seed);
        for (dir, step) in dirs {
            for phase in [Phase::Pore, Phase::Solid] {
                let s2 = two_point_correlation(&img, phase, dir, 8).unwrap();
                for (a, b) in s2.values.iter().zip(&oracle_s2(&img, phase, step, 8)) {
                    assert!((a - b).abs() < 1e-12, "S2 {dir} {phase} seed {seed}");
                }
                let l = lineal_path(&img, phase, dir, 8).unwrap();
                for (a, b) in l.values.iter().zip(&oracle_lineal(&img, phase, step, 8)) {
                    assert!((a - b).abs() < 1e-12, "L {dir} {phase} seed {seed}");
                }
                let c2 = two_point_cluster(&img, phase, dir, 8).unwrap();
                for (a, b) in c2.values.iter().zip(&oracle_c2(&img, phase, step, 8)) {
                    assert!((a - b).abs() < 1e-12, "C2 {dir} {phase} seed {seed}");
                }
            }
        }
        for n in [2usize, 3] {
            let fast = pattern_distribution(&img, n).unwrap();
            let slow = oracle_pattern(&img, n);
            assert_eq!(fast.probabilities().len(), slow.len());
            for (code, p) in &slow {
                assert!((fast.probability(*code) - p).abs() < 1e-12, "pattern n={n}");
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 runtime {elapsed:.2}s >= 10s");
    println!(
        "acceptance criterion 1 PASS: 50 images x (S2,L,C2 x 3 dirs x 2 phases + patterns N=2,3) match oracles exactly in {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: gradient validation
// ---------------------------------------------------------------------------

const FD_H: f64 = 1e-3;

fn fd_check_tape(
    name: &str,
    build: &dyn Fn(&mut Graph, porogen::tensornet::Var) -> porogen::tensornet::Var,
    probe: &Tensor,
    tol: f64,
    seed: u64,
) {
    let mut g = Graph::new();
    let x = g.param(probe.clone());
    let loss = build(&mut g, x);
    let grads = g.backward(loss);
    let analytic = grads.get(x).expect("gradient exists").data().to_vec();
    let f = |data: &[f64]| {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(probe.shape(), data.to_vec()));
        let loss = build(&mut g, x);
        g.value(loss).item()
    };
    let coords = pick_coords(probe.numel(), 10, seed);
    let err = max_relative_fd_error(&f, probe.data(), &analytic, &coords, FD_H);
    assert!(err < tol, "{name}: max relative FD error {err:.3e} >= {tol:.0e}");
    println!("  gradient check {name}: max rel err {err:.3e} < {tol:.0e}");
}

#[test]
fn criterion_2_gradient_validation() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // losses probe an 8x8 soft image away from ties and saturation
    let probe = Tensor::new(
        &[1, 1, 8, 8],
        (0..64).map(|_| rng.random_range(0.08..0.92)).collect(),
    );
    let target = random_image(8, 8, 0.4, 600);
    let mut mask = Mask::all_unknown(8, 8);
    for y in 0..3 {
        for x in 0..4 {
            mask.set(x, y, true);
        }
    }
    let cond = porogen::grid::make_conditional_input(&target, &mask).unwrap();

    let l1 = |g: &mut Graph, v| porogen::objective::masked_l1_var(g, v, &cond);
    fd_check_tape("masked_l1", &l1, &probe, 1e-6, 1);
    for n in [2usize, 3] {
        let t = target.clone();
        let pat = move |g: &mut Graph, v| pattern_loss_var(g, v, &t, n);
        fd_check_tape(&format!("pattern_loss N={n}"), &pat, &probe, 1e-4, 2 + n as u64);
    }
    let por = |g: &mut Graph, v| porosity_loss_var(g, v, 0.3);
    fd_check_tape("porosity_loss", &por, &probe, 1e-6, 5);

    // conv / transposed conv / instance norm on random tensors
    let x = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 2, 4, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[3], 1.0, &mut rng);
    let proj_seed = 900u64;
    let project = move |g: &mut Graph, v: porogen::tensornet::Var, seed: u64| {
        let w = g.input(Tensor::randn(
            g.value(v).shape(),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(seed),
        ));
        let p = g.mul(v, w);
        g.sum(p)
    };
    {
        let (w, b) = (w.clone(), b.clone());
        let conv_in = move |g: &mut Graph, v| {
            let wv = g.input(w.clone());
            let bv = g.input(b.clone());
            let out = g.conv2d(v, wv, bv, 2, 1);
            project(g, out, proj_seed)
        };
        fd_check_tape("conv2d/input", &conv_in, &x, 1e-6, 6);
    }
    {
        let (x, b) = (x.clone(), b.clone());
        let conv_w = move |g: &mut Graph, v| {
            let xv = g.input(x.clone());
            let bv = g.input(b.clone());
            let out = g.conv2d(xv, v, bv, 2, 1);
            project(g, out, proj_seed + 1)
        };
        fd_check_tape("conv2d/kernel", &conv_w, &w, 1e-6, 7);
    }
    let xt = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
    let wt = Tensor::randn(&[3, 2, 4, 4], 1.0, &mut rng);
    let bt = Tensor::randn(&[2], 1.0, &mut rng);
    {
        let (wt, bt) = (wt.clone(), bt.clone());
        let convt_in = move |g: &mut Graph, v| {
            let wv = g.input(wt.clone());
            let bv = g.input(bt.clone());
            let out = g.conv_transpose2d(v, wv, bv, 2, 1);
            project(g, out, proj_seed + 2)
        };
        fd_check_tape("conv_transpose2d/input", &convt_in, &xt, 1e-6, 8);
    }
    {
        let (xt, bt) = (xt.clone(), bt.clone());
        let convt_w = move |g: &mut Graph, v| {
            let xv = g.input(xt.clone());
            let bv = g.input(bt.clone());
            let out = g.conv_transpose2d(xv, v, bv, 2, 1);
            project(g, out, proj_seed + 3)
        };
        fd_check_tape("conv_transpose2d/kernel", &convt_w, &wt, 1e-6, 9);
    }
    {
        let xn = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut rng);
        let inorm = move |g: &mut Graph, v| {
            let gamma = g.input(Tensor::new(&[2], vec![1.2, 0.8]));
            let beta = g.input(Tensor::new(&[2], vec![0.05, -0.3]));
            let out = g.instance_norm(v, gamma, beta, 1e-5);
            project(g, out, proj_seed + 4)
        };
        fd_check_tape("instance_norm/input", &inorm, &xn, 1e-4, 10);
    }

    // full generator loss on a 16x16 two-level network, wrt parameters
    let netcfg = NetConfig {
        base_channels: 4,
        n_z: 4,
        max_channels: 32,
        levels: Some(2),
        ..NetConfig::new(16)
    };
    let mut net_rng = ChaCha8Rng::seed_from_u64(4242);
    let gen = build_generator(&netcfg, &mut net_rng).unwrap();
    let disc = build_discriminator(&netcfg, &mut net_rng).unwrap();
    let target16 = random_image(16, 16, 0.4, 601);
    let mut mask16 = Mask::all_unknown(16, 16);
    for y in 0..5 {
        for x in 0..5 {
            mask16.set(x, y, true);
        }
    }
    let cond16 = porogen::grid::make_conditional_input(&target16, &mask16).unwrap();
    let z: Vec<f64> = (0..4).map(|_| net_rng.random_range(-1.0..1.0)).collect();
    let weights = LossWeights::default();

    let gen_loss = |gen: &porogen::models::Generator| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let gvars = gen.bind(&mut g, true);
        let dvars = disc.bind(&mut g, false);
        let cond_var = g.input(cond_to_tensor(&cond16));
        let noise = g.input(Tensor::new(&[4], z.clone()));
        let out = gvars.forward(&mut g, &netcfg, cond_var, noise);
        let d_fake = dvars.forward(&mut g, &netcfg, cond_var, out);
        let adv = g_adv_loss_var(&mut g, d_fake, false);
        let l1 = conditioning_l1_var(&mut g, out, &cond16);
        let pat = pattern_loss_var(&mut g, out, &target16, 3);
        let por = porosity_loss_var(&mut g, out, 0.4);
        let total = total_g_loss_var(&mut g, adv, l1, pat, por, &weights);
        let grads = g.backward(total);
        (g.value(total).item(), gvars.collect_grads(&g, &grads))
    };
    let (_, analytic) = gen_loss(&gen);
    let flat_analytic: Vec<f64> = analytic.iter().flat_map(|t| t.data().to_vec()).collect();
    let total_params = flat_analytic.len();
    let coords = pick_coords(total_params, 10, 11);
    let perturb = |flat: usize, delta: f64| -> porogen::models::Generator {
        let mut copy = gen.clone();
        let mut remaining = flat;
        for t in copy.params_mut() {
            if remaining < t.numel() {
                t.data_mut()[remaining] += delta;
                break;
            }
            remaining -= t.numel();
        }
        copy
    };
    let mut worst = 0.0f64;
    for &coord in &coords {
        let eval_at = |delta: f64| -> f64 { gen_loss(&perturb(coord, delta)).0 };
        let fd = (eval_at(FD_H) - eval_at(-FD_H)) / (2.0 * FD_H);
        let a = flat_analytic[coord];
        let denom = fd.abs().max(a.abs()).max(1e-8);
        let err = (fd - a).abs() / denom;
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "generator loss FD error {worst:.3e} >= 1e-4");
    println!("  gradient check generator_loss/16px-2level: max rel err {worst:.3e} < 1e-4");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 runtime {elapsed:.2}s >= 60s");
    println!(
        "acceptance criterion 2 PASS: all gradient checks within tolerance in {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 3: paper-statistic format reproduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_paper_statistic_format() {
    let _guard = exclusive();
    let netcfg = NetConfig {
        base_channels: 4,
        n_z: 8,
        max_channels: 32,
        ..NetConfig::new(32)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gen = build_generator(&netcfg, &mut rng).unwrap();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.3,
        correlation_length: 2.0,
        seed: 3,
    };
    let target = porogen::synthdata::generate_medium(&medium, 32).unwrap();
    let mask = porogen::synthdata::generate_mask(&MaskSpec::CornerSquare { side: 8 }, 32, 0).unwrap();
    let cond = porogen::grid::make_conditional_input(&target, &mask).unwrap();
    let cfg = EvalConfig { realizations: 20, seed: 5, r_max: 12, ..EvalConfig::default() };
    let (report, timing) = evaluate(&gen, &cond, &target, &cfg).unwrap();

    // porosity line in the paper's mean ± std layout
    let summary = report.porosity_summary();
    let parts: Vec<&str> = summary.split(" ± ").collect();
    assert_eq!(parts.len(), 2, "summary {summary} must be mean ± std");
    for p in &parts {
        assert!(
            p.len() == 5 && p.as_bytes()[1] == b'.',
            "{p} must be a 3-decimal number"
        );
        assert!(p.parse::<f64>().is_ok());
    }
    assert_eq!(report.porosities.len(), 20);
    // Fig-10 style content: 20 realization curves + their average + target,
    // for each of the three descriptors
    assert_eq!(report.curves.len(), 3);
    for set in &report.curves {
        assert_eq!(set.realizations.len(), 20);
        assert_eq!(set.mean.len(), 13);
        assert_eq!(set.target.len(), 13);
    }
    assert!(report.hard_data_fidelity >= 0.0 && report.diversity >= 0.0);
    assert!(timing.seconds_per_reconstruction > 0.0);

    // the SVG carries the four-panel overlay layout
    let svg = plot_svg(&report);
    for needle in [
        "porosity per realization",
        "S2 (pore, XY)",
        "L (pore, XY)",
        "C2 (pore, XY)",
        "average of realizations",
        &summary,
    ] {
        assert!(svg.contains(needle), "svg misses {needle}");
    }
    // deterministic artifacts
    let (report2, _) = evaluate(&gen, &cond, &target, &cfg).unwrap();
    assert_eq!(report.to_json_string(), report2.to_json_string());
    println!(
        "acceptance criterion 3 PASS: eval emits porosity '{summary}' plus 20-realization descriptor overlays (timing reported separately: {:.4}s/reconstruction)",
        timing.seconds_per_reconstruction
    );
}

// ---------------------------------------------------------------------------
// criterion 4: toy end-to-end training
// ---------------------------------------------------------------------------

const C4_EPOCHS: usize = 4;

#[test]
fn criterion_4_toy_end_to_end_training() {
    let _guard = exclusive();
    let budget_start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.3,
        correlation_length: 3.0,
        seed: 0,
    };
    let mask = MaskSpec::CornerSquare { side: 13 };
    let manifest = build_dataset(dir.path(), 600, 64, &medium, &mask, false, 42).unwrap();
    assert_eq!(manifest.train.len(), 420);
    assert_eq!(manifest.test.len(), 180);
    let train_samples = load_samples(dir.path(), &manifest.train).unwrap();
    let held_out = load_samples(dir.path(), &manifest.test[..10]).unwrap();

    let netcfg = NetConfig {
        base_channels: 16,
        n_z: 8,
        max_channels: 128,
        ..NetConfig::new(64)
    };
    let traincfg = TrainConfig {
        epochs: C4_EPOCHS,
        batch_size: 2,
        weights: LossWeights::default(),
        template_n: 3,
        seed: 7,
        checkpoint_every_epochs: None,
        base_lr: 2e-4,
        decay_start_epoch: None,
        non_saturating: false,
    };
    let out = train(&train_samples, &netcfg, &traincfg, None).unwrap();

    // 10 held-out inputs x 20 realizations
    let mut fidelity_acc = 0.0;
    let mut diversity_acc = 0.0;
    let mut phis = Vec::new();
    let mut rec_curves = Vec::new();
    let mut tgt_curves = Vec::new();
    for (i, sample) in held_out.iter().enumerate() {
        let recs = reconstruct_detailed(&out.generator, &sample.cond, 20, 1000 + i as u64).unwrap();
        fidelity_acc += hard_data_fidelity(&recs, &sample.cond);
        let images: Vec<BinaryImage> = recs.into_iter().map(|r| r.image).collect();
        diversity_acc += diversity_score(&images, &sample.cond);
        for img in &images {
            phis.push(porosity(img).unwrap());
            rec_curves
                .push(two_point_correlation(img, Phase::Pore, Direction::XYAveraged, 16).unwrap());
        }
        tgt_curves.push(
            two_point_correlation(&sample.target, Phase::Pore, Direction::XYAveraged, 16).unwrap(),
        );
    }
    let fidelity = fidelity_acc / 10.0;
    let diversity = diversity_acc / 10.0;
    let phi_mean = phis.iter().sum::<f64>() / phis.len() as f64;
    let rec_avg = average_curves(&rec_curves).unwrap();
    let tgt_avg = average_curves(&tgt_curves).unwrap();
    let s2_dev = rec_avg.max_abs_deviation(&tgt_avg);
    let elapsed = budget_start.elapsed().as_secs_f64();

    println!(
        "  criterion 4 metrics: fidelity {fidelity:.4}, |phi-0.3|={:.4}, diversity {diversity:.4}, S2 max dev {s2_dev:.4}, wall {elapsed:.0}s",
        (phi_mean - 0.3f64).abs()
    );
    assert!(elapsed < 1800.0, "(budget) wall clock {elapsed:.0}s >= 30 min");
    assert!(fidelity >= 0.98, "(a) pre-overwrite fidelity {fidelity:.4} < 0.98");
    assert!(
        (phi_mean - 0.3).abs() <= 0.05,
        "(b) |mean phi {phi_mean:.4} - 0.3| > 0.05"
    );
    assert!(diversity >= 0.01, "(c) diversity {diversity:.4} < 1% of unknown pixels");
    assert!(s2_dev <= 0.05, "(d) averaged S2 deviates by {s2_dev:.4} > 0.05");
    println!(
        "acceptance criterion 4 PASS: 600-pair 64px training ({C4_EPOCHS} epochs) meets fidelity/porosity/diversity/S2 targets in {elapsed:.0}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 5: annealing oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_annealing_oracle() {
    let _guard = exclusive();
    let start = Instant::now();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.3,
        correlation_length: 3.0,
        seed: 21,
    };
    let target = porogen::synthdata::generate_medium(&medium, 64).unwrap();
    let mask = porogen::synthdata::generate_mask(&MaskSpec::CornerSquare { side: 13 }, 64, 0).unwrap();
    let cond = porogen::grid::make_conditional_input(&target, &mask).unwrap();
    let stats = target_stats_from_image(&target, 3, None).unwrap();
    let cfg = AnnealConfig { seed: 5, ..AnnealConfig::default() };
    let result = anneal_reconstruct(&cond, &stats, &cfg).unwrap();

    let initial = result.trace.first().unwrap().total_energy;
    let final_e = result.trace.last().unwrap().total_energy;
    for y in 0..13 {
        for x in 0..13 {
            assert_eq!(
                result.image.get(x, y),
                target.get(x, y),
                "informed pixel ({x},{y}) changed"
            );
        }
    }
    assert!(
        final_e <= 0.10 * initial,
        "final energy {final_e:.6} > 10% of initial {initial:.6}"
    );
    assert!(
        result.max_validation_drift <= 1e-9,
        "incremental energy drift {} > 1e-9",
        result.max_validation_drift
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 5 runtime {elapsed:.1}s >= 2 min");
    println!(
        "acceptance criterion 5 PASS: energy {initial:.5} -> {final_e:.5} ({:.1}%), drift {:.2e}, informed pixels intact, {elapsed:.1}s",
        100.0 * final_e / initial,
        result.max_validation_drift
    );
}

// ---------------------------------------------------------------------------
// criterion 6: performance
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_performance() {
    let _guard = exclusive();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.35,
        correlation_length: 4.0,
        seed: 2,
    };
    let img = porogen::synthdata::generate_medium(&medium, 128).unwrap();
    let start = Instant::now();
    for dir in [Direction::X, Direction::Y] {
        two_point_correlation(&img, Phase::Pore, dir, 64).unwrap();
        lineal_path(&img, Phase::Pore, dir, 64).unwrap();
        two_point_cluster(&img, Phase::Pore, dir, 64).unwrap();
    }
    let descriptor_s = start.elapsed().as_secs_f64();
    assert!(descriptor_s < 1.0, "descriptor suite took {descriptor_s:.3}s >= 1s");

    let netcfg = NetConfig {
        base_channels: 16,
        n_z: 8,
        max_channels: 128,
        ..NetConfig::new(128)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = build_generator(&netcfg, &mut rng).unwrap();
    let mask = porogen::synthdata::generate_mask(&MaskSpec::CornerSquare { side: 26 }, 128, 0).unwrap();
    let cond = porogen::grid::make_conditional_input(&img, &mask).unwrap();
    let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let start = Instant::now();
    let out = generator_forward(&gen, &cond, &z);
    let forward_s = start.elapsed().as_secs_f64();
    assert_eq!((out.width(), out.height()), (128, 128));
    assert!(forward_s < 1.0, "generator forward took {forward_s:.3}s >= 1s");
    println!(
        "acceptance criterion 6 PASS: descriptor suite {descriptor_s:.3}s, 128px generator forward {forward_s:.3}s (both < 1s)"
    );
}

// ---------------------------------------------------------------------------
// criterion 7: determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    let _guard = exclusive();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.35,
        correlation_length: 2.0,
        seed: 4,
    };
    let mask = MaskSpec::RandomSquares { side: 4, count: 2 };

    // datasets
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(d1.path(), 12, 16, &medium, &mask, false, 9).unwrap();
    build_dataset(d2.path(), 12, 16, &medium, &mask, false, 9).unwrap();
    for f in ["manifest.json", "pairs/0000_input.pgm", "pairs/0011_target.pgm", "pairs/0007_mask.pgm"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "dataset file {f} not bit-identical"
        );
    }

    // training checkpoints and loss logs
    let netcfg = NetConfig {
        base_channels: 4,
        n_z: 4,
        max_channels: 32,
        levels: Some(2),
        ..NetConfig::new(16)
    };
    let samples = load_samples(d1.path(), &[0, 1, 2, 3]).unwrap();
    let traincfg = TrainConfig { template_n: 2, ..TrainConfig::new(2, 31) };
    let (r1, r2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o1 = train(&samples, &netcfg, &traincfg, Some(r1.path())).unwrap();
    let _o2 = train(&samples, &netcfg, &traincfg, Some(r2.path())).unwrap();
    for f in ["checkpoint.ckpt", "loss_log.csv"] {
        assert_eq!(
            std::fs::read(r1.path().join(f)).unwrap(),
            std::fs::read(r2.path().join(f)).unwrap(),
            "training artifact {f} not bit-identical"
        );
    }
    let mut log_bytes = Vec::new();
    write_loss_log(&o1.log, &mut log_bytes).unwrap();

    // reconstructions
    let recs1 = reconstruct(&o1.generator, &samples[0].cond, 3, 17).unwrap();
    let recs2 = reconstruct(&o1.generator, &samples[0].cond, 3, 17).unwrap();
    assert_eq!(recs1, recs2);
    let (p1, p2) = (
        r1.path().join("rec.pgm"),
        r2.path().join("rec.pgm"),
    );
    save_image(&recs1[0], &p1).unwrap();
    save_image(&recs2[0], &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(load_image(&p1).unwrap(), recs1[0]);

    // reports and plots
    let cfg = EvalConfig { realizations: 4, seed: 23, r_max: 6, ..EvalConfig::default() };
    let (rep1, _) = evaluate(&o1.generator, &samples[0].cond, &samples[0].target, &cfg).unwrap();
    let (rep2, _) = evaluate(&o1.generator, &samples[0].cond, &samples[0].target, &cfg).unwrap();
    assert_eq!(rep1.to_json_string(), rep2.to_json_string());
    assert_eq!(plot_svg(&rep1), plot_svg(&rep2));

    // annealing
    let stats = target_stats_from_image(&samples[0].target, 2, None).unwrap();
    let acfg = AnnealConfig { sweeps: 10, template_n: 2, seed: 3, ..AnnealConfig::default() };
    let a1 = anneal_reconstruct(&samples[0].cond, &stats, &acfg).unwrap();
    let a2 = anneal_reconstruct(&samples[0].cond, &stats, &acfg).unwrap();
    assert_eq!(a1.image, a2.image);
    assert_eq!(a1.trace, a2.trace);

    println!(
        "acceptance criterion 7 PASS: datasets, checkpoints, loss logs, reconstructions, reports, plots and annealing runs are bit-identical under fixed seeds"
    );
}
