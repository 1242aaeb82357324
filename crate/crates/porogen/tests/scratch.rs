//! Temporary calibration harness; removed before release.

use std::time::Instant;

use porogen::grid::porosity;
use porogen::morph::{average_curves, two_point_correlation, Direction, Phase};
use porogen::models::NetConfig;
use porogen::objective::LossWeights;
use porogen::report::{diversity_score, hard_data_fidelity, EvalConfig};
use porogen::synthdata::{build_dataset, load_samples, MaskSpec, MediumKind, MediumSpec};
use porogen::train::{reconstruct_detailed, train, TrainConfig};

#[test]
#[ignore]
fn calibrate_criterion4() {
    let dir = tempfile::tempdir().unwrap();
    let medium = MediumSpec {
        kind: MediumKind::Blob,
        phi: 0.3,
        correlation_length: 3.0,
        seed: 0,
    };
    let mask = MaskSpec::CornerSquare { side: 13 };
    let t0 = Instant::now();
    let manifest = build_dataset(dir.path(), 600, 64, &medium, &mask, false, 42).unwrap();
    eprintln!("dataset build: {:?}", t0.elapsed());
    let train_samples = load_samples(dir.path(), &manifest.train).unwrap();
    let held_out = load_samples(dir.path(), &manifest.test[..10]).unwrap();

    let netcfg = NetConfig {
        base_channels: 16,
        n_z: 8,
        max_channels: 128,
        ..NetConfig::new(64)
    };
    let epochs: usize = std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
    let traincfg = TrainConfig {
        epochs,
        batch_size: 2,
        weights: LossWeights::default(),
        template_n: 3,
        seed: 7,
        checkpoint_every_epochs: None,
        base_lr: 2e-4,
        decay_start_epoch: None,
        non_saturating: false,
    };
    let t1 = Instant::now();
    let out = train(&train_samples, &netcfg, &traincfg, None).unwrap();
    eprintln!("train {} epochs: {:?}", epochs, t1.elapsed());
    for r in out.log.iter().step_by(30) {
        eprintln!(
            "step {:4}: d={:.3} adv={:.3} l1={:.4} pat={:.6} por={:.6} total={:.1}",
            r.step, r.report.d_loss, r.report.g_adv, r.report.l1, r.report.pattern, r.report.porosity, r.report.total
        );
    }
    if let Some(r) = out.log.last() {
        eprintln!(
            "last step {}: d={:.3} adv={:.3} l1={:.4} pat={:.6} por={:.6}",
            r.step, r.report.d_loss, r.report.g_adv, r.report.l1, r.report.pattern, r.report.porosity
        );
    }

    // quick metrics on 3 held-out inputs x 8 realizations
    let t2 = Instant::now();
    let _ecfg = EvalConfig { realizations: 8, seed: 1, r_max: 16, ..EvalConfig::default() };
    let mut fid = 0.0;
    let mut phis = Vec::new();
    let mut div = 0.0;
    for (i, s) in held_out.iter().take(3).enumerate() {
        let recs = reconstruct_detailed(&out.generator, &s.cond, 8, 100 + i as u64).unwrap();
        fid += hard_data_fidelity(&recs, &s.cond);
        let images: Vec<_> = recs.iter().map(|r| r.image.clone()).collect();
        div += diversity_score(&images, &s.cond);
        for img in &images {
            phis.push(porosity(img).unwrap());
        }
    }
    let phi_mean = phis.iter().sum::<f64>() / phis.len() as f64;
    // S2 deviation: averaged recon curve vs averaged target curve on 3 inputs
    let mut rec_curves = Vec::new();
    let mut tgt_curves = Vec::new();
    for (i, s) in held_out.iter().take(3).enumerate() {
        let recs = reconstruct_detailed(&out.generator, &s.cond, 8, 100 + i as u64).unwrap();
        for r in &recs {
            rec_curves.push(
                two_point_correlation(&r.image, Phase::Pore, Direction::XYAveraged, 16).unwrap(),
            );
        }
        tgt_curves.push(
            two_point_correlation(&s.target, Phase::Pore, Direction::XYAveraged, 16).unwrap(),
        );
    }
    let rec_avg = average_curves(&rec_curves).unwrap();
    let tgt_avg = average_curves(&tgt_curves).unwrap();
    let s2_dev = rec_avg.max_abs_deviation(&tgt_avg);
    eprintln!(
        "eval(3x8) in {:?}: fidelity {:.4}, phi_mean {:.4}, diversity {:.4}, s2_dev {:.4}",
        t2.elapsed(),
        fid / 3.0,
        phi_mean,
        div / 3.0,
        s2_dev
    );
    eprintln!("rec s2: {:?}", rec_avg.values.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    eprintln!("tgt s2: {:?}", tgt_avg.values.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
}
