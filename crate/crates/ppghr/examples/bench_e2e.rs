//! Probe: synthetic end-to-end — pretrain on augmented unlabeled half,
//! fine-tune on labeled half, compare pretrained vs random init.

use ndarray::Array2;
use ppghr::augment::{expand_dataset, AugmentationSpec};
use ppghr::eval::mae;
use ppghr::ingest::{
    apply_zscore, compute_norm_stats, Provenance, SignalWindow, WindowedDataset,
};
use ppghr::model::ModelConfig;
use ppghr::train::{
    finetune, make_loso_folds, predict_series, pretrain, FinetuneConfig, InitMode, PretrainConfig,
};
use rand::Rng;
use std::time::Instant;

fn tone_window(freq: f64, subject: &str, rng: &mut impl Rng, labeled: bool) -> SignalWindow {
    let fs = 32.0;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut data = Array2::<f32>::zeros((4, 256));
    for t in 0..256 {
        let arg = std::f64::consts::TAU * freq * t as f64 / fs + phase;
        data[[0, t]] = (arg.sin() + 0.05 * rng.gen_range(-1.0..1.0)) as f32;
        data[[1, t]] = (0.3 * (0.5 * arg).sin() + 0.05 * rng.gen_range(-1.0..1.0)) as f32;
        data[[2, t]] = 0.05 * rng.gen_range(-1.0f64..1.0) as f32;
        data[[3, t]] = (0.2 + 0.05 * rng.gen_range(-1.0f64..1.0)) as f32;
    }
    SignalWindow {
        data,
        subject_id: subject.to_string(),
        label: labeled.then_some(freq * 60.0),
    }
}

fn corpus(subjects: &[&str], per_subject: usize, labeled: bool, seed: u64) -> WindowedDataset {
    let mut rng = ppghr::util::rng_for(seed, "e2e.data");
    let mut ds = WindowedDataset::default();
    for s in subjects {
        for _ in 0..per_subject {
            let freq = rng.gen_range(0.75..2.5);
            ds.windows.push(tone_window(freq, s, &mut rng, labeled));
        }
    }
    ds
}

fn main() {
    let start = Instant::now();
    let mut model_cfg = ModelConfig::default().autoencoder();
    model_cfg.block_channels = [8, 12, 16];
    model_cfg.attention_heads = 4;
    model_cfg.head_hidden = 16;

    // unlabeled half: 5 pseudo-subjects x 12 windows, expanded 11x -> 660
    let unlabeled = corpus(&["u1", "u2", "u3", "u4", "u5"], 12, false, 1);
    let spec = AugmentationSpec::default_grid(7);
    let expanded = expand_dataset(&unlabeled, &spec).unwrap();
    println!("unlabeled {} -> {}", unlabeled.len(), expanded.len());
    let pt_stats = compute_norm_stats(&[&expanded], Provenance::PretrainCorpus).unwrap();
    let pt_corpus = apply_zscore(&expanded, &pt_stats).unwrap();

    let pt_cfg = PretrainConfig {
        max_epochs: 20,
        early_stop_patience: 10,
        batch_size: 128,
        seed: 3,
        ..Default::default()
    };
    let (ckpt, log) = pretrain(&pt_corpus, &pt_cfg, &model_cfg).unwrap();
    println!(
        "pretrain: initial {:.4} best {:.4} at epoch {} ({:.0}s)",
        log.initial_val, log.best_val, log.best_epoch, start.elapsed().as_secs_f64()
    );

    // labeled half: 6 subjects x 80 windows
    let labeled = corpus(&["s1", "s2", "s3", "s4", "s5", "s6"], 80, true, 2);
    let plan = make_loso_folds(&labeled.subject_ids(), 3, 5).unwrap();
    let assignment = &plan.assignments[0];
    println!(
        "fold: test {} val {:?} train {:?}",
        assignment.test_subject, assignment.val_subjects, assignment.train_subjects
    );

    let ft_cfg = FinetuneConfig { max_epochs: 130, early_stop_patience: 129, batch_size: 64, seed: 4, init: InitMode::Pretrained, ..Default::default() };

    // pretrained path: normalize with checkpoint stats
    let data_pt = apply_zscore(&labeled, ckpt.stats.as_ref().unwrap()).unwrap();
    let est_cfg = { let mut c = model_cfg.clone(); c.variant = ppghr::model::Variant::Estimator; c };
    let (ck_pt, log_pt) = finetune(assignment, Some(&ckpt), &ft_cfg, &est_cfg, &data_pt).unwrap();
    println!(
        "finetune pretrained: initial {:.2} best {:.2} at {} ({:.0}s)",
        log_pt.initial_val, log_pt.best_val, log_pt.best_epoch, start.elapsed().as_secs_f64()
    );

    // random path: train-split stats
    let train_only = WindowedDataset {
        windows: labeled
            .windows
            .iter()
            .filter(|w| assignment.train_subjects.contains(&w.subject_id))
            .cloned()
            .collect(),
        stats: None,
        normalized: false,
    };
    let ts_stats = compute_norm_stats(&[&train_only], Provenance::TrainSplit).unwrap();
    let data_rand = apply_zscore(&labeled, &ts_stats).unwrap();
    let ft_rand = FinetuneConfig { init: InitMode::Random, ..ft_cfg.clone() };
    let (ck_rand, log_rand) = finetune(assignment, None, &ft_rand, &est_cfg, &data_rand).unwrap();
    println!(
        "finetune random: initial {:.2} best {:.2} at {} ({:.0}s)",
        log_rand.initial_val, log_rand.best_val, log_rand.best_epoch, start.elapsed().as_secs_f64()
    );

    // test both
    for (name, ck, data) in [("pretrained", &ck_pt, &data_pt), ("random", &ck_rand, &data_rand)] {
        let test_ds = WindowedDataset {
            windows: data
                .windows
                .iter()
                .filter(|w| w.subject_id == assignment.test_subject)
                .cloned()
                .collect(),
            stats: data.stats.clone(),
            normalized: true,
        };
        let series = predict_series(ck, &test_ds).unwrap();
        let test_mae = mae(&series.predictions, series.labels.as_ref().unwrap()).unwrap();
        println!("{name}: test MAE {test_mae:.3} BPM");
    }
    println!("total {:.0}s", start.elapsed().as_secs_f64());
}
