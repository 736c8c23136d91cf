use std::path::{Path, PathBuf};
use std::process::Command;

use bevrep::data::{CollectConfig, Dataset, DatasetKind};
use bevrep::error::Error;
use bevrep::harness::report::{epochs_csv, summary_csv, FINAL_EPOCHS};
use bevrep::harness::*;
use bevrep::models::{EncoderDecoder, HeadKind, LatentStats};
use bevrep::sim::SimConfig;
use bevrep_autodiff::Checkpoint;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        collect: CollectConfig {
            sim: SimConfig { n_agents: 20, ..Default::default() },
            episode_steps: 80,
            warmup_steps: 10,
            frame_stride: 5,
            ..Default::default()
        },
        ae_frames: 40,
        policy_raw_frames: 400,
        n_seeds: 2,
        fractions: vec![1.0, 0.5],
        ..Default::default()
    };
    cfg.ae.batch_size = 16;
    cfg.ae.micro_batch = 8;
    cfg.ae.epochs = 2;
    cfg.ae.deterministic = true;
    cfg.policy.batch_size = 32;
    cfg.policy.micro_batch = 32;
    cfg.policy.epochs = 7;
    cfg.policy.lr = 1e-3;
    cfg.policy.deterministic = true;
    cfg
}

fn tiny_data(dir: &Path, cfg: &ExperimentConfig) -> ExperimentData {
    let (ae, pol) = prepare_datasets(cfg, dir).unwrap();
    ExperimentData::load(&ae, &pol, cfg).unwrap()
}

fn quiet<T>(r: &mut Runner<'_, T>) {
    r.progress = Box::new(|_| {});
}

#[test]
fn config_validation() {
    ExperimentConfig::default().validate().unwrap();
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    assert!(matches!(ExperimentConfig::from_json(r#"{"n_seed": 3}"#), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"fractions": [0.0]}"#), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"head_sets": [["pred"]]}"#), Err(Error::Config(_))));

    let mut t = TrainConfig::policy();
    t.lr = 0.0;
    assert!(t.validate().is_err());
    t = TrainConfig::encoder_decoder(&[HeadKind::Recon]);
    t.micro_batch = 0;
    assert!(t.validate().is_err());
    t = TrainConfig::encoder_decoder(&[HeadKind::Pred]);
    assert!(t.validate().is_err());

    let t = TrainConfig::encoder_decoder(&[HeadKind::Recon]);
    assert_eq!(t.effective_batch(100), 100);
    assert_eq!(t.effective_batch(5000), 2048);
    assert_eq!(heads_label(&[HeadKind::Plan, HeadKind::Recon, HeadKind::Plan]), "recon+plan");
}

#[test]
fn encoder_training_logs_every_epoch_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tiny_data(dir.path(), &cfg);
    let tc = TrainConfig { heads: HeadKind::ALL.to_vec(), epochs: 3, ..cfg.ae.clone() };
    let a = train_ae::<f32>(&tc, &data.ae_train, &data.ae_test, |_| true).unwrap();
    let b = train_ae::<f32>(&tc, &data.ae_train, &data.ae_test, |_| true).unwrap();
    assert_eq!(a.log.rows.len(), 3);
    assert!(a.log.all_finite());
    assert!(a.log.rows.iter().all(|r| r.wall_s == 0.0 && r.test_pred.is_some() && r.test_plan.is_some()));
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert!((1..=3).contains(&a.best_epoch));

    let stopped = train_ae::<f32>(&tc, &data.ae_train, &data.ae_test, |log| log.rows.len() < 2).unwrap();
    assert_eq!(stopped.log.rows.len(), 2);
    assert_eq!(stopped.log.rows[..], a.log.rows[..2]);
}

#[test]
fn policy_training_leaves_the_encoder_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tiny_data(dir.path(), &cfg);
    let mut enc = EncoderDecoder::<f32>::new(&[HeadKind::Recon, HeadKind::Pred], 5).unwrap();
    let before = Checkpoint::from_store(&enc.store, None).to_bytes();
    let (stats, train, test) = policy_inputs(&mut enc, &data.policy, &data.policy_train, &data.policy_test, 16).unwrap();
    let run = train_policy::<f32>(&cfg.policy, &train, &test).unwrap();
    assert_eq!(Checkpoint::from_store(&enc.store, None).to_bytes(), before);
    assert_eq!(stats.mean.len(), 64);
    assert_eq!(run.log.rows.len(), cfg.policy.epochs);
    assert!(run.log.all_finite());
    let mut net = run.net;
    let acc = accuracy(&mut net, &test);
    assert!((0.0..=1.0).contains(&acc));
    assert!((acc - run.log.rows.last().unwrap().test_acc.unwrap()).abs() < 1e-12);
    // The training loss of the first epoch exceeds that of the last.
    assert!(run.log.rows[0].train_loss > run.log.rows.last().unwrap().train_loss);
}

#[test]
fn divergence_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    let data = tiny_data(dir.path(), &cfg);
    let mut enc = EncoderDecoder::<f32>::new(&[HeadKind::Recon], 5).unwrap();
    let (_, train, test) = policy_inputs(&mut enc, &data.policy, &data.policy_train, &data.policy_test, 16).unwrap();
    let mut bad = cfg.policy.clone();
    bad.lr = 1e30;
    let err = train_policy::<f32>(&bad, &train, &test).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    cfg.policy = bad;
    cfg.head_sets = vec![vec![HeadKind::Recon]];
    let mut runner = Runner::<f32>::new(&cfg, &data, None);
    quiet(&mut runner);
    let b = runner.run_head_ablation().unwrap();
    assert_eq!(b.failures.len(), cfg.n_seeds);
    assert!(b.policy_runs("recon", 1.0).is_empty());
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn ablation_and_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tiny_data(&dir.path().join("data"), &cfg);
    let out = dir.path().join("run");
    let mut runner = Runner::<f32>::new(&cfg, &data, Some(out.clone()));
    quiet(&mut runner);
    let ablation = runner.run_head_ablation().unwrap();
    assert!(ablation.failures.is_empty());
    assert_eq!(ablation.cells().len(), 4);
    assert_eq!(ablation.runs.len(), 4 * (1 + cfg.n_seeds));
    for (config, f) in ablation.cells() {
        let runs = ablation.policy_runs(&config, f);
        assert_eq!(runs.len(), cfg.n_seeds);
        assert!(runs.iter().all(|r| r.log.rows.len() == cfg.policy.epochs && r.log.all_finite()));
    }

    // Final metrics are last-five-epoch means, averaged over seeds.
    let summary = summarize(&ablation);
    assert_eq!(summary.len(), 4);
    for s in &summary {
        let finals: Vec<f64> = ablation
            .policy_runs(&s.config, s.fraction)
            .iter()
            .map(|r| {
                let rows = &r.log.rows[r.log.rows.len() - FINAL_EPOCHS..];
                mean(&rows.iter().map(|x| x.test_acc.unwrap()).collect::<Vec<_>>())
            })
            .collect();
        assert!((s.final_acc_mean - mean(&finals)).abs() < 1e-12);
        assert!(s.ae_final_test_recon.is_some());
    }

    // The sweep reuses the full-data encoders of the ablation.
    let cached = runner.cache.entries.len();
    let sweep = runner.run_datasize_sweep().unwrap();
    assert_eq!(runner.cache.entries.len(), cached + cfg.sweep_models.len() * (cfg.fractions.len() - 1));
    assert_eq!(summarize(&sweep).len(), cfg.sweep_models.len() * cfg.fractions.len());

    // Saved checkpoints reproduce the logged final accuracy.
    let stats: LatentStats =
        serde_json::from_str(&std::fs::read_to_string(out.join("policies/recon-pred-plan_f1_stats.json")).unwrap()).unwrap();
    let seed = cfg.policy.seed;
    let acc = recompute_accuracy::<f32>(
        &out.join("encoders/recon-pred-plan_f1.bvck"),
        &HeadKind::ALL,
        &out.join(format!("policies/recon-pred-plan_f1_s{seed}.bvck")),
        &stats,
        &data,
        16,
    )
    .unwrap();
    let logged = sweep
        .policy_runs("recon+pred+plan", 1.0)
        .iter()
        .find(|r| r.seed == seed)
        .unwrap()
        .log
        .rows
        .last()
        .unwrap()
        .test_acc
        .unwrap();
    assert!((acc - logged).abs() < 1e-12, "{acc} vs {logged}");

    // A fresh runner with the same config reproduces every table byte for byte.
    let mut again = Runner::<f32>::new(&cfg, &data, None);
    quiet(&mut again);
    let ablation2 = again.run_head_ablation().unwrap();
    assert_eq!(epochs_csv(&ablation), epochs_csv(&ablation2));
    assert_eq!(summary_csv(&ablation), summary_csv(&ablation2));

    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    let files = write_report(&sweep, &r1).unwrap();
    write_report(&Bundle::from_json(&sweep.to_json()).unwrap(), &r2).unwrap();
    assert_eq!(files.len(), 4);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(r2.join(name)).unwrap());
    }
    let table = std::fs::read_to_string(r1.join("sweep_summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(std::fs::read_to_string(r1.join("sweep_acc.svg")).unwrap().contains("<polygon"));
}

fn bevrep(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bevrep")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &std::process::Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"n_seeds": 0}"#).unwrap();
    assert_eq!(code(&bevrep(&["--config", "bad.json", "gen-town"], d)), 2);
    assert_eq!(code(&bevrep(&["--config", "missing.json", "gen-town"], d)), 1);

    let o = bevrep(&["render-preview", "--out-dir", "prev"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(d.join("prev")).unwrap().count(), 5);

    assert_eq!(code(&bevrep(&["render-preview", "--dataset", "nope.bvds"], d)), 4);
    std::fs::write(d.join("junk.bvds"), b"not a dataset at all").unwrap();
    assert_eq!(code(&bevrep(&["balance", "--input", "junk.bvds", "--output", "b.bvds"], d)), 4);

    let cfg = tiny_config();
    std::fs::write(d.join("tiny.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = bevrep(&["--config", "tiny.json", "collect", "--kind", "ae", "--frames", "6", "--output", "ae.bvds"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(Dataset::open(&d.join("ae.bvds")).unwrap().manifest().kind, DatasetKind::Ae);
    // Cut the file short: the loader refuses it with a data error.
    let bytes = std::fs::read(d.join("ae.bvds")).unwrap();
    std::fs::write(d.join("short.bvds"), &bytes[..bytes.len() - 100]).unwrap();
    assert_eq!(code(&bevrep(&["render-preview", "--dataset", "short.bvds"], d)), 4);
    let o = bevrep(&["render-preview", "--dataset", "ae.bvds", "--index", "2", "--out-dir", "rec"], d);
    assert_eq!(code(&o), 0);
    assert!(d.join("rec/record2_plan.png").exists());

    let o = bevrep(&["grad-check", "--instances", "2"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn cli_report_regenerates_tables_from_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.head_sets = vec![vec![HeadKind::Recon], vec![HeadKind::Recon, HeadKind::Plan]];
    cfg.n_seeds = 1;
    let data = tiny_data(&dir.path().join("data"), &cfg);
    let mut runner = Runner::<f32>::new(&cfg, &data, None);
    quiet(&mut runner);
    let b = runner.run_head_ablation().unwrap();
    let bundle: PathBuf = dir.path().join("ablation_bundle.json");
    std::fs::write(&bundle, b.to_json()).unwrap();
    let o = bevrep(&["report", "--bundle", bundle.to_str().unwrap(), "--out-dir", "rep"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("rep/ablation_epochs.csv")).unwrap(), epochs_csv(&b));
}
