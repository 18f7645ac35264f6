use depthcue::trainer::{train_two_phase, Checkpoint, Phase, RunLog, TrainConfig, Trainer};
use std::path::Path;
use std::process::Command;

/// A run small enough for test budgets: three scenes, two steps per epoch.
fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::toy_synth();
    cfg.synth.count = 3;
    cfg.batch_size = 2;
    cfg.steps_per_epoch = Some(2);
    cfg.epochs = 2;
    cfg.lr_drop_epoch = 1;
    cfg
}

#[test]
fn defaults_and_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr, 1e-4);
    assert_eq!(cfg.epochs, 20);
    assert_eq!(cfg.lr_drop_epoch, 15);
    assert_eq!(cfg.phase, Phase::BaselineHam);
    assert_eq!(cfg.lr_at(14), 1e-4);
    assert!((cfg.lr_at(16) - 1e-5).abs() < 1e-20);
    assert_eq!(cfg.phase_end_epoch(Phase::BaselineHam), 15);
    assert_eq!(cfg.phase_end_epoch(Phase::Joint), 20);
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn config_file_roundtrip() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_synth.toml");
    let cfg = TrainConfig::load(&shipped).unwrap();
    assert_eq!(cfg.net.input_resolution, (64, 64));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, "lr = \"fast\"\n").unwrap();
    assert!(TrainConfig::load(&path).is_err());
}

#[test]
fn resumed_run_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let mut reference = Trainer::new(cfg.clone()).unwrap();
    reference.step_once().unwrap();
    reference.step_once().unwrap();
    let path = dir.path().join("mid.ckpt");
    reference.checkpoint().save(&path).unwrap();

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, reference.checkpoint());
    assert_eq!(loaded.manifest.step, 2);

    let expected = reference.step_once().unwrap();
    let mut resumed = Trainer::resume(cfg, &path).unwrap();
    let got = resumed.step_once().unwrap();
    assert_eq!(got.loss, expected.loss);
    assert_eq!(resumed.model.store, reference.model.store);
}

#[test]
fn joint_phase_needs_a_checkpoint() {
    let cfg = TrainConfig { phase: Phase::Joint, ..tiny_config() };
    assert!(Trainer::new(cfg.clone()).is_err());
    let missing = TrainConfig { phase1_checkpoint: Some("/nonexistent/p1.ckpt".into()), ..cfg };
    assert!(Trainer::new(missing).is_err());
}

#[test]
fn joint_phase_starts_from_a_phase_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(tiny_config()).unwrap();
    first.run().unwrap();
    assert_eq!(first.step(), 2);
    let path = dir.path().join("p1.ckpt");
    first.checkpoint().save(&path).unwrap();

    let cfg = TrainConfig { phase: Phase::Joint, phase1_checkpoint: Some(path), ..tiny_config() };
    let mut joint = Trainer::new(cfg).unwrap();
    assert_eq!(joint.phase(), Phase::Joint);
    assert_eq!(joint.step(), 2);
    joint.run().unwrap();
    assert_eq!(joint.step(), 4);
    assert!(joint.log().steps().all(|s| s.phase == Phase::Joint && s.lr == 1e-4));
}

#[test]
fn frozen_zero_scale_matches_the_plain_baseline() {
    let frozen = TrainConfig { freeze_beta: true, ..tiny_config() };
    let mut plain = tiny_config();
    plain.freeze_beta = true;
    plain.net.use_ham = false;
    let mut a = Trainer::new(frozen).unwrap();
    let mut b = Trainer::new(plain).unwrap();
    for _ in 0..2 {
        let (ra, rb) = (a.step_once().unwrap(), b.step_once().unwrap());
        assert_eq!(ra.loss, rb.loss);
    }
    let beta = a.net().pose_decoder.ham.beta;
    assert_eq!(a.model.store.value(beta).data(), &[0.0]);
}

#[test]
fn log_is_written_as_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { output_dir: Some(dir.path().to_path_buf()), ..tiny_config() };
    let t = train_two_phase(cfg).unwrap();
    let read = RunLog::read_ndjson(&dir.path().join("log.ndjson")).unwrap();
    assert_eq!(&read, t.log());
    assert_eq!(read.steps().count(), 4);
    assert_eq!(read.epochs().count(), 2);
    for line in t.log().to_ndjson().unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"] == "step" || v["kind"] == "epoch");
    }
    assert!(dir.path().join("baseline_ham_epoch000.ckpt").is_file());
    assert!(dir.path().join("joint_epoch001.ckpt").is_file());
}

#[test]
fn cli_grad_check_and_render_synth() {
    let exe = env!("CARGO_BIN_EXE_depthcue");
    let out = Command::new(exe).args(["grad-check", "--component", "ssim_loss", "--seed", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-3);

    let bad = Command::new(exe).args(["grad-check", "--component", "nonsense"]).output().unwrap();
    assert!(!bad.status.success());

    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "[generate]\ncount = 2\nseed = 5\n[generate.generator]\nwidth = 24\nheight = 16\n").unwrap();
    let target = dir.path().join("out");
    let status = Command::new(exe)
        .args(["render-synth", "--spec", spec.to_str().unwrap(), "--out", target.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(depthcue::synthdata::read_manifest(&target).unwrap().len(), 2);
    assert!(target.join("0001_depth.bin").is_file());
}

#[test]
fn toy_loss_falls_window_by_window() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_synth.toml");
    let cfg = TrainConfig { validate_each_epoch: false, ..TrainConfig::load(&shipped).unwrap() };
    let mut t = Trainer::new(cfg).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| t.step_once().unwrap().loss.total).collect();
    let means: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    assert!(means.windows(2).all(|m| m[1] < m[0]), "window means {means:?}");
}

#[test]
fn grad_check_tolerances_per_component() {
    use depthcue::trainer::gradcheck::{grad_check, COMPONENTS};
    assert!(grad_check("smoothness_loss", 0).unwrap().max_rel_error < 1e-4);
    assert!(grad_check("ham_forward", 0).unwrap().max_rel_error < 1e-3);
    for name in COMPONENTS {
        let report = grad_check(name, 3).unwrap();
        assert!(report.max_rel_error < 1e-3, "{name}: {}", report.max_rel_error);
        assert!(report.coords_checked > 0);
    }
    assert!(grad_check("upsample", 0).is_err());
}
