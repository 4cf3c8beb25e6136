use aero::data::{ChunkSet, LrHrPair};
use aero::dsp::sinc_resample;
use aero::trainer::{load_checkpoint, load_generator, save_checkpoint, FitOptions, Trainer};
use aero::{AeroConfig, AeroError, Wave};

fn tiny() -> AeroConfig {
    let mut cfg = AeroConfig::default();
    cfg.transform.fft_size = 128;
    cfg.model.freq_bins = 64;
    cfg.model.base_channels = 4;
    cfg.model.attention_window = 4;
    cfg.discriminator.base_channels = 4;
    cfg.discriminator.max_channels = 16;
    cfg.train.batch_size = 1;
    cfg
}

fn data() -> ChunkSet {
    let hr = Wave::sine(2500.0, 0.4, 0.0, 4000, 16000).unwrap();
    let lr = sinc_resample(&hr, 8000).unwrap();
    ChunkSet::new(vec![LrHrPair { id: "t".into(), lr, hr }], 0.125, 0.125).unwrap()
}

#[test]
fn checkpoint_round_trip_preserves_state() {
    let cfg = tiny();
    let mut trainer = Trainer::new(&cfg).unwrap();
    trainer.run(&data(), 2, &FitOptions::default()).unwrap();
    let ckpt = trainer.checkpoint().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.safetensors");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.step, 2);
    assert_eq!(back.config, cfg);
    assert!(back.same_as(&ckpt).unwrap());
    let (cfg2, model) = load_generator(&path).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(model.params().to_bytes().unwrap(), trainer.generator().params().to_bytes().unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let trainer = Trainer::new(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.safetensors");
    save_checkpoint(&trainer.checkpoint().unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match load_checkpoint(&path) {
        Err(AeroError::Checkpoint { reason, .. }) => assert!(reason.contains("not a complete")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn foreign_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.safetensors");
    std::fs::write(&path, b"definitely not safetensors").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(AeroError::Checkpoint { .. })));
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(AeroError::Io { .. })));
}

#[test]
fn run_writes_periodic_and_latest_checkpoints() {
    let mut cfg = tiny();
    cfg.train.ckpt_every = 2;
    cfg.train.log_every = 1;
    let dir = tempfile::tempdir().unwrap();
    let opts = FitOptions { checkpoint_dir: Some(dir.path().to_path_buf()), log_path: Some(dir.path().join("log.jsonl")) };
    let mut trainer = Trainer::new(&cfg).unwrap();
    trainer.run(&data(), 3, &opts).unwrap();
    assert!(dir.path().join("step_00000002.safetensors").is_file());
    assert!(dir.path().join("step_00000003.safetensors").is_file());
    assert_eq!(load_checkpoint(&dir.path().join("latest.safetensors")).unwrap().step, 3);
    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["total_g"].is_number()));
}
