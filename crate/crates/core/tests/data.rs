use aero::data::{build_manifest, load_pair, read_manifest, split_musdb, write_manifest, ChunkSet, PairSpec};
use aero::dsp::{write_wav, WavFormat};
use aero::Wave;

fn tone(len: usize, rate: u32) -> Wave {
    Wave::sine(440.0, 0.3, 0.0, len, rate).unwrap()
}

#[test]
fn manifest_skips_corrupt_files_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("vctk");
    std::fs::create_dir_all(root.join("p225")).unwrap();
    write_wav(root.join("p225/p225_001_mic1.wav"), &tone(1600, 16000), WavFormat::Pcm16).unwrap();
    write_wav(root.join("p225/p225_002_mic2.wav"), &tone(800, 16000), WavFormat::Pcm16).unwrap();
    std::fs::write(root.join("p225/broken.wav"), b"RIFF....").unwrap();
    std::fs::write(root.join("p225/notes.txt"), b"ignored").unwrap();

    let m = build_manifest(&root, "*.wav").unwrap();
    assert_eq!(m.entries.len(), 2);
    assert_eq!(m.skipped.len(), 1);
    assert!(m.skipped[0].0.ends_with("broken.wav"));
    assert_eq!(m.entries[0].speaker_id.as_deref(), Some("p225"));
    assert_eq!(m.entries[0].mic_id.as_deref(), Some("mic1"));
    assert_eq!(m.entries[0].duration_samples, 1600);

    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &m.entries).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m.entries);
    assert!(build_manifest(&dir.path().join("absent"), "*.wav").is_err());
}

#[test]
fn pair_cache_is_written_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    std::fs::create_dir_all(&root).unwrap();
    write_wav(root.join("a.wav"), &tone(16001, 16000), WavFormat::Float32).unwrap();
    let entry = build_manifest(&root, "*.wav").unwrap().entries.remove(0);
    let spec = PairSpec::new(8000, 16000, 0).unwrap();
    let cache = dir.path().join("cache");
    let first = load_pair(&entry, &spec, &root, &cache).unwrap();
    assert_eq!((first.lr.len(), first.hr.len()), (8000, 16000));
    assert!(cache.join("lr_8000/a.wav").is_file());
    let second = load_pair(&entry, &spec, &root, &cache).unwrap();
    assert_eq!(first.lr.samples(), second.lr.samples());

    let chunks = ChunkSet::new(vec![first], 0.25, 0.25).unwrap();
    assert_eq!(chunks.len(), 4);
    let c = chunks.get(1).unwrap();
    assert_eq!((c.offset, c.lr.len(), c.hr.len()), (2000, 2000, 4000));
    assert_eq!(chunks.epoch_order(3, 0), chunks.epoch_order(3, 0));
}

#[test]
fn musdb_split_follows_directories() {
    let dir = tempfile::tempdir().unwrap();
    for split in ["train", "test"] {
        let song = dir.path().join(split).join("song");
        std::fs::create_dir_all(&song).unwrap();
        write_wav(song.join("mixture.wav"), &tone(1000, 44100), WavFormat::Pcm16).unwrap();
        write_wav(song.join("vocals.wav"), &tone(1000, 44100), WavFormat::Pcm16).unwrap();
    }
    let entries = build_manifest(dir.path(), "*.wav").unwrap().entries;
    let (train, test) = split_musdb(&entries);
    assert_eq!((train.len(), test.len()), (1, 1));
    assert!(train[0].path.to_string_lossy().contains("train"));
}

#[test]
fn unsupported_rate_pair_rejected() {
    assert!(PairSpec::new(8000, 12000, 0).is_err());
}
