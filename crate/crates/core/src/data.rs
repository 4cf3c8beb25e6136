//! Corpus scanning, dataset splits, low/high-rate pair construction and
//! training chunks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::dsp::{read_wav, sinc_resample, wav_info, write_wav, WavFormat};
use crate::error::{AeroError, Result};
use crate::Wave;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub duration_samples: u64,
    pub sample_rate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mic_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Files matching the pattern that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// VCTK-style ids from a file name: `p225_001_mic1.wav` gives
/// `(Some("p225"), Some("mic1"))`, `p225_001.wav` gives no mic.
pub fn parse_vctk_ids(path: &Path) -> (Option<String>, Option<String>) {
    let stem = match path.file_stem().and_then(|s| s.to_str()) {
        Some(s) => s,
        None => return (None, None),
    };
    let parts: Vec<&str> = stem.split('_').collect();
    let speaker = parts
        .first()
        .filter(|p| p.len() > 1 && p[1..].chars().all(|c| c.is_ascii_digit()) && p.starts_with(|c: char| c.is_ascii_alphabetic()))
        .map(|s| s.to_string());
    let mic = parts
        .last()
        .filter(|p| parts.len() > 2 && p.starts_with("mic"))
        .map(|s| s.to_string());
    (speaker, mic)
}

/// Scans `root` recursively for files whose name matches the glob
/// `pattern`. Entries come back sorted by path.
pub fn build_manifest(root: &Path, pattern: &str) -> Result<Manifest> {
    let pat = glob::Pattern::new(pattern)
        .map_err(|e| AeroError::Data(format!("bad file pattern {pattern:?}: {e}")))?;
    if !root.is_dir() {
        return Err(AeroError::Data(format!("{} is not a readable directory", root.display())));
    }
    let mut manifest = Manifest::default();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = match item {
            Ok(i) => i,
            Err(e) => {
                let p = e.path().map(Path::to_path_buf).unwrap_or_default();
                warn!("skipping {}: {e}", p.display());
                manifest.skipped.push((p, e.to_string()));
                continue;
            }
        };
        if !item.file_type().is_file() || !pat.matches(&item.file_name().to_string_lossy()) {
            continue;
        }
        let path = item.path().to_path_buf();
        match wav_info(&path) {
            Ok(info) if info.frames > 0 => {
                let (speaker_id, mic_id) = parse_vctk_ids(&path);
                manifest.entries.push(ManifestEntry {
                    path,
                    duration_samples: info.frames as u64,
                    sample_rate: info.sample_rate,
                    speaker_id,
                    mic_id,
                });
            }
            Ok(_) => {
                warn!("skipping {}: no samples", path.display());
                manifest.skipped.push((path, "no samples".into()));
            }
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                manifest.skipped.push((path, e.to_string()));
            }
        }
    }
    manifest.entries.sort();
    if !manifest.skipped.is_empty() {
        warn!("{} file(s) skipped under {}", manifest.skipped.len(), root.display());
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AeroError::io(path, e))?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e)?).map_err(|err| AeroError::io(path, err))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(path).map_err(|e| AeroError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AeroError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            AeroError::Data(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub const VCTK_OMITTED: [&str; 2] = ["p280", "p315"];
pub const VCTK_TRAIN_SPEAKERS: usize = 100;
pub const VCTK_TEST_SPEAKERS: usize = 8;

fn natural_key(id: &str) -> (String, u64, String) {
    let digits_at = id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len());
    let (prefix, rest) = id.split_at(digits_at);
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    let n = rest[..end].parse().unwrap_or(0);
    (prefix.to_string(), n, rest[end..].to_string())
}

/// Speaker-disjoint VCTK split: omits p280 and p315, keeps mic1 recordings
/// (or files without a mic suffix), first 100 speakers by id train, the rest
/// test.
pub fn split_vctk(entries: &[ManifestEntry]) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    let kept: Vec<&ManifestEntry> = entries
        .iter()
        .filter(|e| match &e.speaker_id {
            Some(s) => !VCTK_OMITTED.contains(&s.as_str()),
            None => false,
        })
        .filter(|e| e.mic_id.as_deref().map_or(true, |m| m == "mic1"))
        .collect();
    let mut speakers: Vec<&str> = kept
        .iter()
        .filter_map(|e| e.speaker_id.as_deref())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    speakers.sort_by_key(|s| natural_key(s));
    let need = VCTK_TRAIN_SPEAKERS + VCTK_TEST_SPEAKERS;
    if speakers.len() < need {
        return Err(AeroError::Data(format!(
            "VCTK split needs {need} speakers after omitting p280/p315, found {}",
            speakers.len()
        )));
    }
    if speakers.len() > need {
        warn!(
            "{} speakers retained; the {} beyond the first {VCTK_TRAIN_SPEAKERS} all go to the test split",
            speakers.len(),
            speakers.len() - VCTK_TRAIN_SPEAKERS
        );
    }
    let train_ids: BTreeSet<&str> = speakers[..VCTK_TRAIN_SPEAKERS].iter().copied().collect();
    let (train, test): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) = kept
        .into_iter()
        .partition(|e| train_ids.contains(e.speaker_id.as_deref().unwrap_or_default()));
    Ok((train.into_iter().cloned().collect(), test.into_iter().cloned().collect()))
}

/// MusDB mixtures split by their `train` / `test` directory.
pub fn split_musdb(entries: &[ManifestEntry]) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in entries {
        if e.path.file_stem().and_then(|s| s.to_str()) != Some("mixture") {
            continue;
        }
        let comps: Vec<String> = e.path.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        if comps.iter().any(|c| c == "test") {
            test.push(e.clone());
        } else if comps.iter().any(|c| c == "train") {
            train.push(e.clone());
        }
    }
    (train, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub source_rate: u32,
    pub target_rate: u32,
    /// Shortest accepted high-rate signal.
    pub min_len: usize,
}

pub const SUPPORTED_PAIRS: [(u32, u32); 5] = [(8000, 16000), (8000, 24000), (4000, 16000), (11025, 44100), (12000, 48000)];

impl PairSpec {
    pub fn new(source_rate: u32, target_rate: u32, min_len: usize) -> Result<Self> {
        if source_rate == 0 || target_rate % source_rate != 0 || target_rate < source_rate {
            return Err(AeroError::Config(format!(
                "target rate {target_rate} is not an integer multiple of source rate {source_rate}"
            )));
        }
        if !SUPPORTED_PAIRS.contains(&(source_rate, target_rate)) {
            warn!("rate pair {source_rate}->{target_rate} is outside the standard settings");
        }
        Ok(Self { source_rate, target_rate, min_len })
    }

    pub fn scale(&self) -> usize {
        (self.target_rate / self.source_rate) as usize
    }
}

/// Trims `y` to a multiple of the scale and band-limits it down to the
/// source rate.
pub fn make_lr_hr_pair(y: &Wave, pair: &PairSpec) -> Result<(Wave, Wave)> {
    if y.sample_rate() != pair.target_rate {
        return Err(AeroError::Data(format!(
            "high-rate signal at {} Hz, expected {} Hz",
            y.sample_rate(),
            pair.target_rate
        )));
    }
    let s = pair.scale();
    let len = y.len() / s * s;
    if len < pair.min_len.max(s) {
        return Err(AeroError::Data(format!(
            "{} samples shorter than the minimum of {}",
            y.len(),
            pair.min_len.max(s)
        )));
    }
    let hr = y.slice(0, len)?;
    let lr = sinc_resample(&hr, pair.source_rate)?;
    debug_assert_eq!(lr.len() * s, hr.len());
    Ok((lr, hr))
}

/// Location of the cached low-rate version of `entry`.
pub fn lr_cache_path(cache_root: &Path, data_root: &Path, entry: &ManifestEntry, source_rate: u32) -> PathBuf {
    let rel = entry.path.strip_prefix(data_root).unwrap_or(&entry.path);
    let rel: PathBuf = rel.components().filter(|c| matches!(c, std::path::Component::Normal(_))).collect();
    cache_root.join(format!("lr_{source_rate}")).join(rel)
}

#[derive(Debug, Clone)]
pub struct LrHrPair {
    pub id: String,
    pub lr: Wave,
    pub hr: Wave,
}

/// Loads `entry` as a pair, reusing or creating the low-rate cache file.
pub fn load_pair(entry: &ManifestEntry, pair: &PairSpec, data_root: &Path, cache_root: &Path) -> Result<LrHrPair> {
    let y: Wave = read_wav(&entry.path).map_err(|e| AeroError::Data(format!("{}: {e}", entry.path.display())))?;
    let s = pair.scale();
    let hr = y.slice(0, y.len() / s * s)?;
    let cache = lr_cache_path(cache_root, data_root, entry, pair.source_rate);
    if cache.exists() {
        if let Ok(lr) = read_wav::<f32>(&cache) {
            if lr.sample_rate() == pair.source_rate && lr.len() * s == hr.len() {
                return Ok(LrHrPair { id: entry.path.display().to_string(), lr, hr });
            }
            warn!("stale cache {}; regenerating", cache.display());
        }
    }
    let (lr, hr) = make_lr_hr_pair(&y, pair)?;
    if let Some(dir) = cache.parent() {
        fs::create_dir_all(dir).map_err(|e| AeroError::io(dir, e))?;
    }
    write_wav(&cache, &lr, WavFormat::Float32)?;
    Ok(LrHrPair { id: entry.path.display().to_string(), lr, hr })
}

#[derive(Debug, Clone)]
pub struct TrainChunk {
    pub pair_index: usize,
    /// Offset in low-rate samples; the high-rate offset is `scale` times this.
    pub offset: usize,
    pub lr: Wave,
    pub hr: Wave,
}

/// Fixed-length aligned chunks over a list of pairs, addressable by index.
#[derive(Debug, Clone)]
pub struct ChunkSet {
    pairs: Vec<LrHrPair>,
    index: Vec<(usize, usize)>,
    chunk_lr: usize,
    scale: usize,
}

impl ChunkSet {
    /// `chunk_seconds` and `hop_seconds` are measured on the high-rate side.
    pub fn new(pairs: Vec<LrHrPair>, chunk_seconds: f64, hop_seconds: f64) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| AeroError::Data("no training pairs".into()))?;
        let scale = first.hr.len() / first.lr.len().max(1);
        let lr_rate = first.lr.sample_rate();
        for p in &pairs {
            if p.lr.len() * scale != p.hr.len() || p.lr.sample_rate() != lr_rate {
                return Err(AeroError::Data(format!("pair {} is not aligned at scale {scale}", p.id)));
            }
        }
        if !(chunk_seconds > 0.0 && hop_seconds > 0.0) {
            return Err(AeroError::Config("chunk and hop durations must be positive".into()));
        }
        let chunk_lr = (chunk_seconds * lr_rate as f64).round() as usize;
        let hop_lr = ((hop_seconds * lr_rate as f64).round() as usize).max(1);
        if chunk_lr == 0 {
            return Err(AeroError::Config("chunk shorter than one sample".into()));
        }
        let shortest = pairs.iter().map(|p| p.lr.len()).min().unwrap_or(0);
        if chunk_lr > shortest {
            return Err(AeroError::Data(format!(
                "chunk of {chunk_seconds} s exceeds the shortest file ({} s)",
                shortest as f64 / lr_rate as f64
            )));
        }
        let mut index = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            let mut off = 0;
            while off + chunk_lr <= p.lr.len() {
                index.push((i, off));
                off += hop_lr;
            }
        }
        Ok(Self { pairs, index, chunk_lr, scale })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn chunk_lr_len(&self) -> usize {
        self.chunk_lr
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn pairs(&self) -> &[LrHrPair] {
        &self.pairs
    }

    pub fn get(&self, i: usize) -> Result<TrainChunk> {
        let (pair_index, offset) = *self
            .index
            .get(i)
            .ok_or_else(|| AeroError::Data(format!("chunk {i} out of range ({} chunks)", self.len())))?;
        let p = &self.pairs[pair_index];
        Ok(TrainChunk {
            pair_index,
            offset,
            lr: p.lr.slice(offset, self.chunk_lr)?,
            hr: p.hr.slice(offset * self.scale, self.chunk_lr * self.scale)?,
        })
    }

    /// Chunk order for `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
    }
}

/// Shuffled iterator over every chunk of `pairs`.
pub fn chunk_stream(
    pairs: Vec<LrHrPair>,
    chunk_seconds: f64,
    hop_seconds: f64,
    seed: u64,
) -> Result<impl Iterator<Item = TrainChunk>> {
    let set = ChunkSet::new(pairs, chunk_seconds, hop_seconds)?;
    let order = set.epoch_order(seed, 0);
    Ok(order.into_iter().map(move |i| set.get(i).expect("index from own range")))
}

/// Groups entries by speaker, for reporting.
pub fn speakers(entries: &[ManifestEntry]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in entries {
        if let Some(s) = &e.speaker_id {
            *out.entry(s.clone()).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str) -> ManifestEntry {
        let path = PathBuf::from(name);
        let (speaker_id, mic_id) = parse_vctk_ids(&path);
        ManifestEntry { path, duration_samples: 100, sample_rate: 48000, speaker_id, mic_id }
    }

    #[test]
    fn vctk_ids_parse() {
        assert_eq!(parse_vctk_ids(Path::new("a/p225_001_mic1.flac")), (Some("p225".into()), Some("mic1".into())));
        assert_eq!(parse_vctk_ids(Path::new("p225_001.wav")), (Some("p225".into()), None));
        assert_eq!(parse_vctk_ids(Path::new("mixture.wav")), (None, None));
    }

    #[test]
    fn natural_order_of_speakers() {
        let mut ids = vec!["p10", "p9", "s5", "p100"];
        ids.sort_by_key(|s| natural_key(s));
        assert_eq!(ids, vec!["p9", "p10", "p100", "s5"]);
    }

    #[test]
    fn vctk_split_counts_and_exclusions() {
        let mut entries = Vec::new();
        for i in 0..110 {
            let spk = match i {
                0 => "p280".to_string(),
                1 => "p315".to_string(),
                _ => format!("p{}", 400 + i),
            };
            entries.push(entry(&format!("{spk}_001_mic1.wav")));
            entries.push(entry(&format!("{spk}_001_mic2.wav")));
        }
        let (train, test) = split_vctk(&entries).unwrap();
        assert_eq!(speakers(&train).len(), 100);
        assert_eq!(speakers(&test).len(), 8);
        assert!(train.iter().chain(&test).all(|e| e.mic_id.as_deref() == Some("mic1")));
        assert!(train.iter().chain(&test).all(|e| !VCTK_OMITTED.contains(&e.speaker_id.as_deref().unwrap())));
        let tr: BTreeSet<_> = speakers(&train).into_keys().collect();
        assert!(speakers(&test).keys().all(|s| !tr.contains(s)));
    }

    #[test]
    fn vctk_split_too_few_speakers() {
        let entries: Vec<_> = (0..50).map(|i| entry(&format!("p{}_001_mic1.wav", 400 + i))).collect();
        let e = split_vctk(&entries).unwrap_err().to_string();
        assert!(e.contains("found 50"), "{e}");
    }

    #[test]
    fn pair_lengths() {
        let y = Wave::sine(1000.0, 0.5, 0.0, 48000, 48000).unwrap();
        let (lr, hr) = make_lr_hr_pair(&y, &PairSpec::new(12000, 48000, 512).unwrap()).unwrap();
        assert_eq!((lr.len(), hr.len(), lr.sample_rate()), (12000, 48000, 12000));
        let short = Wave::zeros(100, 48000).unwrap();
        assert!(make_lr_hr_pair(&short, &PairSpec::new(12000, 48000, 512).unwrap()).is_err());
        assert!(PairSpec::new(8000, 20000, 0).is_err());
    }

    #[test]
    fn chunk_counts_and_alignment() {
        let hr = Wave::sine(300.0, 0.5, 0.0, 32000, 16000).unwrap();
        let (lr, hr) = make_lr_hr_pair(&hr, &PairSpec::new(8000, 16000, 0).unwrap()).unwrap();
        let pairs = vec![LrHrPair { id: "a".into(), lr, hr }];
        let chunks: Vec<_> = chunk_stream(pairs.clone(), 0.5, 0.5, 3).unwrap().collect();
        assert_eq!(chunks.len(), 4);
        for c in &chunks {
            assert_eq!(c.hr.len(), 2 * c.lr.len());
            assert_eq!(c.hr.samples(), &pairs[0].hr.samples()[2 * c.offset..2 * c.offset + c.hr.len()]);
        }
        let again: Vec<_> = chunk_stream(pairs.clone(), 0.5, 0.5, 3).unwrap().map(|c| c.offset).collect();
        assert_eq!(again, chunks.iter().map(|c| c.offset).collect::<Vec<_>>());
        assert!(chunk_stream(pairs, 3.0, 0.5, 3).is_err());
    }

    #[test]
    fn cache_path_layout() {
        let e = ManifestEntry {
            path: PathBuf::from("/data/vctk/p225/p225_001.wav"),
            duration_samples: 1,
            sample_rate: 16000,
            speaker_id: None,
            mic_id: None,
        };
        assert_eq!(
            lr_cache_path(Path::new("/cache"), Path::new("/data/vctk"), &e, 8000),
            PathBuf::from("/cache/lr_8000/p225/p225_001.wav")
        );
    }
}
