use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aero::config::{preset, preset_names, Corpus};
use aero::data::{build_manifest, load_pair, read_manifest, split_musdb, split_vctk, write_manifest, ChunkSet, ManifestEntry, PairSpec};
use aero::dsp::{lowpass_filter, read_wav, sinc_resample, write_wav, WavFormat};
use aero::eval::{evaluate_testset, render_spectrogram_image, LsdConfig, MetricSelection, SpectrogramSource, VisqolMode};
use aero::mushra::{export_session, ExportItem, DEFAULT_ANCHOR_CUTOFF_HZ};
use aero::pipeline::{AeroUpsampler, SincUpsampler};
use aero::trainer::{load_checkpoint, load_generator, FitOptions, Trainer};
use aero::{AeroConfig, AeroModel, Upsampler, Wave};
use candle_core::Device;
use clap::{Args, Parser, Subcommand};

/// Spectral-domain audio super-resolution.
#[derive(Debug, Parser)]
#[command(name = "aero", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset such as 8-16_128-512 (see `aero presets`).
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Dotted override, e.g. --set train.lr_g=1e-4 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random choice; overrides train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build manifests and splits and fill the low-rate cache.
    Prepare {
        /// Directory receiving train.jsonl and test.jsonl.
        #[arg(long, default_value = "prepared")]
        out: PathBuf,
    },
    /// Train from scratch or resume from a checkpoint.
    Train {
        /// Training manifest written by `prepare`.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for checkpoints and the loss log.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve a file or every WAV file in a directory.
    Upsample {
        input: PathBuf,
        output: PathBuf,
        /// Trained checkpoint; its stored configuration is used. Without one
        /// an untrained model is built from the configuration and seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// LSD / ViSQOL table over a test manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to evaluate; the sinc baseline when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated metrics: lsd, visqol.
        #[arg(long, default_value = "lsd")]
        metrics: String,
        #[arg(long)]
        visqol_bin: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "speech")]
        visqol_mode: VisqolMode,
        /// CSV destination.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sinc-interpolation baseline.
    BaselineSinc {
        input: PathBuf,
        output: PathBuf,
        /// Output rate; transform.target_rate when omitted.
        #[arg(long)]
        rate: Option<u32>,
    },
    /// Low-pass anchor for listening tests.
    Anchor {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ANCHOR_CUTOFF_HZ)]
        cutoff: f64,
    },
    /// Log-magnitude spectrogram as PNG.
    PlotSpec { input: PathBuf, output: PathBuf },
    /// Bundle stimuli and a session manifest for the listening-test harness.
    MushraExport {
        /// Directory of reference WAV files.
        #[arg(long)]
        reference: PathBuf,
        /// System outputs as NAME=DIR with files named like the references (repeatable).
        #[arg(long = "system", value_name = "NAME=DIR", required = true)]
        systems: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ANCHOR_CUTOFF_HZ)]
        anchor_cutoff: f64,
    },
    /// List the shipped presets.
    Presets,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn parse_mode(s: &str) -> Result<VisqolMode, String> {
    match s {
        "speech" => Ok(VisqolMode::Speech),
        "audio" => Ok(VisqolMode::Audio),
        _ => Err(format!("{s:?} is not speech or audio")),
    }
}

/// An error tagged with the stage that produced it.
struct Failure {
    stage: &'static str,
    error: anyhow::Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage, error: e.into() })
    }
}

fn load_config(g: &Global) -> Result<AeroConfig, Failure> {
    let base = match (&g.config, &g.preset) {
        (Some(path), _) => AeroConfig::load(path).stage("config")?,
        (None, Some(name)) => preset(name).stage("config")?,
        (None, None) => AeroConfig::default(),
    };
    let mut cfg = base.with_overrides(&g.overrides).stage("config")?;
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .stage("input")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Applies `f` to a file, or to every WAV file of a directory.
fn map_files(input: &Path, output: &Path, stage: &'static str, f: impl Fn(&Wave) -> aero::Result<Wave>) -> Result<usize, Failure> {
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        std::fs::create_dir_all(output).stage("output")?;
        wav_files(input)?
            .into_iter()
            .map(|p| {
                let out = output.join(p.file_name().expect("listed files have names"));
                (p, out)
            })
            .collect()
    } else {
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).stage("output")?;
        }
        vec![(input.to_path_buf(), output.to_path_buf())]
    };
    for (src, dst) in &jobs {
        let x: Wave = read_wav(src).map_err(|e| anyhow::anyhow!("{}: {e}", src.display())).stage("input")?;
        let y = f(&x).map_err(|e| anyhow::anyhow!("{}: {e}", src.display())).stage(stage)?;
        write_wav(dst, &y, WavFormat::Float32).stage("output")?;
    }
    Ok(jobs.len())
}

fn upsampler(checkpoint: Option<&Path>) -> Result<(Box<dyn Upsampler>, Option<AeroConfig>), Failure> {
    match checkpoint {
        Some(path) => {
            let (cfg, model) = load_generator(path).stage("checkpoint")?;
            Ok((Box::new(AeroUpsampler::new(model, cfg.transform.clone())), Some(cfg)))
        }
        None => Ok((Box::new(SincUpsampler), None)),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
        }
        Command::ShowConfig => {
            print!("{}", load_config(g)?.to_toml_string().stage("config")?);
        }
        Command::Prepare { out } => {
            let cfg = load_config(g)?;
            let root = PathBuf::from(&cfg.data.root);
            let manifest = build_manifest(&root, &cfg.data.pattern).stage("prepare")?;
            for (p, why) in &manifest.skipped {
                log::warn!("skipped {}: {why}", p.display());
            }
            let (train, test): (Vec<ManifestEntry>, Vec<ManifestEntry>) = match cfg.data.corpus {
                Corpus::Vctk => split_vctk(&manifest.entries).stage("prepare")?,
                Corpus::Musdb => split_musdb(&manifest.entries),
                Corpus::Plain => (manifest.entries.clone(), manifest.entries.clone()),
            };
            std::fs::create_dir_all(&out).stage("output")?;
            write_manifest(&out.join("train.jsonl"), &train).stage("output")?;
            write_manifest(&out.join("test.jsonl"), &test).stage("output")?;
            let pair = PairSpec::new(cfg.transform.source_rate, cfg.transform.target_rate, 0).stage("prepare")?;
            let cache = PathBuf::from(&cfg.data.cache_dir);
            for e in train.iter().chain(&test) {
                load_pair(e, &pair, &root, &cache).stage("prepare")?;
            }
            println!("{} train / {} test files, {} skipped", train.len(), test.len(), manifest.skipped.len());
        }
        Command::Train { manifest, out, resume } => {
            let (mut trainer, cfg) = match resume {
                Some(path) => {
                    let mut ckpt = load_checkpoint(&path).stage("checkpoint")?;
                    if !g.overrides.is_empty() {
                        ckpt.config = ckpt.config.with_overrides(&g.overrides).stage("config")?;
                    }
                    let cfg = ckpt.config.clone();
                    (Trainer::from_checkpoint(&ckpt).stage("checkpoint")?, cfg)
                }
                None => {
                    let cfg = load_config(g)?;
                    (Trainer::new(&cfg).stage("train")?, cfg)
                }
            };
            let entries = read_manifest(&manifest).stage("data")?;
            let pair = PairSpec::new(cfg.transform.source_rate, cfg.transform.target_rate, 0).stage("data")?;
            let root = PathBuf::from(&cfg.data.root);
            let cache = PathBuf::from(&cfg.data.cache_dir);
            let pairs = entries
                .iter()
                .map(|e| load_pair(e, &pair, &root, &cache))
                .collect::<aero::Result<Vec<_>>>()
                .stage("data")?;
            let data = ChunkSet::new(pairs, cfg.data.chunk_seconds, cfg.data.hop_seconds).stage("data")?;
            std::fs::create_dir_all(&out).stage("output")?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string().stage("config")?).stage("output")?;
            let opts = FitOptions { checkpoint_dir: Some(out.clone()), log_path: Some(out.join("log.jsonl")) };
            let logs = trainer.run(&data, cfg.train.total_steps, &opts).stage("train")?;
            if let Some(last) = logs.last() {
                println!("step {} total_g {:.5}", last.step, last.report.total_g);
            }
        }
        Command::Upsample { input, output, checkpoint } => {
            let (system, cfg): (Box<dyn Upsampler>, AeroConfig) = match checkpoint.as_deref() {
                Some(path) => {
                    let (system, cfg) = upsampler(Some(path))?;
                    (system, cfg.expect("checkpoint carries its config"))
                }
                None => {
                    let cfg = load_config(g)?;
                    log::warn!("no checkpoint given; using an untrained model seeded with {}", cfg.train.seed);
                    let model = AeroModel::build(&cfg.model, cfg.train.seed, cfg.dtype(), &Device::Cpu).stage("model")?;
                    (Box::new(AeroUpsampler::new(model, cfg.transform.clone())), cfg)
                }
            };
            let rate = cfg.transform.target_rate;
            let n = map_files(&input, &output, "upsample", |x| system.upsample(x, rate))?;
            println!("{n} file(s) written at {rate} Hz");
        }
        Command::Evaluate { manifest, checkpoint, metrics, visqol_bin, visqol_mode, csv } => {
            let metrics = MetricSelection::parse(&metrics, visqol_bin, visqol_mode).stage("evaluate")?;
            let (system, stored) = upsampler(checkpoint.as_deref())?;
            let cfg = match stored {
                Some(c) => c,
                None => load_config(g)?,
            };
            let entries = read_manifest(&manifest).stage("data")?;
            let pair = PairSpec::new(cfg.transform.source_rate, cfg.transform.target_rate, 0).stage("data")?;
            let root = PathBuf::from(&cfg.data.root);
            let cache = PathBuf::from(&cfg.data.cache_dir);
            let pairs = entries
                .iter()
                .map(|e| load_pair(e, &pair, &root, &cache))
                .collect::<aero::Result<Vec<_>>>()
                .stage("data")?;
            let result = evaluate_testset(system.as_ref(), &pairs, &metrics, &LsdConfig::default()).stage("evaluate")?;
            print!("{}", result.to_table());
            if let Some(path) = csv {
                result.write_csv(&path).stage("output")?;
            }
        }
        Command::BaselineSinc { input, output, rate } => {
            let rate = match rate {
                Some(r) => r,
                None => load_config(g)?.transform.target_rate,
            };
            let n = map_files(&input, &output, "baseline-sinc", |x| Ok(sinc_resample(x, rate)?))?;
            println!("{n} file(s) written at {rate} Hz");
        }
        Command::Anchor { input, output, cutoff } => {
            let n = map_files(&input, &output, "anchor", |x| Ok(lowpass_filter(x, cutoff)?))?;
            println!("{n} anchor file(s) written");
        }
        Command::PlotSpec { input, output } => {
            let x: Wave = read_wav(&input).stage("input")?;
            render_spectrogram_image(SpectrogramSource::Wave(&x), &output).stage("plot-spec")?;
        }
        Command::MushraExport { reference, systems, out, anchor_cutoff } => {
            let systems: Vec<(String, PathBuf)> = systems
                .iter()
                .map(|s| {
                    s.split_once('=')
                        .map(|(n, d)| (n.to_string(), PathBuf::from(d)))
                        .ok_or_else(|| anyhow::anyhow!("--system {s:?} is not NAME=DIR"))
                })
                .collect::<anyhow::Result<_>>()
                .stage("mushra-export")?;
            let items = wav_files(&reference)?
                .into_iter()
                .map(|r| {
                    let name = r.file_name().expect("listed files have names").to_owned();
                    let id = r.file_stem().expect("listed files have names").to_string_lossy().into_owned();
                    ExportItem { id, reference: r, systems: systems.iter().map(|(n, d)| (n.clone(), d.join(&name))).collect() }
                })
                .collect::<Vec<_>>();
            if items.is_empty() {
                return Err(anyhow::anyhow!("no WAV files in {}", reference.display())).stage("mushra-export");
            }
            let manifest = export_session(&items, &out, anchor_cutoff).stage("mushra-export")?;
            println!("{} item(s) exported to {}", manifest.items.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {:#}", f.stage, f.error);
            ExitCode::from(2)
        }
    }
}
