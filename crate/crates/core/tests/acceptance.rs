//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the harness capture) before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use aero::data::{split_vctk, ChunkSet, LrHrPair, ManifestEntry};
use aero::discriminator::{DiscriminatorConfig, MultiScaleDiscriminator};
use aero::dsp::{istft, make_transform_pair, sinc_resample, stft, OverlapRatio, StftConfig, WaveSignal};
use aero::eval::{lsd, LsdConfig};
use aero::losses::{
    discriminator_loss, feature_matching_loss, features, logits, multi_res_spectral_loss, total_generator_loss,
    AdversarialKind, LossWeights, SpectralLoss, LOSS_RESOLUTIONS,
};
use aero::model::IdentityModel;
use aero::pipeline::TensorPipeline;
use aero::trainer::{fit, load_checkpoint, save_checkpoint, FitOptions, Trainer};
use aero::{super_resolve, AeroConfig, AeroModel, ParameterSet, Wave, Wave64};
use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, ok: bool, detail: String) {
    let line = format!("criterion {n}: {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_wave(rng: &mut ChaCha8Rng, len: usize, rate: u32) -> Wave64 {
    WaveSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), rate).unwrap()
}

/// Direct-summation DFT with a cached twiddle table.
struct Dft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft {
    fn new(n: usize) -> Self {
        let ang = |m: usize| 2.0 * PI * m as f64 / n as f64;
        Self { n, cos: (0..n).map(|m| ang(m).cos()).collect(), sin: (0..n).map(|m| ang(m).sin()).collect() }
    }

    fn power(&self, buf: &[f64], k: usize) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in buf.iter().enumerate() {
            let m = (k * t) % self.n;
            re += v * self.cos[m];
            im -= v * self.sin[m];
        }
        re * re + im * im
    }
}

/// Centered, reflect-padded frame with a periodic Hann window of `win`
/// samples placed in the middle of an `n` point buffer.
fn frame(x: &[f64], centre: isize, n: usize, win: usize) -> Vec<f64> {
    let len = x.len() as isize;
    let off = (n - win) / 2;
    let mut buf = vec![0.0; n];
    for b in off..off + win {
        let mut i = centre - (n / 2) as isize + b as isize;
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
        let w = 0.5 - 0.5 * (2.0 * PI * (b - off) as f64 / win as f64).cos();
        buf[b] = x[i as usize] * w;
    }
    buf
}

#[test]
fn criterion_1_stft_round_trip() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ratios = OverlapRatio::ALL;
    let lengths = [1600usize, 8192, 44100];
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let r = ratios[i % 3];
        let fft = 512;
        let cfg = StftConfig::hann(fft, fft, (fft as f64 * r.as_f64()) as usize).unwrap();
        let len = lengths[rng.gen_range(0..3)];
        let x = random_wave(&mut rng, len, 16000);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        let num: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x.samples().iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    let elapsed = t0.elapsed();
    let ok = worst < 1e-6 && elapsed < Duration::from_secs(30);
    report(1, ok, format!("worst relative L2 {worst:.3e}, {:.2} s", elapsed.as_secs_f64()));
    assert!(ok);
}

fn peak_bin(x: &[f64]) -> usize {
    let dft = Dft::new(x.len());
    (1..=x.len() / 2).max_by(|&a, &b| dft.power(x, a).total_cmp(&dft.power(x, b))).unwrap()
}

#[test]
fn criterion_2_spectral_upsampling_shapes_and_pitch() {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for &(s, fft, r) in &[(2usize, 512usize, OverlapRatio::QUARTER), (4, 512, OverlapRatio::EIGHTH), (4, 1024, OverlapRatio::QUARTER)] {
        let spec = make_transform_pair(s, fft, r).unwrap();
        let (rate, len) = (8000u32, 2000usize);
        // whole number of cycles over (s - 1) analysis hops
        let period = (s - 1) as f64 * spec.analysis.hop_length as f64 / rate as f64;
        let f0 = (437.5 * period).round() / period;
        let x = Wave64::sine(f0, 0.5, 0.0, len, rate).unwrap();
        let analysis = spec.analyze(&x).unwrap();
        let synth_shape = (spec.bins(), spec.synthesis_frames(len));
        let shapes_match = (analysis.bins(), analysis.frames()) == synth_shape;

        let pipe = TensorPipeline::new(spec, DType::F64, &Device::Cpu).unwrap();
        let lr = Tensor::from_vec(x.samples().to_vec(), (1, len), &Device::Cpu).unwrap();
        let cac = pipe.analyze(&lr).unwrap();
        let tensor_shape_ok = cac.dims() == [1, 2, fft / 2, synth_shape.1];

        let y = super_resolve(&IdentityModel, &x, &spec).unwrap();
        let len_ok = y.len() == s * len && y.sample_rate() == s as u32 * rate;
        let got = peak_bin(y.samples());
        let want = f0 * s as f64 * y.len() as f64 / y.sample_rate() as f64;
        let pitch_ok = (got as f64 - want).abs() <= 1.0;
        ok &= shapes_match && tensor_shape_ok && len_ok && pitch_ok;
        notes.push(format!("({s},{fft},{r}) frames {} tone {f0:.2} Hz peak {got}/{want}", analysis.frames()));
    }
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(30);
    report(2, ok, format!("{}, {:.2} s", notes.join("; "), elapsed.as_secs_f64()));
    assert!(ok);
}

fn brute_lsd(y: &[f64], yhat: &[f64]) -> f64 {
    let (n, hop) = (2048usize, 512usize);
    let dft = Dft::new(n);
    let frames = (y.len() - 1) / hop + 1;
    let mut total = 0.0;
    for t in 0..frames {
        let a = frame(y, (t * hop) as isize, n, n);
        let b = frame(yhat, (t * hop) as isize, n, n);
        let mut acc = 0.0;
        for k in 0..=n / 2 {
            let pa = dft.power(&a, k).max(1e-10).log10();
            let pb = dft.power(&b, k).max(1e-10).log10();
            acc += (pb - pa).powi(2);
        }
        total += (acc / (n / 2 + 1) as f64).sqrt();
    }
    total / frames as f64
}

#[test]
fn criterion_3_lsd_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = LsdConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let len = rng.gen_range(2048..5000);
        let y = random_wave(&mut rng, len, 16000);
        let yhat = random_wave(&mut rng, len, 16000);
        let fast = lsd(&y, &yhat, &cfg).unwrap();
        worst = worst.max((fast - brute_lsd(y.samples(), yhat.samples())).abs());
    }
    let y = random_wave(&mut rng, 4000, 16000);
    let self_lsd = lsd(&y, &y, &cfg).unwrap();
    let scaled = lsd(&y, &y.scaled(10f64.sqrt()), &cfg).unwrap();
    let ok = worst < 1e-9 && self_lsd == 0.0 && (scaled - 1.0).abs() < 1e-12;
    report(3, ok, format!("max |fast - brute| {worst:.2e}, lsd(y,y) {self_lsd}, 10x power {scaled:.15}"));
    assert!(ok);
}

fn brute_spectral(y: &[f64], yhat: &[f64]) -> (f64, f64) {
    let (mut sc, mut mag) = (0.0, 0.0);
    for res in LOSS_RESOLUTIONS {
        let dft = Dft::new(res.fft_size);
        let frames = y.len() / res.hop_length + 1;
        let (mut num, mut den, mut l1, mut count) = (0.0, 0.0, 0.0, 0usize);
        for t in 0..frames {
            let a = frame(y, (t * res.hop_length) as isize, res.fft_size, res.win_length);
            let b = frame(yhat, (t * res.hop_length) as isize, res.fft_size, res.win_length);
            for k in 0..=res.fft_size / 2 {
                let ma = dft.power(&a, k).sqrt().max(1e-7);
                let mb = dft.power(&b, k).sqrt().max(1e-7);
                num += (ma - mb).powi(2);
                den += ma * ma;
                l1 += (ma.ln() - mb.ln()).abs();
                count += 1;
            }
        }
        sc += num.sqrt() / den.sqrt();
        mag += l1 / count as f64;
    }
    let n = LOSS_RESOLUTIONS.len() as f64;
    (sc / n, mag / n)
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn zeroed(params: &ParameterSet) -> ParameterSet {
    ParameterSet::from_tensors(params.tensors().into_iter().map(|(k, t)| (k, t.zeros_like().unwrap()))).unwrap()
}

#[test]
fn criterion_4_loss_oracles() {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = random_wave(&mut rng, 4096, 16000);
    let yhat = random_wave(&mut rng, 4096, 16000);
    let mut notes = Vec::new();
    let mut ok = true;

    let (sc, mag) = multi_res_spectral_loss(&y, &y).unwrap();
    ok &= sc == 0.0 && mag == 0.0;
    notes.push(format!("identical {:.1e}", sc + mag));

    let (sc2, _) = multi_res_spectral_loss(&y, &y.scaled(2.0)).unwrap();
    ok &= (sc2 - 1.0).abs() < 1e-9;
    notes.push(format!("SC(2y) {sc2:.12}"));

    let (osc, omag) = brute_spectral(y.samples(), yhat.samples());
    let (fsc, fmag) = multi_res_spectral_loss(&y, &yhat).unwrap();
    let spectral = SpectralLoss::standard(DType::F64, &dev).unwrap();
    let ty = Tensor::from_vec(y.samples().to_vec(), (1, 4096), &dev).unwrap();
    let tyh = Tensor::from_vec(yhat.samples().to_vec(), (1, 4096), &dev).unwrap();
    let (tsc, tmag) = spectral.forward(&ty, &tyh).unwrap();
    let spec_err = [fsc - osc, fmag - omag, scalar(&tsc) - osc, scalar(&tmag) - omag]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    ok &= spec_err < 1e-9;
    notes.push(format!("spectral vs oracle {spec_err:.1e}"));

    let disc = MultiScaleDiscriminator::build(&DiscriminatorConfig::default(), 4, DType::F64, &dev).unwrap();
    let outs = disc.forward(&ty).unwrap();
    let fm = scalar(&feature_matching_loss(&features(&outs, true), &features(&outs, false)).unwrap());
    ok &= fm == 0.0;
    let outs_hat = disc.forward(&tyh).unwrap();
    let fm_pair = scalar(&feature_matching_loss(&features(&outs, true), &features(&outs_hat, false)).unwrap());
    let mut fm_terms = Vec::new();
    for (r, f) in features(&outs, true).iter().zip(features(&outs_hat, true)) {
        for (a, b) in r.iter().zip(f) {
            let a = a.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let b = b.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let n = a.len() as f64;
            let norm = (a.iter().map(|v| v.abs()).sum::<f64>() / n).max(1e-7);
            fm_terms.push(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / n / norm);
        }
    }
    let fm_oracle = fm_terms.iter().sum::<f64>() / fm_terms.len() as f64;
    ok &= (fm_pair - fm_oracle).abs() < 1e-9;
    notes.push(format!("feature identical {fm}, pair err {:.1e}", (fm_pair - fm_oracle).abs()));

    let silent = MultiScaleDiscriminator::from_params(disc.config(), &zeroed(disc.params())).unwrap();
    let real = silent.forward(&ty).unwrap();
    let fake = silent.forward(&tyh).unwrap();
    let d0 = scalar(&discriminator_loss(&logits(&real), &logits(&fake), AdversarialKind::Hinge).unwrap());
    ok &= (d0 - 2.0).abs() < 1e-9;
    let hinge = scalar(&discriminator_loss(&logits(&outs), &logits(&outs_hat), AdversarialKind::Hinge).unwrap());
    let mut h_terms = Vec::new();
    for (r, f) in logits(&outs).iter().zip(logits(&outs_hat)) {
        let r = r.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let f = f.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mr = r.iter().map(|v| (1.0 - v).max(0.0)).sum::<f64>() / r.len() as f64;
        let mf = f.iter().map(|v| (1.0 + v).max(0.0)).sum::<f64>() / f.len() as f64;
        h_terms.push(mr + mf);
    }
    let h_oracle = h_terms.iter().sum::<f64>() / h_terms.len() as f64;
    ok &= (hinge - h_oracle).abs() < 1e-9;
    notes.push(format!("hinge at D=0 {d0}, random err {:.1e}", (hinge - h_oracle).abs()));

    report(4, ok, notes.join(", "));
    assert!(ok);
}

#[test]
fn criterion_5_latent_extent_and_gradients() {
    let t0 = Instant::now();
    let dev = Device::Cpu;
    let cfg = AeroConfig::default();
    assert_eq!(cfg.model.freq_bins, 256);
    let model = AeroModel::build(&cfg.model, 5, DType::F32, &dev).unwrap();
    let disc = MultiScaleDiscriminator::build(&cfg.discriminator, 6, DType::F32, &dev).unwrap();
    let pipe = TensorPipeline::new(cfg.transform.spec().unwrap(), DType::F32, &dev).unwrap();
    let spectral = SpectralLoss::standard(DType::F32, &dev).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, lr_len) = (2usize, 2000usize);
    let lr: Vec<f32> = (0..b * lr_len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let hr: Vec<f32> = (0..b * lr_len * 2).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let lr = Tensor::from_vec(lr, (b, lr_len), &dev).unwrap();
    let hr = Tensor::from_vec(hr, (b, 2 * lr_len), &dev).unwrap();

    let latent = model.encode(&pipe.analyze(&lr).unwrap()).unwrap();
    let extent = latent.dim(2).unwrap();

    let yhat = pipe.run(&model, &lr).unwrap();
    let weights = LossWeights::default();
    let (loss_g, _) = total_generator_loss(&hr, &yhat, Some(&disc), &spectral, &weights, AdversarialKind::Hinge).unwrap();
    let grads_g = loss_g.backward().unwrap();
    let real = disc.forward(&hr).unwrap();
    let fake = disc.forward(&yhat.detach()).unwrap();
    let grads_d = discriminator_loss(&logits(&real), &logits(&fake), AdversarialKind::Hinge).unwrap().backward().unwrap();

    let dead_in = |set: &ParameterSet, grads: &GradStore| -> Vec<String> {
        set.iter()
            .filter(|(_, var)| {
                !grads
                    .get(var.as_tensor())
                    .map(|g| g.abs().unwrap().max_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap() > 0.0)
                    .unwrap_or(false)
            })
            .map(|(name, _)| name.clone())
            .collect()
    };
    let dead = dead_in(model.params(), &grads_g);
    let dead_d = dead_in(disc.params(), &grads_d);
    let elapsed = t0.elapsed();
    let ok = extent == 4 && dead.is_empty() && elapsed < Duration::from_secs(120);
    report(
        5,
        ok,
        format!(
            "latent extent {extent}, {} generator parameters, zero-gradient: [{}]; discriminator under hinge loss, zero-gradient: [{}]; {:.1} s",
            model.params().len(),
            dead.join(", "),
            dead_d.join(", "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// Harmonic tone with a little noise, 0.5 s at 16 kHz.
fn training_clip() -> Wave {
    let (rate, n) = (16000u32, 8000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let tone: f64 = (1..=35)
                .map(|h| 220.0 * h as f64)
                .filter(|f| *f < 7800.0)
                .enumerate()
                .map(|(k, f)| 0.3 / (k + 1) as f64 * (2.0 * PI * f * t).sin())
                .sum();
            (tone + rng.gen_range(-0.01..0.01)) as f32
        })
        .collect();
    Wave::new(samples, rate).unwrap()
}

/// Reduced-width setup that fits the CPU time budget.
fn desk_config() -> AeroConfig {
    let mut cfg = AeroConfig::default();
    cfg.model.base_channels = 8;
    cfg.loss.lambda_adv = 0.0;
    cfg.loss.lambda_feat = 0.0;
    cfg.train.batch_size = 1;
    cfg.train.lr_g = 1e-3;
    cfg.train.seed = 0;
    cfg
}

#[test]
fn criterion_6_single_clip_overfit() {
    let t0 = Instant::now();
    let cfg = desk_config();
    let spec = cfg.transform.spec().unwrap();
    let hr = training_clip();
    let lr = sinc_resample(&hr, cfg.transform.source_rate).unwrap();
    let data = ChunkSet::new(vec![LrHrPair { id: "clip".into(), lr: lr.clone(), hr: hr.clone() }], 0.5, 0.5).unwrap();
    let mut trainer = Trainer::new(&cfg).unwrap();
    let total = |t: &Trainer| {
        let y = super_resolve(t.generator(), &lr, &spec).unwrap();
        let (sc, mag) = multi_res_spectral_loss(&hr, &y).unwrap();
        (sc + mag, y)
    };
    let (initial, _) = total(&trainer);
    let sinc = sinc_resample(&lr, hr.sample_rate()).unwrap();
    let lsd_cfg = LsdConfig::default();
    let sinc_lsd = lsd(&hr, &sinc, &lsd_cfg).unwrap();

    let (mut final_loss, mut model_lsd) = (initial, f64::INFINITY);
    while trainer.step() < 2000 {
        let target = (trainer.step() + 100).min(2000);
        trainer.run(&data, target, &FitOptions::default()).unwrap();
        let (loss, y) = total(&trainer);
        final_loss = loss;
        model_lsd = lsd(&hr, &y, &lsd_cfg).unwrap();
        if final_loss < 0.25 * initial && model_lsd < sinc_lsd {
            break;
        }
    }
    let elapsed = t0.elapsed();
    let ok = final_loss < 0.25 * initial && model_lsd < sinc_lsd && elapsed < Duration::from_secs(900);
    report(
        6,
        ok,
        format!(
            "loss {initial:.4} -> {final_loss:.4} ({:.1}% of initial) after {} steps, LSD model {model_lsd:.4} vs sinc {sinc_lsd:.4}, {:.0} s",
            100.0 * final_loss / initial,
            trainer.step(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_spectral_loss_gradient_check() {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = 4096;
    let y: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let yh: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let spectral = SpectralLoss::standard(DType::F64, &dev).unwrap();
    let ty = Tensor::from_vec(y, (1, len), &dev).unwrap();
    let loss_at = |v: &[f64]| {
        let t = Tensor::from_vec(v.to_vec(), (1, len), &dev).unwrap();
        let (sc, mag) = spectral.forward(&ty, &t).unwrap();
        scalar(&sc) + scalar(&mag)
    };
    let var = Var::from_tensor(&Tensor::from_vec(yh.clone(), (1, len), &dev).unwrap()).unwrap();
    let (sc, mag) = spectral.forward(&ty, var.as_tensor()).unwrap();
    let grads = sc.add(&mag).unwrap().backward().unwrap();
    let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..32 {
        let i = rng.gen_range(0..len);
        let shifted = |d: f64| {
            let mut v = yh.clone();
            v[i] += d;
            loss_at(&v)
        };
        // five-point central difference
        let numeric = (8.0 * (shifted(h) - shifted(-h)) - (shifted(2.0 * h) - shifted(-2.0 * h))) / (12.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    let ok = worst < 1e-3;
    report(7, ok, format!("worst relative error {worst:.2e} over 32 positions"));
    assert!(ok);
}

#[test]
fn criterion_8_vctk_split() {
    let mut entries = Vec::new();
    for sp in 225..335 {
        for mic in ["mic1", "mic2"] {
            for utt in 1..=2 {
                entries.push(ManifestEntry {
                    path: format!("wav48/p{sp}/p{sp}_{utt:03}_{mic}.flac").into(),
                    duration_samples: 48000,
                    sample_rate: 48000,
                    speaker_id: Some(format!("p{sp}")),
                    mic_id: Some(mic.into()),
                });
            }
        }
    }
    let speakers_in = |v: &[ManifestEntry]| {
        v.iter().filter_map(|e| e.speaker_id.clone()).collect::<std::collections::BTreeSet<_>>()
    };
    let (train, test) = split_vctk(&entries).unwrap();
    let (tr, te) = (speakers_in(&train), speakers_in(&test));
    let omitted_absent = ["p280", "p315"].iter().all(|s| !tr.contains(*s) && !te.contains(*s));
    let mic1_only = train.iter().chain(&test).all(|e| e.mic_id.as_deref() == Some("mic1"));
    let disjoint = tr.is_disjoint(&te);
    let ok = tr.len() == 100 && te.len() == 8 && omitted_absent && mic1_only && disjoint;
    report(8, ok, format!("{} train / {} test speakers, omitted absent {omitted_absent}, mic1 only {mic1_only}", tr.len(), te.len()));
    assert!(ok);
}

fn tiny_config() -> AeroConfig {
    let mut cfg = AeroConfig::default();
    cfg.transform.fft_size = 128;
    cfg.model.freq_bins = 64;
    cfg.model.base_channels = 4;
    cfg.model.attention_window = 4;
    cfg.discriminator.base_channels = 4;
    cfg.discriminator.max_channels = 16;
    cfg.train.batch_size = 2;
    cfg.train.total_steps = 100;
    cfg.train.seed = 9;
    cfg
}

fn tiny_data() -> ChunkSet {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs = (0..2)
        .map(|i| {
            let hr: Wave = WaveSignal::new((0..8000).map(|_| rng.gen_range(-0.3f32..0.3)).collect(), 16000).unwrap();
            let lr = sinc_resample(&hr, 8000).unwrap();
            LrHrPair { id: format!("clip{i}"), lr, hr }
        })
        .collect();
    ChunkSet::new(pairs, 0.125, 0.125).unwrap()
}

fn max_param_diff(a: &ParameterSet, b: &ParameterSet) -> f64 {
    let tb = b.tensors();
    a.tensors()
        .iter()
        .map(|(k, t)| scalar(&t.sub(&tb[k]).unwrap().abs().unwrap().max_all().unwrap()))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_9_determinism_and_resume() {
    let cfg = tiny_config();
    let data = tiny_data();
    let a = fit(&cfg, &data, &FitOptions::default()).unwrap();
    let b = fit(&cfg, &data, &FitOptions::default()).unwrap();
    let identical_logs = a.logs == b.logs && a.logs.len() == 100;

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(&cfg).unwrap();
    first.run(&data, 50, &FitOptions::default()).unwrap();
    let path = dir.path().join("step50.safetensors");
    save_checkpoint(&first.checkpoint().unwrap(), &path).unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
    let tail = resumed.run(&data, 100, &FitOptions::default()).unwrap();
    let last = tail.last().unwrap();
    let reference = &a.logs[99];
    let loss_diff = (last.report.total_g - reference.report.total_g)
        .abs()
        .max((last.report.total_d - reference.report.total_d).abs());
    let gen_diff = max_param_diff(resumed.generator().params(), &a.checkpoint.generator);
    let disc_diff = max_param_diff(resumed.discriminator().params(), &a.checkpoint.discriminator);
    let ok = identical_logs && last.step == 100 && loss_diff < 1e-6 && gen_diff < 1e-6 && disc_diff < 1e-6;
    report(
        9,
        ok,
        format!("identical logs {identical_logs}, resumed step-100 loss diff {loss_diff:.1e}, param diff G {gen_diff:.1e} D {disc_diff:.1e}"),
    );
    assert!(ok);
}
