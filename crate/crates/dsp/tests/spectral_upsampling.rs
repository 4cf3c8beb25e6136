use aero_dsp::{lowpass_filter, make_transform_pair, sinc_resample, OverlapRatio, WaveSignal};

/// Magnitude spectrum by direct summation.
fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let w = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                let a = w * t as f64;
                (re + v * a.cos(), im + v * a.sin())
            });
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn peak_bin(x: &[f64]) -> usize {
    let m = dft_magnitudes(x);
    (1..m.len()).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap()
}

fn tone_amplitude(x: &[f64], rate: u32, freq: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
    let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| (re + v * (w * t as f64).cos(), im + v * (w * t as f64).sin()));
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

#[test]
fn analysis_and_synthesis_shapes_agree() {
    for &(s, fft, r) in &[(2usize, 512usize, OverlapRatio::QUARTER), (4, 512, OverlapRatio::EIGHTH), (4, 1024, OverlapRatio::QUARTER)] {
        let pair = make_transform_pair(s, fft, r).unwrap();
        let len = 8000 / s * 2;
        let x = WaveSignal::<f64>::sine(300.0, 0.5, 0.0, len, 8000).unwrap();
        let spec = pair.analyze(&x).unwrap();
        assert_eq!(spec.bins(), fft / 2 + 1);
        assert_eq!(spec.frames(), pair.synthesis_frames(len), "({s},{fft},{r})");
        let y = pair.synthesize(&spec, len).unwrap();
        assert_eq!(y.len(), s * len);
        assert_eq!(y.sample_rate(), s as u32 * 8000);
    }
}

#[test]
fn identity_stub_scales_frequency() {
    for &(s, fft, r) in &[(2usize, 512usize, OverlapRatio::QUARTER), (4, 512, OverlapRatio::EIGHTH), (4, 1024, OverlapRatio::QUARTER)] {
        let pair = make_transform_pair(s, fft, r).unwrap();
        let (rate, len, f0) = (8000u32, 2048usize, 500.0);
        let x = WaveSignal::<f64>::sine(f0, 0.5, 0.0, len, rate).unwrap();
        let y = pair.synthesize(&pair.analyze(&x).unwrap(), len).unwrap();
        let got = peak_bin(y.samples());
        let want = f0 * s as f64 * y.len() as f64 / y.sample_rate() as f64;
        assert!((got as f64 - want).abs() <= 1.0, "({s},{fft},{r}) peak {got}, expected {want}");
    }
}

#[test]
fn sinc_baseline_examples() {
    let dc = WaveSignal::new(vec![0.5f64; 800], 8000).unwrap();
    let up = sinc_resample(&dc, 16000).unwrap();
    assert_eq!(up.len(), 1600);
    assert!(up.samples()[200..1400].iter().all(|v| (v - 0.5).abs() < 1e-3));

    let tone = WaveSignal::<f64>::sine(1000.0, 0.5, 0.0, 4000, 8000).unwrap();
    let up = sinc_resample(&tone, 16000).unwrap();
    let mid = &up.samples()[1600..6400];
    assert!((tone_amplitude(mid, 16000, 1000.0) - 0.5).abs() < 1e-3);

    let long = WaveSignal::<f64>::zeros(48000, 48000).unwrap();
    assert_eq!(sinc_resample(&long, 8000).unwrap().len(), 8000);
}

#[test]
fn lowpass_examples() {
    let rate = 16000;
    let pass = WaveSignal::<f64>::sine(1000.0, 0.5, 0.0, 8000, rate).unwrap();
    let y = lowpass_filter(&pass, 3500.0).unwrap();
    let db = 20.0 * (tone_amplitude(&y.samples()[2000..6000], rate, 1000.0) / 0.5).log10();
    assert!(db.abs() < 0.5, "passband {db} dB");

    let stop = WaveSignal::<f64>::sine(6000.0, 0.5, 0.0, 8000, rate).unwrap();
    let y = lowpass_filter(&stop, 3500.0).unwrap();
    let db = 20.0 * (tone_amplitude(&y.samples()[2000..6000], rate, 6000.0) / 0.5).log10();
    assert!(db < -40.0, "stopband {db} dB");

    let z = WaveSignal::<f64>::zeros(1000, rate).unwrap();
    assert!(lowpass_filter(&z, 3500.0).unwrap().samples().iter().all(|v| *v == 0.0));
    assert!(lowpass_filter(&z, 9000.0).is_err());
}
