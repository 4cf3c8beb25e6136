use crate::scalar::Sample;

/// Periodic Hann window (the DFT-even form used for STFT analysis).
pub fn hann<T: Sample>(len: usize) -> Vec<T> {
    let n = len as f64;
    (0..len)
        .map(|i| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
        .collect()
}

pub fn rect<T: Sample>(len: usize) -> Vec<T> {
    vec![T::one(); len]
}

/// Zeroth-order modified Bessel function of the first kind, power series.
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window evaluated at normalized position `t ∈ [-1, 1]`; zero outside.
pub fn kaiser_at(t: f64, beta: f64) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - t * t).sqrt()) / bessel_i0(beta)
}

/// Kaiser β for a target stopband attenuation in dB.
pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Normalized sinc, `sin(πx)/(πx)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
