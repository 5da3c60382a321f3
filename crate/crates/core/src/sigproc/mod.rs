//! Band-pass zero-phase filtering, DFT-based analytic signal, instantaneous
//! phase/envelope, unwrapping, and dithered ensemble estimation.

mod bandpass;

use std::cell::RefCell;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

pub use bandpass::{design_bandpass, Biquad, FilterCoefficients, FilterSpec};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Run the cascade over `x` in place. `zi_unit` is the per-section unit-level
/// steady state; it is scaled by `x0` so the filter starts as if the input
/// had been sitting at `x0` forever, which suppresses startup transients.
fn sosfilt_inplace(coeffs: &FilterCoefficients, x: &mut [f64], zi_unit: &[[f64; 2]], x0: f64) {
    for (section, zi) in coeffs.sections().iter().zip(zi_unit) {
        let mut z1 = zi[0] * x0;
        let mut z2 = zi[1] * x0;
        for v in x.iter_mut() {
            let input = *v;
            let y = section.b0 * input + z1;
            z1 = section.b1 * input - section.a1 * y + z2;
            z2 = section.b2 * input - section.a2 * y;
            *v = y;
        }
    }
}

/// One forward pass followed by a time-reversed backward pass, both with
/// steady-state initial conditions scaled by the first processed sample.
fn forward_backward(coeffs: &FilterCoefficients, zi: &[[f64; 2]], v: &mut [f64]) {
    let x0 = v[0];
    sosfilt_inplace(coeffs, v, zi, x0);
    v.reverse();
    let x0 = v[0];
    sosfilt_inplace(coeffs, v, zi, x0);
    v.reverse();
}

/// Zero-phase filtering with odd-reflection padding of length
/// `min(T - 1, 6 * order)` on both ends (discarded afterwards).
///
/// The padded signal is run forward-backward in both orientations and the
/// two results averaged. Each orientation alone has zero group delay but
/// treats the two ends differently; the average makes the operator commute
/// with time reversal, so an even-symmetric input yields an even-symmetric
/// output regardless of how long the filter's transients are.
pub fn zero_phase_filter(x: &[f64], coeffs: &FilterCoefficients) -> Result<Vec<f64>> {
    let t = x.len();
    let min_len = 3 * coeffs.state_len();
    if t < min_len {
        return Err(Error::SignalTooShort { len: t, min: min_len });
    }
    let pad = (t - 1).min(6 * coeffs.design_order());

    let mut ext = Vec::with_capacity(t + 2 * pad);
    for i in 0..pad {
        ext.push(2.0 * x[0] - x[pad - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..pad {
        ext.push(2.0 * x[t - 1] - x[t - 2 - i]);
    }

    let zi = coeffs.steady_state_unit_zi();
    let mut flipped: Vec<f64> = ext.iter().rev().copied().collect();
    forward_backward(coeffs, &zi, &mut ext);
    forward_backward(coeffs, &zi, &mut flipped);
    flipped.reverse();

    Ok(ext[pad..pad + t]
        .iter()
        .zip(&flipped[pad..pad + t])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Analytic signal via the DFT: negative-frequency bins zeroed, positive
/// bins doubled, DC and (even-length) Nyquist bins unchanged.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>> {
    let t = x.len();
    if t < 2 {
        return Err(Error::InvalidInput(format!(
            "analytic signal needs at least 2 samples, got {t}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
    }

    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        planner.plan_fft_forward(t).process(&mut buf);
        let half = t / 2;
        let doubled_end = if t.is_multiple_of(2) { half } else { half + 1 };
        for b in buf.iter_mut().take(doubled_end).skip(1) {
            *b *= 2.0;
        }
        for b in buf.iter_mut().skip(half + 1) {
            *b = Complex64::new(0.0, 0.0);
        }
        planner.plan_fft_inverse(t).process(&mut buf);
    });
    let scale = 1.0 / t as f64;
    for b in buf.iter_mut() {
        *b *= scale;
    }
    Ok(buf)
}

/// Per-sample four-quadrant angle in (-pi, pi]. A sample with both parts
/// exactly zero gets phase 0; the second return value flags that any such
/// degenerate sample occurred.
pub fn instantaneous_phase(z: &[Complex64]) -> (Vec<f64>, bool) {
    let mut degenerate = false;
    let phases = z
        .iter()
        .map(|c| {
            if c.re == 0.0 && c.im == 0.0 {
                degenerate = true;
                0.0
            } else {
                let p = c.im.atan2(c.re);
                if p == -PI {
                    PI
                } else {
                    p
                }
            }
        })
        .collect();
    (phases, degenerate)
}

/// Per-sample modulus of the analytic signal.
pub fn instantaneous_envelope(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|c| c.norm()).collect()
}

/// Remove 2 pi jumps: the output starts at the input's first value and each
/// successive difference is shifted by the 2 pi multiple that brings it into
/// (-pi, pi]. Already-unwrapped inputs pass through unchanged.
pub fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    let Some(&first) = wrapped.first() else {
        return out;
    };
    out.push(first);
    let mut turns = 0.0f64;
    for i in 1..wrapped.len() {
        let d = wrapped[i] - wrapped[i - 1];
        // k = ceil((d - pi) / 2 pi) is the unique integer with d - 2 pi k in (-pi, pi].
        let k = ((d - PI) / TAU).ceil();
        turns -= k;
        out.push(wrapped[i] + TAU * turns);
    }
    out
}

/// Dithered ensemble estimation settings.
#[derive(Debug, Clone, Copy)]
pub struct TfpConfig {
    /// Ensemble count M.
    pub ensembles: usize,
    /// Relative band-edge perturbation; each edge is scaled by (1 + u) with
    /// u drawn uniformly from (-dither, +dither).
    pub dither: f64,
    pub seed: u64,
    /// When set, white noise at this SNR (dB, relative to the signal RMS) is
    /// also added to the input of each ensemble. Disabled by default.
    pub input_dither_snr_db: Option<f64>,
}

impl Default for TfpConfig {
    fn default() -> Self {
        Self {
            ensembles: 64,
            dither: 0.01,
            seed: 0,
            input_dither_snr_db: None,
        }
    }
}

impl TfpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensembles < 1 {
            return Err(Error::InvalidConfig("tfp.ensembles must be at least 1".into()));
        }
        if !(self.dither >= 0.0 && self.dither < 0.1) {
            return Err(Error::InvalidConfig(format!(
                "tfp.dither must lie in [0, 0.1), got {}",
                self.dither
            )));
        }
        Ok(())
    }
}

/// Instantaneous phase (wrapped and unwrapped) and envelope of one signal.
#[derive(Debug, Clone)]
pub struct AnalyticDecomposition {
    pub wrapped_phase: Vec<f64>,
    pub unwrapped_phase: Vec<f64>,
    pub envelope: Vec<f64>,
    /// True when any sample hit the zero-sample phase policy.
    pub degenerate: bool,
}

const MAX_DITHER_RETRIES: usize = 100;

fn draw_edges(spec: &FilterSpec, dither: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    for _ in 0..MAX_DITHER_RETRIES {
        let u_lo = dither * (2.0 * rng.random::<f64>() - 1.0);
        let u_hi = dither * (2.0 * rng.random::<f64>() - 1.0);
        let lo = spec.f_lo * (1.0 + u_lo);
        let hi = spec.f_hi * (1.0 + u_hi);
        if 0.0 < lo && lo < hi && hi < spec.fs / 2.0 {
            return Ok((lo, hi));
        }
    }
    Err(Error::DitherRejected { retries: MAX_DITHER_RETRIES })
}

/// Ensemble estimate of phase and envelope: for each of M ensembles the band
/// edges (and optionally the input) are independently dithered, the signal is
/// zero-phase filtered and decomposed, and the results are averaged — the
/// envelope arithmetically, the wrapped phase as the angle of the mean unit
/// phasor (then unwrapped).
pub fn tfp_estimate(x: &[f64], spec: &FilterSpec, cfg: &TfpConfig) -> Result<AnalyticDecomposition> {
    spec.validate()?;
    cfg.validate()?;
    let t = x.len();

    let mut env_sum = vec![0.0f64; t];
    let mut phasor_sum = vec![Complex64::new(0.0, 0.0); t];
    let mut degenerate = false;
    let mut single: Option<Vec<f64>> = None;

    let input_rms = if cfg.input_dither_snr_db.is_some() {
        (x.iter().map(|v| v * v).sum::<f64>() / t.max(1) as f64).sqrt()
    } else {
        0.0
    };

    for m in 0..cfg.ensembles {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, m as u64));
        let (f_lo, f_hi) = draw_edges(spec, cfg.dither, &mut rng)?;
        let coeffs = design_bandpass(&FilterSpec { f_lo, f_hi, ..*spec })?;

        let filtered = match cfg.input_dither_snr_db {
            Some(snr_db) if input_rms > 0.0 => {
                let noise_std = input_rms * 10f64.powf(-snr_db / 20.0);
                let normal = Normal::new(0.0, noise_std)
                    .map_err(|e| Error::Internal(format!("noise distribution: {e}")))?;
                let noisy: Vec<f64> = x.iter().map(|&v| v + normal.sample(&mut rng)).collect();
                zero_phase_filter(&noisy, &coeffs)?
            }
            _ => zero_phase_filter(x, &coeffs)?,
        };

        let z = analytic_signal(&filtered)?;
        let (wrapped, deg) = instantaneous_phase(&z);
        degenerate |= deg;
        for i in 0..t {
            env_sum[i] += z[i].norm();
            phasor_sum[i] += Complex64::from_polar(1.0, wrapped[i]);
        }
        if cfg.ensembles == 1 {
            single = Some(wrapped);
        }
    }

    let m = cfg.ensembles as f64;
    let envelope: Vec<f64> = env_sum.into_iter().map(|v| v / m).collect();
    // With a single ensemble the phasor round-trip is skipped so the result
    // is bit-identical to the plain filter -> analytic -> phase chain.
    let wrapped_phase = match single {
        Some(w) => w,
        None => phasor_sum
            .into_iter()
            .map(|p| {
                if p.re == 0.0 && p.im == 0.0 {
                    degenerate = true;
                    0.0
                } else {
                    let a = p.im.atan2(p.re);
                    if a == -PI {
                        PI
                    } else {
                        a
                    }
                }
            })
            .collect(),
    };
    let unwrapped_phase = unwrap_phase(&wrapped_phase);

    Ok(AnalyticDecomposition {
        wrapped_phase,
        unwrapped_phase,
        envelope,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec() -> FilterSpec {
        FilterSpec { f_lo: 0.01, f_hi: 0.1, order: 4, fs: 1.0 / 3.0 }
    }

    fn sinusoid(f: f64, fs: f64, t: usize) -> Vec<f64> {
        (0..t).map(|i| (TAU * f * i as f64 / fs).cos()).collect()
    }

    /// O(T^2) direct-summation construction of the analytic signal: full DFT
    /// by definition, one-sided doubling, inverse DFT by definition.
    fn brute_force_analytic(x: &[f64]) -> Vec<Complex64> {
        let t = x.len();
        let mut spectrum = vec![Complex64::new(0.0, 0.0); t];
        for (k, s) in spectrum.iter_mut().enumerate() {
            for (n, &v) in x.iter().enumerate() {
                *s += v * Complex64::from_polar(1.0, -TAU * k as f64 * n as f64 / t as f64);
            }
        }
        let half = t / 2;
        for (k, s) in spectrum.iter_mut().enumerate() {
            // DC and an even-length Nyquist bin stay, positive bins double,
            // negative bins vanish
            let factor = if k == 0 || (t.is_multiple_of(2) && k == half) {
                1.0
            } else if k <= half {
                2.0
            } else {
                0.0
            };
            *s *= factor;
        }
        let mut out = vec![Complex64::new(0.0, 0.0); t];
        for (n, o) in out.iter_mut().enumerate() {
            for (k, &s) in spectrum.iter().enumerate() {
                *o += s * Complex64::from_polar(1.0, TAU * k as f64 * n as f64 / t as f64);
            }
            *o /= t as f64;
        }
        out
    }

    #[test]
    fn analytic_full_period_cosine_is_unit_phasor() {
        let t = 64;
        let x: Vec<f64> = (0..t).map(|i| (TAU * 4.0 * i as f64 / t as f64).cos()).collect();
        let z = analytic_signal(&x).unwrap();
        for (i, zi) in z.iter().enumerate() {
            assert!((zi.norm() - 1.0).abs() < 1e-9, "sample {i}: |z| = {}", zi.norm());
            let expected = TAU * 4.0 * i as f64 / t as f64;
            let diff = (zi.arg() - expected).rem_euclid(TAU);
            assert!(!(1e-8..=TAU - 1e-8).contains(&diff));
        }
    }

    #[test]
    fn analytic_of_constant_is_constant() {
        let x = vec![2.5; 32];
        let z = analytic_signal(&x).unwrap();
        for zi in &z {
            assert_relative_eq!(zi.re, 2.5, max_relative = 1e-12);
            assert!(zi.im.abs() < 1e-12);
        }
        let (phase, _) = instantaneous_phase(&z);
        assert!(phase.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn analytic_matches_brute_force_dft_on_odd_length() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = || {
            state = crate::seeding::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let x: Vec<f64> = (0..37).map(|_| next()).collect();
        let z = analytic_signal(&x).unwrap();
        let oracle = brute_force_analytic(&x);
        for (a, b) in z.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn real_part_recovers_input() {
        let x = sinusoid(0.05, 1.0 / 3.0, 140);
        let z = analytic_signal(&x).unwrap();
        for (zi, xi) in z.iter().zip(&x) {
            assert!((zi.re - xi).abs() <= 1e-12 * xi.abs().max(1.0));
        }
    }

    #[test]
    fn phase_quadrant_conventions() {
        let (p, deg) = instantaneous_phase(&[
            Complex64::new(1.0, 1.0),
            Complex64::new(-1.0, -1.0),
            Complex64::new(0.0, 0.0),
        ]);
        assert_relative_eq!(p[0], PI / 4.0);
        assert_relative_eq!(p[1], -3.0 * PI / 4.0);
        assert_eq!(p[2], 0.0);
        assert!(deg);

        let (p, deg) = instantaneous_phase(&[Complex64::new(1.0, 0.0)]);
        assert_eq!(p[0], 0.0);
        assert!(!deg);
    }

    #[test]
    fn envelope_basics() {
        assert_eq!(instantaneous_envelope(&[Complex64::new(3.0, 4.0)]), vec![5.0]);
        let z: Vec<Complex64> = (0..50).map(|i| Complex64::from_polar(1.0, 0.3 * i as f64)).collect();
        for v in instantaneous_envelope(&z) {
            assert_relative_eq!(v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn envelope_tracks_slow_amplitude_modulation() {
        // Full-period carrier with a slow positive modulator; envelope should
        // recover the modulator away from the edges.
        let t = 512;
        let carrier_cycles = 64.0;
        let x: Vec<f64> = (0..t)
            .map(|i| {
                let a = 2.0 + (TAU * i as f64 / t as f64).sin();
                a * (TAU * carrier_cycles * i as f64 / t as f64).cos()
            })
            .collect();
        let env = instantaneous_envelope(&analytic_signal(&x).unwrap());
        for (i, e) in env.iter().enumerate().take(7 * t / 8).skip(t / 8) {
            let expected = 2.0 + (TAU * i as f64 / t as f64).sin();
            assert!(
                (e - expected).abs() / expected < 0.02,
                "sample {i}: {e} vs {expected}"
            );
        }
    }

    #[test]
    fn unwrap_fixes_single_jump() {
        let out = unwrap_phase(&[3.0, -3.0]);
        assert_relative_eq!(out[1], -3.0 + TAU, max_relative = 1e-15);
        assert_eq!(out[0], 3.0);
    }

    #[test]
    fn unwrap_is_identity_on_smooth_ramp() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64 * 0.3).collect();
        assert_eq!(unwrap_phase(&ramp), ramp);
    }

    #[test]
    fn unwrap_rewraps_to_input() {
        let wrapped: Vec<f64> = (0..200)
            .map(|i| {
                let p = (i as f64 * 0.7).rem_euclid(TAU);
                if p > PI {
                    p - TAU
                } else {
                    p
                }
            })
            .collect();
        let unwrapped = unwrap_phase(&wrapped);
        for (w, u) in wrapped.iter().zip(&unwrapped) {
            let k = ((u - w) / TAU).round();
            assert!((u - TAU * k - w).abs() < 1e-12, "{u} vs {w}");
        }
        // diffs stay in (-pi, pi]
        for pair in unwrapped.windows(2) {
            let d = pair[1] - pair[0];
            assert!(d > -PI - 1e-12 && d <= PI + 1e-12);
        }
    }

    #[test]
    fn zero_phase_rejects_dc_exactly() {
        let coeffs = design_bandpass(&spec()).unwrap();
        let x = vec![7.0; 140];
        let y = zero_phase_filter(&x, &coeffs).unwrap();
        for v in &y {
            assert!(v.abs() < 1e-3 * 7.0, "{v}");
        }
    }

    #[test]
    fn zero_phase_preserves_even_symmetry() {
        let coeffs = design_bandpass(&spec()).unwrap();
        let t = 141; // odd length, exact midpoint
        let x: Vec<f64> = (0..t)
            .map(|i| {
                let d = i as f64 - (t as f64 - 1.0) / 2.0;
                (TAU * 0.05 * d * 3.0).cos() + 0.3 * (-d * d / 800.0).exp()
            })
            .collect();
        let y = zero_phase_filter(&x, &coeffs).unwrap();
        for i in 0..t / 2 {
            assert!(
                (y[i] - y[t - 1 - i]).abs() < 1e-9,
                "asymmetry at {i}: {} vs {}",
                y[i],
                y[t - 1 - i]
            );
        }
    }

    #[test]
    fn zero_phase_peak_correlation_at_zero_lag() {
        let fs = 1.0 / 3.0;
        let t = 420; // 0.05 Hz * 3 s * 420 = 63 full periods
        let x = sinusoid(0.05, fs, t);
        let coeffs = design_bandpass(&spec()).unwrap();
        let y = zero_phase_filter(&x, &coeffs).unwrap();
        let corr = |lag: i64| -> f64 {
            let mut s = 0.0;
            for i in 0..t as i64 {
                let j = i + lag;
                if j >= 0 && (j as usize) < t {
                    s += x[i as usize] * y[j as usize];
                }
            }
            s
        };
        let at_zero = corr(0);
        for lag in -3i64..=3 {
            assert!(corr(lag) <= at_zero + 1e-12, "lag {lag}");
        }
    }

    #[test]
    fn zero_phase_double_application_squares_magnitude() {
        // Single zero-phase pass has magnitude |H|^2; a second pass squares
        // that. Amplitudes are measured by projecting the steady-state middle
        // of the signal onto the quadrature pair over whole periods.
        let fs = 1.0 / 3.0;
        let dt = 1.0 / fs;
        let coeffs = design_bandpass(&spec()).unwrap();
        let t = 6000;
        let window = 1500..4500; // 9000 s, so f * 9000 cycles fit exactly
        let amp = |y: &[f64], f: f64| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in window.clone() {
                acc += y[i] * Complex64::from_polar(1.0, -TAU * f * i as f64 * dt);
            }
            2.0 * acc.norm() / window.len() as f64
        };
        for f in [0.01, 0.03, 0.05, 0.08, 0.1, 0.12] {
            let x = sinusoid(f, fs, t);
            let once = zero_phase_filter(&x, &coeffs).unwrap();
            let twice = zero_phase_filter(&once, &coeffs).unwrap();
            let g1 = amp(&once, f);
            let g2 = amp(&twice, f);
            let h = coeffs.magnitude_at(f, fs);
            assert!((g1 - h * h).abs() < 1e-6, "single pass at {f}: {g1} vs {}", h * h);
            assert!((g2 - g1 * g1).abs() < 1e-6, "double pass at {f}: {g2} vs {}", g1 * g1);
        }
    }

    #[test]
    fn zero_phase_requires_minimum_length() {
        let coeffs = design_bandpass(&spec()).unwrap();
        let x = vec![0.0; 3 * coeffs.state_len() - 1];
        assert!(matches!(
            zero_phase_filter(&x, &coeffs),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn tfp_single_ensemble_no_dither_matches_plain_chain() {
        let fs = 1.0 / 3.0;
        let x = sinusoid(0.05, fs, 140);
        let cfg = TfpConfig { ensembles: 1, dither: 0.0, seed: 3, input_dither_snr_db: None };
        let est = tfp_estimate(&x, &spec(), &cfg).unwrap();

        let coeffs = design_bandpass(&spec()).unwrap();
        let z = analytic_signal(&zero_phase_filter(&x, &coeffs).unwrap()).unwrap();
        let (wrapped, _) = instantaneous_phase(&z);
        assert_eq!(est.wrapped_phase, wrapped);
        assert_eq!(est.unwrapped_phase, unwrap_phase(&wrapped));
        assert_eq!(est.envelope, instantaneous_envelope(&z));
    }

    #[test]
    fn tfp_is_deterministic_given_seed() {
        let x = sinusoid(0.04, 1.0 / 3.0, 140);
        let cfg = TfpConfig { ensembles: 8, dither: 0.01, seed: 77, input_dither_snr_db: None };
        let a = tfp_estimate(&x, &spec(), &cfg).unwrap();
        let b = tfp_estimate(&x, &spec(), &cfg).unwrap();
        assert_eq!(a.wrapped_phase, b.wrapped_phase);
        assert_eq!(a.unwrapped_phase, b.unwrapped_phase);
        assert_eq!(a.envelope, b.envelope);
    }

    #[test]
    fn tfp_zero_dither_independent_of_ensemble_count() {
        let x = sinusoid(0.06, 1.0 / 3.0, 140);
        let one = tfp_estimate(&x, &spec(), &TfpConfig { ensembles: 1, dither: 0.0, seed: 1, input_dither_snr_db: None }).unwrap();
        let many = tfp_estimate(&x, &spec(), &TfpConfig { ensembles: 5, dither: 0.0, seed: 9, input_dither_snr_db: None }).unwrap();
        for (a, b) in one.envelope.iter().zip(&many.envelope) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in one.unwrapped_phase.iter().zip(&many.unwrapped_phase) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tfp_small_dither_stays_close_to_undithered_envelope() {
        let fs = 1.0 / 3.0;
        let t = 140;
        let x = sinusoid(0.05, fs, t);
        let base = tfp_estimate(&x, &spec(), &TfpConfig { ensembles: 1, dither: 0.0, seed: 0, input_dither_snr_db: None }).unwrap();
        let dithered = tfp_estimate(&x, &spec(), &TfpConfig { ensembles: 64, dither: 0.01, seed: 5, input_dither_snr_db: None }).unwrap();
        for i in t / 5..4 * t / 5 {
            let rel = (dithered.envelope[i] - base.envelope[i]).abs() / base.envelope[i].abs().max(1e-12);
            assert!(rel < 0.01, "sample {i}: rel {rel}");
        }
    }

    #[test]
    fn tfp_ensemble_averaging_reduces_phase_variance_under_input_noise() {
        // Monte Carlo over seeds: with -20 dB input dithering, the M=64
        // ensemble phase estimate varies less across seeds than the
        // single-ensemble estimate.
        let fs = 1.0 / 3.0;
        let t = 140;
        let x = sinusoid(0.05, fs, t);
        let sample_idx = t / 2;
        let spread = |ensembles: usize| -> f64 {
            let phases: Vec<f64> = (0..50)
                .map(|seed| {
                    let cfg = TfpConfig {
                        ensembles,
                        dither: 0.01,
                        seed: 1000 + seed,
                        input_dither_snr_db: Some(20.0),
                    };
                    tfp_estimate(&x, &spec(), &cfg).unwrap().wrapped_phase[sample_idx]
                })
                .collect();
            let mean_phasor: Complex64 = phases
                .iter()
                .map(|&p| Complex64::from_polar(1.0, p))
                .sum::<Complex64>()
                / phases.len() as f64;
            1.0 - mean_phasor.norm() // circular variance
        };
        let single = spread(1);
        let averaged = spread(64);
        assert!(
            averaged < single,
            "ensemble circular variance {averaged} not below single-ensemble {single}"
        );
    }

    #[test]
    fn dither_redraws_keep_edges_inside_nyquist() {
        // Band nearly touching Nyquist with a large dither: roughly half the
        // draws violate fs/2 and must be redrawn; the estimate still succeeds
        // and stays deterministic.
        let tight = FilterSpec { f_lo: 0.01, f_hi: 0.166, order: 2, fs: 1.0 / 3.0 };
        let cfg = TfpConfig { ensembles: 32, dither: 0.09, seed: 4, input_dither_snr_db: None };
        let x = sinusoid(0.05, tight.fs, 200);
        let a = tfp_estimate(&x, &tight, &cfg).unwrap();
        let b = tfp_estimate(&x, &tight, &cfg).unwrap();
        assert_eq!(a.envelope, b.envelope);
        assert!(a.envelope.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    proptest! {
        #[test]
        fn analytic_real_part_matches_input(xs in proptest::collection::vec(-100.0f64..100.0, 2..200)) {
            let z = analytic_signal(&xs).unwrap();
            for (zi, xi) in z.iter().zip(&xs) {
                prop_assert!((zi.re - xi).abs() <= 1e-12 * xi.abs().max(1.0) + 1e-9);
            }
        }

        #[test]
        fn sign_flip_shifts_phase_by_pi_and_keeps_envelope(xs in proptest::collection::vec(-10.0f64..10.0, 8..64)) {
            let z = analytic_signal(&xs).unwrap();
            let flipped: Vec<f64> = xs.iter().map(|v| -v).collect();
            let zf = analytic_signal(&flipped).unwrap();
            let env = instantaneous_envelope(&z);
            let env_f = instantaneous_envelope(&zf);
            let (ph, _) = instantaneous_phase(&z);
            let (ph_f, _) = instantaneous_phase(&zf);
            for i in 0..xs.len() {
                prop_assert!((env[i] - env_f[i]).abs() <= 1e-9 * env[i].abs().max(1.0));
                if env[i] > 1e-6 {
                    let d = (ph_f[i] - ph[i] - PI).rem_euclid(TAU);
                    prop_assert!(!(1e-6..=TAU - 1e-6).contains(&d), "phase shift {d}");
                }
            }
        }

        #[test]
        fn unwrap_is_idempotent(xs in proptest::collection::vec(-3.1f64..=3.1, 1..100)) {
            let u = unwrap_phase(&xs);
            prop_assert_eq!(unwrap_phase(&u), u.clone());
        }
    }
}
