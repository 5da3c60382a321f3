//! Butterworth band-pass design, realized as cascaded biquad sections.
//!
//! The design path is the classical one: analog low-pass prototype poles,
//! low-pass-to-band-pass transform around the pre-warped edges, bilinear
//! transform into the z-plane, then conjugate pairing into second-order
//! sections. Pre-warping puts the half-power points exactly at `f_lo` and
//! `f_hi`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Band-pass specification. `order` is the prototype order per direction;
/// the realized filter has `2 * order` poles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub f_lo: f64,
    pub f_hi: f64,
    pub order: usize,
    pub fs: f64,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::FilterDesign("order must be at least 1".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::FilterDesign(format!(
                "sampling rate must be positive, got {}",
                self.fs
            )));
        }
        if !(self.f_lo.is_finite() && self.f_hi.is_finite())
            || !(0.0 < self.f_lo && self.f_lo < self.f_hi && self.f_hi < self.fs / 2.0)
        {
            return Err(Error::FilterDesign(format!(
                "band edges must satisfy 0 < f_lo < f_hi < fs/2, got ({}, {}) at fs={}",
                self.f_lo, self.f_hi, self.fs
            )));
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        self.fs / 2.0
    }
}

/// One second-order section, denominator normalized to a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// A stable recursive filter as a cascade of second-order sections.
#[derive(Debug, Clone)]
pub struct FilterCoefficients {
    sections: Vec<Biquad>,
    design_order: usize,
}

impl FilterCoefficients {
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Prototype order the cascade was designed for.
    pub fn design_order(&self) -> usize {
        self.design_order
    }

    /// Total number of delay states across the cascade.
    pub fn state_len(&self) -> usize {
        2 * self.sections.len()
    }

    /// |H(e^{j 2 pi f / fs})| of the whole cascade.
    pub fn magnitude_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let mut mag = 1.0;
        for s in &self.sections {
            let num = Complex64::new(s.b0, 0.0) + z1 * s.b1 + z2 * s.b2;
            let den = Complex64::new(1.0, 0.0) + z1 * s.a1 + z2 * s.a2;
            mag *= num.norm() / den.norm();
        }
        mag
    }

    /// Per-section steady-state delay states for a unit-level constant input,
    /// with inter-section DC gains accumulated. Scaling the whole array by a
    /// value x0 gives the state the cascade would hold after an infinitely
    /// long run of x0 at the input.
    pub(crate) fn steady_state_unit_zi(&self) -> Vec<[f64; 2]> {
        let mut cum = 1.0;
        let mut zi = Vec::with_capacity(self.sections.len());
        for s in &self.sections {
            let denom = 1.0 + s.a1 + s.a2;
            let g = (s.b0 + s.b1 + s.b2) / denom;
            zi.push([cum * (g - s.b0), cum * (s.b2 - s.a2 * g)]);
            cum *= g;
        }
        zi
    }
}

/// Bilinear map s -> z at internal rate 2 (so 2*fs = 4).
fn bilinear(s: Complex64) -> Complex64 {
    (Complex64::new(4.0, 0.0) + s) / (Complex64::new(4.0, 0.0) - s)
}

/// Design a Butterworth band-pass filter for the given spec.
pub fn design_bandpass(spec: &FilterSpec) -> Result<FilterCoefficients> {
    spec.validate()?;
    let n = spec.order;

    // Normalize to Nyquist, pre-warp at internal rate 2.
    let w_lo = 4.0 * (PI * (spec.f_lo / spec.nyquist()) / 2.0).tan();
    let w_hi = 4.0 * (PI * (spec.f_hi / spec.nyquist()) / 2.0).tan();
    let wo = (w_lo * w_hi).sqrt();
    let bw = w_hi - w_lo;

    // Analog prototype poles -exp(i pi m / 2n) for m = -n+1, -n+3, ..., n-1.
    // Only m >= 0 is enumerated; m > 0 images contribute their conjugates
    // implicitly when sections are assembled.
    let mut sections: Vec<(f64, Biquad)> = Vec::with_capacity(n);
    // Real product over (4 - s_p) for *all* 2n analog band-pass poles.
    let mut pole_gain_prod = 1.0;

    let mut m: i64 = if n.is_multiple_of(2) { 1 } else { 0 };
    while m < n as i64 {
        let proto = -Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n as f64));
        let scaled = proto * (bw / 2.0);
        let disc = scaled * scaled - Complex64::new(wo * wo, 0.0);
        let root = disc.sqrt();
        let p_plus = scaled + root;
        let p_minus = scaled - root;

        if m == 0 {
            // Real prototype pole: its two band-pass images form one section
            // (either a real pair or a conjugate pair).
            let z_plus = bilinear(p_plus);
            let z_minus = bilinear(p_minus);
            pole_gain_prod *= ((Complex64::new(4.0, 0.0) - p_plus)
                * (Complex64::new(4.0, 0.0) - p_minus))
                .re;
            let a1 = -(z_plus + z_minus).re;
            let a2 = (z_plus * z_minus).re;
            let key = z_plus.norm().max(z_minus.norm());
            sections.push((key, Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 }));
        } else {
            // Complex prototype pole: each image pairs with its conjugate
            // (the image of the -m prototype pole).
            for p in [p_plus, p_minus] {
                let z = bilinear(p);
                pole_gain_prod *= (Complex64::new(4.0, 0.0) - p).norm_sqr();
                let a1 = -2.0 * z.re;
                let a2 = z.norm_sqr();
                sections.push((z.norm(), Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 }));
            }
        }
        m += 2;
    }

    // n analog zeros at s = 0 map to z = +1; the n zeros at infinity map to
    // z = -1. Each section's (z^2 - 1) numerator accounts for one of each.
    let gain = bw.powi(n as i32) * 4f64.powi(n as i32) / pole_gain_prod;

    // Sections ordered by pole radius, poles closest to the unit circle last.
    sections.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("pole radii are finite"));
    let mut sections: Vec<Biquad> = sections.into_iter().map(|(_, s)| s).collect();
    sections[0].b0 *= gain;
    sections[0].b2 *= gain;

    for s in &sections {
        // |p|^2 = a2 for conjugate sections; for real pairs check roots directly.
        let stable = if s.a1 * s.a1 - 4.0 * s.a2 <= 0.0 {
            s.a2 < 1.0
        } else {
            let d = (s.a1 * s.a1 - 4.0 * s.a2).sqrt();
            ((-s.a1 + d) / 2.0).abs() < 1.0 && ((-s.a1 - d) / 2.0).abs() < 1.0
        };
        if !stable {
            return Err(Error::FilterDesign(
                "designed filter is unstable (pole on or outside the unit circle)".into(),
            ));
        }
    }

    Ok(FilterCoefficients {
        sections,
        design_order: n,
    })
}
