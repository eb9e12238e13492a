//! Zero-phase Butterworth band-pass filtering.
//!
//! The design follows the classical route: analog Butterworth prototype,
//! low-pass to band-pass transform, bilinear transform with pre-warping,
//! then conjugate pole pairs grouped into second-order sections.
//! [`Sos::filtfilt`] reproduces the forward-backward scheme with odd
//! extension at both ends and steady-state initial conditions.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Cascade of biquads, each `[b0, b1, b2, a0, a1, a2]` with `a0 == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 6]>,
}

/// Designs an `order`-th order Butterworth band-pass (the band-pass itself has
/// `2·order` poles) for sampling rate `fs`.
pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Sos> {
    if order == 0 || !(0.0 < low && low < high && high < fs / 2.0) {
        return Err(Error::Signal(format!(
            "invalid band-pass {low}-{high} Hz of order {order} at {fs} Hz"
        )));
    }
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low / fs).tan();
    let w2 = fs2 * (PI * high / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let m = -(order as f64) + 1.0 + 2.0 * k as f64;
        let proto = -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64));
        let half = proto * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        poles.push(half + root);
        poles.push(half - root);
    }
    // prototype gain bw^N; zeros at s = 0 map to z = +1, zeros at infinity to z = -1
    let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
    for _ in 0..order {
        gain *= Complex64::new(fs2, 0.0);
    }
    let mut zpoles = Vec::with_capacity(poles.len());
    for &p in &poles {
        gain /= fs2 - p;
        zpoles.push((fs2 + p) / (fs2 - p));
    }

    // keep one pole of every conjugate pair
    let mut upper: Vec<Complex64> = zpoles.into_iter().filter(|p| p.im > 0.0).collect();
    if upper.len() != order {
        return Err(Error::Signal("unexpected real poles in band-pass design".into()));
    }
    upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    let mut sections: Vec<[f64; 6]> = upper
        .iter()
        .map(|p| [1.0, 0.0, -1.0, 1.0, -2.0 * p.re, p.norm_sqr()])
        .collect();
    for c in &mut sections[0][..3] {
        *c *= gain.re;
    }
    Ok(Sos { sections })
}

impl Sos {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            acc * (s[0] + s[1] * z1 + s[2] * z2) / (s[3] + s[4] * z1 + s[5] * z2)
        })
    }

    /// Edge-extension length used by [`Sos::filtfilt`].
    pub fn padlen(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Steady-state initial conditions for a unit step input.
    fn zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
                let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
                let out = [scale * ((b1 + b2) - (a1 + a2) * dc), scale * (b2 - a2 * dc)];
                scale *= dc;
                out
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for (s, st) in self.sections.iter().zip(state.iter_mut()) {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            for v in x.iter_mut() {
                let xi = *v;
                let y = b0 * xi + st[0];
                st[0] = b1 * xi - a1 * y + st[1];
                st[1] = b2 * xi - a2 * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, alloc::vec![[0.0; 2]; self.sections.len()]);
        y
    }

    /// Forward-backward filtering: zero phase, squared magnitude response.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.padlen();
        let n = x.len();
        if n <= pad {
            return Err(Error::Signal(format!(
                "signal of {n} samples is too short for zero-phase filtering (needs more than {pad})"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.zi();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let x0 = ext[0];
        self.run(&mut ext, scaled(x0));
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, scaled(y0));
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}
