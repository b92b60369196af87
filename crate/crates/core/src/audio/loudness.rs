//! BS.1770 gated loudness with K-weighting derived for the clip's sample rate.
//!
//! The standard tabulates the two pre-filter stages only at 48 kHz. For other
//! rates both stages are rebuilt from their analog prototypes by the
//! bilinear transform (prewarped at the prototype's corner frequency). Below
//! 48 kHz the shelf prototype is then refined with a small Levenberg-Marquardt
//! fit so that the digital response tracks the 48 kHz reference magnitude
//! across the available band, since plain prewarping leaves several
//! hundredths of a dB of warping error around the shelf transition.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use nalgebra::{Matrix4, Vector4};

use super::{AudioClip, AudioError};

pub const BLOCK_SECONDS: f64 = 0.4;
const STEP_SECONDS: f64 = 0.1;
pub const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;
const LOUDNESS_OFFSET: f64 = -0.691;
const REFERENCE_RATE_HZ: u32 = 48_000;

/// Second-order IIR section with a0 = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Stage 1 (high shelf) as tabulated for 48 kHz.
    pub const REFERENCE_SHELF_48K: Biquad = Biquad {
        b0: 1.53512485958697,
        b1: -2.69169618940638,
        b2: 1.19839281085285,
        a1: -1.69065929318241,
        a2: 0.73248077421585,
    };

    /// Stage 2 (high pass) as tabulated for 48 kHz.
    pub const REFERENCE_HIGH_PASS_48K: Biquad = Biquad {
        b0: 1.0,
        b1: -2.0,
        b2: 1.0,
        a1: -1.99004745483398,
        a2: 0.99007225036621,
    };

    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / rate_hz;
        let (s1, c1) = w.sin_cos();
        let (s2, c2) = (2.0 * w).sin_cos();
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = -(self.b1 * s1 + self.b2 * s2);
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = -(self.a1 * s1 + self.a2 * s2);
        10.0 * ((nr * nr + ni * ni) / (dr * dr + di * di)).log10()
    }

    /// Filters `input` from a zero state (direct form I).
    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Analog high-shelf prototype of the stage-1 pre-filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShelfPrototype {
    pub gain_db: f64,
    pub q: f64,
    pub center_hz: f64,
    /// Exponent relating the band gain to the high-frequency gain.
    pub vb_exponent: f64,
}

impl ShelfPrototype {
    /// Prototype that reproduces the 48 kHz table.
    pub const STANDARD: ShelfPrototype = ShelfPrototype {
        gain_db: 3.99984385397,
        q: 0.7071752369554193,
        center_hz: 1681.9744509555319,
        vb_exponent: 0.4996667741545416,
    };

    pub fn bilinear(&self, rate_hz: f64) -> Biquad {
        let k = (PI * self.center_hz / rate_hz).tan();
        let vh = 10f64.powf(self.gain_db / 20.0);
        let vb = vh.powf(self.vb_exponent);
        let a0 = 1.0 + k / self.q + k * k;
        Biquad {
            b0: (vh + vb * k / self.q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / self.q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / self.q + k * k) / a0,
        }
    }

    fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.gain_db, self.q, self.center_hz, self.vb_exponent)
    }

    fn from_vector(v: &Vector4<f64>) -> ShelfPrototype {
        ShelfPrototype { gain_db: v[0], q: v[1], center_hz: v[2], vb_exponent: v[3] }
    }
}

/// Analog second-order high-pass prototype of the stage-2 pre-filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HighPassPrototype {
    pub q: f64,
    pub center_hz: f64,
}

impl HighPassPrototype {
    pub const STANDARD: HighPassPrototype =
        HighPassPrototype { q: 0.5003270373253953, center_hz: 38.13547087613982 };

    fn a0(&self, rate_hz: f64) -> f64 {
        let k = (PI * self.center_hz / rate_hz).tan();
        1.0 + k / self.q + k * k
    }

    /// Passband gain implied by the 48 kHz table, whose numerator is the
    /// un-normalised [1, -2, 1].
    pub fn reference_passband_gain(&self) -> f64 {
        self.a0(f64::from(REFERENCE_RATE_HZ))
    }

    pub fn bilinear(&self, rate_hz: f64, passband_gain: f64) -> Biquad {
        let k = (PI * self.center_hz / rate_hz).tan();
        let a0 = self.a0(rate_hz);
        let g = passband_gain / a0;
        Biquad {
            b0: g,
            b1: -2.0 * g,
            b2: g,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / self.q + k * k) / a0,
        }
    }
}

/// The two-stage K-weighting pre-filter for one sample rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KWeighting {
    pub sample_rate_hz: u32,
    pub shelf: Biquad,
    pub high_pass: Biquad,
}

impl KWeighting {
    /// Cached filter for `rate_hz`.
    pub fn for_rate(rate_hz: u32) -> KWeighting {
        static CACHE: OnceLock<Mutex<BTreeMap<u32, KWeighting>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
        if let Some(k) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&rate_hz) {
            return *k;
        }
        let k = KWeighting::derive(rate_hz);
        cache.lock().unwrap_or_else(|e| e.into_inner()).insert(rate_hz, k);
        k
    }

    /// Derives the filter pair without consulting the cache.
    pub fn derive(rate_hz: u32) -> KWeighting {
        let rate = f64::from(rate_hz);
        let shelf_proto = if rate_hz < REFERENCE_RATE_HZ {
            refine_shelf(rate)
        } else {
            ShelfPrototype::STANDARD
        };
        let hp = HighPassPrototype::STANDARD;
        KWeighting {
            sample_rate_hz: rate_hz,
            shelf: shelf_proto.bilinear(rate),
            high_pass: hp.bilinear(rate, hp.reference_passband_gain()),
        }
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        let rate = f64::from(self.sample_rate_hz);
        self.shelf.magnitude_db(freq_hz, rate) + self.high_pass.magnitude_db(freq_hz, rate)
    }

    /// Magnitude of the tabulated 48 kHz filter pair.
    pub fn reference_magnitude_db(freq_hz: f64) -> f64 {
        let rate = f64::from(REFERENCE_RATE_HZ);
        Biquad::REFERENCE_SHELF_48K.magnitude_db(freq_hz, rate)
            + Biquad::REFERENCE_HIGH_PASS_48K.magnitude_db(freq_hz, rate)
    }

    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        self.high_pass.process(&self.shelf.process(samples))
    }
}

fn refine_shelf(rate: f64) -> ShelfPrototype {
    const POINTS: usize = 400;
    let lo = 10.0f64;
    let hi = (0.4999 * rate).min(20_000.0);
    let freqs: Vec<f64> = (0..POINTS)
        .map(|i| lo * (hi / lo).powf(i as f64 / (POINTS - 1) as f64))
        .collect();
    let reference = f64::from(REFERENCE_RATE_HZ);
    let target: Vec<f64> = freqs
        .iter()
        .map(|&f| Biquad::REFERENCE_SHELF_48K.magnitude_db(f, reference))
        .collect();

    let residuals = |p: &Vector4<f64>| -> Vec<f64> {
        let bq = ShelfPrototype::from_vector(p).bilinear(rate);
        freqs.iter().zip(&target).map(|(&f, &t)| bq.magnitude_db(f, rate) - t).collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let admissible = |p: &Vector4<f64>| {
        p.iter().all(|v| v.is_finite()) && p[1] > 0.0 && p[2] > 0.0 && p[2] < 0.5 * rate
    };

    let mut p = ShelfPrototype::STANDARD.to_vector();
    let mut r = residuals(&p);
    let mut c = cost(&r);
    let mut mu: f64 = 1e-3;
    for _ in 0..200 {
        let mut jac = vec![[0.0f64; 4]; POINTS];
        for j in 0..4 {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut plus = p;
            let mut minus = p;
            plus[j] += h;
            minus[j] -= h;
            let (rp, rm) = (residuals(&plus), residuals(&minus));
            for i in 0..POINTS {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (row, &ri) in jac.iter().zip(&r) {
            for a in 0..4 {
                jtr[a] += row[a] * ri;
                for b in 0..4 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut damped = jtj;
            for d in 0..4 {
                damped[(d, d)] += mu * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let candidate = p + step;
            if admissible(&candidate) {
                let rc = residuals(&candidate);
                let cc = cost(&rc);
                if cc < c {
                    let gain = c - cc;
                    p = candidate;
                    r = rc;
                    c = cc;
                    mu = (mu * 0.3).max(1e-12);
                    improved = gain > 1e-14 * c.max(1e-300);
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    ShelfPrototype::from_vector(&p)
}

/// Integrated loudness in LUFS.
///
/// Returns `f64::NEG_INFINITY` when every block falls below the absolute gate.
pub fn measure_lufs(clip: &AudioClip) -> Result<f64, AudioError> {
    let rate = f64::from(clip.sample_rate_hz());
    let block = (BLOCK_SECONDS * rate).round() as usize;
    let step = ((STEP_SECONDS * rate).round() as usize).max(1);
    if clip.len() < block || block == 0 {
        return Err(AudioError::TooShort { len: clip.len(), block });
    }
    let weighted = KWeighting::for_rate(clip.sample_rate_hz()).apply(clip.samples());
    let n_blocks = (clip.len() - block) / step + 1;
    let powers: Vec<f64> = (0..n_blocks)
        .map(|j| {
            let span = &weighted[j * step..j * step + block];
            span.iter().map(|z| z * z).sum::<f64>() / block as f64
        })
        .collect();
    let block_loudness = |z: f64| LOUDNESS_OFFSET + 10.0 * z.log10();
    let mean = |zs: &[f64]| zs.iter().sum::<f64>() / zs.len() as f64;

    let above_abs: Vec<f64> =
        powers.iter().copied().filter(|&z| block_loudness(z) > ABSOLUTE_GATE_LUFS).collect();
    if above_abs.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let relative_gate = block_loudness(mean(&above_abs)) + RELATIVE_GATE_LU;
    let gated: Vec<f64> =
        above_abs.iter().copied().filter(|&z| block_loudness(z) > relative_gate).collect();
    Ok(block_loudness(mean(&gated)))
}

/// Output of [`normalize_lufs`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub clip: AudioClip,
    pub post_gain: f64,
    pub measured_lufs: f64,
    /// Peak magnitude above 1.0 after the gain; no limiting is applied.
    pub exceeds_full_scale: bool,
}

/// Applies the gain that moves the measured loudness onto `target_lufs`.
pub fn normalize_lufs(clip: &AudioClip, target_lufs: f64) -> Result<Normalized, AudioError> {
    let measured = measure_lufs(clip)?;
    if !measured.is_finite() {
        return Err(AudioError::AllGated);
    }
    let post_gain = 10f64.powf((target_lufs - measured) / 20.0);
    let out = clip.scaled(post_gain);
    let exceeds_full_scale = out.peak() > 1.0;
    Ok(Normalized { clip: out, post_gain, measured_lufs: measured, exceeds_full_scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, secs: f64, rate: u32) -> AudioClip {
        let n = (secs * f64::from(rate)) as usize;
        let s = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin()).collect();
        AudioClip::new(s, rate).unwrap()
    }

    #[test]
    fn standard_prototypes_reproduce_48k_table() {
        let shelf = ShelfPrototype::STANDARD.bilinear(48_000.0);
        let t = Biquad::REFERENCE_SHELF_48K;
        for (a, b) in [(shelf.b0, t.b0), (shelf.b1, t.b1), (shelf.b2, t.b2), (shelf.a1, t.a1), (shelf.a2, t.a2)] {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let k = KWeighting::derive(48_000);
        let t = Biquad::REFERENCE_HIGH_PASS_48K;
        assert!((k.high_pass.b0 - 1.0).abs() < 1e-12);
        assert!((k.high_pass.a1 - t.a1).abs() < 1e-10);
        assert!((k.high_pass.a2 - t.a2).abs() < 1e-10);
    }

    #[test]
    fn derived_16k_response_matches_48k_reference_below_8k() {
        let k = KWeighting::for_rate(16_000);
        let mut worst: f64 = 0.0;
        for i in 0..2000 {
            let f = 10.0 * (7999.0f64 / 10.0).powf(i as f64 / 1999.0);
            worst = worst.max((k.magnitude_db(f) - KWeighting::reference_magnitude_db(f)).abs());
        }
        assert!(worst < 0.01, "max deviation {worst} dB");
    }

    #[test]
    fn plain_prewarp_is_not_enough_at_16k() {
        // Documents why the shelf is refined per rate.
        let shelf = ShelfPrototype::STANDARD.bilinear(16_000.0);
        let dev = (shelf.magnitude_db(997.0, 16_000.0)
            - Biquad::REFERENCE_SHELF_48K.magnitude_db(997.0, 48_000.0))
        .abs();
        assert!(dev > 0.01);
    }

    #[test]
    fn full_scale_997hz_sine_reads_minus_3_01() {
        let l = measure_lufs(&sine(997.0, 1.0, 10.0, 16_000)).unwrap();
        assert!((l + 3.01).abs() < 0.1, "{l}");
        let l48 = measure_lufs(&sine(997.0, 1.0, 10.0, 48_000)).unwrap();
        assert!((l48 + 3.01).abs() < 0.1, "{l48}");
        assert!((l - l48).abs() < 0.01);
    }

    #[test]
    fn silence_is_all_gated() {
        let z = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        assert_eq!(measure_lufs(&z).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(normalize_lufs(&z, -23.0), Err(AudioError::AllGated)));
    }

    #[test]
    fn too_short_is_rejected() {
        let c = AudioClip::new(vec![0.1; 6399], 16_000).unwrap();
        assert!(matches!(measure_lufs(&c), Err(AudioError::TooShort { len: 6399, block: 6400 })));
        let c = AudioClip::new(vec![0.1; 6400], 16_000).unwrap();
        assert!(measure_lufs(&c).is_ok());
    }

    #[test]
    fn halving_drops_loudness_by_6_02() {
        let c = sine(440.0, 0.5, 3.0, 16_000);
        let a = measure_lufs(&c).unwrap();
        let b = measure_lufs(&c.scaled(0.5)).unwrap();
        assert!((a - b - 20.0 * 2f64.log10()).abs() < 1e-6);
    }

    #[test]
    fn normalize_closed_forms() {
        let c = sine(997.0, 0.3, 2.0, 16_000);
        let measured = measure_lufs(&c).unwrap();
        let n = normalize_lufs(&c, measured - 3.0).unwrap();
        assert!((n.post_gain - 10f64.powf(-3.0 / 20.0)).abs() < 1e-12);
        let same = normalize_lufs(&c, measured).unwrap();
        assert_eq!(same.post_gain, 1.0);
        assert_eq!(same.clip, c);
    }

    #[test]
    fn normalized_output_remeasures_at_target() {
        let c = sine(300.0, 0.05, 4.0, 16_000);
        let n = normalize_lufs(&c, -23.0).unwrap();
        assert!((measure_lufs(&n.clip).unwrap() + 23.0).abs() < 0.05);
        assert!(!n.exceeds_full_scale);
        let loud = normalize_lufs(&c, 3.0).unwrap();
        assert!(loud.exceeds_full_scale);
        assert!(loud.clip.peak() > 1.0);
    }
}
