//! Deterministic noisy-mixture generation.
//!
//! All level operations work on time-domain `f64` samples with full scale at
//! 1.0. Nothing here resamples: clips are expected at their canonical rate.

mod loudness;
mod sweep;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

use crate::hash::seeded_key_hash;

pub use loudness::{
    measure_lufs, normalize_lufs, Biquad, HighPassPrototype, KWeighting, Normalized,
    ShelfPrototype, ABSOLUTE_GATE_LUFS, BLOCK_SECONDS,
};
pub use sweep::{
    generate_sweep, mixture_key, CellError, CleanReference, MixtureManifest, MixtureSpec,
    SweepConfig, MANIFEST_FILE,
};
pub use wav::{read_wav, write_wav_f32, write_wav_i16, CANONICAL_RATE_HZ};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("corrupt audio file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("noise recording is empty")]
    EmptyNoise,
    #[error("input is silent (zero power)")]
    SilentInput,
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("clip of {len} samples is shorter than one {block}-sample gating block")]
    TooShort { len: usize, block: usize },
    #[error("every gating block is below the absolute gate")]
    AllGated,
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("no input files in {0}")]
    EmptyDir(PathBuf),
    #[error("utterance {0} produced no valid mixtures")]
    NoValidMixtures(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest serialisation failed: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("clip has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Sample-wise sum of two equally long clips.
    pub fn mix(&self, other: &AudioClip) -> Result<AudioClip, AudioError> {
        if self.len() != other.len() {
            return Err(AudioError::LengthMismatch(self.len(), other.len()));
        }
        Ok(AudioClip {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    // Internal constructor for outputs that are valid by construction.
    fn from_parts(samples: Vec<f64>, sample_rate_hz: u32) -> AudioClip {
        AudioClip { samples, sample_rate_hz }
    }
}

/// Result of [`center_trim`]: the fixed-length clip and whether zeros were added.
#[derive(Clone, Debug, PartialEq)]
pub struct Trimmed {
    pub clip: AudioClip,
    pub padded: bool,
}

fn duration_to_samples(duration_s: f64, rate: u32) -> usize {
    (duration_s * f64::from(rate)).round().max(0.0) as usize
}

/// Trims (or zero-pads) a clip to `duration_s` around its centre.
///
/// An odd surplus puts the extra discarded sample, or the extra zero, on the
/// trailing side.
pub fn center_trim(clip: &AudioClip, duration_s: f64) -> Result<Trimmed, AudioError> {
    if !(duration_s > 0.0) {
        return Err(AudioError::InvalidConfig(format!("trim duration must be > 0, got {duration_s}")));
    }
    let target = duration_to_samples(duration_s, clip.sample_rate_hz).max(1);
    let len = clip.len();
    let (samples, padded) = if len >= target {
        let lead = (len - target) / 2;
        (clip.samples[lead..lead + target].to_vec(), false)
    } else {
        let lead = (target - len) / 2;
        let mut out = vec![0.0; target];
        out[lead..lead + len].copy_from_slice(&clip.samples);
        (out, true)
    };
    Ok(Trimmed { clip: AudioClip::from_parts(samples, clip.sample_rate_hz), padded })
}

/// Seeded start offset into a noise recording of `noise_len` samples.
pub fn noise_offset(noise_len: usize, seed: u64, key: &str) -> usize {
    (seeded_key_hash(seed, key) % noise_len as u64) as usize
}

/// Reads `length` samples of `noise` from a seeded offset, wrapping around.
///
/// Returns the segment and the offset used.
pub fn select_noise_segment(
    noise: &AudioClip,
    length: usize,
    seed: u64,
    key: &str,
) -> Result<(AudioClip, usize), AudioError> {
    let n = noise.len();
    if n == 0 {
        return Err(AudioError::EmptyNoise);
    }
    if length == 0 {
        return Err(AudioError::InvalidClip("segment length must be positive".into()));
    }
    let offset = noise_offset(n, seed, key);
    let samples = noise.samples.iter().cycle().skip(offset).take(length).copied().collect();
    Ok((AudioClip::from_parts(samples, noise.sample_rate_hz), offset))
}

/// Mean-square power.
pub fn signal_power(clip: &AudioClip) -> f64 {
    clip.samples.iter().map(|s| s * s).sum::<f64>() / clip.len() as f64
}

/// SNR in dB of two component signals.
pub fn snr_db(signal: &AudioClip, noise: &AudioClip) -> f64 {
    10.0 * (signal_power(signal) / signal_power(noise)).log10()
}

/// Scales `noise` so that `clean` over the scaled noise sits at `snr_db`.
pub fn scale_noise_to_snr(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
) -> Result<(AudioClip, f64), AudioError> {
    if clean.len() != noise.len() {
        return Err(AudioError::LengthMismatch(clean.len(), noise.len()));
    }
    let p_clean = signal_power(clean);
    let p_noise = signal_power(noise);
    if p_clean == 0.0 || p_noise == 0.0 {
        return Err(AudioError::SilentInput);
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok((noise.scaled(gain), gain))
}

/// Splits a clip into consecutive non-overlapping windows; the partial tail is dropped.
pub fn window(clip: &AudioClip, window_s: f64) -> Vec<AudioClip> {
    let wlen = duration_to_samples(window_s, clip.sample_rate_hz);
    if !(window_s > 0.0) || wlen == 0 {
        return Vec::new();
    }
    clip.samples
        .chunks_exact(wlen)
        .map(|c| AudioClip::from_parts(c.to_vec(), clip.sample_rate_hz))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16_000).unwrap()
    }

    fn ramp(n: usize) -> AudioClip {
        clip((0..n).map(|i| (i as f64 * 0.001).sin() + 0.01).collect())
    }

    #[test]
    fn rejects_invalid_clips() {
        assert!(AudioClip::new(vec![], 16_000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(AudioClip::new(vec![f64::INFINITY], 16_000).is_err());
    }

    #[test]
    fn trim_longer_keeps_centre() {
        let c = ramp(12 * 16_000);
        let t = center_trim(&c, 10.0).unwrap();
        assert!(!t.padded);
        assert_eq!(t.clip.samples(), &c.samples()[16_000..176_000]);
    }

    #[test]
    fn trim_exact_is_identity() {
        let c = ramp(160_000);
        let t = center_trim(&c, 10.0).unwrap();
        assert_eq!(t.clip, c);
        assert!(!t.padded);
    }

    #[test]
    fn trim_shorter_pads_symmetrically() {
        let c = ramp(9 * 16_000);
        let t = center_trim(&c, 10.0).unwrap();
        assert!(t.padded);
        assert_eq!(t.clip.len(), 160_000);
        assert!(t.clip.samples()[..8000].iter().all(|&s| s == 0.0));
        assert!(t.clip.samples()[152_000..].iter().all(|&s| s == 0.0));
        assert_eq!(&t.clip.samples()[8000..152_000], c.samples());
        let e_in: f64 = c.samples().iter().map(|s| s * s).sum();
        let e_out: f64 = t.clip.samples().iter().map(|s| s * s).sum();
        assert_eq!(e_in, e_out);
    }

    #[test]
    fn trim_odd_surplus_goes_trailing() {
        let c = clip(vec![1.0, 2.0, 3.0, 4.0]);
        let c = AudioClip::new(c.samples().to_vec(), 1).unwrap();
        assert_eq!(center_trim(&c, 1.0).unwrap().clip.samples(), &[2.0]);
        assert_eq!(center_trim(&c, 3.0).unwrap().clip.samples(), &[1.0, 2.0, 3.0]);
        let short = AudioClip::new(vec![5.0], 1).unwrap();
        assert_eq!(center_trim(&short, 4.0).unwrap().clip.samples(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn noise_segment_identity_at_zero_offset() {
        // Search a key whose offset is zero for this length.
        let noise = ramp(17);
        let key = (0..10_000).map(|i| format!("k{i}")).find(|k| noise_offset(17, 3, k) == 0).unwrap();
        let (seg, off) = select_noise_segment(&noise, 17, 3, &key).unwrap();
        assert_eq!(off, 0);
        assert_eq!(seg, noise);
    }

    #[test]
    fn noise_segment_wraps_like_modular_indexing() {
        let noise = ramp(48_000);
        let (seg, off) = select_noise_segment(&noise, 160_000, 42, "utt|babble").unwrap();
        assert_eq!(seg.len(), 160_000);
        for (i, &s) in seg.samples().iter().enumerate() {
            assert_eq!(s, noise.samples()[(off + i) % 48_000]);
        }
    }

    #[test]
    fn noise_segment_is_deterministic_and_key_dependent() {
        let noise = ramp(160_000);
        let (a, oa) = select_noise_segment(&noise, 1000, 7, "u1|n1").unwrap();
        let (b, ob) = select_noise_segment(&noise, 1000, 7, "u1|n1").unwrap();
        let (_, oc) = select_noise_segment(&noise, 1000, 7, "u2|n1").unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_ne!(oa, oc);
    }

    #[test]
    fn power_examples() {
        assert_eq!(signal_power(&clip(vec![1.0, -1.0, 1.0, -1.0])), 1.0);
        assert_eq!(signal_power(&clip(vec![0.0; 8])), 0.0);
        assert_eq!(signal_power(&clip(vec![0.5, 0.5])), 0.25);
    }

    #[test]
    fn scale_examples() {
        let x = clip(vec![1.0, -1.0, 1.0, -1.0]);
        let (_, g) = scale_noise_to_snr(&x, &x, 20.0).unwrap();
        assert!((g - 0.1).abs() < 1e-15);
        let (_, g) = scale_noise_to_snr(&x, &x, 0.0).unwrap();
        assert_eq!(g, 1.0);

        let c = clip(vec![0.5f64.sqrt(), -(0.5f64.sqrt())]);
        let n = clip(vec![0.125f64.sqrt(), 0.125f64.sqrt()]);
        let (scaled, g) = scale_noise_to_snr(&c, &n, 0.0).unwrap();
        assert!((g - 2.0).abs() < 1e-12);
        assert!(snr_db(&c, &scaled).abs() < 1e-9);
    }

    #[test]
    fn scale_rejects_silence_and_mismatch() {
        let x = clip(vec![1.0, 0.0]);
        assert!(matches!(scale_noise_to_snr(&x, &clip(vec![0.0, 0.0]), 0.0), Err(AudioError::SilentInput)));
        assert!(matches!(scale_noise_to_snr(&clip(vec![0.0, 0.0]), &x, 0.0), Err(AudioError::SilentInput)));
        assert!(matches!(scale_noise_to_snr(&x, &clip(vec![1.0]), 0.0), Err(AudioError::LengthMismatch(2, 1))));
    }

    #[test]
    fn window_examples() {
        let c = ramp(160_000);
        let w = window(&c, 1.9);
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|x| x.len() == 30_400));
        assert!(window(&ramp(1000), 1.9).is_empty());

        let c = ramp(60_800);
        let w = window(&c, 1.9);
        assert_eq!(w.len(), 2);
        let cat: Vec<f64> = w.iter().flat_map(|x| x.samples().to_vec()).collect();
        assert_eq!(cat, c.samples());
    }

    proptest! {
        #[test]
        fn scaled_noise_hits_target_snr(
            snr in -10i32..=30,
            seed in any::<u64>(),
        ) {
            let c = ramp(4000);
            let n = clip((0..4000).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 1000.0 - 0.4).collect());
            let (scaled, _) = scale_noise_to_snr(&c, &n, f64::from(snr)).unwrap();
            prop_assert!((snr_db(&c, &scaled) - f64::from(snr)).abs() < 1e-9);
        }

        #[test]
        fn windows_concatenate_to_prefix(len in 1usize..5000, win in 1usize..700) {
            let c = AudioClip::new((0..len).map(|i| i as f64).collect(), 1000).unwrap();
            let ws = window(&c, win as f64 / 1000.0);
            prop_assert_eq!(ws.len(), len / win);
            let cat: Vec<f64> = ws.iter().flat_map(|x| x.samples().to_vec()).collect();
            prop_assert_eq!(&cat[..], &c.samples()[..cat.len()]);
        }
    }
}
