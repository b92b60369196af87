use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError};

/// The only sample rate accepted on input; nothing is resampled.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

fn corrupt(path: &Path, reason: impl ToString) -> AudioError {
    AudioError::CorruptFile { path: path.to_path_buf(), reason: reason.to_string() }
}

fn unsupported(path: &Path, reason: impl ToString) -> AudioError {
    AudioError::UnsupportedFormat { path: path.to_path_buf(), reason: reason.to_string() }
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => unsupported(path, "unsupported WAVE encoding"),
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            AudioError::Io { path: path.to_path_buf(), source: e }
        }
        other => corrupt(path, other),
    }
}

/// Reads a mono 16 kHz WAV file holding 16-bit PCM or 32-bit float samples.
///
/// Integer samples are divided by 32768, float samples are taken as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels (mono required)", spec.channels)));
    }
    if spec.sample_rate != CANONICAL_RATE_HZ {
        return Err(unsupported(
            path,
            format!("sample rate {} Hz (expected {CANONICAL_RATE_HZ} Hz, no resampling)", spec.sample_rate),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| corrupt(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| corrupt(path, e))?,
        (fmt, bits) => return Err(unsupported(path, format!("{fmt:?} {bits}-bit samples"))),
    };
    if samples.is_empty() {
        return Err(corrupt(path, "no audio frames"));
    }
    AudioClip::new(samples, spec.sample_rate).map_err(|e| corrupt(path, e))
}

fn write_with<F>(path: &Path, spec: WavSpec, write: F) -> Result<(), AudioError>
where
    F: FnOnce(&mut WavWriter<std::io::BufWriter<std::fs::File>>) -> Result<(), hound::Error>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| AudioError::Io { path: parent.to_path_buf(), source: e })?;
    }
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    write(&mut writer).map_err(|e| map_hound(path, e))?;
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Writes an IEEE float32 mono WAV.
pub fn write_wav_f32(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    write_with(path.as_ref(), spec, |w| {
        clip.samples().iter().try_for_each(|&s| w.write_sample(s as f32))
    })
}

/// Writes a 16-bit PCM mono WAV (samples are clamped and rounded).
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    write_with(path.as_ref(), spec, |w| {
        clip.samples()
            .iter()
            .try_for_each(|&s| w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16))
    })
}
