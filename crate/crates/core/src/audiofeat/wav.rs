use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

use super::{AudioClip, SAMPLE_RATE};

/// Write mono PCM16; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        w.write_sample(quantize(s)).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Read a PCM16 WAV file, downmixing to mono and resampling to 16 kHz.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut r = hound::WavReader::open(path).map_err(wrap)?;
    let spec = r.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(path, "expected 16-bit PCM"));
    }
    let raw: Vec<i16> = r.samples::<i16>().collect::<std::result::Result<_, _>>().map_err(wrap)?;
    let ch = spec.channels as usize;
    let samples = raw
        .chunks(ch)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32767.0).sum::<f64>() / ch as f64)
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate).resample(SAMPLE_RATE))
}
