//! Log-mel audio features: 16 kHz clips, Hann-windowed 1024/400 STFT,
//! 64 HTK mel bands, and per-band standardization.

mod mel;
mod normalize;
mod spectral;
mod wav;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use mel::{
    hz_to_mel, log_mel, log_mel_frames, mel_to_hz, MelFilterbank, LOG_ENERGY_FLOOR, N_FRAMES,
    N_MELS,
};
pub use normalize::Normalizer;
pub use spectral::{fft_real, stft, Stft, FFT_SIZE, HOP, N_BINS};
pub use wav::{quantize, read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(self, rate: u32) -> AudioClip {
        if rate == self.sample_rate || self.samples.is_empty() {
            return AudioClip {
                sample_rate: rate,
                ..self
            };
        }
        let ratio = self.sample_rate as f64 / rate as f64;
        let len = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (pos.floor() as usize).min(last);
                let frac = pos - j as f64;
                let next = self.samples[(j + 1).min(last)];
                self.samples[j] * (1.0 - frac) + next * frac
            })
            .collect();
        AudioClip::new(samples, rate)
    }
}

/// A `T × F` log-mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelFeatures(Tensor);

impl LogMelFeatures {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("log-mel features of shape {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::Numeric("non-finite log-mel value".into()));
        }
        Ok(LogMelFeatures(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.0.shape()[1]
    }
}

/// The canonical clip → features pipeline with cached FFT plan and filterbank.
pub struct FeatureExtractor {
    stft: Stft,
    filterbank: MelFilterbank,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        FeatureExtractor {
            stft: Stft::new(FFT_SIZE, HOP).expect("canonical stft"),
            filterbank: MelFilterbank::canonical(),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Centered STFT gives `floor(len/400)+1` frames; the first 400 are kept.
    pub fn extract(&self, clip: &AudioClip) -> Result<LogMelFeatures> {
        let clip = if clip.sample_rate == SAMPLE_RATE {
            std::borrow::Cow::Borrowed(clip)
        } else {
            std::borrow::Cow::Owned(clip.clone().resample(SAMPLE_RATE))
        };
        let power = self.stft.power(&clip, true)?;
        log_mel(&power, &self.filterbank)
    }
}
