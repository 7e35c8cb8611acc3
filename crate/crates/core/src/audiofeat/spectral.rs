use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::AudioClip;

pub const FFT_SIZE: usize = 1024;
pub const HOP: usize = 400;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// One-sided spectrum of a real 1024-sample frame.
pub fn fft_real(frame: &[f64]) -> Result<Vec<Complex64>> {
    Stft::new(FFT_SIZE, HOP)?.spectrum(frame)
}

/// Hann-windowed short-time power spectrum with a cached FFT plan.
pub struct Stft {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if !window_len.is_power_of_two() || hop == 0 {
            return Err(Error::Shape(format!("stft window {window_len}, hop {hop}")));
        }
        // periodic Hann
        let window = (0..window_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos())
            .collect();
        Ok(Stft {
            window_len,
            hop,
            window,
            fft: FftPlanner::new().plan_fft_forward(window_len),
        })
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        if frame.len() != self.window_len {
            return Err(Error::Shape(format!(
                "frame of {} samples, expected {}",
                frame.len(),
                self.window_len
            )));
        }
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins());
        Ok(buf)
    }

    /// Frame count: `floor(len / hop) + 1` when centered (half a window of
    /// zeros on each side), `1 + floor((len - window) / hop)` otherwise.
    pub fn frame_count(&self, len: usize, center: bool) -> Result<usize> {
        if len < self.window_len {
            return Err(Error::Input(format!(
                "clip of {len} samples shorter than the {}-sample window",
                self.window_len
            )));
        }
        Ok(if center {
            len / self.hop + 1
        } else {
            1 + (len - self.window_len) / self.hop
        })
    }

    /// `frames × bins` matrix of squared magnitudes.
    pub fn power(&self, clip: &AudioClip, center: bool) -> Result<Tensor> {
        let frames = self.frame_count(clip.samples.len(), center)?;
        let pad = if center { self.window_len / 2 } else { 0 };
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = (f * self.hop) as isize - pad as isize;
            for (n, slot) in buf.iter_mut().enumerate() {
                let idx = start + n as isize;
                let x = if idx < 0 || idx as usize >= clip.samples.len() {
                    0.0
                } else {
                    clip.samples[idx as usize]
                };
                *slot = Complex64::new(x * self.window[n], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
        }
        Tensor::new(vec![frames, bins], out)
    }
}

/// Centered STFT power spectrogram with the canonical 1024/400 framing.
pub fn stft(clip: &AudioClip, window: usize, hop: usize) -> Result<Tensor> {
    Stft::new(window, hop)?.power(clip, true)
}
