use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::spectral::{FFT_SIZE, N_BINS};
use super::{LogMelFeatures, SAMPLE_RATE};

pub const N_MELS: usize = 64;
pub const N_FRAMES: usize = 400;
/// Energy floor applied before the natural log.
pub const LOG_ENERGY_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters stored sparsely as `(first_bin, weights)`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_bins: usize,
    filters: Vec<(usize, Vec<f64>)>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Self {
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = bin_hz(k);
                        let w = if f > left && f <= center {
                            (f - left) / (center - left)
                        } else if f > center && f < right {
                            (right - f) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => {
                        let mut dense = vec![0.0; weights.last().unwrap().0 - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect();
        MelFilterbank {
            n_bins,
            filters,
            edges_hz,
        }
    }

    /// 64 filters spanning 0 Hz to the 8 kHz Nyquist frequency.
    pub fn canonical() -> Self {
        Self::new(N_MELS, FFT_SIZE, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0)
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// Weight of filter `m` at spectrogram bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = &self.filters[m];
        if k < *start {
            0.0
        } else {
            w.get(k - start).copied().unwrap_or(0.0)
        }
    }

    pub fn apply_frame(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = power[*start..*start + w.len()]
                .iter()
                .zip(w)
                .map(|(p, w)| p * w)
                .sum();
        }
    }
}

/// Mel projection, natural log with a `1e-10` floor, and frame trimming or
/// padding to `target_frames` (padding rows carry the floor value).
pub fn log_mel_frames(
    spec: &Tensor,
    filterbank: &MelFilterbank,
    target_frames: usize,
) -> Result<LogMelFeatures> {
    let (frames, bins) = match spec.shape() {
        &[f, b] => (f, b),
        s => return Err(Error::Shape(format!("spectrogram of shape {s:?}"))),
    };
    if bins != filterbank.n_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {bins} bins, filterbank expects {}",
            filterbank.n_bins()
        )));
    }
    let n_mels = filterbank.n_mels();
    let floor = LOG_ENERGY_FLOOR.ln();
    let mut out = vec![floor; target_frames * n_mels];
    for (f, row) in out.chunks_mut(n_mels).enumerate().take(frames) {
        filterbank.apply_frame(spec.row(f), row);
        for v in row.iter_mut() {
            *v = v.max(LOG_ENERGY_FLOOR).ln();
        }
    }
    LogMelFeatures::new(Tensor::new(vec![target_frames, n_mels], out)?)
}

/// Canonical log-mel features: 400 frames × 64 mel bins.
pub fn log_mel(spec: &Tensor, filterbank: &MelFilterbank) -> Result<LogMelFeatures> {
    if spec.rank() == 2 && spec.shape()[1] != N_BINS {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, expected {N_BINS}",
            spec.shape()[1]
        )));
    }
    log_mel_frames(spec, filterbank, N_FRAMES)
}
