use num_complex::Complex64;
use rustfft::FftPlanner;

use super::spectrogram::ComplexSpectrogram;
use super::Waveform;
use crate::error::{Error, Result};

/// Analysis/synthesis settings. The taper is always a periodic square-root
/// Hann window, so analysis followed by synthesis applies a plain Hann
/// weighting that the overlap-add normalization removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 510,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self { window_len, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Parameter(format!(
                "hop must satisfy 0 < hop <= window_len (hop={}, window_len={})",
                self.hop, self.window_len
            )));
        }
        if self.window_len < 2 {
            return Err(Error::Parameter("window_len must be at least 2".into()));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, `floor(window_len / 2) + 1`.
    pub fn n_freq(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Zeros added at both ends of the signal before framing.
    pub fn pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Frame count for a signal of `len` samples after padding.
    pub fn frames_for_len(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.window_len) / self.hop + 1
    }

    /// Periodic square-root Hann taper.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
                hann.sqrt()
            })
            .collect()
    }
}

/// Short-time Fourier transform.
///
/// The signal is zero-padded with `window_len - hop` samples at both ends so
/// that every input sample is covered by at least two frames with non-zero
/// weight, which lets [`istft`] return exactly `w.len()` samples.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.len() < cfg.window_len {
        return Err(Error::Length {
            needed: cfg.window_len,
            got: w.len(),
        });
    }
    let pad = cfg.pad();
    let n_frames = cfg.frames_for_len(w.len());
    let n_freq = cfg.n_freq();
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window_len);

    let samples = w.samples();
    let mut data = vec![Complex64::new(0.0, 0.0); n_freq * n_frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window_len];
    for t in 0..n_frames {
        // frame t starts at padded index t*hop, i.e. signal index t*hop - pad
        let start = (t * cfg.hop) as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let s = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex64::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..n_freq {
            data[f * n_frames + t] = buf[f];
        }
    }
    Ok(ComplexSpectrogram::from_analysis(
        data,
        n_freq,
        n_frames,
        *cfg,
        w.len(),
        w.sample_rate(),
    ))
}

/// Inverse STFT by least-squares overlap-add.
///
/// Each frame is inverse transformed, tapered by the synthesis window and
/// accumulated; the sum is divided by the accumulated squared window. The
/// result is trimmed to `out_len` samples after removing the leading pad.
pub fn istft(s: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
    if s.warping().is_some() {
        return Err(Error::State(
            "istft requires an unwarped spectrogram".into(),
        ));
    }
    let cfg = s.config();
    cfg.validate()?;
    if s.n_freq() != cfg.n_freq() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, config expects {}",
            s.n_freq(),
            cfg.n_freq()
        )));
    }
    let n_frames = s.n_frames();
    if out_len < cfg.window_len || cfg.frames_for_len(out_len) != n_frames {
        return Err(Error::Shape(format!(
            "output length {out_len} is inconsistent with {n_frames} frames"
        )));
    }
    let w_len = cfg.window_len;
    let pad = cfg.pad();
    let window = cfg.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(w_len);

    let total = (n_frames - 1) * cfg.hop + w_len;
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); w_len];
    let n_freq = s.n_freq();
    let data = s.data();
    let scale = 1.0 / w_len as f64;
    for t in 0..n_frames {
        for f in 0..n_freq {
            buf[f] = data[f * n_frames + t];
        }
        // Hermitian completion of the one-sided spectrum.
        for f in n_freq..w_len {
            buf[f] = buf[w_len - f].conj();
        }
        ifft.process(&mut buf);
        let off = t * cfg.hop;
        for i in 0..w_len {
            acc[off + i] += buf[i].re * scale * window[i];
            wsum[off + i] += window[i] * window[i];
        }
    }

    let mut out = Vec::with_capacity(out_len);
    for i in pad..pad + out_len {
        let denom = wsum.get(i).copied().unwrap_or(0.0);
        if denom <= 1e-10 {
            return Err(Error::Normalization(format!(
                "window sum vanishes at output sample {}",
                i - pad
            )));
        }
        out.push(acc[i] / denom);
    }
    Ok(Waveform::from_parts(out, s.sample_rate()))
}
