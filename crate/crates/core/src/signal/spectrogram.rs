use num_complex::Complex64;
use rand::Rng;

use super::stft::StftConfig;
use crate::error::{Error, Result};

/// Magnitude compression applied to a spectrogram: `c -> scale * |c|^exponent * e^{i arg c}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warping {
    pub exponent: f64,
    pub scale: f64,
}

/// Complex time-frequency array stored frequency-major
/// (`data[f * n_frames + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    n_freq: usize,
    n_frames: usize,
    config: StftConfig,
    sample_rate: u32,
    /// Length of the analysed signal, when the frames still line up with it.
    signal_len: Option<usize>,
    warping: Option<Warping>,
}

impl ComplexSpectrogram {
    pub(crate) fn from_analysis(
        data: Vec<Complex64>,
        n_freq: usize,
        n_frames: usize,
        config: StftConfig,
        signal_len: usize,
        sample_rate: u32,
    ) -> Self {
        Self {
            data,
            n_freq,
            n_frames,
            config,
            sample_rate,
            signal_len: Some(signal_len),
            warping: None,
        }
    }

    /// Builds a spectrogram from raw bins (frequency-major). The result is
    /// unwarped and not tied to a signal length.
    pub fn from_bins(
        data: Vec<Complex64>,
        n_freq: usize,
        n_frames: usize,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        if data.len() != n_freq * n_frames {
            return Err(Error::Shape(format!(
                "{} bins do not fill a {n_freq}x{n_frames} grid",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Degenerate("non-finite spectrogram bin".into()));
        }
        Ok(Self {
            data,
            n_freq,
            n_frames,
            config,
            sample_rate,
            signal_len: None,
            warping: None,
        })
    }

    /// Same geometry and metadata as `self`, new contents.
    pub fn with_data(&self, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "expected {} bins, got {}",
                self.data.len(),
                data.len()
            )));
        }
        Ok(Self {
            data,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Vec::new(),
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            config: self.config,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
            warping: self.warping,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); self.data.len()],
            ..self.clone_meta()
        }
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, freq: usize, frame: usize) -> Complex64 {
        self.data[freq * self.n_frames + frame]
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Number of bins, `n_freq * n_frames`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn warping(&self) -> Option<Warping> {
        self.warping
    }

    pub fn is_warped(&self) -> bool {
        self.warping.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.n_freq == other.n_freq && self.n_frames == other.n_frames
    }

    pub(crate) fn check_same_shape(&self, other: &ComplexSpectrogram, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.n_freq, self.n_frames, other.n_freq, other.n_frames
            )));
        }
        Ok(())
    }
}

/// Magnitude warping `c -> scale * |c|^exponent * e^{i arg c}`.
pub fn warp(s: &ComplexSpectrogram, exponent: f64, scale: f64) -> Result<ComplexSpectrogram> {
    if s.is_warped() {
        return Err(Error::State("spectrogram is already warped".into()));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::Parameter(format!("warp exponent must be > 0, got {exponent}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("warp scale must be > 0, got {scale}")));
    }
    let data = s
        .data
        .iter()
        .map(|&c| {
            let mag = c.norm();
            if mag == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                c * (scale * mag.powf(exponent) / mag)
            }
        })
        .collect();
    Ok(ComplexSpectrogram {
        data,
        warping: Some(Warping { exponent, scale }),
        ..s.clone_meta()
    })
}

/// Exact inverse of [`warp`], using the parameters recorded on `s`.
pub fn unwarp(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let Some(Warping { exponent, scale }) = s.warping else {
        return Err(Error::State("spectrogram is not warped".into()));
    };
    let inv = 1.0 / exponent;
    let data = s
        .data
        .iter()
        .map(|&c| {
            let mag = c.norm();
            if mag == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                c * ((mag / scale).powf(inv) / mag)
            }
        })
        .collect();
    Ok(ComplexSpectrogram {
        data,
        warping: None,
        ..s.clone_meta()
    })
}

/// A fixed-length excerpt of a spectrogram.
#[derive(Debug, Clone)]
pub struct Crop {
    pub spec: ComplexSpectrogram,
    /// First source frame of the excerpt.
    pub offset: usize,
    /// Frames taken from the source; the rest of the excerpt is zero padding
    /// appended at the end.
    pub valid_frames: usize,
}

/// Takes `frames` contiguous frames starting at a uniformly random offset in
/// `[0, available - frames]`. Inputs shorter than `frames` are copied from
/// offset 0 and zero-padded at the end.
pub fn crop_random_frames<R: Rng + ?Sized>(
    s: &ComplexSpectrogram,
    frames: usize,
    rng: &mut R,
) -> Result<Crop> {
    if s.n_frames == 0 {
        return Err(Error::Shape("cannot crop an empty spectrogram".into()));
    }
    if frames == 0 {
        return Err(Error::Parameter("crop length must be positive".into()));
    }
    let offset = if s.n_frames >= frames {
        rng.gen_range(0..=s.n_frames - frames)
    } else {
        0
    };
    crop_frames(s, offset, frames)
}

/// Takes `frames` frames starting at `offset`, zero-padding past the end of
/// the source.
pub fn crop_frames(s: &ComplexSpectrogram, offset: usize, frames: usize) -> Result<Crop> {
    if frames == 0 {
        return Err(Error::Parameter("crop length must be positive".into()));
    }
    if offset >= s.n_frames {
        return Err(Error::Shape(format!(
            "crop offset {offset} beyond {} frames",
            s.n_frames
        )));
    }
    let valid = frames.min(s.n_frames - offset);
    let mut data = vec![Complex64::new(0.0, 0.0); s.n_freq * frames];
    for f in 0..s.n_freq {
        let src = &s.data[f * s.n_frames + offset..f * s.n_frames + offset + valid];
        data[f * frames..f * frames + valid].copy_from_slice(src);
    }
    Ok(Crop {
        spec: ComplexSpectrogram {
            data,
            n_freq: s.n_freq,
            n_frames: frames,
            config: s.config,
            sample_rate: s.sample_rate,
            signal_len: None,
            warping: s.warping,
        },
        offset,
        valid_frames: valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n_freq: usize, n_frames: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_freq * n_frames)
            .map(|_| Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        ComplexSpectrogram::from_bins(data, n_freq, n_frames, StftConfig::default(), 16_000)
            .unwrap()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn warp_point_values() {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram::from_bins(
            vec![Complex64::new(0.0, 0.0), Complex64::new(4.0, 0.0)],
            2,
            1,
            cfg,
            16_000,
        )
        .unwrap();
        let w = warp(&s, 0.5, 1.0).unwrap();
        assert_eq!(w.data()[0], Complex64::new(0.0, 0.0));
        assert!((w.data()[1] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(w.is_warped());
    }

    #[test]
    fn warp_rejects_bad_parameters_and_double_application() {
        let s = grid(3, 3, 0);
        assert!(matches!(warp(&s, 0.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(warp(&s, -1.0, 1.0), Err(Error::Parameter(_))));
        let w = warp(&s, 0.5, 1.0).unwrap();
        assert!(matches!(warp(&w, 0.5, 1.0), Err(Error::State(_))));
        assert!(matches!(unwarp(&s), Err(Error::State(_))));
    }

    #[test]
    fn warp_preserves_phase() {
        let s = grid(4, 4, 2);
        let w = warp(&s, 0.5, 0.3).unwrap();
        for (a, b) in s.data().iter().zip(w.data()) {
            assert!((a.arg() - b.arg()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn warp_unwarp_roundtrip(seed in 0u64..1000, exponent in 0.1f64..2.0, scale in 0.01f64..10.0) {
            let s = grid(5, 7, seed);
            let back = unwarp(&warp(&s, exponent, scale).unwrap()).unwrap();
            prop_assert!(rel_err(back.data(), s.data()) < 1e-9);
            prop_assert!(!back.is_warped());
        }

        #[test]
        fn unwarp_warp_roundtrip(seed in 0u64..1000, exponent in 0.1f64..2.0, scale in 0.01f64..10.0) {
            let s = grid(5, 7, seed);
            let w = warp(&s, exponent, scale).unwrap();
            // unwarp then re-warp with the recorded parameters
            let again = warp(&unwarp(&w).unwrap(), exponent, scale).unwrap();
            prop_assert!(rel_err(again.data(), w.data()) < 1e-9);
        }
    }

    #[test]
    fn crop_identity_when_lengths_match() {
        let s = grid(4, 256, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = crop_random_frames(&s, 256, &mut rng).unwrap();
        assert_eq!(c.offset, 0);
        assert_eq!(c.spec.data(), s.data());
    }

    #[test]
    fn crop_is_deterministic_under_seed() {
        let s = grid(3, 600, 4);
        let a = crop_random_frames(&s, 256, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = crop_random_frames(&s, 256, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a.offset, b.offset);
        assert_eq!(a.spec.data(), b.spec.data());
        // contents match the source at the chosen offset
        for f in 0..3 {
            for t in 0..256 {
                assert_eq!(a.spec.get(f, t), s.get(f, a.offset + t));
            }
        }
    }

    #[test]
    fn crop_pads_short_inputs() {
        let s = grid(2, 10, 4);
        let c = crop_random_frames(&s, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.valid_frames, 10);
        assert_eq!(c.spec.n_frames(), 16);
        for f in 0..2 {
            for t in 10..16 {
                assert_eq!(c.spec.get(f, t), Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn crop_offsets_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let s = grid(1, 512, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = vec![0usize; 257];
        let draws = 10_000;
        for _ in 0..draws {
            counts[crop_random_frames(&s, 256, &mut rng).unwrap().offset] += 1;
        }
        let expected = draws as f64 / 257.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(256.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2={chi2} p={p}");
    }
}
