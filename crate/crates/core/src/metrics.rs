//! Reference-based quality measures.

use crate::error::{Error, Result};
use crate::signal::{stft, StftConfig, Waveform};

/// Upper (and, symmetrically, lower) limit of the ratio measures in dB.
pub const DB_CAP: f64 = 100.0;
/// Magnitude floor of the log-spectral distance, in dB.
pub const LSD_FLOOR_DB: f64 = -80.0;

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    reference.check_compatible(estimate, "metric")
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    if signal <= 0.0 {
        return -DB_CAP;
    }
    if error <= 0.0 {
        return DB_CAP;
    }
    (10.0 * (signal / error).log10()).clamp(-DB_CAP, DB_CAP)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let x = reference.samples();
    let e = estimate.samples();
    let ref_energy = dot(x, x);
    if ref_energy <= 0.0 {
        return Err(Error::Degenerate("SI-SDR of a silent reference".into()));
    }
    let alpha = dot(e, x) / ref_energy;
    let target = alpha * alpha * ref_energy;
    let residual: f64 = x.iter().zip(e).map(|(xv, ev)| (ev - alpha * xv).powi(2)).sum();
    Ok(ratio_db(target, residual))
}

/// Plain signal-to-noise ratio of `estimate` against `reference` in dB.
pub fn snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let x = reference.samples();
    let e = estimate.samples();
    let ref_energy = dot(x, x);
    if ref_energy <= 0.0 {
        return Err(Error::Degenerate("SNR of a silent reference".into()));
    }
    let residual: f64 = x.iter().zip(e).map(|(xv, ev)| (ev - xv).powi(2)).sum();
    Ok(ratio_db(ref_energy, residual))
}

/// Root mean square over frames of the per-frame RMS difference of the
/// log-magnitude spectra (dB), with magnitudes floored at [`LSD_FLOOR_DB`].
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_pair(reference, estimate)?;
    let a = stft(reference, cfg)?;
    let b = stft(estimate, cfg)?;
    let floor = 10f64.powf(LSD_FLOOR_DB / 20.0);
    let level = |c: num_complex::Complex64| 20.0 * c.norm().max(floor).log10();
    let (nf, nt) = (a.n_freq(), a.n_frames());
    let mut total = 0.0;
    for t in 0..nt {
        let mut frame = 0.0;
        for f in 0..nf {
            let d = level(a.get(f, t)) - level(b.get(f, t));
            frame += d * d;
        }
        total += frame / nf as f64;
    }
    Ok((total / nt as f64).sqrt())
}
