//! Reference-based quality metrics: scale-invariant SDR, segmental SNR,
//! and summary statistics for report aggregation.

use crate::dsp::FRAME_SIZE;
use crate::error::{Error, Result};

/// Upper clamp for SI-SDR; identical signals report this value.
pub const SI_SDR_CEILING_DB: f64 = 60.0;
/// Per-segment SNR clamp range.
pub const SEG_SNR_RANGE_DB: (f64, f64) = (-10.0, 35.0);

/// Scale-invariant signal-to-distortion ratio of `estimate` against
/// `reference`, in dB, clamped to the 60 dB ceiling.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Data(format!(
            "metric inputs differ in length: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Data("metric reference signal is silent".into()));
    }
    let cross: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let alpha = cross / ref_energy;
    let mut target_energy = 0.0;
    let mut noise_energy = 0.0;
    for (r, e) in reference.iter().zip(estimate) {
        let target = alpha * r;
        let noise = e - target;
        target_energy += target * target;
        noise_energy += noise * noise;
    }
    if noise_energy <= target_energy * 1e-12 {
        return Ok(SI_SDR_CEILING_DB);
    }
    Ok((10.0 * (target_energy / noise_energy).log10()).min(SI_SDR_CEILING_DB))
}

/// Mean per-segment SNR in dB over segments where the reference is
/// audible, each segment clamped into the standard range.
pub fn segmental_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Data(format!(
            "metric inputs differ in length: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let (lo, hi) = SEG_SNR_RANGE_DB;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ref_seg, est_seg) in reference
        .chunks(FRAME_SIZE)
        .zip(estimate.chunks(FRAME_SIZE))
    {
        let signal: f64 = ref_seg.iter().map(|s| s * s).sum();
        let mean_sq = signal / ref_seg.len() as f64;
        if 10.0 * mean_sq.log10() <= -50.0 {
            continue;
        }
        let noise: f64 = ref_seg
            .iter()
            .zip(est_seg)
            .map(|(r, e)| (r - e) * (r - e))
            .sum();
        let snr = if noise <= signal * 1e-12 {
            hi
        } else {
            (10.0 * (signal / noise).log10()).clamp(lo, hi)
        };
        sum += snr;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data(
            "segmental SNR undefined: reference has no audible segments".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Aggregate statistics over per-clip metric values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub variance: f64,
}

/// Mean/min/max/population-variance of a metric column.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Data("cannot summarize an empty metric column".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Summary {
        mean,
        min,
        max,
        variance,
    })
}
