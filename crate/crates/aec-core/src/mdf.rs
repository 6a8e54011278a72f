//! Multidelay block frequency-domain adaptive filter.
//!
//! The echo path is modeled as [`MdfConfig::blocks`] partitions of
//! [`FRAME_SIZE`] taps each, adapted in the frequency domain with per-bin
//! normalized LMS. Overlap-save processing and a gradient constraint that
//! zeroes the acausal half of every partition after each update keep the
//! filter exactly equivalent to a causal time-domain FIR, so the
//! per-partition tap energies read out the location of the echo path.

use std::collections::VecDeque;

use num_complex::Complex;

use serde::{Deserialize, Serialize};

use crate::dsp::{AudioFrame, FftPair, FFT_SIZE, FRAME_SIZE, SPECTRUM_BINS};
use crate::error::{Error, Result};

/// Per-bin update divisors never drop below this fraction of the mean
/// far power, keeping spectral valleys from amplifying weight noise.
const POWER_FLOOR_RATIO: f64 = 1e-2;

/// Adaptation parameters for one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdfConfig {
    /// Number of length-[`FRAME_SIZE`] partitions the filter models.
    pub blocks: usize,
    /// Normalized LMS step size.
    pub step_size: f64,
    /// One-pole smoothing factor for the per-bin far power estimate.
    pub power_smoothing: f64,
    /// Regularization relative to the mean far power.
    pub regularization: f64,
}

impl Default for MdfConfig {
    fn default() -> Self {
        Self {
            blocks: 32,
            step_size: 0.25,
            power_smoothing: 0.9,
            regularization: 1e-6,
        }
    }
}

impl MdfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("mdf blocks must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mdf step size {} outside (0, 1]",
                self.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.power_smoothing) {
            return Err(Error::InvalidConfig(format!(
                "mdf power smoothing {} outside [0, 1]",
                self.power_smoothing
            )));
        }
        if self.regularization < 0.0 {
            return Err(Error::InvalidConfig(
                "mdf regularization must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Streaming echo canceller state.
pub struct MdfFilter {
    config: MdfConfig,
    /// Frequency-domain weights, one one-sided spectrum per partition.
    weights: Vec<Vec<Complex<f64>>>,
    /// Causal tap values per partition, refreshed by the constraint step.
    taps: Vec<Vec<f64>>,
    /// Far-end spectra, newest first.
    history: VecDeque<Vec<Complex<f64>>>,
    /// Smoothed per-bin far power summed over the history window.
    power: Vec<f64>,
    /// Instantaneous per-bin window power from the current history.
    window_power: Vec<f64>,
    primed: bool,
    far_prev: Vec<f64>,
    adapt: bool,
    fft: FftPair,
    block: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    accum: Vec<Complex<f64>>,
}

/// Echo estimate and cancellation residual for one frame.
#[derive(Debug, Clone)]
pub struct MdfOutput {
    pub echo: AudioFrame,
    pub error: AudioFrame,
}

impl MdfFilter {
    pub fn new(config: MdfConfig) -> Result<Self> {
        config.validate()?;
        let blocks = config.blocks;
        Ok(Self {
            config,
            weights: vec![vec![Complex::new(0.0, 0.0); SPECTRUM_BINS]; blocks],
            taps: vec![vec![0.0; FRAME_SIZE]; blocks],
            history: VecDeque::from(vec![vec![Complex::new(0.0, 0.0); SPECTRUM_BINS]; blocks]),
            power: vec![0.0; SPECTRUM_BINS],
            window_power: vec![0.0; SPECTRUM_BINS],
            primed: false,
            far_prev: vec![0.0; FRAME_SIZE],
            adapt: true,
            fft: FftPair::new(FFT_SIZE),
            block: vec![0.0; FFT_SIZE],
            spectrum: vec![Complex::new(0.0, 0.0); SPECTRUM_BINS],
            accum: vec![Complex::new(0.0, 0.0); SPECTRUM_BINS],
        })
    }

    pub fn config(&self) -> &MdfConfig {
        &self.config
    }

    /// Enable or freeze weight adaptation. Echo estimation and the power
    /// estimate keep running either way; double-talk control uses this to
    /// stop the near-end talker from corrupting the echo model.
    pub fn set_adaptation(&mut self, enabled: bool) {
        self.adapt = enabled;
    }

    /// Filter one far/mic frame pair: predict the echo with the current
    /// weights, subtract it, then adapt on the residual.
    pub fn process(&mut self, far: &AudioFrame, mic: &AudioFrame) -> Result<MdfOutput> {
        for frame in [far, mic] {
            if frame.samples.len() != FRAME_SIZE {
                return Err(Error::InvalidFrame {
                    expected: FRAME_SIZE,
                    got: frame.samples.len(),
                });
            }
        }

        // Far-end analysis over the overlap-save block [previous; current].
        self.block[..FRAME_SIZE].copy_from_slice(&self.far_prev);
        self.block[FRAME_SIZE..].copy_from_slice(&far.samples);
        self.far_prev.copy_from_slice(&far.samples);
        self.fft.forward_real(&self.block, &mut self.spectrum);
        let mut recycled = self.history.pop_back().expect("history is never empty");
        recycled.copy_from_slice(&self.spectrum);
        self.history.push_front(recycled);

        // Echo estimate: sum of partition products, inverse transformed,
        // keeping the valid (second) half of the block.
        self.accum.fill(Complex::new(0.0, 0.0));
        for (w, x) in self.weights.iter().zip(&self.history) {
            for k in 0..SPECTRUM_BINS {
                self.accum[k] += w[k] * x[k];
            }
        }
        self.fft.inverse_real(&self.accum, &mut self.block);
        let echo: Vec<f64> = self.block[FRAME_SIZE..].to_vec();
        let error: Vec<f64> = mic
            .samples
            .iter()
            .zip(&echo)
            .map(|(m, y)| m - y)
            .collect();

        // Per-bin power of the whole far window drives the normalized step,
        // matching the ‖x‖² of time-domain NLMS: a quiet newest block must
        // not shrink the denominator while older blocks still hold speech.
        // The smoothed estimate lags rising power, which would inflate the
        // step beyond its stable range at signal onsets, so the update
        // divides by whichever of the smoothed and instantaneous window
        // powers is larger. Regularization is relative to the mean power so
        // scaling the signals rescales the update identically.
        let alpha = self.config.power_smoothing;
        for (k, (p, w)) in self.power.iter_mut().zip(&mut self.window_power).enumerate() {
            *w = self.history.iter().map(|x| x[k].norm_sqr()).sum();
            *p = if self.primed {
                alpha * *p + (1.0 - alpha) * *w
            } else {
                *w
            };
        }
        self.primed = true;
        if self.adapt {
            // Residual analysis with the first half zeroed, the adjoint of
            // keeping the second half above.
            self.block[..FRAME_SIZE].fill(0.0);
            self.block[FRAME_SIZE..].copy_from_slice(&error);
            self.fft.forward_real(&self.block, &mut self.spectrum);
            let mean_power = self.power.iter().sum::<f64>() / SPECTRUM_BINS as f64;
            let delta = self.config.regularization * mean_power;
            // Deep spectral valleys would otherwise let single bins divide
            // by almost nothing and the weights there inherit error noise
            // with a 1/|X|² tail, so every bin's divisor is floored at a
            // fraction of the frame's mean power.
            let floor = POWER_FLOOR_RATIO * mean_power;
            let mu = self.config.step_size;
            for (partition, x) in self.weights.iter_mut().zip(&self.history) {
                for k in 0..SPECTRUM_BINS {
                    let denom = (self.power[k].max(self.window_power[k]).max(floor) + delta)
                        .max(1e-30);
                    partition[k] += mu * x[k].conj() * self.spectrum[k] / denom;
                }
            }
            self.constrain();
        }

        let index = mic.index;
        Ok(MdfOutput {
            echo: AudioFrame {
                samples: echo,
                index,
            },
            error: AudioFrame {
                samples: error,
                index,
            },
        })
    }

    /// Project every partition back onto causal length-[`FRAME_SIZE`]
    /// supports and refresh the cached taps.
    fn constrain(&mut self) {
        for (partition, taps) in self.weights.iter_mut().zip(&mut self.taps) {
            self.fft.inverse_real(partition, &mut self.block);
            taps.copy_from_slice(&self.block[..FRAME_SIZE]);
            self.block[FRAME_SIZE..].fill(0.0);
            self.fft.forward_real(&self.block, partition);
        }
    }

    /// Per-partition weight energy: the sum of squared magnitudes of the
    /// one-sided frequency-domain weights of each block.
    pub fn block_energies(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().map(|c| c.norm_sqr()).sum())
            .collect()
    }

    /// The modeled impulse response, partitions concatenated.
    pub fn impulse_response(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.blocks * FRAME_SIZE);
        for taps in &self.taps {
            out.extend_from_slice(taps);
        }
        out
    }

    pub fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(Complex::new(0.0, 0.0));
        }
        for t in &mut self.taps {
            t.fill(0.0);
        }
        for x in &mut self.history {
            x.fill(Complex::new(0.0, 0.0));
        }
        self.power.fill(0.0);
        self.window_power.fill(0.0);
        self.primed = false;
        self.far_prev.fill(0.0);
        self.adapt = true;
    }
}

/// Echo return loss enhancement in dB: how much quieter the residual is
/// than the microphone signal. Clamped to +80 dB when the residual is
/// silent.
pub fn erle_db(near: &[f64], error: &[f64]) -> f64 {
    let near_energy: f64 = near.iter().map(|s| s * s).sum();
    let error_energy: f64 = error.iter().map(|s| s * s).sum();
    if error_energy <= 0.0 || near_energy / error_energy >= 1e8 {
        return 80.0;
    }
    10.0 * (near_energy / error_energy).log10()
}
