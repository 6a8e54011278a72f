//! Noise suppression guided by the suppressor network: per-bin speech
//! flags from the network gain, exponentially smoothed presence, a
//! minimum-statistics noise tracker whose updates skip speech-flagged
//! bins, a log-spectral-amplitude gain with a speech-presence exponent,
//! and the final probability-weighted fusion with the network gain.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dsp::{SpectralFrame, SPECTRUM_BINS};
use crate::error::{Error, Result};

/// Euler–Mascheroni constant for the exponential-integral series.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Suppression parameters. Defaults follow common practice for
/// frame-rate 100 Hz streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmlsaConfig {
    /// Presence smoothing factor α_p.
    pub presence_smoothing: f64,
    /// Gain floor in dB (negative).
    pub gain_floor_db: f64,
    /// Decision-directed a-priori SNR smoothing β.
    pub snr_smoothing: f64,
    /// Noise power smoothing for unflagged bins.
    pub noise_smoothing: f64,
    /// Spectral power smoothing feeding the minimum tracker.
    pub power_smoothing: f64,
    /// Frames per minimum-tracking subwindow.
    pub subwindow_frames: usize,
    /// Number of subwindows in the full tracking window.
    pub subwindows: usize,
    /// Bias multiplier applied to the tracked minimum when it caps the
    /// noise estimate.
    pub minima_bias: f64,
}

impl Default for OmlsaConfig {
    fn default() -> Self {
        Self {
            presence_smoothing: 0.9,
            gain_floor_db: -25.0,
            snr_smoothing: 0.92,
            noise_smoothing: 0.95,
            power_smoothing: 0.8,
            subwindow_frames: 10,
            subwindows: 5,
            minima_bias: 1.5,
        }
    }
}

impl OmlsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.presence_smoothing) {
            return Err(Error::InvalidConfig(format!(
                "presence smoothing {} outside [0, 1]",
                self.presence_smoothing
            )));
        }
        if !(-60.0..0.0).contains(&self.gain_floor_db) {
            return Err(Error::InvalidConfig(format!(
                "gain floor {} dB outside (-60, 0)",
                self.gain_floor_db
            )));
        }
        for (name, value) in [
            ("snr smoothing", self.snr_smoothing),
            ("noise smoothing", self.noise_smoothing),
            ("power smoothing", self.power_smoothing),
        ] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::InvalidConfig(format!(
                    "{name} {value} outside [0, 1)"
                )));
            }
        }
        if self.subwindow_frames == 0 || self.subwindows == 0 {
            return Err(Error::InvalidConfig(
                "minimum-tracking windows need at least one frame".into(),
            ));
        }
        if self.minima_bias < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "minima bias {} must be at least 1",
                self.minima_bias
            )));
        }
        Ok(())
    }
}

/// Speech decision per bin: flagged when the guiding gain reaches 0.5.
pub fn noise_flag(gains: &[f64]) -> Vec<bool> {
    gains.iter().map(|&g| g >= 0.5).collect()
}

/// Speech-presence probability source for fusion: per-bin during speech
/// frames, a scalar near-end probability otherwise.
#[derive(Debug, Clone, Copy)]
pub enum PresenceSource<'a> {
    PerBin(&'a [f64]),
    Scalar(f64),
}

/// Streaming suppressor state: one instance per stream.
#[derive(Debug, Clone)]
pub struct OmlsaState {
    config: OmlsaConfig,
    gain_floor: f64,
    presence: Vec<f64>,
    noise: Vec<f64>,
    prev_amplitude_sq: Vec<f64>,
    smoothed_power: Vec<f64>,
    subwindow_min: Vec<f64>,
    window_minima: VecDeque<Vec<f64>>,
    frame_in_subwindow: usize,
    frames: u64,
    clamped_probabilities: u64,
}

impl OmlsaState {
    pub fn new(config: OmlsaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            gain_floor: 10f64.powf(config.gain_floor_db / 20.0),
            presence: vec![0.0; SPECTRUM_BINS],
            noise: vec![0.0; SPECTRUM_BINS],
            prev_amplitude_sq: vec![0.0; SPECTRUM_BINS],
            smoothed_power: vec![0.0; SPECTRUM_BINS],
            subwindow_min: vec![f64::INFINITY; SPECTRUM_BINS],
            window_minima: VecDeque::new(),
            frame_in_subwindow: 0,
            frames: 0,
            clamped_probabilities: 0,
        })
    }

    /// Linear gain floor G_min.
    pub fn gain_floor(&self) -> f64 {
        self.gain_floor
    }

    /// Smoothed per-bin speech presence p̂′.
    pub fn presence(&self) -> &[f64] {
        &self.presence
    }

    /// How many fusion probabilities had to be clamped into [0, 1].
    pub fn clamped_probabilities(&self) -> u64 {
        self.clamped_probabilities
    }

    /// Exponential presence smoothing: p̂′ ← α·p̂′ + (1−α)·I.
    pub fn presence_smooth(&mut self, flags: &[bool]) {
        assert_eq!(flags.len(), SPECTRUM_BINS);
        let a = self.config.presence_smoothing;
        for (p, &flag) in self.presence.iter_mut().zip(flags) {
            *p = a * *p + (1.0 - a) * f64::from(u8::from(flag));
        }
    }

    fn update_noise(&mut self, power: &[f64], flags: &[bool]) {
        let cfg = self.config;
        let first = self.frames == 0;
        for k in 0..SPECTRUM_BINS {
            self.smoothed_power[k] = if first {
                power[k]
            } else {
                cfg.power_smoothing * self.smoothed_power[k]
                    + (1.0 - cfg.power_smoothing) * power[k]
            };
            self.subwindow_min[k] = self.subwindow_min[k].min(self.smoothed_power[k]);
            if first {
                self.noise[k] = if flags[k] { 1e-12 } else { power[k].max(1e-12) };
            } else if !flags[k] {
                self.noise[k] = cfg.noise_smoothing * self.noise[k]
                    + (1.0 - cfg.noise_smoothing) * power[k];
            }
        }
        self.frame_in_subwindow += 1;
        if self.frame_in_subwindow >= cfg.subwindow_frames {
            self.frame_in_subwindow = 0;
            self.window_minima.push_back(self.subwindow_min.clone());
            if self.window_minima.len() > cfg.subwindows {
                self.window_minima.pop_front();
            }
            self.subwindow_min = self.smoothed_power.clone();
        }
        // The tracked minimum caps a noise estimate that went stale while
        // its bin stayed speech-flagged.
        for k in 0..SPECTRUM_BINS {
            let mut floor = self.subwindow_min[k];
            for sub in &self.window_minima {
                floor = floor.min(sub[k]);
            }
            if floor.is_finite() {
                self.noise[k] = self.noise[k].min(floor * cfg.minima_bias);
            }
            self.noise[k] = self.noise[k].max(1e-12);
        }
    }

    /// One suppression step: flags from the guiding gain, presence
    /// smoothing, guarded noise update, and the spectral gain
    /// G_o = G_H1^p · G_min^(1−p) clamped to [G_min, 1].
    pub fn omlsa_gain(&mut self, spectrum: &SpectralFrame, guidance: &[f64]) -> Vec<f64> {
        assert_eq!(guidance.len(), SPECTRUM_BINS);
        let flags = noise_flag(guidance);
        self.presence_smooth(&flags);
        let power: Vec<f64> = spectrum.bins.iter().map(|c| c.norm_sqr()).collect();
        self.update_noise(&power, &flags);

        let beta = self.config.snr_smoothing;
        let xi_floor = 10f64.powf(-15.0 / 10.0);
        let mut gains = vec![0.0; SPECTRUM_BINS];
        for k in 0..SPECTRUM_BINS {
            let posterior = (power[k] / self.noise[k]).min(1e8);
            let xi = (beta * self.prev_amplitude_sq[k] / self.noise[k]
                + (1.0 - beta) * (posterior - 1.0).max(0.0))
            .max(xi_floor);
            let v = (posterior * xi / (1.0 + xi)).clamp(1e-10, 700.0);
            let lsa = (xi / (1.0 + xi)) * (0.5 * expint_e1(v)).exp();
            let lsa = lsa.min(1.0);
            self.prev_amplitude_sq[k] = (lsa * lsa) * power[k];
            let p = self.presence[k];
            gains[k] = (lsa.powf(p) * self.gain_floor.powf(1.0 - p))
                .clamp(self.gain_floor, 1.0);
        }
        self.frames += 1;
        gains
    }

    /// Final fusion G_f = p·G_o + (1−p)·G_n per bin. Probabilities
    /// outside [0, 1] are clamped and counted.
    pub fn fuse_gains(&mut self, p: PresenceSource, g_o: &[f64], g_n: &[f64]) -> Vec<f64> {
        assert_eq!(g_o.len(), SPECTRUM_BINS);
        assert_eq!(g_n.len(), SPECTRUM_BINS);
        let mut clamp = |value: f64| -> f64 {
            if !(0.0..=1.0).contains(&value) {
                self.clamped_probabilities += 1;
                value.clamp(0.0, 1.0)
            } else {
                value
            }
        };
        match p {
            PresenceSource::Scalar(value) => {
                let p = clamp(value);
                g_o.iter()
                    .zip(g_n)
                    .map(|(&o, &n)| p * o + (1.0 - p) * n)
                    .collect()
            }
            PresenceSource::PerBin(values) => {
                assert_eq!(values.len(), SPECTRUM_BINS);
                values
                    .iter()
                    .zip(g_o.iter().zip(g_n))
                    .map(|(&v, (&o, &n))| {
                        let p = clamp(v);
                        p * o + (1.0 - p) * n
                    })
                    .collect()
            }
        }
    }

    /// Full per-frame stage: suppression gain, then fusion with the
    /// network gain. Speech frames (near probability > 0.5) fuse with the
    /// per-bin smoothed presence, others with the scalar probability.
    pub fn process(
        &mut self,
        spectrum: &SpectralFrame,
        guidance: &[f64],
        near_speech_probability: f64,
    ) -> Vec<f64> {
        let g_o = self.omlsa_gain(spectrum, guidance);
        if near_speech_probability > 0.5 {
            let presence = self.presence.clone();
            self.fuse_gains(PresenceSource::PerBin(&presence), &g_o, guidance)
        } else {
            self.fuse_gains(PresenceSource::Scalar(near_speech_probability), &g_o, guidance)
        }
    }
}

/// Exponential integral E₁(x) for x > 0: power series below 1, a rational
/// approximation above.
pub fn expint_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 requires a positive argument");
    if x < 1.0 {
        let mut sum = -EULER_GAMMA - x.ln();
        let mut power_over_factorial = 1.0f64;
        for n in 1..=60 {
            power_over_factorial *= x / n as f64;
            let term = power_over_factorial / n as f64;
            sum += if n % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        sum
    } else {
        let a = [8.573_328_740_1, 18.059_016_973, 8.634_760_892_5, 0.267_773_734_3];
        let b = [9.573_322_345_4, 25.632_956_148_6, 21.099_653_082_7, 3.958_496_922_8];
        let num = ((((x + a[0]) * x + a[1]) * x + a[2]) * x) + a[3];
        let den = ((((x + b[0]) * x + b[1]) * x + b[2]) * x) + b[3];
        (num / den) * (-x).exp() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{frames_of, StftAnalyzer, FRAME_SIZE};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn speech_flag_is_inclusive_at_the_half_gain_boundary() {
        let mut gains = vec![0.0; SPECTRUM_BINS];
        gains[0] = 0.5;
        gains[1] = 0.49;
        gains[2] = 1.0;
        let flags = noise_flag(&gains);
        assert!(flags[0]);
        assert!(!flags[1]);
        assert!(flags[2]);
        assert!(!flags[3]);
    }

    #[test]
    fn presence_smoothing_follows_the_recursion() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let flags = vec![true; SPECTRUM_BINS];
        state.presence_smooth(&flags);
        assert!((state.presence()[0] - 0.1).abs() < 1e-15);

        let mut residual = 1.0 - 0.1;
        for _ in 0..20 {
            state.presence_smooth(&flags);
            residual *= 0.9;
            assert!((1.0 - state.presence()[0] - residual).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_smoothing_copies_the_flags() {
        let config = OmlsaConfig {
            presence_smoothing: 0.0,
            ..OmlsaConfig::default()
        };
        let mut state = OmlsaState::new(config).unwrap();
        let mut flags = vec![false; SPECTRUM_BINS];
        flags[7] = true;
        state.presence_smooth(&flags);
        assert_eq!(state.presence()[7], 1.0);
        assert_eq!(state.presence()[8], 0.0);
    }

    #[test]
    fn presence_stays_a_probability_for_any_flag_sequence() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let flags: Vec<bool> = (0..SPECTRUM_BINS).map(|_| rng.gen_bool(0.5)).collect();
            state.presence_smooth(&flags);
            assert!(state
                .presence()
                .iter()
                .all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn fusion_hits_both_endpoints_and_the_midpoint() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let g_o = vec![0.2; SPECTRUM_BINS];
        let g_n = vec![0.8; SPECTRUM_BINS];
        let fused = state.fuse_gains(PresenceSource::Scalar(1.0), &g_o, &g_n);
        assert_eq!(fused, g_o);
        let fused = state.fuse_gains(PresenceSource::Scalar(0.0), &g_o, &g_n);
        assert_eq!(fused, g_n);
        let fused = state.fuse_gains(PresenceSource::Scalar(0.5), &g_o, &g_n);
        assert!(fused.iter().all(|&g| (g - 0.5).abs() < 1e-15));
        assert_eq!(state.clamped_probabilities(), 0);
    }

    #[test]
    fn out_of_range_probabilities_are_clamped_and_counted() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let g_o = vec![0.2; SPECTRUM_BINS];
        let g_n = vec![0.8; SPECTRUM_BINS];
        let fused = state.fuse_gains(PresenceSource::Scalar(1.5), &g_o, &g_n);
        assert_eq!(fused, g_o);
        assert_eq!(state.clamped_probabilities(), 1);
        let mut per_bin = vec![0.5; SPECTRUM_BINS];
        per_bin[3] = -0.2;
        per_bin[4] = 2.0;
        state.fuse_gains(PresenceSource::PerBin(&per_bin), &g_o, &g_n);
        assert_eq!(state.clamped_probabilities(), 3);
    }

    #[test]
    fn fusion_stays_between_its_inputs() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g_o: Vec<f64> = (0..SPECTRUM_BINS).map(|_| rng.gen_range(0.05..1.0)).collect();
            let g_n: Vec<f64> = (0..SPECTRUM_BINS).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p: Vec<f64> = (0..SPECTRUM_BINS).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fused = state.fuse_gains(PresenceSource::PerBin(&p), &g_o, &g_n);
            for k in 0..SPECTRUM_BINS {
                let lo = g_o[k].min(g_n[k]) - 1e-12;
                let hi = g_o[k].max(g_n[k]) + 1e-12;
                assert!(fused[k] >= lo && fused[k] <= hi);
            }
        }
    }

    #[test]
    fn exponential_integral_matches_reference_values() {
        // Reference values from standard tables.
        for (x, expected) in [
            (0.1, 1.822_923_958),
            (0.5, 0.559_773_595),
            (1.0, 0.219_383_934),
            (2.0, 0.048_900_511),
            (5.0, 0.001_148_296),
        ] {
            let got = expint_e1(x);
            assert!(
                ((got - expected) / expected).abs() < 1e-5,
                "E1({x}) = {got}, expected {expected}"
            );
        }
    }

    fn noise_spectra(frames: usize, seed: u64) -> Vec<SpectralFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..frames * FRAME_SIZE)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let mut stft = StftAnalyzer::new();
        frames_of(&samples)
            .iter()
            .map(|f| stft.process(f).unwrap())
            .collect()
    }

    #[test]
    fn noise_classified_bins_settle_exactly_on_the_gain_floor() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let guidance = vec![0.1; SPECTRUM_BINS];
        let floor = state.gain_floor();
        for spectrum in noise_spectra(50, 21) {
            let g_o = state.omlsa_gain(&spectrum, &guidance);
            assert!(g_o.iter().all(|&g| (floor..=1.0).contains(&g)));
        }
        let spectra = noise_spectra(1, 22);
        let g_o = state.omlsa_gain(&spectra[0], &guidance);
        // Presence has decayed to ~0.9^50: the exponent collapses onto G_min.
        for &g in &g_o {
            assert!((g - floor).abs() < 1e-3, "gain {g} vs floor {floor}");
        }
    }

    #[test]
    fn stationary_noise_converges_toward_the_floor_within_three_db() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let guidance = vec![0.2; SPECTRUM_BINS];
        let spectra = noise_spectra(260, 23);
        let mut final_gains = Vec::new();
        for (t, spectrum) in spectra.iter().enumerate() {
            let g_o = state.omlsa_gain(spectrum, &guidance);
            if t >= 200 {
                final_gains.extend(g_o);
            }
        }
        let floor_db = state.config.gain_floor_db;
        let mean_db = 20.0
            * (final_gains.iter().sum::<f64>() / final_gains.len() as f64).log10();
        assert!(
            mean_db < floor_db + 3.0,
            "mean gain {mean_db} dB vs floor {floor_db} dB"
        );
    }

    #[test]
    fn a_guided_tone_bin_keeps_a_near_unity_gain() {
        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let tone_bin = 40usize;
        let freq = tone_bin as f64 * 50.0;
        let samples: Vec<f64> = (0..120 * FRAME_SIZE)
            .map(|n| 0.3 * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin())
            .collect();
        let mut stft = StftAnalyzer::new();
        let mut guidance = vec![0.0; SPECTRUM_BINS];
        for k in tone_bin.saturating_sub(2)..=tone_bin + 2 {
            guidance[k] = 1.0;
        }
        let mut last = Vec::new();
        for frame in frames_of(&samples) {
            let spectrum = stft.process(&frame).unwrap();
            last = state.omlsa_gain(&spectrum, &guidance);
        }
        assert!(
            last[tone_bin] >= 0.9,
            "tone-bin gain {} after convergence",
            last[tone_bin]
        );
    }

    #[test]
    fn noise_only_stage_output_drops_at_least_ten_db_after_two_seconds() {
        use crate::dsp::MelFilterBank;
        use crate::res::target_band_gains;

        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let mel = MelFilterBank::new();
        let mut silent_stft = StftAnalyzer::new();
        let silence = crate::dsp::AudioFrame::zeros(0);
        let spectra = noise_spectra(260, 31);
        let mut input_power = 0.0;
        let mut output_power = 0.0;
        for (t, spectrum) in spectra.iter().enumerate() {
            let silent_spec = silent_stft.process(&silence).unwrap();
            let targets = target_band_gains(&silent_spec, spectrum, &mel);
            let guidance = mel.interpolate_gains(&targets.gains);
            let fused = state.process(spectrum, &guidance, 0.0);
            if t >= 200 {
                for k in 0..SPECTRUM_BINS {
                    let p = spectrum.bins[k].norm_sqr();
                    input_power += p;
                    output_power += fused[k] * fused[k] * p;
                }
            }
        }
        let reduction = 10.0 * (input_power / output_power).log10();
        assert!(reduction >= 10.0, "noise reduction {reduction} dB");
    }

    #[test]
    fn clean_speech_loses_less_than_three_db_through_the_stage() {
        use crate::dsp::MelFilterBank;
        use crate::res::target_band_gains;

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Speech-like input: harmonics under a syllabic on/off envelope.
        let samples: Vec<f64> = (0..400 * FRAME_SIZE)
            .map(|n| {
                let t = n as f64 / 16000.0;
                let envelope = if (t * 2.5) as usize % 2 == 0 { 1.0 } else { 0.0 };
                let voiced = (2.0 * std::f64::consts::PI * 180.0 * t).sin()
                    + 0.6 * (2.0 * std::f64::consts::PI * 360.0 * t).sin()
                    + 0.3 * (2.0 * std::f64::consts::PI * 900.0 * t).sin();
                0.2 * envelope * voiced + 1e-4 * rng.gen_range(-1.0..1.0)
            })
            .collect();

        let mut state = OmlsaState::new(OmlsaConfig::default()).unwrap();
        let mel = MelFilterBank::new();
        let mut stft = StftAnalyzer::new();
        let mut input_power = 0.0;
        let mut output_power = 0.0;
        for frame in frames_of(&samples) {
            let spectrum = stft.process(&frame).unwrap();
            let targets = target_band_gains(&spectrum, &spectrum, &mel);
            let guidance = mel.interpolate_gains(&targets.gains);
            let fused = state.process(&spectrum, &guidance, 1.0);
            let frame_power: f64 = spectrum.bins.iter().map(|c| c.norm_sqr()).sum();
            if crate::res::frame_rms_dbfs(&frame.samples) > -50.0 {
                input_power += frame_power;
                output_power += spectrum
                    .bins
                    .iter()
                    .zip(&fused)
                    .map(|(c, &g)| g * g * c.norm_sqr())
                    .sum::<f64>();
            }
        }
        let loss = 10.0 * (input_power / output_power).log10();
        assert!(loss <= 3.0, "active-speech attenuation {loss} dB");
    }

    #[test]
    fn rejects_out_of_range_configs() {
        let bad = OmlsaConfig {
            presence_smoothing: 1.5,
            ..OmlsaConfig::default()
        };
        assert!(OmlsaState::new(bad).is_err());
        let bad = OmlsaConfig {
            gain_floor_db: 5.0,
            ..OmlsaConfig::default()
        };
        assert!(OmlsaState::new(bad).is_err());
        let bad = OmlsaConfig {
            subwindows: 0,
            ..OmlsaConfig::default()
        };
        assert!(OmlsaState::new(bad).is_err());
    }
}
