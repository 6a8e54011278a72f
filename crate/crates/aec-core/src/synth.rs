//! Synthetic corpus generation: bootstrapped speech/noise material,
//! image-source room impulse responses, nonlinear far-end processing,
//! ratio-controlled mixing, delay injection, and labeled dataset emission.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, frames_of, MelFilterBank, StftAnalyzer, FRAME_SIZE, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mdf::{MdfConfig, MdfFilter};
use crate::res::{target_band_gains, target_dtd, BandGains, DtdLabel, DtdThresholds};
use crate::wav::{read_wav, write_wav_pcm16};

/// Default clip length in seconds.
pub const CLIP_SECONDS: f64 = 4.0;
/// Activity gate for power measurements, dB relative to full scale.
pub const ACTIVITY_THRESHOLD_DBFS: f64 = -50.0;
/// Speed of sound used by the room simulator, m/s.
const SOUND_SPEED: f64 = 343.0;

/// Deterministic per-item seed stream.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Far-end nonlinear processing applied before the echo path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    None,
    Clip,
    MemorylessSigmoid,
}

impl Nonlinearity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::Clip => "clip",
            Nonlinearity::MemorylessSigmoid => "memoryless-sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Nonlinearity::None,
            "clip" => Nonlinearity::Clip,
            "memoryless-sigmoid" => Nonlinearity::MemorylessSigmoid,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown nonlinearity {s:?}; expected none, clip, or memoryless-sigmoid"
                )))
            }
        })
    }
}

/// Apply the loudspeaker-path distortion. Clipping flattens at 0.8 of the
/// signal's own peak; the sigmoid is unit-gain for small amplitudes.
pub fn apply_nonlinearity(x: &[f64], kind: Nonlinearity) -> Vec<f64> {
    match kind {
        Nonlinearity::None => x.to_vec(),
        Nonlinearity::Clip => {
            let ceiling = 0.8 * x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            x.iter().map(|&v| v.clamp(-ceiling, ceiling)).collect()
        }
        Nonlinearity::MemorylessSigmoid => x
            .iter()
            .map(|&v| 0.5 * (2.0 / (1.0 + (-4.0 * v).exp()) - 1.0))
            .collect(),
    }
}

fn active_power(signal: &[f64], threshold_dbfs: f64) -> Option<f64> {
    let threshold_sq = 10f64.powf(threshold_dbfs / 10.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for frame in signal.chunks(FRAME_SIZE) {
        let mean_sq = frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64;
        if mean_sq > threshold_sq {
            sum += mean_sq * frame.len() as f64;
            count += frame.len();
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Scale the interferer so the target-to-interferer power ratio over the
/// active regions is `ratio_db`. An infinite ratio yields silence.
pub fn mix_at_ratio(target: &[f64], interferer: &[f64], ratio_db: f64) -> Result<Vec<f64>> {
    if ratio_db.is_infinite() && ratio_db > 0.0 {
        return Ok(vec![0.0; interferer.len()]);
    }
    let p_target = active_power(target, ACTIVITY_THRESHOLD_DBFS)
        .ok_or_else(|| Error::Synthesis("mixing target has no active frames".into()))?;
    let p_interferer = active_power(interferer, ACTIVITY_THRESHOLD_DBFS)
        .ok_or_else(|| Error::Synthesis("interferer has no active frames".into()))?;
    let scale = (p_target / (p_interferer * 10f64.powf(ratio_db / 10.0))).sqrt();
    Ok(interferer.iter().map(|&v| v * scale).collect())
}

/// Active-region power ratio of two emitted tracks in dB. Each track is
/// gated relative to its own loudest frame so the measurement is
/// level-independent. `None` when either track is silent.
pub fn measure_ratio_db(target: &[f64], interferer: &[f64]) -> Option<f64> {
    let gated = |signal: &[f64]| -> Option<f64> {
        let peak_sq = signal
            .chunks(FRAME_SIZE)
            .map(|f| f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64)
            .fold(0.0f64, f64::max);
        if peak_sq <= 0.0 {
            return None;
        }
        let threshold = 10.0 * peak_sq.log10() - 45.0;
        active_power(signal, threshold)
    };
    Some(10.0 * (gated(target)? / gated(interferer)?).log10())
}

/// Image-source impulse response for a random shoebox room, direct path
/// normalized to unit amplitude at position 0.
pub fn generate_rir(rng: &mut ChaCha8Rng, t60: f64) -> Vec<f64> {
    let lx = rng.gen_range(3.0..8.0);
    let ly = rng.gen_range(3.0..8.0);
    let lz = rng.gen_range(2.5..4.0);
    let room = [lx, ly, lz];
    let mut src = [0.0f64; 3];
    let mut mic = [0.0f64; 3];
    for d in 0..3 {
        mic[d] = rng.gen_range(0.5..room[d] - 0.5);
    }
    // Loudspeaker and talker sit close to the microphone, as on a device,
    // so the direct path dominates the reverberant tail.
    loop {
        let mut r2 = 0.0f64;
        for d in 0..3 {
            let off = rng.gen_range(-0.8..0.8);
            src[d] = (mic[d] + off).clamp(0.3, room[d] - 0.3);
            r2 += (src[d] - mic[d]) * (src[d] - mic[d]);
        }
        if (0.15..=0.8).contains(&r2.sqrt()) {
            break;
        }
    }

    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    let absorption = (0.161 * volume / (surface * t60)).clamp(0.01, 0.95);
    let beta = (1.0 - absorption).sqrt();

    let fs = SAMPLE_RATE as f64;
    let length = (t60 * fs).round() as usize;
    let mut h = vec![0.0f64; length.max(FRAME_SIZE)];
    let direct_dist = dist(&src, &mic);
    let direct_delay = (direct_dist / SOUND_SPEED * fs).round() as isize;
    let radius = SOUND_SPEED * t60 + direct_dist;

    let ranges: Vec<std::ops::RangeInclusive<isize>> = (0..3)
        .map(|d| {
            let n = (radius / (2.0 * room[d])).ceil() as isize;
            -n..=n
        })
        .collect();
    for rx in ranges[0].clone() {
        for ry in ranges[1].clone() {
            for rz in ranges[2].clone() {
                for p in 0..8u8 {
                    let parity = [p & 1, (p >> 1) & 1, (p >> 2) & 1];
                    let mut pos = [0.0; 3];
                    let mut reflections = 0i64;
                    for d in 0..3 {
                        let q = parity[d] as f64;
                        let r = [rx, ry, rz][d] as f64;
                        pos[d] = (1.0 - 2.0 * q) * src[d] + 2.0 * r * room[d];
                        reflections += ([rx, ry, rz][d] - parity[d] as isize).abs() as i64
                            + [rx, ry, rz][d].abs() as i64;
                    }
                    let d_img = dist(&pos, &mic);
                    if d_img > radius {
                        continue;
                    }
                    let idx = (d_img / SOUND_SPEED * fs).round() as isize - direct_delay;
                    if idx < 0 || idx as usize >= h.len() {
                        continue;
                    }
                    h[idx as usize] += beta.powi(reflections as i32) / d_img.max(0.1);
                }
            }
        }
    }
    let direct = h[0];
    if direct > 0.0 {
        for v in &mut h {
            *v /= direct;
        }
    }
    h
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A pool of room impulse responses with reverberation times spanning the
/// configured range.
pub fn generate_rir_pool(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t60 = rng.gen_range(0.2..0.6);
            generate_rir(&mut rng, t60)
        })
        .collect()
}

// --- Bootstrap corpora -----------------------------------------------------

struct Resonator {
    b1: f64,
    b2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let fs = SAMPLE_RATE as f64;
        let r = (-std::f64::consts::PI * bandwidth / fs).exp();
        let omega = 2.0 * std::f64::consts::PI * freq / fs;
        Self {
            b1: 2.0 * r * omega.cos(),
            b2: -r * r,
            gain: (1.0 - r) * (1.0 - r),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.b1 * self.y1 + self.b2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn synthesize_voice(rng: &mut ChaCha8Rng, seconds: f64, f0: f64, formants: [f64; 3]) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let total = (seconds * fs) as usize;
    let mut out = vec![0.0f64; total];
    let mut pos = 0usize;
    while pos < total {
        // Alternate voiced syllables and silent gaps, with occasional
        // unvoiced bursts standing in for consonants.
        let gap = (rng.gen_range(0.06..0.3) * fs) as usize;
        pos += gap;
        if pos >= total {
            break;
        }
        if rng.gen_bool(0.4) {
            let burst_len = ((rng.gen_range(0.03..0.09) * fs) as usize).min(total - pos);
            let mut res = Resonator::new(rng.gen_range(2200.0..5200.0), rng.gen_range(500.0..1200.0));
            let level = rng.gen_range(0.03..0.12);
            for s in out[pos..pos + burst_len].iter_mut() {
                *s = level * res.step(rng.gen_range(-1.0..1.0));
            }
            pos += burst_len;
            if pos >= total {
                break;
            }
        }
        let seg_len = ((rng.gen_range(0.12..0.35) * fs) as usize).min(total - pos);
        let mut resonators: Vec<Resonator> = formants
            .iter()
            .map(|&f| Resonator::new(f * rng.gen_range(0.85..1.15), rng.gen_range(80.0..130.0)))
            .collect();
        // Glottal source with drifting pitch, per-pulse jitter and shimmer,
        // so no two stretches of the waveform repeat exactly.
        let mut period = fs / (f0 * rng.gen_range(0.85..1.15));
        let drift = rng.gen_range(0.997..1.003);
        let mut next_pulse = 0.0f64;
        let mut segment = vec![0.0f64; seg_len];
        for (n, s) in segment.iter_mut().enumerate() {
            let mut v = rng.gen_range(-0.02..0.02);
            if n as f64 >= next_pulse {
                v += rng.gen_range(0.75..1.25);
                next_pulse += period * rng.gen_range(0.95..1.05);
                period *= drift;
            }
            for res in &mut resonators {
                v = res.step(v);
            }
            *s = v;
        }
        // Fade edges to avoid clicks, then set a per-syllable level.
        let fade = (0.02 * fs) as usize;
        for n in 0..fade.min(seg_len) {
            let w = n as f64 / fade as f64;
            segment[n] *= w;
            segment[seg_len - 1 - n] *= w;
        }
        let peak = segment.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if peak > 0.0 {
            let level = rng.gen_range(0.15..0.5);
            let scale = level / peak;
            for s in &mut segment {
                *s *= scale;
            }
        }
        out[pos..pos + seg_len].copy_from_slice(&segment);
        pos += seg_len;
    }
    out
}

/// Write a tiny synthetic speech corpus: `speakers` voices with fixed
/// formant identities, `clips_per_speaker` files each. Returns the paths.
pub fn bootstrap_speech_corpus(
    dir: &Path,
    speakers: usize,
    clips_per_speaker: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    for s in 0..speakers {
        let f0 = rng.gen_range(95.0..230.0);
        let formants = [
            rng.gen_range(300.0..800.0),
            rng.gen_range(900.0..2200.0),
            rng.gen_range(2300.0..3000.0),
        ];
        for c in 0..clips_per_speaker {
            let samples = synthesize_voice(&mut rng, 6.0, f0, formants);
            let path = dir.join(format!("speech_s{s:02}_c{c:02}.wav"));
            write_wav_pcm16(&path, &samples)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Write a tiny colored-noise corpus (one-pole lowpassed white noise with
/// slow amplitude modulation). Returns the paths.
pub fn bootstrap_noise_corpus(dir: &Path, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let total = (6.0 * fs) as usize;
    let mut paths = Vec::new();
    for i in 0..count {
        let pole = rng.gen_range(0.8..0.99);
        let mod_rate = rng.gen_range(0.1..0.5);
        let mod_depth = rng.gen_range(0.0..0.6);
        let mut y = 0.0;
        let mut samples = Vec::with_capacity(total);
        for n in 0..total {
            let white: f64 = rng.gen_range(-1.0..1.0);
            y = pole * y + (1.0 - pole) * white;
            let envelope =
                1.0 - mod_depth * 0.5 * (1.0 + (2.0 * std::f64::consts::PI * mod_rate * n as f64 / fs).sin());
            samples.push(y * envelope);
        }
        let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if peak > 0.0 {
            for s in &mut samples {
                *s *= 0.3 / peak;
            }
        }
        let path = dir.join(format!("noise_n{i:02}.wav"));
        write_wav_pcm16(&path, &samples)?;
        paths.push(path);
    }
    Ok(paths)
}

// --- Corpus loading ---------------------------------------------------------

/// One loaded corpus file with optional speaker identity parsed from a
/// `_sNN` filename component.
#[derive(Clone)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub speaker: Option<String>,
    pub samples: Vec<f64>,
}

#[derive(Clone)]
pub struct AudioCorpus {
    pub entries: Vec<CorpusEntry>,
}

fn parse_speaker(name: &str) -> Option<String> {
    for part in name.split('_') {
        if let Some(rest) = part.strip_prefix('s') {
            let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
            if !digits.is_empty() && digits.len() == rest.trim_end_matches(".wav").len() {
                return Some(format!("s{digits}"));
            }
        }
    }
    None
}

/// Load every WAV in a directory as 16 kHz mono float samples.
pub fn load_corpus(dir: &Path, minimum: usize) -> Result<AudioCorpus> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read corpus dir {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    paths.sort();
    if paths.len() < minimum {
        return Err(Error::Data(format!(
            "corpus {} holds {} WAV files but at least {} are required \
             (bootstrap one with the synth command)",
            dir.display(),
            paths.len(),
            minimum
        )));
    }
    let entries = paths
        .into_iter()
        .map(|path| {
            let samples = read_wav(&path)?;
            let speaker = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(parse_speaker);
            Ok(CorpusEntry {
                path,
                speaker,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AudioCorpus { entries })
}

// --- Clip synthesis ----------------------------------------------------------

/// Mixing recipe for one clip. Infinite SER or SNR removes that component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub ser_db: f64,
    pub snr_db: f64,
    pub delay_ms: f64,
    pub rir_echo: usize,
    pub rir_near: usize,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn delay_frames(&self) -> usize {
        (self.delay_ms / 10.0).round() as usize
    }

    pub fn validate(&self, max_categories: usize) -> Result<()> {
        let frames = self.delay_ms / 10.0;
        if self.delay_ms < 0.0 || (frames - frames.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "delay {} ms is not a multiple of 10 ms",
                self.delay_ms
            )));
        }
        if self.delay_frames() >= max_categories {
            return Err(Error::InvalidConfig(format!(
                "delay {} ms exceeds the representable {} categories",
                self.delay_ms, max_categories
            )));
        }
        Ok(())
    }
}

/// All tracks and labels for one synthesized scenario.
pub struct LabeledClip {
    pub far: Vec<f64>,
    pub mic: Vec<f64>,
    pub near: Vec<f64>,
    pub echo: Vec<f64>,
    pub noise: Vec<f64>,
    pub delay_frames: usize,
    pub dtd: Vec<DtdLabel>,
    pub band_gains: Vec<BandGains>,
}

fn shift_right(signal: &[f64], by: usize) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    if by < signal.len() {
        out[by..].copy_from_slice(&signal[..signal.len() - by]);
    }
    out
}

fn pick_chunk(rng: &mut ChaCha8Rng, samples: &[f64], len: usize) -> Vec<f64> {
    if samples.is_empty() {
        return vec![0.0; len];
    }
    let mut chunk = Vec::with_capacity(len);
    let start = if samples.len() > len {
        rng.gen_range(0..samples.len() - len)
    } else {
        0
    };
    let mut i = start;
    while chunk.len() < len {
        chunk.push(samples[i % samples.len()]);
        i += 1;
    }
    chunk
}

fn normalize_peak(signal: &mut [f64], peak: f64) -> bool {
    let current = signal.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if current <= 0.0 {
        return false;
    }
    let scale = peak / current;
    for s in signal.iter_mut() {
        *s *= scale;
    }
    true
}

/// The error signal an echo canceller produces when fed the far end
/// aligned at the true delay. Labels and training features both come from
/// this exact procedure so they stay consistent.
pub fn true_delay_error_track(far: &[f64], mic: &[f64], delay_frames: usize) -> Result<Vec<f64>> {
    let delayed_far = shift_right(far, delay_frames * FRAME_SIZE);
    let mut filter = MdfFilter::new(MdfConfig::default())?;
    let far_frames = frames_of(&delayed_far);
    let mic_frames = frames_of(mic);
    let mut error = Vec::with_capacity(mic.len());
    for (ff, mf) in far_frames.iter().zip(&mic_frames) {
        let out = filter.process(ff, mf)?;
        error.extend_from_slice(&out.error.samples);
    }
    Ok(error)
}

/// Synthesize one labeled clip: reverberant near speech plus nonlinearly
/// processed, reverberated, delayed echo plus noise, mixed at the
/// configured ratios.
pub fn synthesize_clip(
    cfg: &ScenarioConfig,
    speech: &AudioCorpus,
    noise: &AudioCorpus,
    rirs: &[Vec<f64>],
    clip_seconds: f64,
) -> Result<LabeledClip> {
    cfg.validate(usize::MAX)?;
    if speech.entries.is_empty() || noise.entries.is_empty() {
        return Err(Error::Data("speech and noise corpora must be nonempty".into()));
    }
    if cfg.rir_echo >= rirs.len() || cfg.rir_near >= rirs.len() {
        return Err(Error::Data(format!(
            "impulse-response ids {}/{} outside the pool of {}",
            cfg.rir_echo,
            cfg.rir_near,
            rirs.len()
        )));
    }
    let len = (clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let far_idx = rng.gen_range(0..speech.entries.len());
    let mut near_idx = rng.gen_range(0..speech.entries.len());
    for _ in 0..8 {
        let same_speaker = match (
            &speech.entries[far_idx].speaker,
            &speech.entries[near_idx].speaker,
        ) {
            (Some(a), Some(b)) => a == b,
            _ => far_idx == near_idx,
        };
        if !same_speaker {
            break;
        }
        near_idx = rng.gen_range(0..speech.entries.len());
    }
    let noise_idx = rng.gen_range(0..noise.entries.len());

    let mut far = pick_chunk(&mut rng, &speech.entries[far_idx].samples, len);
    let mut near_dry = pick_chunk(&mut rng, &speech.entries[near_idx].samples, len);
    let noise_chunk = pick_chunk(&mut rng, &noise.entries[noise_idx].samples, len);
    if !normalize_peak(&mut far, 0.5) {
        return Err(Error::Synthesis("far-end speech chunk is silent".into()));
    }
    if !normalize_peak(&mut near_dry, 0.5) {
        return Err(Error::Synthesis("near-end speech chunk is silent".into()));
    }

    let mut echo = fft_convolve(&apply_nonlinearity(&far, cfg.nonlinearity), &rirs[cfg.rir_echo]);
    echo.truncate(len);
    let echo = shift_right(&echo, cfg.delay_frames() * FRAME_SIZE);
    let mut near = fft_convolve(&near_dry, &rirs[cfg.rir_near]);
    near.truncate(len);

    let echo = mix_at_ratio(&near, &echo, cfg.ser_db)?;
    let noise_scaled = mix_at_ratio(&near, &noise_chunk, cfg.snr_db)?;
    let mut mic: Vec<f64> = (0..len)
        .map(|n| near[n] + echo[n] + noise_scaled[n])
        .collect();

    // Keep every mic-side track inside full scale with one joint factor so
    // the configured ratios survive exactly.
    let mut near = near;
    let mut echo = echo;
    let mut noise_scaled = noise_scaled;
    let peak = mic
        .iter()
        .chain(&near)
        .chain(&echo)
        .chain(&noise_scaled)
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.99 {
        let s = 0.99 / peak;
        for track in [&mut mic, &mut near, &mut echo, &mut noise_scaled] {
            for v in track.iter_mut() {
                *v *= s;
            }
        }
    }

    let error = true_delay_error_track(&far, &mic, cfg.delay_frames())?;
    let thresholds = DtdThresholds::default();
    let mel = MelFilterBank::new();
    let mut near_stft = StftAnalyzer::new();
    let mut error_stft = StftAnalyzer::new();
    let far_frames = frames_of(&far);
    let near_frames = frames_of(&near);
    let error_frames = frames_of(&error);
    let mut dtd = Vec::with_capacity(far_frames.len());
    let mut band_gains = Vec::with_capacity(far_frames.len());
    for ((ff, nf), ef) in far_frames.iter().zip(&near_frames).zip(&error_frames) {
        dtd.push(target_dtd(ff, nf, &thresholds));
        let near_spec = near_stft.process(nf)?;
        let error_spec = error_stft.process(ef)?;
        band_gains.push(target_band_gains(&near_spec, &error_spec, &mel));
    }

    Ok(LabeledClip {
        far,
        mic,
        near,
        echo,
        noise: noise_scaled,
        delay_frames: cfg.delay_frames(),
        dtd,
        band_gains,
    })
}

// --- Dataset emission ---------------------------------------------------------

/// Scenario grids the generator draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ser_db: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub delay_ms: Vec<f64>,
    pub nonlinearities: Vec<Nonlinearity>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            ser_db: (-6..=6).map(|i| 5.0 * i as f64).collect(),
            snr_db: (0..=8).map(|i| 5.0 * i as f64).collect(),
            delay_ms: (0..152).map(|i| 10.0 * i as f64).collect(),
            nonlinearities: vec![
                Nonlinearity::None,
                Nonlinearity::Clip,
                Nonlinearity::MemorylessSigmoid,
            ],
        }
    }
}

impl GridConfig {
    /// Restrict delays to the 0–500 ms band.
    pub fn with_short_delays(mut self) -> Self {
        self.delay_ms = (0..=50).map(|i| 10.0 * i as f64).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ser_db.is_empty()
            || self.snr_db.is_empty()
            || self.delay_ms.is_empty()
            || self.nonlinearities.is_empty()
        {
            return Err(Error::InvalidConfig("scenario grids must be nonempty".into()));
        }
        Ok(())
    }
}

/// Dataset build parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_clips: usize,
    pub seed: u64,
    pub grids: GridConfig,
    pub rir_pool: usize,
    pub clip_seconds: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_clips: 100,
            seed: 0,
            grids: GridConfig::default(),
            rir_pool: 16,
            clip_seconds: CLIP_SECONDS,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one clip".into()));
        }
        if self.rir_pool == 0 {
            return Err(Error::InvalidConfig("rir pool must be nonempty".into()));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip length {} s must be positive",
                self.clip_seconds
            )));
        }
        self.grids.validate()
    }
}

/// One manifest line: everything needed to reload and re-verify a clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub split: String,
    pub far: String,
    pub mic: String,
    pub near: String,
    pub echo: String,
    pub noise: String,
    pub labels: String,
    pub ser_db: Option<f64>,
    pub snr_db: Option<f64>,
    pub delay_ms: f64,
    pub delay_category: usize,
    pub nonlinearity: Nonlinearity,
    pub rir_echo: usize,
    pub rir_near: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        for record in &self.records {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::Data(format!("cannot encode manifest record: {e}")))?;
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                serde_json::from_str(line)
                    .map_err(|e| Error::Data(format!("bad manifest line: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    pub fn split<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a ClipRecord> + 'a {
        let name = name.to_string();
        self.records.iter().filter(move |r| r.split == name)
    }
}

/// Frame-aligned labels parsed back from a sidecar file.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(DtdLabel, BandGains)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read labels {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + crate::dsp::NUM_BANDS {
            return Err(Error::Data(format!(
                "label line {} has {} fields, expected {}",
                ln + 1,
                fields.len(),
                3 + crate::dsp::NUM_BANDS
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| Error::Data(format!("label line {}: {e}", ln + 1)))
        };
        let dtd = DtdLabel {
            far_active: parse(fields[1])? > 0.5,
            near_active: parse(fields[2])? > 0.5,
        };
        let mut gains = [0.0; crate::dsp::NUM_BANDS];
        for (b, g) in gains.iter_mut().enumerate() {
            *g = parse(fields[3 + b])?;
        }
        out.push((dtd, BandGains { gains }));
    }
    Ok(out)
}

fn write_labels_csv(path: &Path, clip: &LabeledClip) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let headers: Vec<String> = (0..crate::dsp::NUM_BANDS).map(|b| format!("g{b:02}")).collect();
    writeln!(file, "frame,dtd_far,dtd_near,{}", headers.join(","))?;
    for (t, (dtd, gains)) in clip.dtd.iter().zip(&clip.band_gains).enumerate() {
        let gains: Vec<String> = gains.gains.iter().map(|g| format!("{g:.6}")).collect();
        writeln!(
            file,
            "{},{},{},{}",
            t,
            dtd.far_active as u8,
            dtd.near_active as u8,
            gains.join(",")
        )?;
    }
    Ok(())
}

fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let valid = n * 2 / 10;
    (train, valid, n - train - valid)
}

fn split_name(index: usize, sizes: (usize, usize, usize)) -> &'static str {
    if index < sizes.0 {
        "train"
    } else if index < sizes.0 + sizes.1 {
        "valid"
    } else {
        "test"
    }
}

/// Partition speech entries into per-split corpora, speaker-disjoint when
/// at least three identified speakers exist; otherwise all splits share
/// the full corpus.
fn split_corpora(speech: AudioCorpus, seed: u64) -> [AudioCorpus; 3] {
    let speakers: BTreeSet<String> = speech
        .entries
        .iter()
        .filter_map(|e| e.speaker.clone())
        .collect();
    let all_tagged = speech.entries.iter().all(|e| e.speaker.is_some());
    if !all_tagged || speakers.len() < 3 {
        return [speech.clone(), speech.clone(), speech];
    }
    let mut order: Vec<String> = speakers.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let s = order.len();
    let test = (s / 10).max(1);
    let valid = (s * 2 / 10).max(1);
    let train = s - valid - test;
    let pool_of = |speaker: &str| -> usize {
        let pos = order.iter().position(|x| x == speaker).unwrap();
        if pos < train {
            0
        } else if pos < train + valid {
            1
        } else {
            2
        }
    };
    let mut pools: [Vec<CorpusEntry>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for entry in speech.entries {
        let pool = pool_of(entry.speaker.as_deref().unwrap());
        pools[pool].push(entry);
    }
    pools.map(|entries| AudioCorpus { entries })
}

/// Generate a labeled dataset: clips, per-clip WAV tracks, label sidecars,
/// and a line-delimited manifest. Deterministic for a fixed seed.
pub fn build_dataset(
    spec: &DatasetSpec,
    speech_dir: &Path,
    noise_dir: &Path,
    out_dir: &Path,
) -> Result<Manifest> {
    spec.grids.validate()?;
    if spec.n_clips == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one clip".into()));
    }
    let speech = load_corpus(speech_dir, 2)?;
    let noise = load_corpus(noise_dir, 1)?;
    fs::create_dir_all(out_dir)?;
    let clips_dir = out_dir.join("clips");
    fs::create_dir_all(&clips_dir)?;

    let mut seed_state = spec.seed;
    let rir_seed = splitmix64(&mut seed_state);
    let corpus_seed = splitmix64(&mut seed_state);
    let rirs = generate_rir_pool(spec.rir_pool.max(2), rir_seed);
    let corpora = split_corpora(speech, corpus_seed);
    let sizes = split_sizes(spec.n_clips);

    let mut manifest = Manifest::default();
    for i in 0..spec.n_clips {
        let mut clip_seed = splitmix64(&mut seed_state);
        let split = split_name(i, sizes);
        let corpus = match split {
            "train" => &corpora[0],
            "valid" => &corpora[1],
            _ => &corpora[2],
        };
        let mut draw = ChaCha8Rng::seed_from_u64(clip_seed);
        let cfg_base = ScenarioConfig {
            ser_db: *spec.grids.ser_db.choose(&mut draw).unwrap(),
            snr_db: *spec.grids.snr_db.choose(&mut draw).unwrap(),
            delay_ms: *spec.grids.delay_ms.choose(&mut draw).unwrap(),
            rir_echo: draw.gen_range(0..rirs.len()),
            rir_near: draw.gen_range(0..rirs.len()),
            nonlinearity: *spec.grids.nonlinearities.choose(&mut draw).unwrap(),
            seed: 0,
        };
        // A drawn chunk can land on silence; retry with fresh offsets.
        let mut clip = None;
        let mut cfg = cfg_base;
        for _ in 0..8 {
            cfg.seed = splitmix64(&mut clip_seed);
            match synthesize_clip(&cfg, corpus, &noise, &rirs, spec.clip_seconds) {
                Ok(c) => {
                    clip = Some(c);
                    break;
                }
                Err(Error::Synthesis(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let clip = clip.ok_or_else(|| {
            Error::Synthesis(format!("clip {i} failed to synthesize after 8 attempts"))
        })?;

        let id = format!("clip_{i:05}");
        let rel = |suffix: &str| format!("clips/{id}_{suffix}");
        let write = |suffix: &str, samples: &[f64]| -> Result<()> {
            write_wav_pcm16(clips_dir.join(format!("{id}_{suffix}")), samples)
        };
        write("far.wav", &clip.far)?;
        write("mic.wav", &clip.mic)?;
        write("near.wav", &clip.near)?;
        write("echo.wav", &clip.echo)?;
        write("noise.wav", &clip.noise)?;
        write_labels_csv(&clips_dir.join(format!("{id}_labels.csv")), &clip)?;

        manifest.records.push(ClipRecord {
            far: rel("far.wav"),
            mic: rel("mic.wav"),
            near: rel("near.wav"),
            echo: rel("echo.wav"),
            noise: rel("noise.wav"),
            labels: rel("labels.csv"),
            id,
            split: split.to_string(),
            ser_db: cfg.ser_db.is_finite().then_some(cfg.ser_db),
            snr_db: cfg.snr_db.is_finite().then_some(cfg.snr_db),
            delay_ms: cfg.delay_ms,
            delay_category: cfg.delay_frames(),
            nonlinearity: cfg.nonlinearity,
            rir_echo: cfg.rir_echo,
            rir_near: cfg.rir_near,
            seed: cfg.seed,
        });
    }
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
