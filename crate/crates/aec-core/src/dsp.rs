//! Streaming short-time transforms and spectral features.
//!
//! Everything here runs at 16 kHz on 10 ms hops: frames of 160 samples are
//! analyzed with a 320-point FFT under a square-root periodic Hann window,
//! giving perfect reconstruction through [`IstftSynthesizer`] with exactly
//! one frame of latency. Band energies use triangular mel-spaced bands whose
//! weights form a partition of unity over the interior FFT bins, and MFCCs
//! add delta and delta-delta slopes over a +/-2 frame window.

use std::collections::VecDeque;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Sample rate every processing stage assumes, in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per frame (10 ms hop).
pub const FRAME_SIZE: usize = 160;
/// FFT length used by the analysis/synthesis transforms (two frames).
pub const FFT_SIZE: usize = 2 * FRAME_SIZE;
/// One-sided spectrum length for [`FFT_SIZE`]-point transforms.
pub const SPECTRUM_BINS: usize = FRAME_SIZE + 1;
/// Number of triangular mel-spaced bands.
pub const NUM_BANDS: usize = 22;
/// Cepstral coefficients kept per frame, including the 0th.
pub const NUM_CEPSTRA: usize = 13;
/// MFCC feature length: statics plus deltas plus delta-deltas.
pub const MFCC_DIM: usize = 3 * NUM_CEPSTRA;
/// Frames of lookahead the delta window introduces on top of the
/// one-frame synthesis delay.
pub const DELTA_LOOKAHEAD: usize = 2;

/// One hop of time-domain audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrame {
    pub samples: Vec<f64>,
    pub index: u64,
}

impl AudioFrame {
    pub fn new(samples: Vec<f64>, index: u64) -> Result<Self> {
        if samples.len() != FRAME_SIZE {
            return Err(Error::InvalidFrame {
                expected: FRAME_SIZE,
                got: samples.len(),
            });
        }
        Ok(Self { samples, index })
    }

    pub fn zeros(index: u64) -> Self {
        Self {
            samples: vec![0.0; FRAME_SIZE],
            index,
        }
    }
}

/// One-sided complex spectrum of a windowed 320-sample block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub bins: Vec<Complex<f64>>,
    pub index: u64,
}

impl SpectralFrame {
    pub fn new(bins: Vec<Complex<f64>>, index: u64) -> Result<Self> {
        if bins.len() != SPECTRUM_BINS {
            return Err(Error::InvalidSpectrum(format!(
                "expected {} bins, got {}",
                SPECTRUM_BINS,
                bins.len()
            )));
        }
        if bins[0].im != 0.0 || bins[SPECTRUM_BINS - 1].im != 0.0 {
            return Err(Error::InvalidSpectrum(
                "DC and Nyquist bins must be real".into(),
            ));
        }
        Ok(Self { bins, index })
    }

    pub fn zeros(index: u64) -> Self {
        Self {
            bins: vec![Complex::new(0.0, 0.0); SPECTRUM_BINS],
            index,
        }
    }

    /// Total energy of the underlying real block, computed from the
    /// one-sided bins (conjugate-symmetric bins counted twice).
    pub fn energy(&self) -> f64 {
        let mut acc = self.bins[0].norm_sqr() + self.bins[SPECTRUM_BINS - 1].norm_sqr();
        for bin in &self.bins[1..SPECTRUM_BINS - 1] {
            acc += 2.0 * bin.norm_sqr();
        }
        acc / FFT_SIZE as f64
    }
}

/// Energies of the [`NUM_BANDS`] triangular bands for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBands {
    pub energies: [f64; NUM_BANDS],
    pub index: u64,
}

/// Static, delta, and delta-delta cepstra for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccFeature {
    pub values: [f64; MFCC_DIM],
    pub index: u64,
}

/// Square root of the periodic Hann window of length [`FFT_SIZE`].
///
/// `w[n] = sin(pi * n / N)`, so `w[n]^2 + w[n + N/2]^2 = 1` exactly and a
/// windowed analysis/synthesis pair reconstructs the input.
pub fn sqrt_hann_window() -> Vec<f64> {
    (0..FFT_SIZE)
        .map(|n| (std::f64::consts::PI * n as f64 / FFT_SIZE as f64).sin())
        .collect()
}

/// Forward/inverse FFT pair with real-signal helpers, reused across frames.
pub(crate) struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    size: usize,
    work: Vec<Complex<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
            size,
            work: vec![Complex::new(0.0, 0.0); size],
        }
    }

    /// One-sided DFT of a real block. `out` must hold `size / 2 + 1` bins.
    pub fn forward_real(&mut self, block: &[f64], out: &mut [Complex<f64>]) {
        debug_assert_eq!(block.len(), self.size);
        debug_assert_eq!(out.len(), self.size / 2 + 1);
        for (w, &x) in self.work.iter_mut().zip(block) {
            *w = Complex::new(x, 0.0);
        }
        self.forward.process(&mut self.work);
        out.copy_from_slice(&self.work[..self.size / 2 + 1]);
        // Rounding can leave stray imaginary parts on the bins that are
        // real by symmetry; pin them so downstream invariants hold exactly.
        out[0].im = 0.0;
        out[self.size / 2].im = 0.0;
    }

    /// Real inverse DFT of a one-sided spectrum, including the 1/N scale.
    pub fn inverse_real(&mut self, bins: &[Complex<f64>], out: &mut [f64]) {
        debug_assert_eq!(bins.len(), self.size / 2 + 1);
        debug_assert_eq!(out.len(), self.size);
        let half = self.size / 2;
        self.work[..=half].copy_from_slice(bins);
        for k in 1..half {
            self.work[self.size - k] = bins[k].conj();
        }
        self.inverse.process(&mut self.work);
        let scale = 1.0 / self.size as f64;
        for (o, w) in out.iter_mut().zip(&self.work) {
            *o = w.re * scale;
        }
    }
}

/// Streaming analysis transform: 160-sample hops into 320-point spectra.
pub struct StftAnalyzer {
    window: Vec<f64>,
    fft: FftPair,
    prev: Vec<f64>,
    block: Vec<f64>,
    next_index: u64,
}

impl Default for StftAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

impl StftAnalyzer {
    pub fn new() -> Self {
        Self {
            window: sqrt_hann_window(),
            fft: FftPair::new(FFT_SIZE),
            prev: vec![0.0; FRAME_SIZE],
            block: vec![0.0; FFT_SIZE],
            next_index: 0,
        }
    }

    /// Analyze one frame. The transform block is the previous frame
    /// followed by this one, so the stream starts as if preceded by
    /// silence.
    pub fn process(&mut self, frame: &AudioFrame) -> Result<SpectralFrame> {
        if frame.samples.len() != FRAME_SIZE {
            return Err(Error::InvalidFrame {
                expected: FRAME_SIZE,
                got: frame.samples.len(),
            });
        }
        for n in 0..FRAME_SIZE {
            self.block[n] = self.prev[n] * self.window[n];
            self.block[FRAME_SIZE + n] = frame.samples[n] * self.window[FRAME_SIZE + n];
        }
        self.prev.copy_from_slice(&frame.samples);
        let mut bins = vec![Complex::new(0.0, 0.0); SPECTRUM_BINS];
        self.fft.forward_real(&self.block, &mut bins);
        let index = self.next_index;
        self.next_index += 1;
        SpectralFrame::new(bins, index)
    }

    pub fn reset(&mut self) {
        self.prev.fill(0.0);
        self.next_index = 0;
    }
}

/// Streaming synthesis transform, the inverse of [`StftAnalyzer`].
///
/// Output frame `t` reproduces input frame `t - 1`; the first output frame
/// is the leading silence the analyzer assumed.
pub struct IstftSynthesizer {
    window: Vec<f64>,
    fft: FftPair,
    tail: Vec<f64>,
    block: Vec<f64>,
    next_index: u64,
}

impl Default for IstftSynthesizer {
    fn default() -> Self {
        Self::new()
    }
}

impl IstftSynthesizer {
    pub fn new() -> Self {
        Self {
            window: sqrt_hann_window(),
            fft: FftPair::new(FFT_SIZE),
            tail: vec![0.0; FRAME_SIZE],
            block: vec![0.0; FFT_SIZE],
            next_index: 0,
        }
    }

    pub fn process(&mut self, spectrum: &SpectralFrame) -> Result<AudioFrame> {
        if spectrum.bins.len() != SPECTRUM_BINS {
            return Err(Error::InvalidSpectrum(format!(
                "expected {} bins, got {}",
                SPECTRUM_BINS,
                spectrum.bins.len()
            )));
        }
        if spectrum.bins[0].im != 0.0 || spectrum.bins[SPECTRUM_BINS - 1].im != 0.0 {
            return Err(Error::InvalidSpectrum(
                "DC and Nyquist bins must be real".into(),
            ));
        }
        self.fft.inverse_real(&spectrum.bins, &mut self.block);
        let mut samples = vec![0.0; FRAME_SIZE];
        for n in 0..FRAME_SIZE {
            samples[n] = self.tail[n] + self.block[n] * self.window[n];
            self.tail[n] = self.block[FRAME_SIZE + n] * self.window[FRAME_SIZE + n];
        }
        let index = self.next_index;
        self.next_index += 1;
        Ok(AudioFrame { samples, index })
    }

    pub fn reset(&mut self) {
        self.tail.fill(0.0);
        self.next_index = 0;
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel-spaced bands over the one-sided spectrum.
///
/// Band centers sit on FFT bins, mel-uniform from bin 1 to bin
/// `FRAME_SIZE - 1`. Every interior bin's band weights sum to one; the DC
/// and Nyquist bins carry no weight.
pub struct MelFilterBank {
    centers: [usize; NUM_BANDS],
    /// For interior bin `k`: `(band, frac)` with weight `1 - frac` on
    /// `band` and `frac` on `band + 1`.
    placement: Vec<(usize, f64)>,
}

impl Default for MelFilterBank {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFilterBank {
    pub fn new() -> Self {
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let lo = hz_to_mel(bin_hz);
        let hi = hz_to_mel(bin_hz * (FRAME_SIZE - 1) as f64);
        let mut centers = [0usize; NUM_BANDS];
        for (b, center) in centers.iter_mut().enumerate() {
            let mel = lo + (hi - lo) * b as f64 / (NUM_BANDS - 1) as f64;
            *center = (mel_to_hz(mel) / bin_hz).round() as usize;
        }
        for b in 1..NUM_BANDS {
            if centers[b] <= centers[b - 1] {
                centers[b] = centers[b - 1] + 1;
            }
        }
        debug_assert_eq!(centers[0], 1);
        debug_assert_eq!(centers[NUM_BANDS - 1], FRAME_SIZE - 1);

        let mut placement = Vec::with_capacity(FRAME_SIZE - 1);
        let mut band = 0usize;
        for k in 1..FRAME_SIZE {
            while band + 1 < NUM_BANDS && centers[band + 1] < k {
                band += 1;
            }
            if band + 1 < NUM_BANDS {
                let span = (centers[band + 1] - centers[band]) as f64;
                let frac = (k - centers[band]) as f64 / span;
                placement.push((band, frac));
            } else {
                placement.push((band, 0.0));
            }
        }
        Self { centers, placement }
    }

    pub fn centers(&self) -> &[usize; NUM_BANDS] {
        &self.centers
    }

    /// Weight of `band` at interior bin `k`.
    pub fn weight(&self, band: usize, k: usize) -> f64 {
        if k == 0 || k >= FRAME_SIZE {
            return 0.0;
        }
        let (b, frac) = self.placement[k - 1];
        if band == b {
            1.0 - frac
        } else if band == b + 1 {
            frac
        } else {
            0.0
        }
    }

    /// Triangle-weighted magnitude-squared energy of every band.
    pub fn band_energies(&self, spectrum: &SpectralFrame) -> MelBands {
        let mut energies = [0.0; NUM_BANDS];
        for k in 1..FRAME_SIZE {
            let (band, frac) = self.placement[k - 1];
            let e = spectrum.bins[k].norm_sqr();
            energies[band] += (1.0 - frac) * e;
            if frac > 0.0 {
                energies[band + 1] += frac * e;
            }
        }
        MelBands {
            energies,
            index: spectrum.index,
        }
    }

    /// Expand per-band gains to a per-bin curve by linear interpolation
    /// between band centers, constant outside the first and last centers.
    pub fn interpolate_gains(&self, gains: &[f64; NUM_BANDS]) -> [f64; SPECTRUM_BINS] {
        let mut out = [0.0; SPECTRUM_BINS];
        out[0] = gains[0];
        for k in 1..FRAME_SIZE {
            let (band, frac) = self.placement[k - 1];
            out[k] = if band + 1 < NUM_BANDS {
                (1.0 - frac) * gains[band] + frac * gains[band + 1]
            } else {
                gains[band]
            };
        }
        out[FRAME_SIZE] = gains[NUM_BANDS - 1];
        out
    }
}

/// Orthonormal DCT-II of the log band energies, truncated to
/// [`NUM_CEPSTRA`] coefficients.
pub fn cepstra_from_bands(bands: &MelBands) -> [f64; NUM_CEPSTRA] {
    const FLOOR: f64 = 1e-10;
    let mut logs = [0.0; NUM_BANDS];
    for (l, &e) in logs.iter_mut().zip(&bands.energies) {
        *l = e.max(FLOOR).ln();
    }
    let n = NUM_BANDS as f64;
    let mut out = [0.0; NUM_CEPSTRA];
    for (i, c) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &l) in logs.iter().enumerate() {
            acc += l * (std::f64::consts::PI * i as f64 * (2 * j + 1) as f64 / (2.0 * n)).cos();
        }
        let scale = if i == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        *c = acc * scale;
    }
    out
}

/// Regression weights over a +/-2 frame window.
///
/// `delta[t] = sum_n n * (c[t+n] - c[t-n]) / 10` for n in {1, 2}, and
/// `ddelta[t] = sum_n (n^2 - 2) * c[t+n] / 7` for n in {-2..2}: the least
/// squares slope and curvature over the same five frames, so delta-delta
/// needs no extra lookahead.
fn append_deltas(window: &[[f64; NUM_CEPSTRA]; 5], valid: &[bool; 5], out: &mut [f64; MFCC_DIM]) {
    out[..NUM_CEPSTRA].copy_from_slice(&window[2]);
    let full = valid.iter().all(|&v| v);
    for i in 0..NUM_CEPSTRA {
        let (d, dd) = if full {
            let d = (window[3][i] - window[1][i] + 2.0 * (window[4][i] - window[0][i])) / 10.0;
            let dd = (2.0 * window[0][i] - window[1][i] - 2.0 * window[2][i] - window[3][i]
                + 2.0 * window[4][i])
                / 7.0;
            (d, dd)
        } else {
            (0.0, 0.0)
        };
        out[NUM_CEPSTRA + i] = d;
        out[2 * NUM_CEPSTRA + i] = dd;
    }
}

/// Streaming MFCC extractor.
///
/// Push band energies frame by frame; each push at stream position `t`
/// returns the feature for frame `t - 2` once two frames of lookahead have
/// accumulated. Frames whose +/-2 window runs off either end of the stream
/// get zero deltas.
pub struct MfccExtractor {
    history: VecDeque<(u64, [f64; NUM_CEPSTRA])>,
}

impl Default for MfccExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MfccExtractor {
    pub fn new() -> Self {
        Self {
            history: VecDeque::with_capacity(5),
        }
    }

    pub fn push(&mut self, bands: &MelBands) -> Option<MfccFeature> {
        self.history.push_back((bands.index, cepstra_from_bands(bands)));
        if self.history.len() < 3 {
            return None;
        }
        if self.history.len() > 5 {
            self.history.pop_front();
        }
        let have = self.history.len();
        // The center of the emitted frame sits two slots from the back.
        let center = have - 3;
        Some(self.emit(center))
    }

    /// Emit the final two features once the stream ends.
    pub fn finish(&mut self) -> Vec<MfccFeature> {
        let mut out = Vec::new();
        let have = self.history.len();
        if have == 0 {
            return out;
        }
        let first = if have < 3 { 0 } else { have - 2 };
        for center in first..have {
            out.push(self.emit(center));
        }
        self.history.clear();
        out
    }

    fn emit(&self, center: usize) -> MfccFeature {
        let mut window = [[0.0; NUM_CEPSTRA]; 5];
        let mut valid = [false; 5];
        for (slot, item) in window.iter_mut().zip(valid.iter_mut()).enumerate() {
            let (w, v) = item;
            let pos = center as isize + slot as isize - 2;
            if pos >= 0 && (pos as usize) < self.history.len() {
                *w = self.history[pos as usize].1;
                *v = true;
            }
        }
        // A frame whose window would reach before the start of the stream
        // also counts as truncated, even though older frames have been
        // dropped from the deque.
        let index = self.history[center].0;
        if index < 2 {
            valid[0] = false;
            if index < 1 {
                valid[1] = false;
            }
        }
        let mut values = [0.0; MFCC_DIM];
        append_deltas(&window, &valid, &mut values);
        MfccFeature { values, index }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// MFCC features for a whole recording of band energies.
pub fn mfcc_sequence(bands: &[MelBands]) -> Vec<MfccFeature> {
    let mut extractor = MfccExtractor::new();
    let mut out = Vec::with_capacity(bands.len());
    for b in bands {
        if let Some(f) = extractor.push(b) {
            out.push(f);
        }
    }
    out.extend(extractor.finish());
    out
}

/// Full linear convolution computed with one zero-padded FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Split a signal into whole frames, zero-padding the final partial one.
pub fn frames_of(signal: &[f64]) -> Vec<AudioFrame> {
    let count = signal.len().div_ceil(FRAME_SIZE);
    let mut out = Vec::with_capacity(count);
    for (t, chunk) in signal.chunks(FRAME_SIZE).enumerate() {
        let mut samples = vec![0.0; FRAME_SIZE];
        samples[..chunk.len()].copy_from_slice(chunk);
        out.push(AudioFrame {
            samples,
            index: t as u64,
        });
    }
    out
}
