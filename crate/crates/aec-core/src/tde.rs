//! Time-delay estimation with a bank of overlapped adaptive filters.
//!
//! A shared far-end ring buffer spans the maximal delay. Each filter in the
//! bank reads the buffer at its own offset, so together their partitions
//! tile the whole delay range in 10 ms steps. The concatenated per-block
//! energies localize the echo path; a classifier (or a plain argmax over
//! accumulated energies) turns them into a delay category.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dsp::{AudioFrame, FRAME_SIZE, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mdf::{MdfConfig, MdfFilter};
use crate::nn::NeuralModel;

/// Milliseconds represented by one delay category (one frame).
pub const MS_PER_CATEGORY: f64 = FRAME_SIZE as f64 * 1000.0 / SAMPLE_RATE as f64;

/// Layout of the filter bank: `filters` adaptive filters of `blocks`
/// partitions each, with `overlap` shared partitions across the whole bank.
/// Adjacent scopes overlap by `overlap / (filters − 1)` frames so that the
/// delay categories `0..categories()` are tiled exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankGeometry {
    pub filters: usize,
    pub blocks: usize,
    pub overlap: usize,
    pub frame_size: usize,
}

impl Default for BankGeometry {
    fn default() -> Self {
        Self {
            filters: 5,
            blocks: 32,
            overlap: 8,
            frame_size: FRAME_SIZE,
        }
    }
}

impl BankGeometry {
    /// Number of delay categories: one per buffer frame.
    pub fn categories(&self) -> usize {
        self.filters * self.blocks - self.overlap
    }

    /// Length of the concatenated energy vector.
    pub fn energy_len(&self) -> usize {
        self.filters * self.blocks
    }

    /// Frames between the starts of adjacent filter scopes.
    pub fn spacing(&self) -> usize {
        (self.categories() - self.blocks) / (self.filters - 1)
    }

    /// Delay categories observed by filter `f`.
    pub fn scope(&self, f: usize) -> std::ops::Range<usize> {
        let start = f * self.spacing();
        start..start + self.blocks
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters < 2 || self.blocks == 0 {
            return Err(Error::InvalidConfig(
                "bank needs at least two filters with nonzero blocks".into(),
            ));
        }
        if self.frame_size != FRAME_SIZE {
            return Err(Error::InvalidConfig(format!(
                "bank frame size {} must match the processing frame size {}",
                self.frame_size, FRAME_SIZE
            )));
        }
        if self.overlap >= self.blocks {
            return Err(Error::InvalidConfig(
                "bank overlap must be smaller than one filter's scope".into(),
            ));
        }
        let span = self.categories() - self.blocks;
        if span % (self.filters - 1) != 0 {
            return Err(Error::InvalidConfig(format!(
                "bank overlap {} does not split evenly across {} filter gaps",
                self.overlap,
                self.filters - 1
            )));
        }
        if self.spacing() == 0 {
            return Err(Error::InvalidConfig(
                "bank spacing collapsed to zero; reduce overlap".into(),
            ));
        }
        Ok(())
    }
}

/// Concatenated per-filter block energies, filter-major:
/// `values[f·blocks + n]` is filter `f`'s energy in partition `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector {
    values: Vec<f64>,
}

impl EnergyVector {
    pub fn new(values: Vec<f64>, geometry: &BankGeometry) -> Result<Self> {
        if values.len() != geometry.energy_len() {
            return Err(Error::InvalidConfig(format!(
                "energy vector length {} does not match bank layout {}",
                values.len(),
                geometry.energy_len()
            )));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Numeric(
                "energy vector entries must be non-negative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A delay decision: the category counts frames of far-to-near delay
/// (0 = aligned), each worth [`MS_PER_CATEGORY`] milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub category: usize,
    pub probability: f64,
    pub low_confidence: bool,
}

impl DelayEstimate {
    pub fn milliseconds(&self) -> f64 {
        self.category as f64 * MS_PER_CATEGORY
    }
}

/// The adaptive filter bank over a shared far-end delay buffer.
pub struct FilterBank {
    geometry: BankGeometry,
    filters: Vec<MdfFilter>,
    far_buffer: VecDeque<AudioFrame>,
    last_errors: Vec<AudioFrame>,
    frames_processed: u64,
    adapt: bool,
}

impl FilterBank {
    /// All filters share the adaptation settings; the partition count is
    /// dictated by the geometry.
    pub fn new(geometry: BankGeometry, mdf: MdfConfig) -> Result<Self> {
        geometry.validate()?;
        let config = MdfConfig {
            blocks: geometry.blocks,
            ..mdf
        };
        let filters = (0..geometry.filters)
            .map(|_| MdfFilter::new(config.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geometry,
            filters,
            far_buffer: (0..geometry.categories()).map(|_| AudioFrame::zeros(0)).collect(),
            last_errors: vec![AudioFrame::zeros(0); geometry.filters],
            frames_processed: 0,
            adapt: true,
        })
    }

    pub fn geometry(&self) -> &BankGeometry {
        &self.geometry
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames_processed
    }

    /// Enable or disable adaptation across the whole bank.
    pub fn set_adaptation(&mut self, enabled: bool) {
        self.adapt = enabled;
    }

    /// Shift one far-end frame into the delay buffer and advance every
    /// filter against the same near-end frame, each reading the buffer at
    /// its own delay offset. Returns the per-filter error frames.
    pub fn push(&mut self, far: &AudioFrame, near: &AudioFrame) -> Result<Vec<AudioFrame>> {
        for frame in [far, near] {
            if frame.samples.len() != self.geometry.frame_size {
                return Err(Error::InvalidFrame {
                    expected: self.geometry.frame_size,
                    got: frame.samples.len(),
                });
            }
        }
        let mut recycled = self.far_buffer.pop_back().expect("buffer is never empty");
        recycled.samples.copy_from_slice(&far.samples);
        recycled.index = far.index;
        self.far_buffer.push_front(recycled);

        let spacing = self.geometry.spacing();
        let mut out = Vec::with_capacity(self.geometry.filters);
        for f in 0..self.geometry.filters {
            // A filter adapting while its view still contains startup zeros
            // would attribute the whole near signal to the few real frames
            // it has, leaving a weight spike that outlives the warmup, so
            // adaptation waits until the view is fully populated.
            let warmed =
                self.frames_processed >= (f * spacing + self.geometry.blocks - 1) as u64;
            self.filters[f].set_adaptation(self.adapt && warmed);
            let result = self.filters[f].process(&self.far_buffer[f * spacing], near)?;
            self.last_errors[f] = result.error.clone();
            out.push(result.error);
        }
        self.frames_processed += 1;
        Ok(out)
    }

    /// Concatenated block energies of all filters, filter-major.
    pub fn energy_vector(&self) -> EnergyVector {
        let mut values = Vec::with_capacity(self.geometry.energy_len());
        for filter in &self.filters {
            values.extend(filter.block_energies());
        }
        EnergyVector { values }
    }

    /// The most recent error frame of the filter best centered on the
    /// estimated delay.
    pub fn select_optimal_error(&self, est: &DelayEstimate) -> Result<AudioFrame> {
        if est.category >= self.geometry.categories() {
            return Err(Error::Data(format!(
                "delay category {} outside the bank's {} categories",
                est.category,
                self.geometry.categories()
            )));
        }
        let f = optimal_filter_index(&self.geometry, est.category);
        Ok(self.last_errors[f].clone())
    }
}

/// The filter whose scope contains the category with maximal margin to the
/// scope edges; ties go to the lower filter index.
pub fn optimal_filter_index(geometry: &BankGeometry, category: usize) -> usize {
    let mut best = 0usize;
    let mut best_margin: isize = -1;
    for f in 0..geometry.filters {
        let scope = geometry.scope(f);
        if !scope.contains(&category) {
            continue;
        }
        let margin = (category - scope.start).min(scope.end - 1 - category) as isize;
        if margin > best_margin {
            best_margin = margin;
            best = f;
        }
    }
    debug_assert!(best_margin >= 0, "every category is covered by a scope");
    best
}

/// Argmax baseline: fold the energy vector back onto delay categories
/// (overlapped positions accumulate across filters) and pick the peak.
/// An all-zero vector yields category 0 flagged as low confidence.
pub fn estimate_delay_argmax(ev: &EnergyVector, geometry: &BankGeometry) -> DelayEstimate {
    let spacing = geometry.spacing();
    let mut acc = vec![0.0f64; geometry.categories()];
    let mut coverage = vec![0u32; geometry.categories()];
    for f in 0..geometry.filters {
        for n in 0..geometry.blocks {
            acc[f * spacing + n] += ev.values[f * geometry.blocks + n];
            coverage[f * spacing + n] += 1;
        }
    }
    for (a, &c) in acc.iter_mut().zip(&coverage) {
        *a /= f64::from(c.max(1));
    }
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return DelayEstimate {
            category: 0,
            probability: 0.0,
            low_confidence: true,
        };
    }
    let (category, &peak) = acc
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("categories is nonzero");
    DelayEstimate {
        category,
        probability: peak / total,
        low_confidence: false,
    }
}

/// Classifier path: run the energy vector through the network (which
/// carries its own input preprocessing) and take the maximal softmax
/// probability as the delay category.
pub fn estimate_delay_nn(
    ev: &EnergyVector,
    model: &mut NeuralModel,
    geometry: &BankGeometry,
) -> Result<DelayEstimate> {
    if model.input_dim() != ev.values.len() {
        return Err(Error::ModelShape {
            expected: ev.values.len(),
            got: model.input_dim(),
            context: "classifier input".into(),
        });
    }
    if model.output_dim() != geometry.categories() {
        return Err(Error::ModelShape {
            expected: geometry.categories(),
            got: model.output_dim(),
            context: "classifier output".into(),
        });
    }
    let out = model.forward(&ev.values)?;
    let (category, &probability) = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("output is nonempty");
    Ok(DelayEstimate {
        category,
        probability,
        low_confidence: false,
    })
}

/// Streaming hysteresis: the reported category changes only after a new
/// category wins `hold` consecutive updates.
#[derive(Debug, Clone)]
pub struct DelayTracker {
    hold: usize,
    current: DelayEstimate,
    candidate: usize,
    streak: usize,
}

impl DelayTracker {
    pub fn new(hold: usize) -> Self {
        Self {
            hold: hold.max(1),
            current: DelayEstimate {
                category: 0,
                probability: 0.0,
                low_confidence: true,
            },
            candidate: 0,
            streak: 0,
        }
    }

    pub fn current(&self) -> DelayEstimate {
        self.current
    }

    pub fn update(&mut self, raw: DelayEstimate) -> DelayEstimate {
        if raw.category == self.current.category {
            self.current = raw;
            self.streak = 0;
        } else {
            if raw.category == self.candidate {
                self.streak += 1;
            } else {
                self.candidate = raw.category;
                self.streak = 1;
            }
            if self.streak >= self.hold {
                self.current = raw;
                self.streak = 0;
            }
        }
        self.current
    }
}
