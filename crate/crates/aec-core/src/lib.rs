//! Streaming acoustic echo control at 16 kHz.
//!
//! The crate provides the building blocks of a full echo-control chain and
//! the glue that runs them in real time order: frequency-domain adaptive
//! cancellation, delay estimation from a bank of speculative filters,
//! learned residual-echo suppression fused with statistical denoising, and
//! loudness normalization. A synthetic data pipeline generates labeled
//! echo scenarios for training and evaluation.

pub mod agc;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod mdf;
pub mod metrics;
pub mod nn;
pub mod omlsa;
pub mod pipeline;
pub mod res;
pub mod synth;
pub mod tde;
pub mod train;
pub mod wav;

pub use dsp::{
    AudioFrame, MelBands, MfccFeature, SpectralFrame, FFT_SIZE, FRAME_SIZE, MFCC_DIM, NUM_BANDS,
    NUM_CEPSTRA, SAMPLE_RATE, SPECTRUM_BINS,
};
pub use error::{Error, Result};
