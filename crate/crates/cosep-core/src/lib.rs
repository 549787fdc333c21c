//! Object-conditioned audio source separation, trained by co-separation.
//!
//! The crate is organized bottom-up: `tensor` provides the autodiff
//! engine, `dsp` the spectrogram pipeline, `corpus` the synthetic data,
//! `sepnet` the conditioned U-Net and audio classifier, `cotrain` the
//! training objective and loop, and `bsseval` the separation metrics.

pub mod bsseval;
pub mod corpus;
pub mod cotrain;
pub mod dsp;
pub mod sepnet;
pub mod tensor;
