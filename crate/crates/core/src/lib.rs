//! Core algorithms for beat-synchronized, emotion-driven music video
//! storyboards and the CHARCHA liveness protocol.
//!
//! Everything in this crate is a pure function of its inputs: no I/O besides
//! WAV reading, no clocks, no network. Service clients and persistence live in
//! `cadence-render`.

pub mod audio;
pub mod charcha;
pub mod emotion;
pub mod eval;
pub mod interp;
pub mod seed;
pub mod synth;
pub mod timeline;
