//! Feature generation and hypothesis verification for face anti-spoofing.
//!
//! Two generators map standard-normal latents to real-face and known-attack
//! feature hypotheses. An input feature is verified by the consistency of its
//! cosine correlations with the real-face hypotheses and by how far latent
//! inversion drags the latents away from the standard normal.

pub mod autodiff;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod experiment;
pub mod kv;
pub mod metrics;
pub mod models;
pub mod synthdata;
pub mod train;
pub mod verification;

pub use error::{Error, Result};

/// Ground-truth or assumed liveness label (`y′`): 1 for a real face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Attack = 0,
    Real = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_real(self) -> bool {
        self == Label::Real
    }

    pub fn from_digit(d: u8) -> Option<Self> {
        match d {
            0 => Some(Label::Attack),
            1 => Some(Label::Real),
            _ => None,
        }
    }
}
