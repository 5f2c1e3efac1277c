//! Discrete-state variational autoencoder for relation discovery.
//!
//! The encoder is a linear softmax over sparse binary sentence features
//! (optionally extended with a dense block), giving `q(r | x)` over the
//! relation clusters. The decoder scores a triple as
//! `e1ᵀ C_r e2 + [e1, e2]ᵀ r` and reconstructs each entity of the pair from
//! the other with negative sampling.

mod model;
mod objective;
mod params;

pub use model::{
    constraint_penalty, decode_entity, decoder_posterior, decoder_score, distance, distance_grad,
    encode, encode_with_dense, encoder_logits, entropy, neg_sample_logp,
};
pub use objective::{objective, objective_and_gradients, Batch, BatchConstraint, ObjectiveParts, SideNegatives};
pub use params::{DecoderParams, EncoderParams, ModelParams, PARAM_BLOCKS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability distance used by the cluster regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Kl,
    Js,
}

/// Which posterior the constraints act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegTarget {
    Encoder,
    Decoder,
}

/// Which entity of the pair the decoder reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    PredictHead,
    PredictTail,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::PredictHead, Side::PredictTail];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_clusters: usize,
    pub alpha0: f64,
    pub alpha_final: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub distance: Distance,
    pub reg_target: RegTarget,
    pub n_negatives: usize,
    /// Entity embedding width in the decoder.
    pub dim: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_clusters: 40,
            alpha0: 4.0,
            alpha_final: 1e-5,
            beta: 0.6,
            gamma: 0.9,
            lambda: 1e-4,
            distance: Distance::Euclidean,
            reg_target: RegTarget::Encoder,
            n_negatives: 5,
            dim: 50,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_clusters == 0 {
            return fail("n_clusters must be >= 1".into());
        }
        if !(self.alpha_final > 0.0 && self.alpha0 >= self.alpha_final) {
            return fail(format!(
                "need alpha0 >= alpha_final > 0, got {} and {}",
                self.alpha0, self.alpha_final
            ));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return fail(format!("beta = {} must be >= 0", self.beta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return fail(format!("lambda = {} must be >= 0", self.lambda));
        }
        if self.n_negatives == 0 {
            return fail("n_negatives must be >= 1".into());
        }
        if self.dim == 0 {
            return fail("dim must be >= 1".into());
        }
        Ok(())
    }
}
