use rand::Rng;

use crate::error::{Error, Result};

/// Encoder weights: row `r` of `weights` is `w_r` over the sparse features;
/// `dense_weights` (possibly empty) maps an auxiliary dense input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub n_clusters: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub dense_dim: usize,
    pub dense_weights: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(n_clusters: usize, n_features: usize, dense_dim: usize) -> Self {
        EncoderParams {
            n_clusters,
            n_features,
            weights: vec![0.0; n_clusters * n_features],
            dense_dim,
            dense_weights: vec![0.0; n_clusters * dense_dim],
        }
    }

    #[inline]
    pub fn weight(&self, r: usize, f: usize) -> f64 {
        self.weights[r * self.n_features + f]
    }
}

/// Decoder parameters: per-cluster bilinear matrix `C_r` (`dim × dim`,
/// row-major), selectional-preference vector `r` (`2·dim`: head half then
/// tail half), and one vector per text entity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub dim: usize,
    pub n_clusters: usize,
    pub n_entities: usize,
    pub bilinear: Vec<f64>,
    pub relation_vecs: Vec<f64>,
    pub entities: Vec<f64>,
    pub frozen_entities: bool,
}

impl DecoderParams {
    pub fn zeros(n_clusters: usize, n_entities: usize, dim: usize) -> Self {
        DecoderParams {
            dim,
            n_clusters,
            n_entities,
            bilinear: vec![0.0; n_clusters * dim * dim],
            relation_vecs: vec![0.0; n_clusters * 2 * dim],
            entities: vec![0.0; n_entities * dim],
            frozen_entities: false,
        }
    }

    #[inline]
    pub fn c(&self, r: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.bilinear[r * dd..(r + 1) * dd]
    }

    /// Head half of the selectional-preference vector.
    #[inline]
    pub fn pref_head(&self, r: usize) -> &[f64] {
        let base = r * 2 * self.dim;
        &self.relation_vecs[base..base + self.dim]
    }

    #[inline]
    pub fn pref_tail(&self, r: usize) -> &[f64] {
        let base = r * 2 * self.dim + self.dim;
        &self.relation_vecs[base..base + self.dim]
    }

    #[inline]
    pub fn entity(&self, e: usize) -> &[f64] {
        &self.entities[e * self.dim..(e + 1) * self.dim]
    }

    /// Overwrites entity vectors from `source(e)`; used to seed the decoder
    /// from KB embeddings.
    pub fn set_entities_from(&mut self, mut source: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<()> {
        for e in 0..self.n_entities {
            let v = source(e)?;
            if v.len() != self.dim {
                return Err(Error::InvalidConfig(format!(
                    "entity vector width {} does not match decoder dim {}",
                    v.len(),
                    self.dim
                )));
            }
            self.entities[e * self.dim..(e + 1) * self.dim].copy_from_slice(&v);
        }
        Ok(())
    }
}

/// Names of the parameter blocks, in [`ModelParams::blocks`] order.
pub const PARAM_BLOCKS: [&str; 5] = ["W", "W_dense", "C", "R", "E"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl ModelParams {
    /// Encoder at zero, decoder uniform in `(-0.1, 0.1)`.
    pub fn init<R: Rng>(
        n_clusters: usize,
        n_features: usize,
        dense_dim: usize,
        n_entities: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::zeros(n_clusters, n_features, dense_dim);
        let mut decoder = DecoderParams::zeros(n_clusters, n_entities, dim);
        for block in [&mut decoder.bilinear, &mut decoder.relation_vecs, &mut decoder.entities] {
            block.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
        ModelParams { encoder, decoder }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.blocks_mut().into_iter().for_each(|b| b.fill(0.0));
        z
    }

    pub fn blocks(&self) -> [&[f64]; 5] {
        [
            &self.encoder.weights,
            &self.encoder.dense_weights,
            &self.decoder.bilinear,
            &self.decoder.relation_vecs,
            &self.decoder.entities,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.encoder.weights,
            &mut self.encoder.dense_weights,
            &mut self.decoder.bilinear,
            &mut self.decoder.relation_vecs,
            &mut self.decoder.entities,
        ]
    }

    /// Per-block trainability; entity vectors are fixed in frozen mode.
    pub fn trainable(&self) -> [bool; 5] {
        [true, true, true, true, !self.decoder.frozen_entities]
    }

    /// Squared L2 norm over trainable blocks.
    pub fn l2_squared(&self) -> f64 {
        self.blocks()
            .iter()
            .zip(self.trainable())
            .filter(|(_, t)| *t)
            .map(|(b, _)| b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
