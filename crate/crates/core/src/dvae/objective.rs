//! The maximized training objective for one minibatch and its exact
//! gradient:
//!
//! ```text
//! Σ_x Σ_{i∈{1,2}} Σ_r q(r|x) · NS_r,i(x)      reconstruction
//!   + α_t Σ_x H[q(·|x)]                       entropy
//!   + β Σ_(x1,x2) D(x1, x2)                   KB constraints
//!   − λ ‖(ψ, θ)‖²                             L2 penalty
//! ```

use super::model::{decoder_posterior, distance_grad, encoder_logits, projected_given};
use super::{HyperParams, ModelParams, RegTarget, Side};
use crate::datamodel::Sentence;
use crate::error::{Error, Result};
use crate::linalg::{dot, log_sigmoid_clamped, softmax};

/// Sampled negatives for one sentence: entities replacing the head when
/// the head is reconstructed, and entities replacing the tail.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SideNegatives {
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
}

impl SideNegatives {
    pub fn for_side(&self, side: Side) -> &[usize] {
        match side {
            Side::PredictHead => &self.head,
            Side::PredictTail => &self.tail,
        }
    }
}

/// A constraint between two batch positions `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConstraint {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub sentences: Vec<&'a Sentence>,
    /// Dense encoder input per position, when the encoder has a dense block.
    pub dense: Option<Vec<&'a [f64]>>,
    pub negatives: Vec<SideNegatives>,
    pub constraints: Vec<BatchConstraint>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn dense_at(&self, pos: usize) -> Option<&'a [f64]> {
        self.dense.as_ref().map(|d| d[pos])
    }
}

/// Each term is its signed contribution, so `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveParts {
    pub recon: f64,
    pub entropy_term: f64,
    pub constraint_term: f64,
    pub l2_term: f64,
    pub total: f64,
}

impl ObjectiveParts {
    pub fn accumulate(&mut self, other: &ObjectiveParts) {
        self.recon += other.recon;
        self.entropy_term += other.entropy_term;
        self.constraint_term += other.constraint_term;
        self.l2_term += other.l2_term;
        self.total += other.total;
    }

    fn check_finite(&self) -> Result<()> {
        if self.total.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "objective: recon={} entropy={} constraint={} l2={}",
                self.recon, self.entropy_term, self.constraint_term, self.l2_term
            )))
        }
    }
}

pub fn objective(params: &ModelParams, batch: &Batch<'_>, hyper: &HyperParams, alpha: f64) -> Result<ObjectiveParts> {
    evaluate(params, batch, hyper, alpha, None)
}

pub fn objective_and_gradients(
    params: &ModelParams,
    batch: &Batch<'_>,
    hyper: &HyperParams,
    alpha: f64,
) -> Result<(ObjectiveParts, ModelParams)> {
    let mut grads = params.zeros_like();
    let parts = evaluate(params, batch, hyper, alpha, Some(&mut grads))?;
    Ok((parts, grads))
}

fn evaluate(
    params: &ModelParams,
    batch: &Batch<'_>,
    hyper: &HyperParams,
    alpha: f64,
    mut grads: Option<&mut ModelParams>,
) -> Result<ObjectiveParts> {
    let psi = &params.encoder;
    let theta = &params.decoder;
    let k = psi.n_clusters;
    let d = theta.dim;
    let learn_entities = !theta.frozen_entities;
    let mut parts = ObjectiveParts::default();

    // Encoder posteriors and dL/dq per position.
    let posteriors: Vec<Vec<f64>> = batch
        .sentences
        .iter()
        .enumerate()
        .map(|(pos, s)| softmax(&encoder_logits(psi, &s.features, batch.dense_at(pos))))
        .collect();
    let mut dq: Vec<Vec<f64>> = vec![vec![0.0; k]; batch.len()];

    let mut cand_sum = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for (pos, s) in batch.sentences.iter().enumerate() {
        let q = &posteriors[pos];
        for r in 0..k {
            let mut u = 0.0;
            for side in Side::BOTH {
                let (given, gold) = match side {
                    Side::PredictHead => (s.tail, s.head),
                    Side::PredictTail => (s.head, s.tail),
                };
                let negs = batch.negatives[pos].for_side(side);
                let (proj, offset) = projected_given(theta, r, given, side);

                let (lp, dpos) = log_sigmoid_clamped(dot(&proj, theta.entity(gold)) + offset);
                u += lp;
                let mut coeffs = Vec::with_capacity(1 + negs.len());
                coeffs.push((gold, dpos));
                for &n in negs {
                    let (ln, dneg) = log_sigmoid_clamped(-(dot(&proj, theta.entity(n)) + offset));
                    u += ln;
                    coeffs.push((n, -dneg));
                }

                if let Some(g) = grads.as_deref_mut() {
                    let w = q[r];
                    if w == 0.0 {
                        continue;
                    }
                    cand_sum.fill(0.0);
                    let mut coeff_total = 0.0;
                    for &(e, c) in &coeffs {
                        let c = w * c;
                        coeff_total += c;
                        for (acc, v) in cand_sum.iter_mut().zip(theta.entity(e)) {
                            *acc += c * v;
                        }
                        if learn_entities {
                            for (ge, p) in g.decoder.entities[e * d..(e + 1) * d].iter_mut().zip(&proj) {
                                *ge += c * p;
                            }
                        }
                    }
                    backprop_given_side(theta, g, r, given, side, &cand_sum, coeff_total, learn_entities, &mut tmp);
                }
            }
            parts.recon += q[r] * u;
            dq[pos][r] += u;
        }

        let h: f64 = -q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        parts.entropy_term += alpha * h;
        for r in 0..k {
            if q[r] > 0.0 {
                dq[pos][r] += -alpha * (q[r].ln() + 1.0);
            }
        }
    }

    // KB constraints on the chosen posterior.
    if hyper.beta != 0.0 && !batch.constraints.is_empty() {
        match hyper.reg_target {
            RegTarget::Encoder => {
                for c in &batch.constraints {
                    let (dist, g1, g2) = distance_grad(&posteriors[c.a], &posteriors[c.b], hyper.distance);
                    parts.constraint_term += -hyper.beta * c.score * dist;
                    let scale = -hyper.beta * c.score;
                    for r in 0..k {
                        dq[c.a][r] += scale * g1[r];
                        dq[c.b][r] += scale * g2[r];
                    }
                }
            }
            RegTarget::Decoder => {
                decoder_constraints(params, batch, hyper, &mut parts, grads.as_deref_mut());
            }
        }
    }

    // Encoder gradient through the softmax Jacobian.
    if let Some(g) = grads.as_deref_mut() {
        for (pos, s) in batch.sentences.iter().enumerate() {
            let q = &posteriors[pos];
            let mean: f64 = q.iter().zip(&dq[pos]).map(|(p, g)| p * g).sum();
            let dense = batch.dense_at(pos);
            for r in 0..k {
                let dz = q[r] * (dq[pos][r] - mean);
                if dz == 0.0 {
                    continue;
                }
                let row = &mut g.encoder.weights[r * psi.n_features..(r + 1) * psi.n_features];
                for &f in &s.features {
                    row[f] += dz;
                }
                if let Some(z) = dense {
                    if psi.dense_dim > 0 {
                        let drow = &mut g.encoder.dense_weights[r * psi.dense_dim..(r + 1) * psi.dense_dim];
                        for (gw, zi) in drow.iter_mut().zip(z) {
                            *gw += dz * zi;
                        }
                    }
                }
            }
        }
    }

    if hyper.lambda != 0.0 {
        parts.l2_term = -hyper.lambda * params.l2_squared();
        if let Some(g) = grads.as_deref_mut() {
            let trainable = params.trainable();
            for ((gb, pb), t) in g.blocks_mut().into_iter().zip(params.blocks()).zip(trainable) {
                if t {
                    for (gv, pv) in gb.iter_mut().zip(pb) {
                        *gv += -2.0 * hyper.lambda * pv;
                    }
                }
            }
        }
    }

    parts.total = parts.recon + parts.entropy_term + parts.constraint_term + parts.l2_term;
    parts.check_finite()?;
    Ok(parts)
}

/// Backpropagates `Σ_k c_k · score(cand_k)` into `C_r`, the preference
/// vector, and the given entity, where `cand_sum = Σ_k c_k e_k` and
/// `coeff_total = Σ_k c_k`.
#[allow(clippy::too_many_arguments)]
fn backprop_given_side(
    theta: &crate::dvae::DecoderParams,
    g: &mut ModelParams,
    r: usize,
    given: usize,
    side: Side,
    cand_sum: &[f64],
    coeff_total: f64,
    learn_entities: bool,
    tmp: &mut [f64],
) {
    let d = theta.dim;
    let c = theta.c(r);
    let ge = theta.entity(given);
    let gc = &mut g.decoder.bilinear[r * d * d..(r + 1) * d * d];
    match side {
        Side::PredictTail => {
            // score = hᵀ C cand + r_headᵀ h + r_tailᵀ cand, h given.
            for i in 0..d {
                for j in 0..d {
                    gc[i * d + j] += ge[i] * cand_sum[j];
                }
            }
            let base = r * 2 * d;
            for i in 0..d {
                g.decoder.relation_vecs[base + i] += coeff_total * ge[i];
                g.decoder.relation_vecs[base + d + i] += cand_sum[i];
            }
            if learn_entities {
                let pref = theta.pref_head(r);
                for i in 0..d {
                    tmp[i] = dot(&c[i * d..(i + 1) * d], cand_sum) + coeff_total * pref[i];
                }
                for (gv, t) in g.decoder.entities[given * d..(given + 1) * d].iter_mut().zip(tmp.iter()) {
                    *gv += t;
                }
            }
        }
        Side::PredictHead => {
            // score = candᵀ C t + r_headᵀ cand + r_tailᵀ t, t given.
            for i in 0..d {
                for j in 0..d {
                    gc[i * d + j] += cand_sum[i] * ge[j];
                }
            }
            let base = r * 2 * d;
            for i in 0..d {
                g.decoder.relation_vecs[base + i] += cand_sum[i];
                g.decoder.relation_vecs[base + d + i] += coeff_total * ge[i];
            }
            if learn_entities {
                let pref = theta.pref_tail(r);
                tmp.fill(0.0);
                for i in 0..d {
                    let ci = cand_sum[i];
                    for j in 0..d {
                        tmp[j] += c[i * d + j] * ci;
                    }
                }
                for j in 0..d {
                    tmp[j] += coeff_total * pref[j];
                }
                for (gv, t) in g.decoder.entities[given * d..(given + 1) * d].iter_mut().zip(tmp.iter()) {
                    *gv += t;
                }
            }
        }
    }
}

/// Constraint term on decoder posteriors `p(r | e1, e2)`.
fn decoder_constraints(
    params: &ModelParams,
    batch: &Batch<'_>,
    hyper: &HyperParams,
    parts: &mut ObjectiveParts,
    mut grads: Option<&mut ModelParams>,
) {
    let theta = &params.decoder;
    let k = theta.n_clusters;
    let d = theta.dim;
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; batch.len()];
    let mut dp: Vec<Vec<f64>> = vec![vec![0.0; k]; batch.len()];
    for c in &batch.constraints {
        for pos in [c.a, c.b] {
            if cache[pos].is_none() {
                let s = batch.sentences[pos];
                cache[pos] = Some(decoder_posterior(theta, s.head, s.tail));
            }
        }
        let p1 = cache[c.a].as_ref().expect("cached");
        let p2 = cache[c.b].as_ref().expect("cached");
        let (dist, g1, g2) = distance_grad(p1, p2, hyper.distance);
        parts.constraint_term += -hyper.beta * c.score * dist;
        let scale = -hyper.beta * c.score;
        for r in 0..k {
            dp[c.a][r] += scale * g1[r];
            dp[c.b][r] += scale * g2[r];
        }
    }
    let Some(g) = grads.as_deref_mut() else {
        return;
    };
    let learn_entities = !theta.frozen_entities;
    for (pos, p) in cache.iter().enumerate() {
        let Some(p) = p else { continue };
        let s = batch.sentences[pos];
        let mean: f64 = p.iter().zip(&dp[pos]).map(|(a, b)| a * b).sum();
        let h = theta.entity(s.head).to_vec();
        let t = theta.entity(s.tail).to_vec();
        for r in 0..k {
            let ds = p[r] * (dp[pos][r] - mean);
            if ds == 0.0 {
                continue;
            }
            let c = theta.c(r);
            let gc = &mut g.decoder.bilinear[r * d * d..(r + 1) * d * d];
            for i in 0..d {
                for j in 0..d {
                    gc[i * d + j] += ds * h[i] * t[j];
                }
            }
            let base = r * 2 * d;
            for i in 0..d {
                g.decoder.relation_vecs[base + i] += ds * h[i];
                g.decoder.relation_vecs[base + d + i] += ds * t[i];
            }
            if learn_entities {
                let (ph, pt) = (theta.pref_head(r), theta.pref_tail(r));
                for i in 0..d {
                    let dh = dot(&c[i * d..(i + 1) * d], &t) + ph[i];
                    g.decoder.entities[s.head * d + i] += ds * dh;
                }
                for j in 0..d {
                    let dt: f64 = (0..d).map(|i| c[i * d + j] * h[i]).sum::<f64>() + pt[j];
                    g.decoder.entities[s.tail * d + j] += ds * dt;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvae::{DecoderParams, EncoderParams};

    fn zero_params(k: usize, f: usize, v: usize, d: usize) -> ModelParams {
        ModelParams {
            encoder: EncoderParams::zeros(k, f, 0),
            decoder: DecoderParams::zeros(k, v, d),
        }
    }

    #[test]
    fn closed_form_at_zero() {
        let params = zero_params(3, 2, 8, 4);
        let s = Sentence { id: 0, head: 0, tail: 1, features: vec![0], gold_relation: None };
        let batch = Batch {
            sentences: vec![&s],
            dense: None,
            negatives: vec![SideNegatives { head: vec![2, 3, 4, 5, 6], tail: vec![3, 4, 5, 6, 7] }],
            constraints: vec![],
        };
        let hyper = HyperParams { n_clusters: 3, lambda: 0.0, ..Default::default() };
        let alpha = 0.7;
        let parts = objective(&params, &batch, &hyper, alpha).unwrap();
        // Two sides, each log σ(0) for gold plus five log σ(0) for negatives,
        // averaged under a uniform q; entropy of a uniform q over 3 clusters.
        let expected = 2.0 * 6.0 * 0.5f64.ln() + alpha * 3f64.ln();
        assert!((parts.total - expected).abs() < 1e-12);
        assert_eq!(parts.constraint_term, 0.0);
        assert_eq!(parts.l2_term, 0.0);
    }

    #[test]
    fn duplicate_sentence_doubles_reconstruction() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let params = ModelParams::init(2, 3, 0, 5, 3, &mut rng);
        let s = Sentence { id: 0, head: 0, tail: 1, features: vec![1, 2], gold_relation: None };
        let negs = SideNegatives { head: vec![2, 3], tail: vec![4, 2] };
        let one = Batch { sentences: vec![&s], dense: None, negatives: vec![negs.clone()], constraints: vec![] };
        let two = Batch { sentences: vec![&s, &s], dense: None, negatives: vec![negs.clone(), negs], constraints: vec![] };
        let hyper = HyperParams { n_clusters: 2, lambda: 0.0, ..Default::default() };
        let a = objective(&params, &one, &hyper, 0.0).unwrap();
        let b = objective(&params, &two, &hyper, 0.0).unwrap();
        assert!((2.0 * a.recon - b.recon).abs() < 1e-12);
    }

    #[test]
    fn frozen_entities_have_zero_gradient() {
        let mut rng = crate::rng::stream_rng(2, 0);
        let mut params = ModelParams::init(2, 3, 0, 5, 3, &mut rng);
        params.decoder.frozen_entities = true;
        let s = Sentence { id: 0, head: 0, tail: 1, features: vec![0], gold_relation: None };
        let t = Sentence { id: 1, head: 2, tail: 3, features: vec![1], gold_relation: None };
        let batch = Batch {
            sentences: vec![&s, &t],
            dense: None,
            negatives: vec![
                SideNegatives { head: vec![4], tail: vec![2] },
                SideNegatives { head: vec![0], tail: vec![4] },
            ],
            constraints: vec![BatchConstraint { a: 0, b: 1, score: 0.95 }],
        };
        for target in [RegTarget::Encoder, RegTarget::Decoder] {
            let hyper = HyperParams { n_clusters: 2, reg_target: target, ..Default::default() };
            let (_, g) = objective_and_gradients(&params, &batch, &hyper, 1.0).unwrap();
            assert!(g.decoder.entities.iter().all(|&v| v == 0.0));
        }
    }
}
