use super::{DecoderParams, Distance, EncoderParams, Side};
use crate::datamodel::Sentence;
use crate::linalg::{dot, log_sigmoid_clamped, softmax, PROB_FLOOR};

/// `w_rᵀ g(x)` for every cluster `r`, where `g(x)` is the binary feature
/// vector plus an optional dense block.
pub fn encoder_logits(psi: &EncoderParams, features: &[usize], dense: Option<&[f64]>) -> Vec<f64> {
    (0..psi.n_clusters)
        .map(|r| {
            let sparse: f64 = features.iter().map(|&f| psi.weight(r, f)).sum();
            let dense_part = match dense {
                Some(z) if psi.dense_dim > 0 => {
                    dot(&psi.dense_weights[r * psi.dense_dim..(r + 1) * psi.dense_dim], z)
                }
                _ => 0.0,
            };
            sparse + dense_part
        })
        .collect()
}

/// `q(r | x)` from sparse features only.
pub fn encode(psi: &EncoderParams, s: &Sentence) -> Vec<f64> {
    softmax(&encoder_logits(psi, &s.features, None))
}

pub fn encode_with_dense(psi: &EncoderParams, s: &Sentence, dense: Option<&[f64]>) -> Vec<f64> {
    softmax(&encoder_logits(psi, &s.features, dense))
}

/// `e1ᵀ C_r e2 + [e1, e2]ᵀ r`.
pub fn decoder_score(theta: &DecoderParams, r: usize, e1: usize, e2: usize) -> f64 {
    let d = theta.dim;
    let c = theta.c(r);
    let h = theta.entity(e1);
    let t = theta.entity(e2);
    let mut bilinear = 0.0;
    for i in 0..d {
        bilinear += h[i] * dot(&c[i * d..(i + 1) * d], t);
    }
    bilinear + dot(theta.pref_head(r), h) + dot(theta.pref_tail(r), t)
}

/// Scores of every candidate entity placed on `side`, with the other slot
/// held by `given`.
pub(crate) fn candidate_scores(theta: &DecoderParams, r: usize, given: usize, side: Side) -> Vec<f64> {
    let (proj, offset) = projected_given(theta, r, given, side);
    (0..theta.n_entities)
        .map(|c| dot(&proj, theta.entity(c)) + offset)
        .collect()
}

/// For a fixed cluster and given entity the score is affine in the
/// candidate vector: `score(c) = projᵀ e_c + offset`.
///
/// Predicting the tail from head `h`: `proj = C_rᵀ h + r_tail`, `offset = r_headᵀ h`.
/// Predicting the head from tail `t`: `proj = C_r t + r_head`, `offset = r_tailᵀ t`.
pub(crate) fn projected_given(theta: &DecoderParams, r: usize, given: usize, side: Side) -> (Vec<f64>, f64) {
    let d = theta.dim;
    let c = theta.c(r);
    let g = theta.entity(given);
    match side {
        Side::PredictTail => {
            let mut proj = theta.pref_tail(r).to_vec();
            for i in 0..d {
                let gi = g[i];
                if gi != 0.0 {
                    for (p, cij) in proj.iter_mut().zip(&c[i * d..(i + 1) * d]) {
                        *p += gi * cij;
                    }
                }
            }
            (proj, dot(theta.pref_head(r), g))
        }
        Side::PredictHead => {
            let pref = theta.pref_head(r);
            let proj = (0..d).map(|i| dot(&c[i * d..(i + 1) * d], g) + pref[i]).collect();
            (proj, dot(theta.pref_tail(r), g))
        }
    }
}

/// `p(e_i | e_-i, r)` with full normalization over the entity vocabulary.
pub fn decode_entity(theta: &DecoderParams, r: usize, given: usize, side: Side) -> Vec<f64> {
    softmax(&candidate_scores(theta, r, given, side))
}

/// `p(r | e1, e2)` under a uniform prior: softmax over clusters of the
/// triple score.
pub fn decoder_posterior(theta: &DecoderParams, e1: usize, e2: usize) -> Vec<f64> {
    let scores: Vec<f64> = (0..theta.n_clusters)
        .map(|r| decoder_score(theta, r, e1, e2))
        .collect();
    softmax(&scores)
}

/// Negative-sampling surrogate for `log p(e_i | e_-i, r)`:
/// `log σ(score(gold)) + Σ_neg log σ(−score(neg))`, where each negative
/// replaces the predicted entity.
pub fn neg_sample_logp(
    theta: &DecoderParams,
    r: usize,
    head: usize,
    tail: usize,
    side: Side,
    negatives: &[usize],
) -> f64 {
    let given = match side {
        Side::PredictHead => tail,
        Side::PredictTail => head,
    };
    let (proj, offset) = projected_given(theta, r, given, side);
    let gold = match side {
        Side::PredictHead => head,
        Side::PredictTail => tail,
    };
    let mut total = log_sigmoid_clamped(dot(&proj, theta.entity(gold)) + offset).0;
    for &n in negatives {
        total += log_sigmoid_clamped(-(dot(&proj, theta.entity(n)) + offset)).0;
    }
    total
}

/// `−Σ q log q` with `0 log 0 = 0`.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn distance(q1: &[f64], q2: &[f64], kind: Distance) -> f64 {
    match kind {
        Distance::Euclidean => q1
            .iter()
            .zip(q2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Distance::Kl => q1
            .iter()
            .zip(q2)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b.max(PROB_FLOOR)).ln())
            .sum(),
        Distance::Js => {
            let half = |p: &[f64], o: &[f64]| -> f64 {
                p.iter()
                    .zip(o)
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(a, b)| a * (2.0 * a / (a + b)).ln())
                    .sum()
            };
            0.5 * half(q1, q2) + 0.5 * half(q2, q1)
        }
    }
}

/// Distance plus its partial derivatives with respect to `q1` and `q2`.
/// Points of non-differentiability (zero Euclidean distance, zero
/// probabilities) get a zero subgradient.
pub fn distance_grad(q1: &[f64], q2: &[f64], kind: Distance) -> (f64, Vec<f64>, Vec<f64>) {
    let value = distance(q1, q2, kind);
    let k = q1.len();
    let mut g1 = vec![0.0; k];
    let mut g2 = vec![0.0; k];
    match kind {
        Distance::Euclidean => {
            if value > 0.0 {
                for r in 0..k {
                    g1[r] = (q1[r] - q2[r]) / value;
                    g2[r] = -g1[r];
                }
            }
        }
        Distance::Kl => {
            for r in 0..k {
                if q1[r] > 0.0 {
                    let denom = q2[r].max(PROB_FLOOR);
                    g1[r] = (q1[r] / denom).ln() + 1.0;
                    if q2[r] > PROB_FLOOR {
                        g2[r] = -q1[r] / q2[r];
                    }
                }
            }
        }
        Distance::Js => {
            for r in 0..k {
                let sum = q1[r] + q2[r];
                if q1[r] > 0.0 {
                    g1[r] = 0.5 * (2.0 * q1[r] / sum).ln();
                }
                if q2[r] > 0.0 {
                    g2[r] = 0.5 * (2.0 * q2[r] / sum).ln();
                }
            }
        }
    }
    (value, g1, g2)
}

/// `D⁺ = −d·s⁺` for must-links, `D⁻ = d·|s⁻|` for cannot-links; both equal
/// `−d·score`.
pub fn constraint_penalty(q1: &[f64], q2: &[f64], score: f64, kind: Distance) -> f64 {
    if score == 0.0 {
        return 0.0;
    }
    -distance(q1, q2, kind) * score
}
