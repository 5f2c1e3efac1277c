//! Naive unregularized DVAE written straight from the model definition:
//! full triple scores, per-term derivatives, no factorization or reuse of
//! library internals.

use reldisc::datamodel::Sentence;
use reldisc::dvae::{ModelParams, SideNegatives};

pub struct Reference {
    pub total: f64,
    pub recon: f64,
    pub entropy: f64,
    pub grads: ModelParams,
}

fn clamped_log_sigmoid(x: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-x).exp());
    if s < 1e-12 {
        ((1e-12f64).ln(), 0.0)
    } else if s > 1.0 - 1e-12 {
        ((1.0 - 1e-12f64).ln(), 0.0)
    } else {
        (s.ln(), 1.0 - s)
    }
}

fn score(p: &ModelParams, r: usize, e1: usize, e2: usize) -> f64 {
    let d = p.decoder.dim;
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += p.decoder.entities[e1 * d + i]
                * p.decoder.bilinear[r * d * d + i * d + j]
                * p.decoder.entities[e2 * d + j];
        }
    }
    for i in 0..d {
        s += p.decoder.relation_vecs[r * 2 * d + i] * p.decoder.entities[e1 * d + i];
        s += p.decoder.relation_vecs[r * 2 * d + d + i] * p.decoder.entities[e2 * d + i];
    }
    s
}

/// Adds `w · ∂score(r, e1, e2)/∂θ` into `g`.
fn add_score_grad(p: &ModelParams, g: &mut ModelParams, r: usize, e1: usize, e2: usize, w: f64) {
    let d = p.decoder.dim;
    let ent = &p.decoder.entities;
    for i in 0..d {
        for j in 0..d {
            g.decoder.bilinear[r * d * d + i * d + j] += w * ent[e1 * d + i] * ent[e2 * d + j];
        }
    }
    for i in 0..d {
        g.decoder.relation_vecs[r * 2 * d + i] += w * ent[e1 * d + i];
        g.decoder.relation_vecs[r * 2 * d + d + i] += w * ent[e2 * d + i];
    }
    if p.decoder.frozen_entities {
        return;
    }
    for i in 0..d {
        let mut de1 = p.decoder.relation_vecs[r * 2 * d + i];
        let mut de2 = p.decoder.relation_vecs[r * 2 * d + d + i];
        for j in 0..d {
            de1 += p.decoder.bilinear[r * d * d + i * d + j] * ent[e2 * d + j];
            de2 += p.decoder.bilinear[r * d * d + j * d + i] * ent[e1 * d + j];
        }
        g.decoder.entities[e1 * d + i] += w * de1;
        g.decoder.entities[e2 * d + i] += w * de2;
    }
}

pub fn evaluate(
    p: &ModelParams,
    sentences: &[&Sentence],
    dense: Option<&[&[f64]]>,
    negatives: &[SideNegatives],
    alpha: f64,
) -> Reference {
    let k = p.encoder.n_clusters;
    let nf = p.encoder.n_features;
    let dd = p.encoder.dense_dim;
    let mut g = p.zeros_like();
    let mut recon = 0.0;
    let mut entropy = 0.0;
    for (n, s) in sentences.iter().enumerate() {
        let logits: Vec<f64> = (0..k)
            .map(|r| {
                let mut z: f64 = s.features.iter().map(|&f| p.encoder.weights[r * nf + f]).sum();
                if let Some(dense) = dense {
                    z += (0..dd).map(|c| p.encoder.dense_weights[r * dd + c] * dense[n][c]).sum::<f64>();
                }
                z
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let sum: f64 = ex.iter().sum();
        let q: Vec<f64> = ex.iter().map(|e| e / sum).collect();

        let mut dq = vec![0.0; k];
        for r in 0..k {
            // predict tail given head, then head given tail
            for predict_tail in [true, false] {
                let (h, t) = (s.head, s.tail);
                let (lg, dg) = clamped_log_sigmoid(score(p, r, h, t));
                let mut logp = lg;
                add_score_grad(p, &mut g, r, h, t, q[r] * dg);
                let negs = if predict_tail { &negatives[n].tail } else { &negatives[n].head };
                for &e in negs {
                    let (e1, e2) = if predict_tail { (h, e) } else { (e, t) };
                    let (ln, dn) = clamped_log_sigmoid(-score(p, r, e1, e2));
                    logp += ln;
                    add_score_grad(p, &mut g, r, e1, e2, -q[r] * dn);
                }
                recon += q[r] * logp;
                dq[r] += logp;
            }
            let h_r = if q[r] > 0.0 { -q[r] * q[r].ln() } else { 0.0 };
            entropy += h_r;
            dq[r] += alpha * -(q[r].ln() + 1.0);
        }
        let mean: f64 = (0..k).map(|r| q[r] * dq[r]).sum();
        for r in 0..k {
            let dz = q[r] * (dq[r] - mean);
            for &f in &s.features {
                g.encoder.weights[r * nf + f] += dz;
            }
            if let Some(dense) = dense {
                for c in 0..dd {
                    g.encoder.dense_weights[r * dd + c] += dz * dense[n][c];
                }
            }
        }
    }
    Reference {
        total: recon + alpha * entropy,
        recon,
        entropy,
        grads: g,
    }
}

/// One AdaGrad ascent step from zero accumulators.
pub fn adagrad_first_step(p: &ModelParams, g: &ModelParams, lr0: f64) -> ModelParams {
    let mut out = p.clone();
    let frozen = p.decoder.frozen_entities;
    for (b, (dst, grad)) in out.blocks_mut().into_iter().zip(g.blocks()).enumerate() {
        if b == 4 && frozen {
            continue;
        }
        for (v, &gv) in dst.iter_mut().zip(grad) {
            if gv != 0.0 {
                *v += lr0 * gv / ((gv * gv).sqrt() + 1e-8);
            }
        }
    }
    out
}
