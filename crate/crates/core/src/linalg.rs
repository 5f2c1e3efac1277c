//! Small dense-vector helpers shared across modules.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize_in_place(a: &mut [f64]) {
    let n = l2_norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Floor applied to sigmoid outputs and KL denominators.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` with σ clamped to `[1e-12, 1 − 1e-12]`, and its derivative
/// (zero where the clamp is active).
pub fn log_sigmoid_clamped(x: f64) -> (f64, f64) {
    let s = sigmoid(x);
    if s < PROB_FLOOR {
        (PROB_FLOOR.ln(), 0.0)
    } else if s > 1.0 - PROB_FLOOR {
        ((1.0 - PROB_FLOOR).ln(), 0.0)
    } else {
        // Stable log σ(x) = −softplus(−x).
        let value = if x >= 0.0 {
            -(-x).exp().ln_1p()
        } else {
            x - x.exp().ln_1p()
        };
        (value, 1.0 - s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[101.0, 98.0, 100.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn log_sigmoid_saturates() {
        let (v, d) = log_sigmoid_clamped(1e6);
        assert!(v < 0.0 && v > -1e-11);
        assert_eq!(d, 0.0);
        let (v, _) = log_sigmoid_clamped(-1e6);
        assert!((v - PROB_FLOOR.ln()).abs() < 1e-12);
        let (v, d) = log_sigmoid_clamped(0.0);
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-15);
    }
}
