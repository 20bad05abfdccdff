//! Central finite-difference gradient checking.
//!
//! Used by the verification suite as an oracle independent of the backward
//! pass: the loss closure is re-evaluated at `theta +- h` for every single
//! parameter, so nothing here shares code with [`super::backward`].

use super::MlpParams;

/// Numerically differentiates `loss` at `params` with central differences.
pub fn numeric_grads<F>(params: &MlpParams, h: f64, mut loss: F) -> MlpParams
where
    F: FnMut(&MlpParams) -> f64,
{
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    for l in 0..params.layers.len() {
        for i in 0..params.layers[l].weights.data().len() {
            let orig = probe.layers[l].weights.data()[i];
            probe.layers[l].weights.data_mut()[i] = orig + h;
            let plus = loss(&probe);
            probe.layers[l].weights.data_mut()[i] = orig - h;
            let minus = loss(&probe);
            probe.layers[l].weights.data_mut()[i] = orig;
            grads.layers[l].weights.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..params.layers[l].bias.len() {
            let orig = probe.layers[l].bias[i];
            probe.layers[l].bias[i] = orig + h;
            let plus = loss(&probe);
            probe.layers[l].bias[i] = orig - h;
            let minus = loss(&probe);
            probe.layers[l].bias[i] = orig;
            grads.layers[l].bias[i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Worst relative error between two gradient sets. The denominator is
/// floored so that near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &MlpParams, numeric: &MlpParams, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
        let pairs = a
            .weights
            .data()
            .iter()
            .zip(n.weights.data())
            .chain(a.bias.iter().zip(&n.bias));
        for (&x, &y) in pairs {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{backward, forward, softmax_cross_entropy, Matrix};

    #[test]
    fn backward_matches_central_differences_on_two_layer_net() {
        let params = MlpParams::init(&[4, 3, 2], 17).unwrap();
        let inputs = Matrix::from_vec(
            3,
            4,
            vec![0.1, -0.4, 0.7, 0.3, 0.9, 0.2, -0.8, 0.5, -0.2, 0.6, 0.1, -0.9],
        )
        .unwrap();
        let labels = vec![0u8, 1, 1];

        let (logits, cache) = forward(&params, &inputs).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (analytic, _) = backward(&params, &cache, &dlogits).unwrap();

        let numeric = numeric_grads(&params, 1e-5, |p| {
            let (logits, _) = forward(p, &inputs).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        });

        let err = max_rel_err(&analytic, &numeric, 1e-3);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
