//! Pearson correlation and the link between cross-attention to the source
//! `</s>` and the decoder residual contribution.

use serde::Serialize;

use crate::decomposition::Attributor;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Transformer};
use crate::scalar::Scalar;

/// Product-moment correlation, accumulated in a fixed order.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            context: "pearson inputs".into(),
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `(attention on the last source position, residual share)` for one decoding step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EosResidualPoint {
    pub eos_attention: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EosResidualCorrelation {
    pub layer: usize,
    pub points: usize,
    pub pearson: f64,
}

/// One point per prefix position for decoder `layer` (0-based).
pub fn eos_residual_points<S: Scalar>(attributor: &Attributor<'_, S>, layer: usize) -> Result<Vec<EosResidualPoint>> {
    let matrices = attributor.decoder_layer_matrices(layer)?;
    let attn = attributor.trace().decoder[layer].cross_attn.mean_over_heads();
    let eos_col = attn.cols() - 1;
    Ok(matrices
        .residual_part
        .iter()
        .enumerate()
        .map(|(p, &residual)| EosResidualPoint {
            eos_attention: attn.get(p, eos_col),
            residual,
        })
        .collect())
}

/// Pearson r over every decoding step of every trace, for decoder `layer`.
pub fn eos_residual_correlation<S: Scalar>(
    model: &Transformer<S>,
    traces: &[ForwardTrace<S>],
    layer: usize,
) -> Result<EosResidualCorrelation> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for trace in traces {
        for point in eos_residual_points(&Attributor::new(model, trace), layer)? {
            xs.push(point.eos_attention);
            ys.push(point.residual);
        }
    }
    Ok(EosResidualCorrelation {
        layer,
        points: xs.len(),
        pearson: pearson(&xs, &ys)?,
    })
}

/// [`eos_residual_correlation`] for every decoder layer.
pub fn eos_residual_correlation_all_layers<S: Scalar>(
    model: &Transformer<S>,
    traces: &[ForwardTrace<S>],
) -> Result<Vec<EosResidualCorrelation>> {
    (0..model.config().num_decoder_layers)
        .map(|layer| eos_residual_correlation(model, traces, layer))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let affine: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(pearson(&xs, &affine).unwrap(), 1.0);
        assert_eq!(pearson(&xs, &neg).unwrap(), -1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn ten_points_hand_computed() {
        // x = 0..9, y = x with y[9] lowered to 0: sums worked by hand.
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let mut ys = xs.clone();
        ys[9] = 0.0;
        // mean x 4.5, mean y 3.6; Sxx 82.5; Syy 204 - 129.6 = 74.4; Sxy 204 - 162 = 42.
        let expected = 42.0 / (82.5f64.sqrt() * 74.4f64.sqrt());
        assert!((pearson(&xs, &ys).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::TooFewPoints(1))));
        assert!(matches!(pearson(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance(_))));
        assert!(pearson(&[1.0, 2.0], &[3.0]).is_err());
    }
}
