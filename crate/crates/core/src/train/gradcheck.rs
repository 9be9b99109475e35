//! Central finite-difference check of the analytic gradients.

use serde::Serialize;

use super::{batch_gradients, LossWeights, Prepared, Stage};
use crate::model::Model;
use crate::Error;

/// Agreement between analytic and numeric gradients for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub len: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|a - n| / max(|a|, |n|, NORM_FLOOR)` in the 2-norm.
    pub rel_error: f64,
}

/// Below this gradient norm a group is compared in absolute terms. Some
/// gradients vanish identically (a bias shared by every softmax logit), and
/// central differences carry about `1e-16 / h` of rounding noise.
pub const NORM_FLOOR: f64 = 1e-6;

fn loss(model: &Model<f64>, batch: &[&Prepared], stage: Stage, w: LossWeights) -> Result<f64, Error> {
    Ok(batch_gradients(model, batch, stage, w)?.map_or(0.0, |(l, _)| l))
}

/// Compares the gradient of the mean batch loss with central differences of
/// step `h`, for every trainable parameter.
pub fn gradient_check(
    model: &Model<f64>,
    batch: &[&Prepared],
    stage: Stage,
    w: LossWeights,
    h: f64,
) -> Result<Vec<GroupCheck>, Error> {
    let Some((_, grads)) = batch_gradients(model, batch, stage, w)? else {
        return Ok(Vec::new());
    };
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (id, p) in model.params.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.value.data().len();
        let analytic: Vec<f64> = grads.param(id).map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut numeric = vec![0.0; n];
        for (k, d) in numeric.iter_mut().enumerate() {
            let x = p.value.data()[k];
            probe.params.get_mut(id).value.data_mut()[k] = x + h;
            let up = loss(&probe, batch, stage, w)?;
            probe.params.get_mut(id).value.data_mut()[k] = x - h;
            let down = loss(&probe, batch, stage, w)?;
            probe.params.get_mut(id).value.data_mut()[k] = x;
            *d = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let (an, nn) = (norm(&analytic), norm(&numeric));
        let denom = an.max(nn).max(NORM_FLOOR);
        out.push(GroupCheck {
            name: p.name.clone(),
            len: n,
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: norm(&diff) / denom,
        });
    }
    Ok(out)
}
