use super::model::{Batch, GradientSet, Model};
use crate::error::Result;

/// Central finite differences of [`Model::loss`] with step `h`, over every
/// live weight and every bias. Masked entries are left at zero.
pub fn numerical_gradient(model: &Model, batch: Batch, decay: f64, h: f64) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(model);
    let mut probe = model.clone();
    let mask = model.flat_mask();
    let weights = model.flat_weights();
    for (flat, (&live, &w)) in mask.iter().zip(&weights).enumerate() {
        if !live {
            continue;
        }
        probe.set_weight(flat, w + h)?;
        let up = probe.loss(batch, decay)?;
        probe.set_weight(flat, w - h)?;
        let down = probe.loss(batch, decay)?;
        probe.set_weight(flat, w)?;
        let (l, r, c) = model.locate(flat).expect("flat index in range");
        grads.weights[l][[r, c]] = (up - down) / (2.0 * h);
    }
    for (l, layer) in model.layers().iter().enumerate() {
        for (i, &b) in layer.bias().iter().enumerate() {
            probe.set_bias(l, i, b + h)?;
            let up = probe.loss(batch, decay)?;
            probe.set_bias(l, i, b - h)?;
            let down = probe.loss(batch, decay)?;
            probe.set_bias(l, i, b)?;
            grads.biases[l][i] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}
