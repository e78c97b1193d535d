use crate::augment::PairClass;
use crate::encoder::{Matrix, Params, Tape, MAX_TEMPERATURE, MIN_TEMPERATURE};

use super::batch::Batch;

/// Coefficients of the two loss families in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub contrastive: f64,
    pub classification: f64,
}

impl LossWeights {
    pub fn total(cl_weight: f64) -> Self {
        LossWeights {
            contrastive: 1.0,
            classification: cl_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub mol2txt: f64,
    pub txt2mol: f64,
    pub classification: f64,
    pub total: f64,
}

impl LossParts {
    pub fn contrastive(&self) -> f64 {
        self.mol2txt + self.txt2mol
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossParts,
    /// One entry per tensor of [`Params::tensors`].
    pub gradients: Vec<Matrix>,
    /// Whether the classifier's argmax matched each batch pair's class.
    pub correct: Vec<bool>,
}

pub fn class_index(c: PairClass) -> usize {
    match c {
        PairClass::S => 0,
        PairClass::Sm => 1,
        PairClass::St => 2,
    }
}

/// Losses, gradients and classifier outcomes for one batch.
///
/// The contrastive part sums both retrieval directions; each direction is a
/// mean over its anchors. The classifier sees each pair's unit-normalized
/// embeddings concatenated molecule first; on raw outputs it inflates feature
/// norms along a kind direction and crowds out the cosine geometry.
pub fn evaluate(params: &Params, batch: &Batch, weights: LossWeights) -> Evaluation {
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape);
    let mols: Vec<_> = batch
        .mol_items
        .iter()
        .map(|m| vars.mol.encode(&mut tape, &m.ids))
        .collect();
    let texts: Vec<_> = batch
        .text_items
        .iter()
        .map(|t| vars.text.encode(&mut tape, &t.ids))
        .collect();
    let m = tape.stack_rows(mols);
    let t = tape.stack_rows(texts);

    let mn = tape.normalize_rows(m);
    let tn = tape.normalize_rows(t);
    let cos = tape.matmul_t(mn, tn);
    let lit = tape.clamp(
        vars.log_inv_temp,
        (1.0 / MAX_TEMPERATURE).ln(),
        (1.0 / MIN_TEMPERATURE).ln(),
    );
    let inv_temp = tape.exp(lit);
    let logits = tape.scale_by(cos, inv_temp);
    let mol2txt = tape.multi_positive_loss(logits, batch.mol_anchors.clone());
    let logits_t = tape.transpose(logits);
    let txt2mol = tape.multi_positive_loss(logits_t, batch.text_anchors.clone());

    let gm = tape.gather_rows(mn, batch.pairs.iter().map(|p| p.mol).collect());
    let gt = tape.gather_rows(tn, batch.pairs.iter().map(|p| p.text).collect());
    let z = tape.concat_cols(gm, gt);
    let z = tape.matmul(z, vars.cls_w);
    let cls_logits = tape.add_row(z, vars.cls_b);
    let targets: Vec<usize> = batch.pairs.iter().map(|p| class_index(p.class)).collect();
    let correct = targets
        .iter()
        .enumerate()
        .map(|(i, &y)| argmax(tape.value(cls_logits).row(i)) == y)
        .collect();
    let classification = tape.cross_entropy(cls_logits, targets);

    let contrastive = tape.add(mol2txt, txt2mol);
    let contrastive = tape.scale(contrastive, weights.contrastive);
    let classification_w = tape.scale(classification, weights.classification);
    let total = tape.add(contrastive, classification_w);

    let mut grads = tape.backward(total);
    let loss = LossParts {
        mol2txt: tape.value(mol2txt).item(),
        txt2mol: tape.value(txt2mol).item(),
        classification: tape.value(classification).item(),
        total: tape.value(total).item(),
    };
    Evaluation {
        loss,
        gradients: vars.gradients(&tape, &mut grads),
        correct,
    }
}

/// First index of the largest value.
fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            },
        )
        .0
}

/// Contrastive loss in both directions and its gradients.
pub fn contrastive_loss(params: &Params, batch: &Batch) -> (f64, Vec<Matrix>) {
    let e = evaluate(
        params,
        batch,
        LossWeights {
            contrastive: 1.0,
            classification: 0.0,
        },
    );
    (e.loss.contrastive(), e.gradients)
}

/// Mean relation-classification cross-entropy and its gradients.
pub fn classification_loss(params: &Params, batch: &Batch) -> (f64, Vec<Matrix>) {
    let e = evaluate(
        params,
        batch,
        LossWeights {
            contrastive: 0.0,
            classification: 1.0,
        },
    );
    (e.loss.classification, e.gradients)
}

/// Central finite-difference estimate of the total objective's gradient,
/// laid out like [`Evaluation::gradients`].
pub fn numeric_gradients(params: &Params, batch: &Batch, weights: LossWeights, eps: f64) -> Vec<Matrix> {
    let mut probe = params.clone();
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, m)| m.shape()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (t, &(rows, cols)) in shapes.iter().enumerate() {
        let mut g = Matrix::zeros(rows, cols);
        for k in 0..rows * cols {
            let x = params.tensors()[t].1.data()[k];
            let mut loss_at = |v: f64| {
                probe.tensors_mut()[t].1.data_mut()[k] = v;
                evaluate(&probe, batch, weights).loss.total
            };
            let (up, down) = (loss_at(x + eps), loss_at(x - eps));
            probe.tensors_mut()[t].1.data_mut()[k] = x;
            g.data_mut()[k] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Agreement between analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest per-tensor `|a - n| / max(|a|, |n|)` in the Frobenius norm.
    pub max_relative: f64,
    /// Largest element-wise `|a - n|`.
    pub max_absolute: f64,
}

/// Compares [`evaluate`]'s gradients with [`numeric_gradients`].
///
/// Relative error is taken per tensor: element-wise ratios blow up on
/// near-zero entries where the central difference's truncation error, not
/// the analytic gradient, dominates.
pub fn check_gradients(params: &Params, batch: &Batch, weights: LossWeights, eps: f64) -> GradientCheck {
    let analytic = evaluate(params, batch, weights).gradients;
    let numeric = numeric_gradients(params, batch, weights, eps);
    let mut check = GradientCheck {
        max_relative: 0.0,
        max_absolute: 0.0,
    };
    for (a, n) in analytic.iter().zip(&numeric) {
        let diff = a.data().iter().zip(n.data()).map(|(x, y)| x - y);
        let norm = diff.clone().map(|d| d * d).sum::<f64>().sqrt();
        let scale = a.frobenius_norm().max(n.frobenius_norm());
        if scale > 0.0 {
            check.max_relative = check.max_relative.max(norm / scale);
        }
        check.max_absolute = diff.fold(check.max_absolute, |m, d| m.max(d.abs()));
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }
}
