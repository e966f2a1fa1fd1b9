//! Batched forward pass, softmax cross-entropy and reverse-mode gradient.
//!
//! Hidden layer `l` computes `f^[l] = r^[l] * act(W^[l-1] f^[l-1] + b^[l-1])`
//! where `r^[l]` is the dropout mask (all ones when the layer is unmasked); the
//! output layer is affine with no mask and no activation. Examples are rows,
//! so the affine map is evaluated as `F W^T + b`.

use ndarray::{Array2, ArrayView2, Axis, CowArray, Ix2, Zip};

use super::{
    arch::Architecture,
    batch::Batch,
    mask::DropoutMask,
    params::{check_finite, ParamVector},
};
use crate::error::{Error, Result};

/// How hidden-layer outputs of dropout layers are modulated.
#[derive(Debug, Clone, Copy)]
pub enum Modulation<'a> {
    /// Deterministic network: no mask, no rescaling.
    Plain,
    Mask(&'a DropoutMask),
    /// Inference mode: dropout outputs multiplied by the keep probability.
    RateScaled,
}

/// Which deterministic network accuracy is reported for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    Plain,
    RateScaled,
}

impl InferenceMode {
    pub fn modulation(self) -> Modulation<'static> {
        match self {
            InferenceMode::Plain => Modulation::Plain,
            InferenceMode::RateScaled => Modulation::RateScaled,
        }
    }
}

pub(crate) struct Evaluation {
    pub loss: f64,
    pub logits: Array2<f64>,
    /// Full-length gradient; entries of layers below the gradient floor are 0.
    pub grad: Option<Vec<f64>>,
}

/// Runs the network from layer `start`, whose unmodulated output `f^[start]`
/// is `input`. Dropout (or rate scaling) is applied to layers `>= start`. When
/// `grad_floor` is set, gradients are produced for every tensor of layer
/// `>= grad_floor` (which must be `>= start`).
pub(crate) fn evaluate(
    arch: &Architecture,
    params: &[f64],
    start: usize,
    input: ArrayView2<'_, f64>,
    labels: &[usize],
    modulation: Modulation<'_>,
    grad_floor: Option<usize>,
) -> Result<Evaluation> {
    let layout = arch.layout();
    let depth = arch.depth();
    let widths = arch.widths();
    if params.len() != layout.len() {
        return Err(Error::dim("parameter vector", layout.len(), params.len()));
    }
    check_finite(params, "parameters")?;
    if start >= depth {
        return Err(Error::Config(format!("start layer {start} beyond depth {depth}")));
    }
    if input.ncols() != widths[start] {
        return Err(Error::dim("layer input width", widths[start], input.ncols()));
    }
    let n = input.nrows();
    if labels.len() != n {
        return Err(Error::dim("labels", n, labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= arch.output_dim()) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {} classes",
            arch.output_dim()
        )));
    }
    if let Modulation::Mask(mask) = modulation {
        mask.validate(arch, n)?;
    }
    let floor = match grad_floor {
        Some(g) if g < start => {
            return Err(Error::Config(format!(
                "gradient floor {g} below evaluation start {start}"
            )))
        }
        g => g,
    };

    let view = |l: usize| -> (ArrayView2<'_, f64>, &[f64]) {
        let w = layout.weight(l);
        let w = ArrayView2::from_shape((w.rows, w.cols), &params[w.range()])
            .expect("contiguous weight block");
        (w, &params[layout.bias(l).range()])
    };

    // f^[l] for l = start..depth (post-modulation) and the gates
    // d f^[l] / d z^[l] for hidden layers above `start`.
    let mut acts: Vec<CowArray<'_, f64, Ix2>> = Vec::with_capacity(depth - start);
    let mut gates: Vec<Array2<f64>> = Vec::new();

    let mut current: CowArray<'_, f64, Ix2> = match factor_for(arch, modulation, start) {
        Some(factor) if start > 0 => {
            let mut owned = input.to_owned();
            apply_factor(&mut owned, &factor);
            owned.into()
        }
        _ => input.into(),
    };

    let mut logits = None;
    for l in start..depth {
        let (w, b) = view(l);
        let mut z = current.dot(&w.t());
        z.axis_iter_mut(Axis(0)).for_each(|mut row| {
            row.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        });
        if l + 1 == depth {
            logits = Some(z);
            acts.push(current);
            break;
        }
        let layer = l + 1;
        let act = arch.activation();
        let factor = factor_for(arch, modulation, layer);
        let keep_gate = floor.is_some_and(|g| layer > g);
        let mut gate = if keep_gate {
            z.mapv(|zi| act.derivative(zi))
        } else {
            Array2::zeros((0, 0))
        };
        z.mapv_inplace(|zi| act.apply(zi));
        if let Some(factor) = &factor {
            apply_factor(&mut z, factor);
            if keep_gate {
                apply_factor(&mut gate, factor);
            }
        }
        gates.push(gate);
        acts.push(current);
        current = z.into();
        debug_assert_eq!(current.ncols(), widths[layer]);
    }
    let logits = logits.expect("depth >= 1");

    let (loss, probs) = softmax_cross_entropy(&logits, labels, floor.is_some());
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {loss}")));
    }

    let grad = match floor {
        None => None,
        Some(g) => {
            let mut grad = vec![0.0; layout.len()];
            // dL/dz for the output layer, mean reduction.
            let mut delta = probs.expect("requested with gradient");
            let inv_n = 1.0 / n as f64;
            for (i, &y) in labels.iter().enumerate() {
                delta[[i, y]] -= 1.0;
            }
            delta.mapv_inplace(|d| d * inv_n);
            for l in (g..depth).rev() {
                let f = &acts[l - start];
                let gw = delta.t().dot(f);
                let wr = layout.weight(l).range();
                grad[wr].copy_from_slice(gw.as_standard_layout().as_slice().expect("standard"));
                let gb = delta.sum_axis(Axis(0));
                grad[layout.bias(l).range()].copy_from_slice(gb.as_slice().expect("contiguous"));
                if l > g {
                    let (w, _) = view(l);
                    let mut next = delta.dot(&w);
                    next *= &gates[l - start - 1];
                    delta = next;
                }
            }
            Some(grad)
        }
    };

    Ok(Evaluation { loss, logits, grad })
}

enum Factor<'a> {
    Rows(&'a super::mask::LayerMask),
    Scalar(f64),
}

fn factor_for<'a>(arch: &Architecture, modulation: Modulation<'a>, layer: usize) -> Option<Factor<'a>> {
    match modulation {
        Modulation::Plain => None,
        Modulation::Mask(mask) => mask.for_layer(layer).map(Factor::Rows),
        Modulation::RateScaled => arch.dropout_rate(layer).map(Factor::Scalar),
    }
}

fn apply_factor(m: &mut Array2<f64>, factor: &Factor<'_>) {
    match factor {
        Factor::Scalar(p) => m.mapv_inplace(|v| v * p),
        Factor::Rows(mask) => {
            m.axis_iter_mut(Axis(0)).enumerate().for_each(|(i, mut row)| {
                row.iter_mut().zip(mask.row(i)).for_each(|(v, r)| *v *= r);
            });
        }
    }
}

/// Mean cross-entropy of `softmax(logits)` against `labels`, using the
/// max-shifted log-sum-exp. Optionally returns the softmax probabilities.
fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    want_probs: bool,
) -> (f64, Option<Array2<f64>>) {
    let mut probs = if want_probs {
        Some(Array2::zeros(logits.raw_dim()))
    } else {
        None
    };
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[labels[i]];
        if let Some(p) = probs.as_mut() {
            Zip::from(p.row_mut(i))
                .and(&row)
                .for_each(|pi, &zi| *pi = (zi - lse).exp());
        }
    }
    (total / labels.len() as f64, probs)
}

/// Mean cross-entropy loss of precomputed logits.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim("labels", logits.nrows(), labels.len()));
    }
    Ok(softmax_cross_entropy(&logits.to_owned(), labels, false).0)
}

pub fn forward(
    arch: &Architecture,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    mask: Option<&DropoutMask>,
) -> Result<Array2<f64>> {
    let modulation = mask.map_or(Modulation::Plain, Modulation::Mask);
    forward_with(arch, params, inputs, modulation)
}

pub fn forward_with(
    arch: &Architecture,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    modulation: Modulation<'_>,
) -> Result<Array2<f64>> {
    // Labels only matter for the loss; any in-range label works here.
    let labels = vec![0; inputs.nrows()];
    Ok(evaluate(arch, params.values(), 0, inputs, &labels, modulation, None)?.logits)
}

/// Mean cross-entropy. Without a mask this is the deterministic loss `L(theta)`.
pub fn loss(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    let modulation = mask.map_or(Modulation::Plain, Modulation::Mask);
    Ok(evaluate(arch, params.values(), 0, batch.inputs(), batch.labels(), modulation, None)?.loss)
}

/// Exact gradient of [`loss`] under the given fixed mask.
pub fn gradient(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
) -> Result<ParamVector> {
    Ok(loss_and_gradient(arch, params, batch, mask)?.1)
}

pub fn loss_and_gradient(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    mask: Option<&DropoutMask>,
) -> Result<(f64, ParamVector)> {
    let modulation = mask.map_or(Modulation::Plain, Modulation::Mask);
    let eval = evaluate(
        arch,
        params.values(),
        0,
        batch.inputs(),
        batch.labels(),
        modulation,
        Some(0),
    )?;
    let grad = ParamVector::from_values(params.layout().clone(), eval.grad.expect("requested"))?;
    Ok((eval.loss, grad))
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Loss and accuracy of the deterministic network in the given inference mode.
pub fn evaluate_batch(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    mode: InferenceMode,
) -> Result<(f64, f64)> {
    let eval = evaluate(
        arch,
        params.values(),
        0,
        batch.inputs(),
        batch.labels(),
        mode.modulation(),
        None,
    )?;
    Ok((eval.loss, accuracy(eval.logits.view(), batch.labels())))
}

/// Unmodulated output `f^[layer]` of the deterministic network.
pub fn hidden_output(
    arch: &Architecture,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    layer: usize,
) -> Result<Array2<f64>> {
    if layer >= arch.depth() {
        return Err(Error::Config(format!(
            "layer {layer} is not an input or hidden layer"
        )));
    }
    if inputs.ncols() != arch.input_dim() {
        return Err(Error::dim("input width", arch.input_dim(), inputs.ncols()));
    }
    params.check_finite()?;
    let mut f = inputs.to_owned();
    for l in 0..layer {
        let mut z = f.dot(&params.weight(l).t());
        z += &params.bias(l);
        let act = arch.activation();
        z.mapv_inplace(|zi| act.apply(zi));
        f = z;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::nn::{sample_mask, Activation, DropoutLayer, Init};

    fn affine() -> (Architecture, ParamVector) {
        let a = Architecture::new(vec![1, 1], Activation::Relu, vec![]).unwrap();
        let p = ParamVector::from_values(a.layout(), vec![2.0, 1.0]).unwrap();
        (a, p)
    }

    #[test]
    fn single_affine_map() {
        let (a, p) = affine();
        let out = forward(&a, &p, array![[3.0]].view(), None).unwrap();
        assert_eq!(out, array![[7.0]]);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let a = Architecture::new(vec![3, 10], Activation::Relu, vec![]).unwrap();
        let p = ParamVector::zeros(&a);
        let b = Batch::new(array![[1.0, 2.0, 3.0], [0.0, -1.0, 4.0]], vec![3, 7]).unwrap();
        let l = loss(&a, &p, &b, None).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let a = Architecture::new(vec![1, 2], Activation::Relu, vec![]).unwrap();
        let b = Batch::new(array![[1.0]], vec![0]).unwrap();
        let mut last = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0, 1000.0] {
            let p = ParamVector::from_values(a.layout(), vec![margin, 0.0, 0.0, 0.0]).unwrap();
            let l = loss(&a, &p, &b, None).unwrap();
            assert!(l <= last && l >= 0.0);
            last = l;
        }
        assert!(last < 1e-300);
    }

    #[test]
    fn zero_mask_kills_layer() {
        let a = Architecture::new(
            vec![4, 6, 3],
            Activation::Relu,
            vec![DropoutLayer { layer: 1, rate: 0.0 }],
        )
        .unwrap();
        let p = ParamVector::init(&a, Init::Xavier, 1);
        let mut q = p.clone();
        let b1 = q.layout().bias(1).range();
        q.values_mut()[b1].copy_from_slice(&[0.5, -0.25, 2.0]);
        let mask = sample_mask(&a, 0).unwrap();
        let x = array![[1.0, 2.0, -1.0, 0.5], [0.0, 3.0, 1.0, -2.0]];
        let out = forward(&a, &q, x.view(), Some(&mask)).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -0.25, 2.0]);
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let (a, mut p) = affine();
        p.values_mut()[0] = f64::NAN;
        assert!(matches!(
            forward(&a, &p, array![[3.0]].view(), None),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (a, p) = affine();
        assert!(matches!(
            forward(&a, &p, array![[3.0, 1.0]].view(), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rate_scaling_multiplies_hidden_output() {
        let a = Architecture::new(
            vec![2, 3, 1],
            Activation::Relu,
            vec![DropoutLayer { layer: 1, rate: 0.5 }],
        )
        .unwrap();
        // W0 = I-ish, W1 = ones, biases 0.
        let p = ParamVector::from_values(
            a.layout(),
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let x = array![[1.0, 2.0]];
        let plain = forward_with(&a, &p, x.view(), Modulation::Plain).unwrap();
        let scaled = forward_with(&a, &p, x.view(), Modulation::RateScaled).unwrap();
        assert_eq!(plain[[0, 0]], 6.0);
        assert_eq!(scaled[[0, 0]], 3.0);
    }

    #[test]
    fn hidden_output_matches_forward_prefix() {
        let a = Architecture::new(vec![3, 4, 2], Activation::Tanh, vec![]).unwrap();
        let p = ParamVector::init(&a, Init::Xavier, 3);
        let x = array![[0.1, 0.2, 0.3]];
        let h = hidden_output(&a, &p, x.view(), 1).unwrap();
        let direct = (x.dot(&p.weight(0).t()) + &p.bias(0)).mapv(f64::tanh);
        assert_eq!(h, direct);
    }
}
