//! Exact Hessian-vector products of the deterministic loss by
//! forward-over-reverse differentiation (Pearlmutter's R-operator).
//!
//! ReLU has zero second derivative away from its kink, so at a ReLU network
//! this is the almost-everywhere Hessian. Central differences of the
//! gradient instead pick up every kink crossed by the probe.

use ndarray::{Array2, ArrayView2, Axis};

use super::{
    arch::{Activation, Architecture},
    params::ParamLayout,
};
use crate::error::{Error, Result};

fn second_derivative(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Relu => 0.0,
        Activation::Tanh => {
            let t = z.tanh();
            -2.0 * t * (1.0 - t * t)
        }
    }
}

/// `H v` for the unmodulated network, where `input` is `f^[start]`.
/// `dir` is full-length and must vanish on layers below `floor`; the result
/// is full-length with zeros below `floor`.
pub(crate) fn hessian_vector(
    arch: &Architecture,
    params: &[f64],
    dir: &[f64],
    start: usize,
    input: ArrayView2<'_, f64>,
    labels: &[usize],
    floor: usize,
) -> Result<Vec<f64>> {
    let layout = arch.layout();
    let depth = arch.depth();
    if params.len() != layout.len() {
        return Err(Error::dim("parameter vector", layout.len(), params.len()));
    }
    if dir.len() != layout.len() {
        return Err(Error::dim("direction", layout.len(), dir.len()));
    }
    if floor < start || floor >= depth {
        return Err(Error::Config(format!("Hessian floor {floor} outside {start}..{depth}")));
    }
    let n = input.nrows();
    if labels.len() != n {
        return Err(Error::dim("labels", n, labels.len()));
    }
    let below = (0..depth)
        .filter(|&l| l < floor)
        .flat_map(|l| [layout.weight(l).range(), layout.bias(l).range()]);
    for r in below {
        if dir[r].iter().any(|&v| v != 0.0) {
            return Err(Error::Config(format!(
                "direction touches layers below {floor}"
            )));
        }
    }
    let act = arch.activation();
    fn block<'v>(layout: &ParamLayout, v: &'v [f64], l: usize) -> (ArrayView2<'v, f64>, &'v [f64]) {
        let w = layout.weight(l);
        let view = ArrayView2::from_shape((w.rows, w.cols), &v[w.range()]).expect("contiguous weight block");
        (view, &v[layout.bias(l).range()])
    }

    // Forward: activations f, their tangents rf, gates phi'(z) and the
    // curvature term phi''(z) * rz for each hidden layer.
    let mut f: Vec<Array2<f64>> = vec![input.to_owned()];
    let mut rf: Vec<Array2<f64>> = vec![Array2::zeros(input.raw_dim())];
    let mut gates = Vec::new();
    let mut curv = Vec::new();
    let mut logits = None;
    let mut rlogits = None;
    for l in start..depth {
        let (w, b) = block(&layout, params, l);
        let (dw, db) = block(&layout, dir, l);
        let cur = &f[l - start];
        let mut z = cur.dot(&w.t());
        let mut rz = rf[l - start].dot(&w.t()) + cur.dot(&dw.t());
        z.axis_iter_mut(Axis(0)).for_each(|mut row| row.iter_mut().zip(b).for_each(|(x, y)| *x += y));
        rz.axis_iter_mut(Axis(0)).for_each(|mut row| row.iter_mut().zip(db).for_each(|(x, y)| *x += y));
        if l + 1 == depth {
            logits = Some(z);
            rlogits = Some(rz);
            break;
        }
        let gate = z.mapv(|v| act.derivative(v));
        let c = ndarray::Zip::from(&z).and(&rz).map_collect(|&zi, &ri| second_derivative(act, zi) * ri);
        let next_rf = &gate * &rz;
        f.push(z.mapv(|v| act.apply(v)));
        rf.push(next_rf);
        gates.push(gate);
        curv.push(c);
    }
    let logits = logits.expect("depth >= 1");
    let rlogits = rlogits.expect("depth >= 1");

    // Softmax and its tangent.
    let inv_n = 1.0 / n as f64;
    let mut delta = Array2::zeros(logits.raw_dim());
    let mut rdelta = Array2::zeros(logits.raw_dim());
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = p.iter().sum();
        let r = rlogits.row(i);
        let pr: f64 = p.iter().zip(r).map(|(a, b)| a / s * b).sum();
        for k in 0..p.len() {
            let pk = p[k] / s;
            delta[[i, k]] = pk * inv_n;
            rdelta[[i, k]] = pk * (r[k] - pr) * inv_n;
        }
        delta[[i, labels[i]]] -= inv_n;
    }
    if rdelta.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Numeric("Hessian-vector product is not finite".into()));
    }

    let mut out = vec![0.0; layout.len()];
    for l in (floor..depth).rev() {
        let fl = &f[l - start];
        let rfl = &rf[l - start];
        let rgw = rdelta.t().dot(fl) + delta.t().dot(rfl);
        out[layout.weight(l).range()].copy_from_slice(rgw.as_standard_layout().as_slice().expect("standard"));
        let rgb = rdelta.sum_axis(Axis(0));
        out[layout.bias(l).range()].copy_from_slice(rgb.as_slice().expect("contiguous"));
        if l > floor {
            let (w, _) = block(&layout, params, l);
            let (dw, _) = block(&layout, dir, l);
            let back = delta.dot(&w);
            let rback = rdelta.dot(&w) + delta.dot(&dw);
            let k = l - start - 1;
            rdelta = &rback * &gates[k] + &back * &curv[k];
            delta = back * &gates[k];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Hessian-vector product is not finite".into()));
    }
    Ok(out)
}
