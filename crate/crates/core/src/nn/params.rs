use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2};
use rand::{distributions::Uniform, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Weight,
    Bias,
}

/// One tensor of the flat parameter vector. Weights `W^[l]` are row-major with
/// shape `(m_{l+1}, m_l)`; biases `b^[l]` have shape `(m_{l+1}, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorInfo {
    pub kind: TensorKind,
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat index map: `W^[0], ..., W^[L-1], b^[0], ..., b^[L-1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorInfo>,
    depth: usize,
    len: usize,
}

impl ParamLayout {
    pub fn from_widths(widths: &[usize]) -> Self {
        let depth = widths.len().saturating_sub(1);
        let mut tensors = Vec::with_capacity(2 * depth);
        let mut offset = 0;
        for l in 0..depth {
            let t = TensorInfo {
                kind: TensorKind::Weight,
                layer: l,
                rows: widths[l + 1],
                cols: widths[l],
                offset,
            };
            offset += t.len();
            tensors.push(t);
        }
        for l in 0..depth {
            let t = TensorInfo {
                kind: TensorKind::Bias,
                layer: l,
                rows: widths[l + 1],
                cols: 1,
                offset,
            };
            offset += t.len();
            tensors.push(t);
        }
        Self {
            tensors,
            depth,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn weight(&self, layer: usize) -> &TensorInfo {
        &self.tensors[layer]
    }

    pub fn bias(&self, layer: usize) -> &TensorInfo {
        &self.tensors[self.depth + layer]
    }

    /// Tensor that owns flat index `i`.
    pub fn locate(&self, i: usize) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.range().contains(&i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Glorot uniform, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    #[default]
    Xavier,
    /// He uniform, `a = sqrt(6 / fan_in)`.
    He,
}

impl Init {
    pub fn name(self) -> &'static str {
        match self {
            Init::Xavier => "xavier",
            Init::He => "he",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(arch: &Architecture) -> Self {
        let layout = arch.layout();
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Random weights, zero biases. Deterministic given `seed`.
    pub fn init(arch: &Architecture, init: Init, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..arch.depth() {
            let t = *p.layout.weight(l);
            let (fan_in, fan_out) = (t.cols as f64, t.rows as f64);
            let limit = match init {
                Init::Xavier => (6.0 / (fan_in + fan_out)).sqrt(),
                Init::He => (6.0 / fan_in).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut p.values[t.range()] {
                *w = rng.sample(dist);
            }
        }
        p
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::dim("parameter vector", layout.len(), values.len()));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let t = self.layout.weight(layer);
        ArrayView2::from_shape((t.rows, t.cols), &self.values[t.range()])
            .expect("layout describes a contiguous row-major block")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.layout.bias(layer).range()])
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values, "parameters")
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layout == arch.layout()
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!(
            "{what} contain a non-finite value at index {i}: {}",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Which contiguous block of the parameter vector an analysis works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "part", content = "layer", rename_all = "lowercase")]
pub enum SliceSelector {
    Weight(usize),
    Bias(usize),
    Full,
}

impl Default for SliceSelector {
    /// Hidden-to-hidden weights `W^[1]`.
    fn default() -> Self {
        SliceSelector::Weight(1)
    }
}

impl std::fmt::Display for SliceSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SliceSelector::Weight(l) => write!(f, "W{l}"),
            SliceSelector::Bias(l) => write!(f, "b{l}"),
            SliceSelector::Full => write!(f, "full"),
        }
    }
}

/// A contiguous index range of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlice {
    selector: SliceSelector,
    range: Range<usize>,
    /// Lowest layer whose parameters belong to the slice.
    layer: usize,
}

impl ParamSlice {
    pub fn new(arch: &Architecture, selector: SliceSelector) -> Result<Self> {
        let layout = arch.layout();
        let (range, layer) = match selector {
            SliceSelector::Weight(l) | SliceSelector::Bias(l) if l >= arch.depth() => {
                return Err(Error::Config(format!(
                    "slice {selector} refers to layer {l} but the network has {} affine layers",
                    arch.depth()
                )))
            }
            SliceSelector::Weight(l) => (layout.weight(l).range(), l),
            SliceSelector::Bias(l) => (layout.bias(l).range(), l),
            SliceSelector::Full => (0..layout.len(), 0),
        };
        if range.len() < 2 {
            return Err(Error::Config(format!(
                "slice {selector} has {} coordinate(s); at least 2 are required",
                range.len()
            )));
        }
        Ok(Self {
            selector,
            range,
            layer,
        })
    }

    pub fn selector(&self) -> SliceSelector {
        self.selector
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn dim(&self) -> usize {
        self.range.len()
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn extract<'a>(&self, full: &'a [f64]) -> &'a [f64] {
        &full[self.range.clone()]
    }

    /// Writes `slice_values` into `full` at the slice's coordinates.
    pub fn embed_into(&self, full: &mut [f64], slice_values: &[f64]) {
        full[self.range.clone()].copy_from_slice(slice_values);
    }

    /// Full-length vector that is zero outside the slice.
    pub fn embed_zero(&self, total: usize, slice_values: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; total];
        self.embed_into(&mut v, slice_values);
        v
    }
}
