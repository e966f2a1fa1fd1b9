use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Inputs (`n x d`, one example per row) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Config("batch must contain at least one example".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::dim("batch labels", inputs.nrows(), labels.len()));
        }
        let inputs = inputs.as_standard_layout().into_owned();
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// First `k` rows, order preserved.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!(
                "prefix size {k} must be in 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            inputs: self.inputs.slice(s![..k, ..]).to_owned(),
            labels: self.labels[..k].to_vec(),
        })
    }
}
