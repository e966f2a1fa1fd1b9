//! Scalar objectives with gradients: the loss callbacks consumed by the
//! landscape and Hessian code.

use ndarray::{Array2, ArrayView2};

use crate::{
    error::{Error, Result},
    nn::{evaluate, hessian_vector, hidden_output, Architecture, Batch, DropoutMask, Modulation, ParamSlice, ParamVector},
};

pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, point: &[f64]) -> Result<f64>;

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>>;

    /// Exact Hessian-vector product, for objectives that have one.
    fn exact_hvp(&self, _point: &[f64], _dir: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, point: &[f64]) -> Result<f64> {
        (**self).loss(point)
    }
    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(point)
    }
    fn exact_hvp(&self, point: &[f64], dir: &[f64]) -> Option<Result<Vec<f64>>> {
        (**self).exact_hvp(point, dir)
    }
}

/// Deterministic network loss `L(theta)` (no mask, no rescaling) as a function
/// of the coordinates in one [`ParamSlice`], all other parameters frozen at
/// `base`.
///
/// The output of the layer feeding the slice does not depend on the slice, so
/// it is computed once and every evaluation starts from there.
pub struct NetworkObjective<'a> {
    arch: Architecture,
    batch: &'a Batch,
    base: Vec<f64>,
    slice: ParamSlice,
    start: usize,
    prefix: Option<Array2<f64>>,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(arch: &Architecture, params: &ParamVector, batch: &'a Batch, slice: ParamSlice) -> Result<Self> {
        Self::with_start(arch, params, batch, slice, None)
    }

    /// Objective over every parameter.
    pub fn full(arch: &Architecture, params: &ParamVector, batch: &'a Batch) -> Result<Self> {
        let slice = ParamSlice::new(arch, crate::nn::SliceSelector::Full)?;
        Self::new(arch, params, batch, slice)
    }

    /// Like [`NetworkObjective::new`] but evaluation starts no higher than the
    /// first dropout layer so that masks can be applied.
    pub(crate) fn for_masks(
        arch: &Architecture,
        params: &ParamVector,
        batch: &'a Batch,
        slice: ParamSlice,
    ) -> Result<Self> {
        let first_mask = arch.dropout().iter().map(|d| d.layer).min();
        Self::with_start(arch, params, batch, slice, first_mask)
    }

    fn with_start(
        arch: &Architecture,
        params: &ParamVector,
        batch: &'a Batch,
        slice: ParamSlice,
        cap: Option<usize>,
    ) -> Result<Self> {
        if !params.matches(arch) {
            return Err(Error::dim("parameter vector", arch.num_params(), params.len()));
        }
        if batch.input_dim() != arch.input_dim() {
            return Err(Error::dim("batch input width", arch.input_dim(), batch.input_dim()));
        }
        let start = cap.map_or(slice.layer(), |c| c.min(slice.layer()));
        let prefix = if start > 0 {
            Some(hidden_output(arch, params, batch.inputs(), start)?)
        } else {
            None
        };
        Ok(Self {
            arch: arch.clone(),
            batch,
            base: params.values().to_vec(),
            slice,
            start,
            prefix,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn slice(&self) -> &ParamSlice {
        &self.slice
    }

    pub fn batch(&self) -> &Batch {
        self.batch
    }

    /// Slice coordinates of the base parameters.
    pub fn center(&self) -> Vec<f64> {
        self.slice.extract(&self.base).to_vec()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Full parameter vector with the slice set to `point`.
    pub fn full_point(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.slice.dim() {
            return Err(Error::dim("slice point", self.slice.dim(), point.len()));
        }
        let mut full = self.base.clone();
        self.slice.embed_into(&mut full, point);
        Ok(full)
    }

    fn input(&self) -> ArrayView2<'_, f64> {
        match &self.prefix {
            Some(p) => p.view(),
            None => self.batch.inputs(),
        }
    }

    fn run(&self, point: &[f64], modulation: Modulation<'_>, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let full = self.full_point(point)?;
        let floor = with_grad.then_some(self.slice.layer());
        let eval = evaluate(
            &self.arch,
            &full,
            self.start,
            self.input(),
            self.batch.labels(),
            modulation,
            floor,
        )?;
        let grad = eval.grad.map(|g| self.slice.extract(&g).to_vec());
        Ok((eval.loss, grad))
    }

    /// Gradient of the masked loss with respect to the slice.
    pub fn masked_gradient(&self, point: &[f64], mask: &DropoutMask) -> Result<Vec<f64>> {
        if let Some(low) = mask.layers().iter().map(|m| m.layer).min() {
            if low < self.start {
                return Err(Error::Config(format!(
                    "mask on layer {low} lies below the cached evaluation start {}",
                    self.start
                )));
            }
        }
        Ok(self.run(point, Modulation::Mask(mask), true)?.1.expect("requested"))
    }

    pub fn loss_and_gradient(&self, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.run(point, Modulation::Plain, true)?;
        Ok((l, g.expect("requested")))
    }
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.slice.dim()
    }

    fn loss(&self, point: &[f64]) -> Result<f64> {
        Ok(self.run(point, Modulation::Plain, false)?.0)
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(point, Modulation::Plain, true)?.1.expect("requested"))
    }

    fn exact_hvp(&self, point: &[f64], dir: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.hvp(point, dir))
    }
}

impl NetworkObjective<'_> {
    fn hvp(&self, point: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        if dir.len() != self.slice.dim() {
            return Err(Error::dim("hvp direction", self.slice.dim(), dir.len()));
        }
        let full = self.full_point(point)?;
        let full_dir = self.slice.embed_zero(full.len(), dir);
        let hv = hessian_vector(
            &self.arch,
            &full,
            &full_dir,
            self.start,
            self.input(),
            self.batch.labels(),
            self.slice.layer(),
        )?;
        Ok(self.slice.extract(&hv).to_vec())
    }
}
