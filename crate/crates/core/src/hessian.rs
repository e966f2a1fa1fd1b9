//! Dense Hessians of the deterministic loss on a parameter slice, either
//! exact (forward-over-reverse) or by central differences of the gradient,
//! and the alignment indicator `Tr(H Sigma)` against isotropic noise.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{
    error::{Error, Result},
    linalg::{max_abs, max_asymmetry, trace, trace_of_product, Spectrum},
    nn::{DropoutLayer, MaskScope, ParamSlice, StepRecord, Trainer},
    noise::{covariance, projected_variance, sample_gradients, SampleSet},
    objective::{NetworkObjective, Objective},
    par,
};

/// Default FD step `1e-4 * (1 + |theta|_inf)`.
pub fn default_step(point: &[f64]) -> f64 {
    1e-4 * (1.0 + point.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Hessian-vector product by central differences of the gradient:
/// `(g(x + h v) - g(x - h v)) / 2h`.
pub fn hvp(objective: &impl Objective, point: &[f64], dir: &[f64], h: f64) -> Result<Vec<f64>> {
    let d = objective.dim();
    if point.len() != d {
        return Err(Error::dim("hvp point", d, point.len()));
    }
    if dir.len() != d {
        return Err(Error::dim("hvp direction", d, dir.len()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("FD step must be positive, got {h}")));
    }
    let shifted = |s: f64| -> Vec<f64> { point.iter().zip(dir).map(|(p, v)| p + s * v).collect() };
    let gp = objective.gradient(&shifted(h))?;
    let gm = objective.gradient(&shifted(-h))?;
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Hessian-vector product is not finite".into()));
    }
    Ok(out)
}

/// How Hessian columns are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMethod {
    /// Exact products from the objective; ReLU kinks contribute nothing.
    #[default]
    Exact,
    /// Central differences of the analytic gradient.
    FdOfGradient,
}

impl HessianMethod {
    pub fn name(self) -> &'static str {
        match self {
            HessianMethod::Exact => "exact",
            HessianMethod::FdOfGradient => "fd-of-gradient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HessianOptions {
    pub method: HessianMethod,
    /// Largest dimension assembled densely.
    pub max_dim: usize,
    /// FD step; `None` uses [`default_step`].
    pub step: Option<f64>,
    /// Fail when `max|H - H^T| > asymmetry_tol * max|H|`.
    pub asymmetry_tol: f64,
}

impl Default for HessianOptions {
    fn default() -> Self {
        Self {
            method: HessianMethod::Exact,
            max_dim: 4096,
            step: None,
            asymmetry_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    matrix: Array2<f64>,
    point: Vec<f64>,
    method: HessianMethod,
    step: f64,
    asymmetry: f64,
}

impl HessianMatrix {
    pub fn method(&self) -> HessianMethod {
        self.method
    }

    /// Symmetrized matrix.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    /// FD step, or 0 for exact assembly.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// `max|H - H^T|` of the raw columns.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

/// Dense Hessian with column `j = hvp(e_j)`, symmetrized. Columns are
/// independent and computed in parallel.
pub fn assemble_hessian(objective: &impl Objective, point: &[f64], options: &HessianOptions) -> Result<HessianMatrix> {
    let d = objective.dim();
    if point.len() != d {
        return Err(Error::dim("Hessian point", d, point.len()));
    }
    if d > options.max_dim {
        return Err(Error::Config(format!(
            "Hessian dimension {d} exceeds the cap of {} columns",
            options.max_dim
        )));
    }
    let h = match options.method {
        HessianMethod::Exact => {
            if objective.exact_hvp(point, &vec![0.0; d]).is_none() {
                return Err(Error::Config(
                    "objective has no exact Hessian-vector product; use method fd-of-gradient".into(),
                ));
            }
            0.0
        }
        HessianMethod::FdOfGradient => options.step.unwrap_or_else(|| default_step(point)),
    };
    let columns = par::try_map_range(d, |j| {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        match options.method {
            HessianMethod::Exact => objective.exact_hvp(point, &e).expect("checked above"),
            HessianMethod::FdOfGradient => hvp(objective, point, &e, h),
        }
    })?;
    let mut raw = Array2::zeros((d, d));
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            raw[[i, j]] = v;
        }
    }
    let asymmetry = max_asymmetry(raw.view());
    let scale = max_abs(raw.view());
    if asymmetry > options.asymmetry_tol * scale {
        return Err(Error::Asymmetry { asymmetry, scale });
    }
    Ok(HessianMatrix {
        matrix: crate::linalg::symmetrize(raw.view())?,
        point: point.to_vec(),
        method: options.method,
        step: h,
        asymmetry,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub index: usize,
    pub eigenvalue: f64,
    pub variance: f64,
}

/// `(lambda_i(H), Var(Proj_{v_i(H)}(S)))` for the leading `k_top` Hessian
/// eigenpairs.
pub fn hessian_projection_scatter(spectrum: &Spectrum, samples: &SampleSet, k_top: usize) -> Result<Vec<ProjectionPoint>> {
    if spectrum.dim() != samples.dim() {
        return Err(Error::dim("Hessian vs sample slice", spectrum.dim(), samples.dim()));
    }
    if k_top > spectrum.dim() {
        return Err(Error::Config(format!("k_top = {k_top} exceeds the dimension {}", spectrum.dim())));
    }
    (0..k_top)
        .map(|i| {
            let v = spectrum.vector(i).to_vec();
            Ok(ProjectionPoint {
                index: i,
                eigenvalue: spectrum.values()[i],
                variance: projected_variance(samples, &v)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub step: usize,
    pub tr_h_sigma: f64,
    pub tr_h_sigma_bar: f64,
    pub tr_h: f64,
    pub tr_sigma: f64,
    /// `tr_h_sigma / tr_h_sigma_bar`.
    pub ratio: f64,
}

impl AlignmentRecord {
    /// Terms for one `(H, Sigma)` pair; `Sigma_bar = Tr(Sigma) / D * I`, so
    /// `Tr(H Sigma_bar)` uses its closed form.
    pub fn from_matrices(step: usize, h: ArrayView2<'_, f64>, sigma: ArrayView2<'_, f64>) -> Result<Self> {
        let d = h.nrows();
        if d == 0 {
            return Err(Error::Config("alignment needs a non-empty slice".into()));
        }
        let tr_h_sigma = trace_of_product(h, sigma)?;
        let tr_h = trace(h);
        let tr_sigma = trace(sigma);
        let tr_h_sigma_bar = tr_h * tr_sigma / d as f64;
        Ok(Self {
            step,
            tr_h_sigma,
            tr_h_sigma_bar,
            tr_h,
            tr_sigma,
            ratio: tr_h_sigma / tr_h_sigma_bar,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFailure {
    pub step: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub records: Vec<AlignmentRecord>,
    pub failures: Vec<AlignmentFailure>,
    pub curve: Vec<StepRecord>,
}

pub const ALIGNMENT_CSV_HEADER: &str = "step,tr_H_Sigma,tr_H_Sigma_bar,tr_H,tr_Sigma,ratio";

impl AlignmentTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{ALIGNMENT_CSV_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.tr_h_sigma, r.tr_h_sigma_bar, r.tr_h, r.tr_sigma, r.ratio
            ));
        }
        out
    }

    /// Fraction of records with `Tr(H Sigma) > Tr(H Sigma_bar)`.
    pub fn fraction_aligned(&self) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        let n = self.records.iter().filter(|r| r.tr_h_sigma > r.tr_h_sigma_bar).count();
        n as f64 / self.records.len() as f64
    }

    pub fn median_ratio(&self) -> f64 {
        let mut r: Vec<f64> = self.records.iter().map(|r| r.ratio).collect();
        if r.is_empty() {
            return f64::NAN;
        }
        r.sort_by(f64::total_cmp);
        let m = r.len() / 2;
        if r.len() % 2 == 1 {
            r[m]
        } else {
            0.5 * (r[m - 1] + r[m])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOptions {
    /// Dropout added only for noise sampling; training itself runs without.
    pub probe: Vec<DropoutLayer>,
    pub samples: usize,
    pub stride: usize,
    pub steps: usize,
    pub mask_scope: MaskScope,
    pub seed: u64,
    pub hessian: HessianOptions,
}

fn probe_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `Tr(H Sigma)` at frozen parameters: gradient noise under the probe masks
/// against the Hessian of the deterministic loss, both on `slice`.
pub fn alignment_at(
    trainer: &Trainer<'_>,
    slice: &ParamSlice,
    options: &AlignmentOptions,
) -> Result<AlignmentRecord> {
    let step = trainer.steps_taken();
    let probe_arch = trainer.arch().without_dropout().with_dropout(options.probe.clone())?;
    let samples = sample_gradients(
        &probe_arch,
        trainer.params(),
        trainer.batch(),
        slice,
        options.mask_scope,
        options.samples,
        probe_seed(options.seed, step),
    )?;
    let sigma = covariance(&samples);
    let objective = NetworkObjective::new(&trainer.arch().without_dropout(), trainer.params(), trainer.batch(), slice.clone())?;
    let h = assemble_hessian(&objective, &objective.center(), &options.hessian)?;
    AlignmentRecord::from_matrices(step, h.matrix(), sigma.view())
}

/// Trains for `options.steps` steps and records the alignment terms every
/// `options.stride` steps. A failed measurement is recorded and skipped;
/// training errors abort.
pub fn alignment_trace(trainer: &mut Trainer<'_>, slice: &ParamSlice, options: &AlignmentOptions) -> Result<AlignmentTrace> {
    if options.stride == 0 {
        return Err(Error::Config("alignment stride must be at least 1".into()));
    }
    if options.probe.is_empty() {
        return Err(Error::Config("alignment needs a probe dropout layer".into()));
    }
    trainer.arch().without_dropout().with_dropout(options.probe.clone())?;
    let mut trace = AlignmentTrace::default();
    for _ in 0..options.steps {
        trace.curve.push(trainer.step()?);
        let step = trainer.steps_taken();
        if step % options.stride != 0 {
            continue;
        }
        match alignment_at(trainer, slice, options) {
            Ok(r) => trace.records.push(r),
            Err(e) => {
                log::warn!("alignment at step {step} failed: {e}");
                trace.failures.push(AlignmentFailure {
                    step,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::{data::QuadraticTask, linalg::eigh, linalg::SpectrumSource};

    #[test]
    fn quadratic_hvp_is_exact() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let q = QuadraticTask::new(0.5, a.clone(), vec![0.3, -0.2]).unwrap();
        let v = [0.6, 0.8];
        let hv = hvp(&q, &[1.0, 2.0], &v, 1e-3).unwrap();
        assert!((hv[0] - 3.2).abs() < 1e-10 && (hv[1] - 3.0).abs() < 1e-10, "{hv:?}");
    }

    #[test]
    fn diagonal_hessian_recovered() {
        let q = QuadraticTask::diagonal(1.0, &[4.0, 1.0], vec![0.0, 0.0]).unwrap();
        for method in [HessianMethod::Exact, HessianMethod::FdOfGradient] {
            let opts = HessianOptions {
                method,
                ..HessianOptions::default()
            };
            let h = assemble_hessian(&q, &[0.1, -0.4], &opts).unwrap();
            assert_eq!(h.method(), method);
            let expected = array![[4.0, 0.0], [0.0, 1.0]];
            assert!(h.matrix().iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
            let s = eigh(h.matrix(), SpectrumSource::Hessian).unwrap();
            assert!((s.values()[0] - 4.0).abs() < 1e-10 && (s.values()[1] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_matches_differences_on_smooth_network() {
        use crate::nn::{Activation, Architecture, Batch, Init, ParamSlice, ParamVector, SliceSelector};
        let a = Architecture::new(vec![4, 5, 3, 3], Activation::Tanh, vec![]).unwrap();
        let p = ParamVector::init(&a, Init::Xavier, 9);
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4);
        let b = Batch::new(x, vec![0, 1, 2, 1, 0, 2]).unwrap();
        for sel in [SliceSelector::Weight(1), SliceSelector::Full] {
            let obj = NetworkObjective::new(&a, &p, &b, ParamSlice::new(&a, sel).unwrap()).unwrap();
            let c = obj.center();
            let exact = assemble_hessian(&obj, &c, &HessianOptions::default()).unwrap();
            let fd = assemble_hessian(
                &obj,
                &c,
                &HessianOptions {
                    method: HessianMethod::FdOfGradient,
                    ..HessianOptions::default()
                },
            )
            .unwrap();
            assert!(exact.asymmetry() <= 1e-12 * max_abs(exact.matrix()), "{sel}");
            let scale = max_abs(exact.matrix());
            let err = exact
                .matrix()
                .iter()
                .zip(fd.matrix().iter())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1e-6 * scale, "{sel}: {err} vs {scale}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let q = QuadraticTask::diagonal(1.0, &[1.0; 3], vec![0.0; 3]).unwrap();
        let opts = HessianOptions {
            max_dim: 2,
            ..HessianOptions::default()
        };
        assert!(matches!(assemble_hessian(&q, &[0.0; 3], &opts), Err(Error::Config(_))));
    }

    #[test]
    fn identity_curvature_ratio_is_one() {
        let h = Array2::<f64>::eye(3);
        let sigma = array![[2.0, 0.5, 0.0], [0.5, 1.0, 0.1], [0.0, 0.1, 3.0]];
        let r = AlignmentRecord::from_matrices(0, h.view(), sigma.view()).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-15);
        assert_eq!(r.tr_h_sigma, 6.0);
    }

    #[test]
    fn rank_one_alignment_attains_dimension() {
        let d = 5;
        let mut h = Array2::zeros((d, d));
        let mut s = Array2::zeros((d, d));
        h[[0, 0]] = 3.0;
        s[[0, 0]] = 0.7;
        let r = AlignmentRecord::from_matrices(0, h.view(), s.view()).unwrap();
        assert!((r.tr_h_sigma - 2.1).abs() < 1e-15);
        assert!((r.tr_h_sigma_bar - 2.1 / 5.0).abs() < 1e-15);
        assert!((r.ratio - 5.0).abs() < 1e-12);
    }

    #[test]
    fn trace_summaries() {
        let rec = |step, ratio: f64| AlignmentRecord {
            step,
            tr_h_sigma: ratio,
            tr_h_sigma_bar: 1.0,
            tr_h: 1.0,
            tr_sigma: 1.0,
            ratio,
        };
        let t = AlignmentTrace {
            records: vec![rec(10, 3.0), rec(20, 0.5), rec(30, 5.0), rec(40, 2.0)],
            ..AlignmentTrace::default()
        };
        assert_eq!(t.fraction_aligned(), 0.75);
        assert_eq!(t.median_ratio(), 2.5);
        let csv = t.to_csv();
        assert!(csv.starts_with(ALIGNMENT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
