//! Dropout-induced randomness: trajectory and gradient samples, their
//! covariance and PCA, projected variances and power-law fits.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{
    codec::{put_f64s, read_file, write_file, ByteReader},
    error::{Error, Result},
    landscape::{interval_flatness, Direction, FlatnessOptions, FlatnessRecord, Provenance},
    linalg::{Spectrum, SpectrumSource},
    nn::{
        evaluate_batch, sample_batch_mask, stream_rng, Architecture, Batch, InferenceMode, MaskScope,
        ParamSlice, ParamVector, StepRecord, Trainer,
    },
    objective::{NetworkObjective, Objective},
    par,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    /// Parameters from consecutive training steps.
    Trajectory,
    /// Gradients at frozen parameters under independent masks.
    Gradient,
}

impl SampleKind {
    fn tag(self) -> u8 {
        match self {
            SampleKind::Trajectory => 0,
            SampleKind::Gradient => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SampleKind::Trajectory => "trajectory",
            SampleKind::Gradient => "gradient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub kind: SampleKind,
    pub seed: u64,
    /// Keep probability of the dropout layer(s); 1 without dropout.
    pub dropout_rate: f64,
    /// Learning rate of the run that produced trajectory samples.
    pub learning_rate: Option<f64>,
    /// First and last training step covered (inclusive); gradient samples
    /// record the step at which parameters were frozen twice.
    pub step_range: (u64, u64),
}

/// `N x D` matrix of samples restricted to a parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
    meta: SampleMeta,
}

impl SampleSet {
    pub fn new(data: Array2<f64>, meta: SampleMeta) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::Config(format!("a sample set needs N >= 2 rows, got {}", data.nrows())));
        }
        if data.ncols() == 0 {
            return Err(Error::Config("samples must have at least one coordinate".into()));
        }
        if let Some(i) = data.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("sample row {i} has non-finite entries")));
        }
        Ok(Self { data, meta })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, meta: SampleMeta) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::dim("sample row", d, bad.len()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let data = Array2::from_shape_vec((n, d), flat).expect("shape checked");
        Self::new(data, meta)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn kind(&self) -> SampleKind {
        self.meta.kind
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i).to_slice().expect("standard layout")
    }

    pub fn mean(&self) -> Vec<f64> {
        self.data.mean_axis(Axis(0)).expect("N >= 2").to_vec()
    }

    /// The first `k` samples. For a trajectory this is `k` consecutive steps
    /// and the step range shrinks accordingly.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k > self.len() {
            return Err(Error::Config(format!("requested {k} samples but the set has {}", self.len())));
        }
        let mut meta = self.meta;
        if meta.kind == SampleKind::Trajectory {
            meta.step_range.1 = meta.step_range.0 + k as u64 - 1;
        }
        Self::new(self.data.slice(ndarray::s![..k, ..]).to_owned(), meta)
    }
}

/// Mean-centered sample covariance with `1 / (N - 1)` normalization, made
/// exactly symmetric.
pub fn covariance(samples: &SampleSet) -> Array2<f64> {
    let n = samples.len();
    let mean = samples.data.mean_axis(Axis(0)).expect("N >= 2");
    let centered = &samples.data - &mean;
    let mut cov = centered.t().dot(&centered);
    let scale = 1.0 / (n as f64 - 1.0);
    let d = cov.nrows();
    for i in 0..d {
        cov[[i, i]] *= scale;
        for j in 0..i {
            let v = cov[[i, j]] * scale;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    cov
}

/// Variance of the projections `<s_i, v>` with the `1 / (N - 1)` convention.
/// `v` is expected to be unit-norm.
pub fn projected_variance(samples: &SampleSet, v: &[f64]) -> Result<f64> {
    if v.len() != samples.dim() {
        return Err(Error::dim("projection direction", samples.dim(), v.len()));
    }
    let proj: Vec<f64> = samples
        .data
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    let n = proj.len() as f64;
    let mean = proj.iter().sum::<f64>() / n;
    Ok(proj.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0))
}

/// Directions whose eigenvalue is below `LAMBDA_FLOOR_REL * lambda_1` are
/// treated as numerically null.
pub const LAMBDA_FLOOR_REL: f64 = 1e-12;

/// Indices of the leading `k` eigenpairs above the eigenvalue floor.
pub fn leading_indices(spectrum: &Spectrum, k: usize) -> Result<Vec<usize>> {
    if k > spectrum.dim() {
        return Err(Error::Config(format!(
            "k_top = {k} exceeds the dimension {}",
            spectrum.dim()
        )));
    }
    let top = spectrum.values().first().copied().unwrap_or(0.0);
    let floor = LAMBDA_FLOOR_REL * top;
    Ok((0..k)
        .filter(|&i| top > 0.0 && spectrum.values()[i] > floor)
        .collect())
}

/// Interval flatness along each of the top `k` covariance eigenvectors
/// (unit-norm, embedded in the objective's coordinates). Directions below
/// the eigenvalue floor are skipped.
pub fn pca_flatness_scatter(
    spectrum: &Spectrum,
    objective: &impl Objective,
    center: &[f64],
    k_top: usize,
    options: &FlatnessOptions,
) -> Result<Vec<FlatnessRecord>> {
    if spectrum.dim() != objective.dim() {
        return Err(Error::dim("spectrum", objective.dim(), spectrum.dim()));
    }
    let idx = leading_indices(spectrum, k_top)?;
    par::try_map_range(idx.len(), |j| {
        let i = idx[j];
        let dir = Direction::normalized(spectrum.vector(i).to_vec(), Provenance::Pca(i))?;
        Ok(FlatnessRecord {
            direction_id: i,
            provenance: Provenance::Pca(i),
            eigenvalue: Some(spectrum.values()[i]),
            profile: interval_flatness(objective, center, &dir, options)?,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Least-squares slope of `ln y` on `ln x`.
    pub slope: f64,
    /// Intercept in natural-log units.
    pub intercept: f64,
    pub spearman: f64,
    pub used: usize,
    /// Pairs dropped for being nonpositive or non-finite.
    pub excluded: usize,
}

/// Fits `y = e^intercept * x^slope` on the pairs with both coordinates
/// positive and finite.
pub fn powerlaw_fit(pairs: &[(f64, f64)]) -> Result<PowerLawFit> {
    let usable = |v: f64| v.is_finite() && v > 0.0;
    let logs: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(x, y)| usable(*x) && usable(*y))
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let excluded = pairs.len() - logs.len();
    if logs.len() < 3 {
        return Err(Error::Numeric(format!(
            "power-law fit needs at least 3 positive pairs, have {} ({excluded} excluded)",
            logs.len()
        )));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("power-law fit: all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let xs: Vec<f64> = logs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = logs.iter().map(|p| p.1).collect();
    Ok(PowerLawFit {
        slope,
        intercept: my - slope * mx,
        spearman: spearman(&xs, &ys),
        used: logs.len(),
        excluded,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation; `NaN` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman: length mismatch");
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Decides when training has entered the exploration phase: the mean loss of
/// the last `window` steps dropped by less than `max_rel_decrease` relative to
/// the window before, and deterministic training accuracy is at least
/// `min_accuracy`. Checked at window boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseDetector {
    /// `0` disables detection: the phase counts as entered immediately.
    pub window: usize,
    pub max_rel_decrease: f64,
    pub min_accuracy: f64,
    pub max_steps: usize,
}

impl Default for PhaseDetector {
    fn default() -> Self {
        Self {
            window: 100,
            max_rel_decrease: 0.01,
            min_accuracy: 0.99,
            max_steps: 20_000,
        }
    }
}

impl PhaseDetector {
    pub fn disabled() -> Self {
        Self {
            window: 0,
            ..Self::default()
        }
    }

    /// Whether the loss criterion holds for the given curve.
    pub fn plateaued(&self, losses: &[f64]) -> bool {
        let w = self.window;
        if w == 0 {
            return true;
        }
        if losses.len() < 2 * w {
            return false;
        }
        let n = losses.len();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let prev = mean(&losses[n - 2 * w..n - w]);
        let cur = mean(&losses[n - w..]);
        prev > 0.0 && (prev - cur) / prev < self.max_rel_decrease
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    pub samples: SampleSet,
    /// Training step at which the exploration phase was detected.
    pub phase_step: usize,
    /// Every step taken by this call, warm-up and collection.
    pub curve: Vec<StepRecord>,
}

fn keep_rate(arch: &Architecture) -> f64 {
    arch.dropout().first().map_or(1.0, |d| d.rate)
}

/// Trains until the exploration phase, then records the slice of the
/// parameters after each of the next `n` steps.
pub fn collect_trajectory(
    trainer: &mut Trainer<'_>,
    detector: &PhaseDetector,
    n: usize,
    slice: &ParamSlice,
) -> Result<TrajectoryRun> {
    if n < 2 {
        return Err(Error::Config(format!("trajectory needs N >= 2 samples, got {n}")));
    }
    if slice.range().end > trainer.params().len() {
        return Err(Error::dim("slice end", trainer.params().len(), slice.range().end));
    }
    let mut curve: Vec<StepRecord> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    if detector.window > 0 {
        loop {
            if curve.len() >= detector.max_steps {
                return Err(Error::PhaseTimeout {
                    max_steps: detector.max_steps,
                    last_loss: losses.last().copied().unwrap_or(f64::NAN),
                    loss_curve: losses,
                });
            }
            let rec = trainer.step()?;
            curve.push(rec);
            losses.push(rec.loss);
            if curve.len() % detector.window == 0 && detector.plateaued(&losses) {
                let (_, acc) = evaluate_batch(trainer.arch(), trainer.params(), trainer.batch(), InferenceMode::Plain)?;
                if acc >= detector.min_accuracy {
                    break;
                }
            }
        }
    }
    let phase_step = trainer.steps_taken();
    let d = slice.dim();
    let mut data = Array2::zeros((n, d));
    for i in 0..n {
        curve.push(trainer.step()?);
        data.row_mut(i)
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(slice.extract(trainer.params().values()));
    }
    let meta = SampleMeta {
        kind: SampleKind::Trajectory,
        seed: trainer.seed(),
        dropout_rate: keep_rate(trainer.arch()),
        learning_rate: Some(trainer.optimizer().lr()),
        step_range: (phase_step as u64 + 1, trainer.steps_taken() as u64),
    };
    Ok(TrajectoryRun {
        samples: SampleSet::new(data, meta)?,
        phase_step,
        curve,
    })
}

/// `n` gradients of the masked loss with respect to `slice`, each under an
/// independent mask drawn from stream `j` of `seed`. Order-independent, so
/// samples are computed in parallel.
pub fn sample_gradients(
    arch: &Architecture,
    params: &ParamVector,
    batch: &Batch,
    slice: &ParamSlice,
    scope: MaskScope,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::Config(format!("gradient sampling needs N >= 2, got {n}")));
    }
    if arch.dropout().is_empty() {
        return Err(Error::Config("gradient sampling needs at least one dropout layer".into()));
    }
    if arch.dropout().iter().all(|d| d.rate == 1.0) {
        log::warn!("keep probability is 1: all {n} gradient samples will coincide");
    }
    let objective = NetworkObjective::for_masks(arch, params, batch, slice.clone())?;
    let center = objective.center();
    let rows = par::try_map_range(n, |j| {
        let mut rng = stream_rng(seed, j as u64);
        let mask = sample_batch_mask(arch, scope, batch.len(), &mut rng);
        objective.masked_gradient(&center, &mask)
    })?;
    let meta = SampleMeta {
        kind: SampleKind::Gradient,
        seed,
        dropout_rate: keep_rate(arch),
        learning_rate: None,
        step_range: (0, 0),
    };
    SampleSet::from_rows(rows, meta)
}

pub const ARCHIVE_MAGIC: &[u8; 8] = b"DFSMPL01";
const TAG_SPECTRUM: u8 = 2;

/// ```text
/// magic  "DFSMPL01"
/// kind   u8   0 = trajectory, 1 = gradient
/// n, d   u64, u64
/// p, lr  f64, f64 (lr NaN when absent)
/// seed   u64
/// steps  u64, u64
/// data   f64 x n*d, row-major
/// ```
pub fn encode_samples(s: &SampleSet) -> Vec<u8> {
    let m = &s.meta;
    let mut out = Vec::with_capacity(64 + s.data.len() * 8);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(m.kind.tag());
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(&(s.dim() as u64).to_le_bytes());
    out.extend_from_slice(&m.dropout_rate.to_le_bytes());
    out.extend_from_slice(&m.learning_rate.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&m.seed.to_le_bytes());
    out.extend_from_slice(&m.step_range.0.to_le_bytes());
    out.extend_from_slice(&m.step_range.1.to_le_bytes());
    put_f64s(&mut out, s.data.as_slice().expect("standard layout"));
    out
}

fn archive_header(r: &mut ByteReader<'_>) -> Result<u8> {
    if r.take(8, "archive magic")? != ARCHIVE_MAGIC {
        return Err(Error::Parse {
            field: "archive magic",
            message: "not a DFSMPL01 archive".into(),
        });
    }
    r.u8("archive kind")
}

fn checked_count(n: u64, d: u64, field: &'static str) -> Result<usize> {
    (n as usize).checked_mul(d as usize).ok_or_else(|| Error::Parse {
        field,
        message: format!("{n} x {d} overflows"),
    })
}

pub fn decode_samples(bytes: &[u8]) -> Result<SampleSet> {
    let mut r = ByteReader::new(bytes);
    let kind = match archive_header(&mut r)? {
        0 => SampleKind::Trajectory,
        1 => SampleKind::Gradient,
        t => {
            return Err(Error::Parse {
                field: "archive kind",
                message: format!("tag {t} is not a sample set"),
            })
        }
    };
    let n = r.u64_le("sample count")?;
    let d = r.u64_le("sample dimension")?;
    let p = r.f64_le("dropout rate")?;
    let lr = r.f64_le("learning rate")?;
    let seed = r.u64_le("seed")?;
    let s0 = r.u64_le("step range")?;
    let s1 = r.u64_le("step range")?;
    let values = r.f64s_le(checked_count(n, d, "sample data")?, "sample data")?;
    r.expect_end("sample archive")?;
    let meta = SampleMeta {
        kind,
        seed,
        dropout_rate: p,
        learning_rate: (!lr.is_nan()).then_some(lr),
        step_range: (s0, s1),
    };
    let data = Array2::from_shape_vec((n as usize, d as usize), values).expect("length checked");
    SampleSet::new(data, meta)
}

/// Spectrum in the same container: kind tag 2, then the source tag, `D`, the
/// eigenvalues and the eigenvector matrix (row-major, vectors as columns).
pub fn encode_spectrum(s: &Spectrum) -> Vec<u8> {
    let d = s.dim();
    let mut out = Vec::with_capacity(32 + (d * d + d) * 8);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(TAG_SPECTRUM);
    out.push(s.source().tag());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    put_f64s(&mut out, s.values());
    let vectors = s.vectors();
    for row in vectors.rows() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_spectrum(bytes: &[u8]) -> Result<Spectrum> {
    let mut r = ByteReader::new(bytes);
    let kind = archive_header(&mut r)?;
    if kind != TAG_SPECTRUM {
        return Err(Error::Parse {
            field: "archive kind",
            message: format!("tag {kind} is not a spectrum"),
        });
    }
    let tag = r.u8("spectrum source")?;
    let source = SpectrumSource::from_tag(tag).ok_or_else(|| Error::Parse {
        field: "spectrum source",
        message: format!("unknown source tag {tag}"),
    })?;
    let d = r.u64_le("spectrum dimension")?;
    let values = r.f64s_le(d as usize, "eigenvalues")?;
    let vectors = r.f64s_le(checked_count(d, d, "eigenvectors")?, "eigenvectors")?;
    r.expect_end("spectrum archive")?;
    let d = d as usize;
    Spectrum::from_parts(
        values,
        Array2::from_shape_vec((d, d), vectors).expect("length checked"),
        source,
    )
    .map_err(|e| Error::Parse {
        field: "eigenvalues",
        message: e.to_string(),
    })
}

pub fn save_samples(path: &std::path::Path, s: &SampleSet) -> Result<()> {
    write_file(path, &encode_samples(s))
}

pub fn load_samples(path: &std::path::Path) -> Result<SampleSet> {
    decode_samples(&read_file(path)?)
}

pub fn save_spectrum(path: &std::path::Path, s: &Spectrum) -> Result<()> {
    write_file(path, &encode_spectrum(s))
}

pub fn load_spectrum(path: &std::path::Path) -> Result<Spectrum> {
    decode_spectrum(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::linalg::{eigh, trace};

    fn meta(kind: SampleKind) -> SampleMeta {
        SampleMeta {
            kind,
            seed: 3,
            dropout_rate: 0.8,
            learning_rate: Some(0.5),
            step_range: (10, 11),
        }
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let s = SampleSet::from_rows(vec![vec![1.0, 2.0, 3.0]; 4], meta(SampleKind::Trajectory)).unwrap();
        assert!(covariance(&s).iter().all(|&v| v == 0.0));
        assert_eq!(projected_variance(&s, &[1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn prefix_keeps_leading_rows_and_steps() {
        let mut m = meta(SampleKind::Trajectory);
        m.step_range = (101, 104);
        let s = SampleSet::from_rows((0..4).map(|i| vec![i as f64, 1.0]).collect(), m).unwrap();
        let p = s.prefix(2).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.row(1), &[1.0, 1.0]);
        assert_eq!(p.meta().step_range, (101, 102));
        assert!(s.prefix(5).is_err());
    }

    #[test]
    fn opposite_pair_covariance() {
        let u = [1.0, -2.0, 0.5];
        let s = SampleSet::from_rows(vec![u.to_vec(), u.iter().map(|x| -x).collect()], meta(SampleKind::Gradient))
            .unwrap();
        let c = covariance(&s);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[[i, j]] - 2.0 * u[i] * u[j]).abs() < 1e-15);
            }
        }
        let n = crate::linalg::norm(&u);
        let v: Vec<f64> = u.iter().map(|x| x / n).collect();
        assert!((projected_variance(&s, &v).unwrap() - 2.0 * n * n).abs() < 1e-12);
    }

    #[test]
    fn two_rows_give_rank_one() {
        let s = SampleSet::from_rows(vec![vec![1.0, 0.3, -2.0], vec![0.2, 1.0, 4.0]], meta(SampleKind::Gradient))
            .unwrap();
        let spec = eigh(covariance(&s).view(), SpectrumSource::GradientCovariance).unwrap();
        assert!(spec.values()[1].abs() < 1e-12 * spec.values()[0]);
    }

    #[test]
    fn needs_two_rows() {
        assert!(SampleSet::from_rows(vec![vec![1.0]], meta(SampleKind::Gradient)).is_err());
        assert!(SampleSet::from_rows(vec![vec![1.0], vec![f64::NAN]], meta(SampleKind::Gradient)).is_err());
    }

    #[test]
    fn trace_equals_sum_of_variances() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 * 0.1 - j as f64).collect())
            .collect();
        let s = SampleSet::from_rows(rows, meta(SampleKind::Trajectory)).unwrap();
        let c = covariance(&s);
        let per: f64 = (0..5)
            .map(|j| {
                let mut e = vec![0.0; 5];
                e[j] = 1.0;
                projected_variance(&s, &e).unwrap()
            })
            .sum();
        assert!((trace(c.view()) - per).abs() < 1e-9);
    }

    #[test]
    fn powerlaw_exact_cases() {
        let sq: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 4.0 * (i * i) as f64)).collect();
        let f = powerlaw_fit(&sq).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 4f64.ln()).abs() < 1e-12);
        assert_eq!(f.spearman, 1.0);

        let inv: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 3.0 / i as f64)).collect();
        let f = powerlaw_fit(&inv).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert_eq!(f.spearman, -1.0);
    }

    #[test]
    fn powerlaw_excludes_nonpositive() {
        let mut pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, i as f64)).collect();
        pts.push((0.0, 1.0));
        pts.push((1.0, -2.0));
        pts.push((2.0, f64::INFINITY));
        let f = powerlaw_fit(&pts).unwrap();
        assert_eq!((f.used, f.excluded), (5, 3));
        assert!(powerlaw_fit(&pts[5..]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn detector_window_logic() {
        let d = PhaseDetector {
            window: 2,
            max_rel_decrease: 0.01,
            ..PhaseDetector::default()
        };
        assert!(!d.plateaued(&[1.0, 1.0, 1.0]));
        assert!(!d.plateaued(&[1.0, 1.0, 0.5, 0.5]));
        assert!(d.plateaued(&[1.0, 1.0, 0.995, 0.999]));
        assert!(d.plateaued(&[1.0, 1.0, 1.2, 1.1]));
        assert!(PhaseDetector::disabled().plateaued(&[]));
    }

    #[test]
    fn sample_archive_round_trip() {
        let s = SampleSet::from_rows(
            vec![vec![1.0, -0.0, 3.5e-300], vec![2.0, 1e300, -7.25]],
            SampleMeta {
                learning_rate: None,
                ..meta(SampleKind::Gradient)
            },
        )
        .unwrap();
        let bytes = encode_samples(&s);
        assert_eq!(&bytes[..8], ARCHIVE_MAGIC);
        let back = decode_samples(&bytes).unwrap();
        assert_eq!(back.meta(), s.meta());
        assert!(back.data().iter().zip(s.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(decode_samples(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_spectrum(&bytes).is_err());
    }

    #[test]
    fn spectrum_archive_round_trip() {
        let spec = eigh(array![[2.0, 1.0], [1.0, 2.0]].view(), SpectrumSource::Hessian).unwrap();
        let bytes = encode_spectrum(&spec);
        assert_eq!(bytes[8], 2);
        assert_eq!(bytes[9], SpectrumSource::Hessian.tag());
        assert_eq!(decode_spectrum(&bytes).unwrap(), spec);
        assert!(decode_samples(&bytes).is_err());
    }
}
