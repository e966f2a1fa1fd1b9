//! Loss-landscape geometry along directions: loss profiles, interval flatness
//! and filter-normalized 1-D slices.
//!
//! Interval flatness of a direction `v` around `theta*` is the width
//! `F_v = theta_r - theta_l` of the interval on which
//! `L(theta* + t v) <= 2 L(theta*)`, where `theta_l < 0 < theta_r` are the
//! crossings closest to the center. Crossings are bracketed by a geometric
//! outward search and refined by bisection.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{
    error::{Error, Result},
    linalg::norm,
    nn::{stream_rng, ParamLayout, ParamVector},
    objective::Objective,
    par,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionNorm {
    Unit,
    FilterNormalized,
    /// Arbitrary length, e.g. a rescaled unit direction.
    Unnormalized,
}

/// Where a direction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum Provenance {
    Pca(usize),
    Hessian(usize),
    Random(u64),
    Other,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Pca(i) => write!(f, "pca-{i}"),
            Provenance::Hessian(i) => write!(f, "hessian-{i}"),
            Provenance::Random(s) => write!(f, "random-seed-{s}"),
            Provenance::Other => write!(f, "other"),
        }
    }
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    vector: Vec<f64>,
    norm: DirectionNorm,
    provenance: Provenance,
}

impl Direction {
    pub fn new(vector: Vec<f64>, norm: DirectionNorm, provenance: Provenance) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Config("direction must have at least one entry".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("direction has non-finite entries".into()));
        }
        if norm == DirectionNorm::Unit {
            let n = crate::linalg::norm(&vector);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Numeric(format!("unit direction has norm {n}")));
            }
        }
        Ok(Self {
            vector,
            norm,
            provenance,
        })
    }

    /// Rescales `vector` to unit length.
    pub fn normalized(vector: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let n = norm(&vector);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Numeric(format!("cannot normalize a vector of norm {n}")));
        }
        Self::new(vector.iter().map(|v| v / n).collect(), DirectionNorm::Unit, provenance)
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm_kind(&self) -> DirectionNorm {
        self.norm
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// `c * v`, tagged as unnormalized.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            vector: self.vector.iter().map(|v| c * v).collect(),
            norm: if c == 1.0 { self.norm } else { DirectionNorm::Unnormalized },
            provenance: self.provenance,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            vector: self.vector.iter().map(|v| -v).collect(),
            norm: self.norm,
            provenance: self.provenance,
        }
    }
}

/// `center + offset * dir`.
pub fn point_along(center: &[f64], dir: &[f64], offset: f64) -> Vec<f64> {
    center.iter().zip(dir).map(|(c, d)| c + offset * d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub offset: f64,
    /// `NaN` when the loss could not be evaluated at this offset.
    pub loss: f64,
    pub flagged: bool,
}

fn check_dims(objective: &impl Objective, center: &[f64], dir: &Direction) -> Result<()> {
    if center.len() != objective.dim() {
        return Err(Error::dim("center", objective.dim(), center.len()));
    }
    if dir.dim() != objective.dim() {
        return Err(Error::dim("direction", objective.dim(), dir.dim()));
    }
    Ok(())
}

/// Loss along the ray `center + t * dir` at each offset. Non-finite or failed
/// evaluations become flagged `NaN` points.
pub fn loss_profile(
    objective: &impl Objective,
    center: &[f64],
    dir: &Direction,
    offsets: &[f64],
) -> Result<Vec<ProfilePoint>> {
    check_dims(objective, center, dir)?;
    Ok(par::map_range(offsets.len(), |i| {
        let t = offsets[i];
        match objective.loss(&point_along(center, dir.vector(), t)) {
            Ok(l) if l.is_finite() => ProfilePoint {
                offset: t,
                loss: l,
                flagged: false,
            },
            _ => ProfilePoint {
                offset: t,
                loss: f64::NAN,
                flagged: true,
            },
        }
    }))
}

/// 1-D slice `f(alpha) = L(theta + alpha d)`, typically with a
/// filter-normalized `d`.
pub fn slice_1d(
    objective: &impl Objective,
    center: &[f64],
    dir: &Direction,
    alphas: &[f64],
) -> Result<Vec<ProfilePoint>> {
    loss_profile(objective, center, dir, alphas)
}

/// What to do when the base loss is below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FloorPolicy {
    /// Use the floor as the base loss for the threshold and flag the result.
    #[default]
    Substitute,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessOptions {
    pub loss_floor: f64,
    pub floor_policy: FloorPolicy,
    pub initial_step: f64,
    pub growth: f64,
    pub search_radius: f64,
    pub tol_x: f64,
    pub tol_f: f64,
    pub max_bisections: usize,
}

impl Default for FlatnessOptions {
    fn default() -> Self {
        Self {
            loss_floor: 1e-8,
            floor_policy: FloorPolicy::Substitute,
            initial_step: 1e-3,
            growth: 2.0,
            search_radius: 1e3,
            tol_x: 1e-6,
            tol_f: 1e-9,
            max_bisections: 200,
        }
    }
}

impl FlatnessOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.loss_floor >= 0.0
            && self.initial_step > 0.0
            && self.growth > 1.0
            && self.search_radius >= self.initial_step
            && self.tol_x > 0.0
            && self.tol_f > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid flatness options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Crossing {
    /// Signed offset where the loss reaches the threshold.
    Found { offset: f64, loss: f64 },
    /// No crossing within the search radius.
    Unbounded { radius: f64 },
}

impl Crossing {
    pub fn offset(&self) -> Option<f64> {
        match self {
            Crossing::Found { offset, .. } => Some(*offset),
            Crossing::Unbounded { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlatnessFlags {
    pub floor_substituted: bool,
    pub non_finite_loss: bool,
    pub unbounded: bool,
    pub tolerance_unmet: bool,
}

impl fmt::Display for FlatnessFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.floor_substituted, "floor"),
            (self.non_finite_loss, "non-finite"),
            (self.unbounded, "unbounded"),
            (self.tolerance_unmet, "tol-unmet"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("ok")
        } else {
            f.write_str(&names.join(";"))
        }
    }
}

/// Interval flatness of one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessProfile {
    /// `theta_r - theta_l`, or `+inf` when either side is unbounded.
    pub flatness: f64,
    pub left: Crossing,
    pub right: Crossing,
    pub base_loss: f64,
    pub threshold: f64,
    pub flags: FlatnessFlags,
}

impl FlatnessProfile {
    pub fn is_finite(&self) -> bool {
        self.flatness.is_finite()
    }
}

/// Measures `F_v` along `dir` around `center` (in the objective's coordinates).
pub fn interval_flatness(
    objective: &impl Objective,
    center: &[f64],
    dir: &Direction,
    options: &FlatnessOptions,
) -> Result<FlatnessProfile> {
    check_dims(objective, center, dir)?;
    options.validate()?;
    let base_loss = objective.loss(center)?;
    if !base_loss.is_finite() {
        return Err(Error::Numeric(format!("base loss is {base_loss}")));
    }
    let mut flags = FlatnessFlags::default();
    let reference = if base_loss < options.loss_floor {
        match options.floor_policy {
            FloorPolicy::Error => {
                return Err(Error::DegenerateMinimum {
                    loss: base_loss,
                    floor: options.loss_floor,
                })
            }
            FloorPolicy::Substitute => {
                flags.floor_substituted = true;
                options.loss_floor
            }
        }
    } else {
        base_loss
    };
    let threshold = 2.0 * reference;

    let eval = |offset: f64| -> f64 {
        match objective.loss(&point_along(center, dir.vector(), offset)) {
            Ok(l) if l.is_finite() => l,
            _ => f64::NAN,
        }
    };
    let right = find_crossing(&eval, 1.0, threshold, options, &mut flags);
    let left = find_crossing(&eval, -1.0, threshold, options, &mut flags);
    let flatness = match (left.offset(), right.offset()) {
        (Some(l), Some(r)) => r - l,
        _ => {
            flags.unbounded = true;
            f64::INFINITY
        }
    };
    Ok(FlatnessProfile {
        flatness,
        left,
        right,
        base_loss,
        threshold,
        flags,
    })
}

/// Closest crossing of `threshold` on the side `sign` of the origin.
fn find_crossing(
    eval: &impl Fn(f64) -> f64,
    sign: f64,
    threshold: f64,
    options: &FlatnessOptions,
    flags: &mut FlatnessFlags,
) -> Crossing {
    let above = |l: f64, flags: &mut FlatnessFlags| {
        if l.is_nan() {
            flags.non_finite_loss = true;
            true
        } else {
            l >= threshold
        }
    };

    // Outward search for a bracket [inner, outer] with L(inner) < threshold.
    let mut inner = 0.0;
    let mut inner_loss = f64::NAN;
    let mut step = options.initial_step;
    let (mut outer, mut outer_loss) = loop {
        let t = step.min(options.search_radius);
        let l = eval(sign * t);
        if above(l, flags) {
            break (t, l);
        }
        if t >= options.search_radius {
            return Crossing::Unbounded {
                radius: options.search_radius,
            };
        }
        inner = t;
        inner_loss = l;
        step *= options.growth;
    };

    for _ in 0..options.max_bisections {
        let mid = 0.5 * (inner + outer);
        if mid <= inner || mid >= outer {
            break;
        }
        let l = eval(sign * mid);
        if above(l, flags) {
            outer = mid;
            outer_loss = l;
        } else {
            inner = mid;
            inner_loss = l;
        }
        let close = (outer_loss - threshold).abs() <= options.tol_f
            || (inner_loss - threshold).abs() <= options.tol_f;
        if outer - inner <= options.tol_x && close {
            break;
        }
    }

    let inner_gap = (inner_loss - threshold).abs();
    let outer_gap = (outer_loss - threshold).abs();
    let (offset, loss) = if inner_gap < outer_gap || outer_loss.is_nan() {
        (inner, inner_loss)
    } else {
        (outer, outer_loss)
    };
    if !((loss - threshold).abs() <= options.tol_f) || outer - inner > options.tol_x {
        flags.tolerance_unmet = true;
    }
    Crossing::Found {
        offset: sign * offset,
        loss,
    }
}

/// Flatness of many directions; runs in parallel with per-direction results
/// independent of scheduling.
pub fn interval_flatness_many(
    objective: &impl Objective,
    center: &[f64],
    dirs: &[Direction],
    options: &FlatnessOptions,
) -> Result<Vec<FlatnessProfile>> {
    par::try_map_range(dirs.len(), |i| interval_flatness(objective, center, &dirs[i], options))
}

/// Record of where filter normalization had to zero a block.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    /// Layers whose parameters had zero norm; their direction block is zero.
    pub zero_filters: Vec<usize>,
}

/// Random Gaussian direction over the full parameter vector with each layer
/// (weights and biases together, one filter per layer) rescaled to the
/// Frobenius norm of the same layer in `params`.
pub fn filter_normalized_direction(params: &ParamVector, seed: u64) -> Result<(Direction, FilterReport)> {
    params.check_finite()?;
    let mut rng = stream_rng(seed, 0);
    let mut d: Vec<f64> = (0..params.len()).map(|_| rng.sample(StandardNormal)).collect();
    let report = normalize_filters(params.layout(), params.values(), &mut d);
    Ok((
        Direction::new(d, DirectionNorm::FilterNormalized, Provenance::Random(seed))?,
        report,
    ))
}

/// Unit-norm Gaussian direction in `dim` coordinates drawn from stream 0 of
/// `seed`.
pub fn random_unit_direction(dim: usize, seed: u64) -> Result<Direction> {
    let mut rng = stream_rng(seed, 0);
    let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Direction::normalized(d, Provenance::Random(seed))
}

/// Rescales each layer block of `d` to the norm of the same block of `theta`.
pub fn normalize_filters(layout: &ParamLayout, theta: &[f64], d: &mut [f64]) -> FilterReport {
    let mut report = FilterReport::default();
    for l in 0..layout.depth() {
        let blocks = [layout.weight(l).range(), layout.bias(l).range()];
        let sq = |v: &[f64]| -> f64 {
            blocks
                .iter()
                .map(|r| v[r.clone()].iter().map(|x| x * x).sum::<f64>())
                .sum()
        };
        let theta_norm = sq(theta).sqrt();
        let d_norm = sq(d).sqrt();
        let scale = if theta_norm == 0.0 || d_norm == 0.0 {
            report.zero_filters.push(l);
            0.0
        } else {
            theta_norm / d_norm
        };
        for r in &blocks {
            d[r.clone()].iter_mut().for_each(|x| *x *= scale);
        }
    }
    report
}

/// One row of a flatness table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessRecord {
    pub direction_id: usize,
    pub provenance: Provenance,
    /// Eigenvalue attached to the direction (PCA variance or Hessian
    /// curvature), if any.
    pub eigenvalue: Option<f64>,
    pub profile: FlatnessProfile,
}

pub const FLATNESS_CSV_HEADER: &str = "direction_id,provenance,lambda_or_eig,F_v,theta_l,theta_r,L0,flags";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

pub fn flatness_csv(records: &[FlatnessRecord]) -> String {
    let mut out = String::from(FLATNESS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.direction_id,
            r.provenance,
            fmt_opt(r.eigenvalue),
            r.profile.flatness,
            fmt_opt(r.profile.left.offset()),
            fmt_opt(r.profile.right.offset()),
            r.profile.base_loss,
            r.profile.flags
        ));
    }
    out
}

pub fn profile_csv(points: &[ProfilePoint], offset_name: &str) -> String {
    let mut out = format!("{offset_name},loss,flagged\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.offset, p.loss, p.flagged as u8));
    }
    out
}
