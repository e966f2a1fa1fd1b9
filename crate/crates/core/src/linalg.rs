//! Dense symmetric linear algebra: eigendecomposition and trace helpers.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a spectrum was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumSource {
    TrajectoryCovariance,
    GradientCovariance,
    Hessian,
    Other,
}

impl SpectrumSource {
    pub fn tag(self) -> u8 {
        match self {
            SpectrumSource::TrajectoryCovariance => 0,
            SpectrumSource::GradientCovariance => 1,
            SpectrumSource::Hessian => 2,
            SpectrumSource::Other => 3,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => SpectrumSource::TrajectoryCovariance,
            1 => SpectrumSource::GradientCovariance,
            2 => SpectrumSource::Hessian,
            3 => SpectrumSource::Other,
            _ => return None,
        })
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    vectors: Array2<f64>,
    source: SpectrumSource,
}

impl Spectrum {
    pub fn from_parts(values: Vec<f64>, vectors: Array2<f64>, source: SpectrumSource) -> Result<Self> {
        let d = values.len();
        if vectors.dim() != (d, d) {
            return Err(Error::dim("eigenvector matrix", d, vectors.nrows()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Numeric("eigenvalues must be in descending order".into()));
        }
        Ok(Self {
            values,
            vectors,
            source,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    /// Eigenvector `i` (0-based, matching `values()[i]`).
    pub fn vector(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.column(i)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source(&self) -> SpectrumSource {
        self.source
    }

    pub fn with_source(mut self, source: SpectrumSource) -> Self {
        self.source = source;
        self
    }

    /// `max |V^T V - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.vectors.t().dot(&self.vectors);
        max_abs_diff_identity(&g)
    }

    /// `max |M - V diag(lambda) V^T|`.
    pub fn reconstruction_error(&self, m: ArrayView2<'_, f64>) -> f64 {
        let mut scaled = self.vectors.clone();
        for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(&self.values) {
            col.mapv_inplace(|v| v * l);
        }
        let r = scaled.dot(&self.vectors.t());
        r.iter()
            .zip(m.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn max_abs_diff_identity(g: &Array2<f64>) -> f64 {
    g.indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// `(M + M^T) / 2`, exactly symmetric.
pub fn symmetrize(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::dim("square matrix", r, c));
    }
    let mut out = Array2::zeros((r, r));
    for i in 0..r {
        out[[i, i]] = m[[i, i]];
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

pub fn max_asymmetry(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

pub fn max_abs(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Full eigendecomposition of a symmetric matrix (symmetrized first).
///
/// Eigenvalues are returned in descending order. Each eigenvector is signed so
/// that its largest-magnitude entry (first one on ties) is positive.
pub fn eigh(m: ArrayView2<'_, f64>, source: SpectrumSource) -> Result<Spectrum> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let sym = symmetrize(m)?;
    let d = sym.nrows();
    if d == 0 {
        return Spectrum::from_parts(Vec::new(), Array2::zeros((0, 0)), source);
    }
    let fm = faer::Mat::<f64>::from_fn(d, d, |i, j| sym[[i, j]]);
    let evd = fm.selfadjoint_eigendecomposition(faer::Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();

    // faer returns ascending order.
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| s.read(b).total_cmp(&s.read(a)).then(a.cmp(&b)));
        idx
    };
    let values: Vec<f64> = order.iter().map(|&k| s.read(k)).collect();
    let mut vectors = Array2::zeros((d, d));
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..d {
            let a = u.read(i, k).abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        let sign = if u.read(pivot, k) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[[i, col]] = sign * u.read(i, k);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition produced non-finite values".into()));
    }
    Spectrum::from_parts(values, vectors, source)
}

/// `Tr(A B)` for symmetric `A`, `B` as the elementwise sum of `A o B`.
pub fn trace_of_product(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("trace product", a.nrows(), b.nrows()));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

pub fn trace(a: ArrayView2<'_, f64>) -> f64 {
    a.diag().sum()
}

/// Haar-ish random orthogonal matrix from modified Gram-Schmidt on a
/// Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut q = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
        let mut ok = true;
        for j in 0..d {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let ck = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &ck);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-10 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn diagonal_matrix() {
        let s = eigh(Array2::from_diag(&array![3.0, 1.0, 2.0]).view(), SpectrumSource::Other).unwrap();
        assert_eq!(s.values(), &[3.0, 2.0, 1.0]);
        assert_eq!(s.vector(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(s.vector(1).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(s.vector(2).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two() {
        let s = eigh(array![[2.0, 1.0], [1.0, 2.0]].view(), SpectrumSource::Other).unwrap();
        assert!((s.values()[0] - 3.0).abs() < 1e-14);
        assert!((s.values()[1] - 1.0).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        let v0 = s.vector(0);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        let v1 = s.vector(1);
        // Sign convention: first of the tied largest entries is positive.
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] + r).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(eigh(array![[f64::NAN, 0.0], [0.0, 1.0]].view(), SpectrumSource::Other).is_err());
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = random_orthogonal(20, &mut rng);
        assert!(max_abs_diff_identity(&q.t().dot(&q)) < 1e-12);
    }
}
