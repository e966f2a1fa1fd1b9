//! Dataset ingestion: MNIST IDX files, prefixes, a binary cache, and the
//! synthetic quadratic task used as a landscape/Hessian oracle.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{
    codec::{put_f64s, read_file, write_file, ByteReader},
    error::{Error, Result},
    linalg::random_orthogonal,
    nn::Batch,
    objective::Objective,
};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "DROPFLAT_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    batch: Batch,
    provenance: String,
}

impl Dataset {
    pub fn new(batch: Batch, provenance: impl Into<String>) -> Result<Self> {
        if batch.inputs().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset inputs must be finite".into()));
        }
        Ok(Self {
            batch,
            provenance: provenance.into(),
        })
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn into_batch(self) -> Batch {
        self.batch
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    /// First `k` examples, order preserved.
    pub fn take_prefix(&self, k: usize) -> Result<Self> {
        if k > self.len() {
            return Err(Error::Config(format!(
                "requested the first {k} examples but the dataset has {}",
                self.len()
            )));
        }
        let base = self
            .provenance
            .split_once("-first-")
            .map_or(self.provenance.as_str(), |(b, _)| b);
        Ok(Self {
            batch: self.batch.prefix(k)?,
            provenance: format!("{base}-first-{k}"),
        })
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in self.batch.labels() {
            if y < classes {
                h[y] += 1;
            }
        }
        h
    }
}

/// Parses an IDX image file (`u8` pixels, scaled by 1/255) and label file.
pub fn parse_idx(images: &[u8], labels: &[u8], provenance: &str) -> Result<Dataset> {
    let mut ri = ByteReader::new(images);
    let magic = ri.u32_be("images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            field: "images magic",
            message: format!("expected 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let count = ri.u32_be("images count")? as usize;
    let rows = ri.u32_be("images rows")? as usize;
    let cols = ri.u32_be("images cols")? as usize;

    let mut rl = ByteReader::new(labels);
    let magic = rl.u32_be("labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            field: "labels magic",
            message: format!("expected 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let label_count = rl.u32_be("labels count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            field: "labels count",
            message: format!("{count} images but {label_count} labels"),
        });
    }
    if count == 0 || rows * cols == 0 {
        return Err(Error::Parse {
            field: "images count",
            message: "empty image file".into(),
        });
    }
    let dim = rows * cols;
    let pixels = ri.take(count * dim, "images data")?;
    ri.expect_end("images data")?;
    let raw_labels = rl.take(count, "labels data")?;
    rl.expect_end("labels data")?;

    let inputs = Array2::from_shape_vec(
        (count, dim),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("count * dim pixels");
    let labels = raw_labels.iter().map(|&l| l as usize).collect();
    Dataset::new(Batch::new(inputs, labels)?, provenance)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let name = images_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("idx");
    let provenance = if name.starts_with("train") {
        "mnist-train"
    } else if name.starts_with("t10k") {
        "mnist-test"
    } else {
        "idx"
    };
    parse_idx(&read_file(images_path)?, &read_file(labels_path)?, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Paths of the uncompressed IDX files for `split` under `dir`.
pub fn mnist_paths(dir: &Path, split: MnistSplit) -> (PathBuf, PathBuf) {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, split);
    load_idx(&images, &labels)
}

const CACHE_MAGIC: &[u8; 8] = b"DFDSET01";

/// Binary cache: magic, provenance (u32 length + UTF-8), n u64, d u64,
/// `n*d` f64 inputs, `n` u32 labels; little-endian.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let b = ds.batch();
    let mut out = Vec::with_capacity(32 + b.len() * (b.input_dim() * 8 + 4));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(ds.provenance.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.provenance.as_bytes());
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(&(b.input_dim() as u64).to_le_bytes());
    put_f64s(&mut out, b.inputs().as_standard_layout().as_slice().expect("standard"));
    for &y in b.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(8, "cache magic")? != CACHE_MAGIC {
        return Err(Error::Parse {
            field: "cache magic",
            message: "not a dataset cache".into(),
        });
    }
    let plen = r.u32_le("provenance length")? as usize;
    let provenance = std::str::from_utf8(r.take(plen, "provenance")?)
        .map_err(|e| Error::Parse {
            field: "provenance",
            message: e.to_string(),
        })?
        .to_string();
    let n = r.u64_le("cache rows")? as usize;
    let d = r.u64_le("cache cols")? as usize;
    let values = r.f64s_le(n * d, "cache inputs")?;
    let labels = (0..n)
        .map(|_| r.u32_le("cache labels").map(|y| y as usize))
        .collect::<Result<Vec<_>>>()?;
    r.expect_end("cache")?;
    let inputs = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Parse {
        field: "cache inputs",
        message: e.to_string(),
    })?;
    Dataset::new(Batch::new(inputs, labels)?, provenance)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

/// `L(theta) = L0 + 1/2 (theta - theta*)^T A (theta - theta*)` with a known
/// symmetric PSD Hessian `A`.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    base_loss: f64,
    hessian: Array2<f64>,
    minimum: Array1<f64>,
}

impl QuadraticTask {
    pub fn new(base_loss: f64, hessian: Array2<f64>, minimum: Vec<f64>) -> Result<Self> {
        let d = minimum.len();
        if hessian.dim() != (d, d) {
            return Err(Error::dim("quadratic Hessian", d, hessian.nrows()));
        }
        for i in 0..d {
            for j in 0..i {
                if hessian[[i, j]] != hessian[[j, i]] {
                    return Err(Error::Numeric("quadratic Hessian must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            base_loss,
            hessian,
            minimum: Array1::from(minimum),
        })
    }

    /// Diagonal Hessian with the given curvatures.
    pub fn diagonal(base_loss: f64, curvatures: &[f64], minimum: Vec<f64>) -> Result<Self> {
        Self::new(base_loss, Array2::from_diag(&Array1::from(curvatures.to_vec())), minimum)
    }

    pub fn base_loss(&self) -> f64 {
        self.base_loss
    }

    pub fn hessian(&self) -> &Array2<f64> {
        &self.hessian
    }

    pub fn minimum(&self) -> &[f64] {
        self.minimum.as_slice().expect("contiguous")
    }
}

impl Objective for QuadraticTask {
    fn dim(&self) -> usize {
        self.minimum.len()
    }

    fn loss(&self, point: &[f64]) -> Result<f64> {
        let u = self.offset(point)?;
        Ok(self.base_loss + 0.5 * u.dot(&self.hessian.dot(&u)))
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let u = self.offset(point)?;
        Ok(self.hessian.dot(&u).to_vec())
    }

    fn exact_hvp(&self, point: &[f64], dir: &[f64]) -> Option<Result<Vec<f64>>> {
        let check = self.offset(point).and_then(|_| {
            if dir.len() == self.minimum.len() {
                Ok(())
            } else {
                Err(Error::dim("hvp direction", self.minimum.len(), dir.len()))
            }
        });
        Some(check.map(|_| self.hessian.dot(&Array1::from_vec(dir.to_vec())).to_vec()))
    }
}

impl QuadraticTask {
    fn offset(&self, point: &[f64]) -> Result<Array1<f64>> {
        if point.len() != self.minimum.len() {
            return Err(Error::dim("quadratic point", self.minimum.len(), point.len()));
        }
        Ok(Array1::from_iter(point.iter().zip(&self.minimum).map(|(p, m)| p - m)))
    }
}

/// Random rotation of `diag(spectrum)` around a random minimum.
pub fn synthetic_quadratic_task(seed: u64, base_loss: f64, spectrum: &[f64]) -> Result<QuadraticTask> {
    use rand_distr::{Distribution, StandardNormal};
    if spectrum.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
        return Err(Error::Config("quadratic spectrum must be finite and nonnegative".into()));
    }
    let d = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(d, &mut rng);
    let scaled = Array2::from_shape_fn((d, d), |(i, j)| q[[i, j]] * spectrum[j]);
    let mut a = scaled.dot(&q.t());
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
    let minimum = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    QuadraticTask::new(base_loss, a, minimum)
}

/// Gaussian class blobs in `[0, 1]^dim`: class centers are uniform in the
/// cube, points are centers plus `spread`-scaled noise, clamped. Labels cycle
/// through the classes so every prefix is roughly balanced.
pub fn synthetic_blobs(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if n == 0 || dim == 0 || classes == 0 {
        return Err(Error::Config("synthetic blobs need n, dim and classes >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let inputs = Array2::from_shape_fn((n, dim), |(i, j)| {
        let z: f64 = rng.sample(StandardNormal);
        (centers[labels[i]][j] + spread * z).clamp(0.0, 1.0)
    });
    Dataset::new(Batch::new(inputs, labels)?, "synthetic-blobs")
}
