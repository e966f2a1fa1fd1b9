use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use crate::error::{Error, Result};

/// Whether one mask vector is shared by every example of a batch (one draw
/// per step, the default) or each example draws its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskScope {
    #[default]
    Shared,
    PerExample,
}

impl MaskScope {
    pub fn name(self) -> &'static str {
        match self {
            MaskScope::Shared => "shared",
            MaskScope::PerExample => "per-example",
        }
    }
}

/// Bernoulli mask for the output of one hidden layer; `rows` is 1 for a
/// shared mask or the batch size for per-example masks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    pub layer: usize,
    pub rows: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl LayerMask {
    pub fn new(layer: usize, rows: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * width {
            return Err(Error::dim("layer mask", rows * width, values.len()));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Numeric("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            layer,
            rows,
            width,
            values,
        })
    }

    /// Row-major `rows x width` entries in `{0, 1}`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let r = if self.rows == 1 { 0 } else { i };
        &self.values[r * self.width..(r + 1) * self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    layers: Vec<LayerMask>,
}

impl DropoutMask {
    pub fn from_layers(layers: Vec<LayerMask>) -> Self {
        Self { layers }
    }

    /// All-ones mask over the architecture's dropout layers.
    pub fn ones(arch: &Architecture, rows: usize) -> Self {
        let layers = arch
            .dropout()
            .iter()
            .map(|d| {
                let width = arch.widths()[d.layer];
                LayerMask {
                    layer: d.layer,
                    rows,
                    width,
                    values: vec![1.0; rows * width],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn for_layer(&self, layer: usize) -> Option<&LayerMask> {
        self.layers.iter().find(|m| m.layer == layer)
    }

    /// Checks the mask against the architecture's dropout spec and a batch size.
    pub fn validate(&self, arch: &Architecture, batch_rows: usize) -> Result<()> {
        if self.layers.len() != arch.dropout().len() {
            return Err(Error::dim(
                "mask layer count",
                arch.dropout().len(),
                self.layers.len(),
            ));
        }
        for (m, d) in self.layers.iter().zip(arch.dropout()) {
            if m.layer != d.layer {
                return Err(Error::Config(format!(
                    "mask targets layer {} but dropout is configured on layer {}",
                    m.layer, d.layer
                )));
            }
            let width = arch.widths()[d.layer];
            if m.width != width {
                return Err(Error::dim("mask width", width, m.width));
            }
            if m.rows != 1 && m.rows != batch_rows {
                return Err(Error::dim("mask rows", batch_rows, m.rows));
            }
        }
        Ok(())
    }
}

/// Draws a mask with `rows` rows per dropout layer from `rng`; each entry is 1
/// with the layer's keep probability.
pub fn sample_mask_rows<R: Rng + ?Sized>(arch: &Architecture, rows: usize, rng: &mut R) -> DropoutMask {
    let layers = arch
        .dropout()
        .iter()
        .map(|d| {
            let width = arch.widths()[d.layer];
            let values = (0..rows * width)
                .map(|_| if rng.gen::<f64>() < d.rate { 1.0 } else { 0.0 })
                .collect();
            LayerMask {
                layer: d.layer,
                rows,
                width,
                values,
            }
        })
        .collect();
    DropoutMask { layers }
}

/// Draws a mask for a batch of `batch_rows` examples under `scope`.
pub fn sample_batch_mask<R: Rng + ?Sized>(
    arch: &Architecture,
    scope: MaskScope,
    batch_rows: usize,
    rng: &mut R,
) -> DropoutMask {
    let rows = match scope {
        MaskScope::Shared => 1,
        MaskScope::PerExample => batch_rows,
    };
    sample_mask_rows(arch, rows, rng)
}

/// One shared mask vector per dropout layer, deterministic in `seed`.
pub fn sample_mask(arch: &Architecture, seed: u64) -> Result<DropoutMask> {
    if arch.dropout().is_empty() {
        return Err(Error::Config(
            "cannot sample a dropout mask: the architecture has no dropout layers".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_mask_rows(arch, 1, &mut rng))
}

/// Independent RNG stream `index` derived from `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DropoutLayer};

    fn arch(rate: f64) -> Architecture {
        Architecture::new(
            vec![5, 100, 100, 3],
            Activation::Relu,
            vec![DropoutLayer { layer: 2, rate }],
        )
        .unwrap()
    }

    #[test]
    fn extreme_rates() {
        let m = sample_mask(&arch(1.0), 3).unwrap();
        assert!(m.layers()[0].values().iter().all(|&v| v == 1.0));
        let m = sample_mask(&arch(0.0), 3).unwrap();
        assert!(m.layers()[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_rate_concentrates() {
        // 1000 masks of width 100 pooled: 10^5 Bernoulli(0.5) draws.
        let a = arch(0.5);
        let ones: f64 = (0..1000)
            .map(|s| sample_mask(&a, s).unwrap().layers()[0].values().iter().sum::<f64>())
            .sum();
        let frac = ones / 1e5;
        assert!((0.495..=0.505).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn seeded_and_validated() {
        let a = arch(0.5);
        assert_eq!(sample_mask(&a, 9).unwrap(), sample_mask(&a, 9).unwrap());
        assert_ne!(sample_mask(&a, 9).unwrap(), sample_mask(&a, 10).unwrap());
        let m = sample_mask(&a, 9).unwrap();
        m.validate(&a, 17).unwrap();
        let per = sample_batch_mask(&a, MaskScope::PerExample, 17, &mut stream_rng(1, 0));
        per.validate(&a, 17).unwrap();
        assert!(per.validate(&a, 18).is_err());
        assert!(sample_mask(&a.without_dropout(), 0).is_err());
    }
}
