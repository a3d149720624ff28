use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Image layout of the feature vectors (channel-last).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn canvas() -> Self {
        Self {
            height: super::render::CANVAS,
            width: super::render::CANVAS,
            channels: super::render::CHANNELS,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generator name, version, seed and numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub version: u32,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
}

impl Provenance {
    pub fn manual() -> Self {
        Self {
            generator: "manual".into(),
            version: 1,
            seed: 0,
            params: BTreeMap::new(),
        }
    }
}

/// One sample with its hidden bias attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f32>,
    pub y: u16,
    pub z: u16,
}

/// Samples with targets and the hidden bias attribute.
///
/// Training and validation code only ever sees a [`TrainView`], which has no
/// way to reach `z`. The attribute is reachable through
/// [`Dataset::reveal_bias`], used by test-time evaluation and by the
/// explicitly bias-supervised baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub(crate) k: usize,
    pub(crate) l: usize,
    pub(crate) split: Split,
    pub(crate) shape: ImageShape,
    pub(crate) provenance: Provenance,
    pub(crate) features: Array2<f32>,
    pub(crate) labels: Vec<u16>,
    pub(crate) bias: Vec<u16>,
}

/// Training-visible part of a dataset: features and targets only.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub features: ArrayView2<'a, f32>,
    pub labels: &'a [u16],
    pub num_classes: usize,
}

impl<'a> TrainView<'a> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }
}

/// Hidden bias labels. Only evaluation and bias-supervised code paths hold one.
#[derive(Debug, Clone, Copy)]
pub struct BiasLabels<'a> {
    pub values: &'a [u16],
    pub num_values: usize,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k: usize,
        l: usize,
        split: Split,
        shape: ImageShape,
        provenance: Provenance,
        features: Array2<f32>,
        labels: Vec<u16>,
        bias: Vec<u16>,
    ) -> Result<Self> {
        if k < 2 || l < 2 {
            return Err(Error::Config(format!("need K, L >= 2 (got K={k}, L={l})")));
        }
        let n = features.nrows();
        if labels.len() != n || bias.len() != n {
            return Err(Error::Dimension {
                context: "dataset columns",
                expected: n,
                got: labels.len().min(bias.len()),
            });
        }
        if features.ncols() != shape.len() {
            return Err(Error::Dimension {
                context: "feature width",
                expected: shape.len(),
                got: features.ncols(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y as usize >= k) {
            return Err(Error::Config(format!("label out of range at sample {i}")));
        }
        if let Some(i) = bias.iter().position(|&z| z as usize >= l) {
            return Err(Error::Config(format!("bias attribute out of range at sample {i}")));
        }
        Ok(Self {
            k,
            l,
            split,
            shape,
            provenance,
            features,
            labels,
            bias,
        })
    }

    /// Small datasets from explicit samples (`x` of length `shape.len()`).
    pub fn from_samples(
        k: usize,
        l: usize,
        split: Split,
        shape: ImageShape,
        samples: &[LabeledSample],
    ) -> Result<Self> {
        let d = shape.len();
        let mut flat = Vec::with_capacity(samples.len() * d);
        for s in samples {
            if s.x.len() != d {
                return Err(Error::Dimension {
                    context: "sample features",
                    expected: d,
                    got: s.x.len(),
                });
            }
            flat.extend_from_slice(&s.x);
        }
        let features = Array2::from_shape_vec((samples.len(), d), flat)
            .expect("flat buffer sized from samples");
        Self::from_parts(
            k,
            l,
            split,
            shape,
            Provenance::manual(),
            features,
            samples.iter().map(|s| s.y).collect(),
            samples.iter().map(|s| s.z).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn num_bias_values(&self) -> usize {
        self.l
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn view(&self) -> TrainView<'_> {
        TrainView {
            features: self.features.view(),
            labels: &self.labels,
            num_classes: self.k,
        }
    }

    /// Hidden bias attribute. Evaluation-only.
    pub fn reveal_bias(&self) -> BiasLabels<'_> {
        BiasLabels {
            values: &self.bias,
            num_values: self.l,
        }
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            x: self.features.row(i).to_vec(),
            y: self.labels[i],
            z: self.bias[i],
        }
    }

    /// Subset by indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            k: self.k,
            l: self.l,
            split: self.split,
            shape: self.shape,
            provenance: self.provenance.clone(),
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            bias: idx.iter().map(|&i| self.bias[i]).collect(),
        }
    }
}

/// Empirical joint frequencies `count(y, z) / n` as a `K × L` matrix.
pub fn empirical_group_table(d: &Dataset) -> Result<Array2<f64>> {
    if d.is_empty() {
        return Err(Error::Usage("group table of an empty dataset".into()));
    }
    let mut t = Array2::zeros((d.k, d.l));
    for (&y, &z) in d.labels.iter().zip(&d.bias) {
        t[[y as usize, z as usize]] += 1.0;
    }
    t /= d.len() as f64;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(pairs: &[(u16, u16)]) -> Dataset {
        let shape = ImageShape {
            height: 1,
            width: 1,
            channels: 1,
        };
        let samples: Vec<_> = pairs
            .iter()
            .map(|&(y, z)| LabeledSample { x: vec![0.5], y, z })
            .collect();
        Dataset::from_samples(2, 2, Split::Train, shape, &samples).unwrap()
    }

    #[test]
    fn single_sample_table() {
        let t = empirical_group_table(&tiny(&[(0, 0)])).unwrap();
        assert_eq!(t, ndarray::array![[1.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn crafted_four_sample_table() {
        let t = empirical_group_table(&tiny(&[(0, 0), (0, 0), (0, 1), (1, 1)])).unwrap();
        assert_eq!(t, ndarray::array![[0.5, 0.25], [0.0, 0.25]]);
        assert!((t.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(empirical_group_table(&tiny(&[])).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let shape = ImageShape {
            height: 1,
            width: 1,
            channels: 1,
        };
        let s = [LabeledSample {
            x: vec![0.0],
            y: 2,
            z: 0,
        }];
        assert!(Dataset::from_samples(2, 2, Split::Train, shape, &s).is_err());
    }
}
