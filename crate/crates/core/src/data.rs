//! Labelled image batches and the synthetic class-blob generator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != images.shape().n() {
            return Err(Error::Dataset(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape().n()
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s.c(), s.h(), s.w()]
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= classes) {
            Some(i) => Err(Error::Dataset(format!(
                "label {} of image {i} is not below class count {classes}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.images.gather_samples(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Splits into the first `n` images and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Dataset(format!("cannot split {} images at {n}", self.len())));
        }
        let a: Vec<usize> = (0..n).collect();
        let b: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&a)?, self.subset(&b)?))
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    /// `(C, H, W)`.
    pub shape: [usize; 3],
    /// Standard deviation of the per-pixel noise; class prototypes have unit
    /// scale.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, shape: [usize; 3]) -> Self {
        SyntheticSpec {
            classes,
            per_class,
            shape,
            noise: 0.5,
        }
    }
}

/// Each class owns a prototype: every channel carries a Gaussian bump at a
/// class-specific position with a class-specific signed amplitude. Samples
/// are the prototype under a random gain plus i.i.d. Gaussian noise. Images
/// are interleaved by class, so every prefix is close to balanced.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let [c, h, w] = spec.shape;
    if spec.classes < 2 || spec.per_class == 0 || c * h * w == 0 {
        return Err(Error::InvalidArgument(format!("degenerate synthetic spec {spec:?}")));
    }
    let mut proto_rng = stream_rng(seed, Stream::Data, &[0]);
    let sigma = (h.min(w) as f64 / 4.0).max(0.5);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut p = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                let amp: f64 = proto_rng.random_range(-1.5..1.5);
                let (ch, cw) = (
                    proto_rng.random_range(0.0..h as f64),
                    proto_rng.random_range(0.0..w as f64),
                );
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - ch).powi(2) + (x as f64 - cw).powi(2);
                        p.push(amp * (-d2 / (2.0 * sigma * sigma)).exp());
                    }
                }
            }
            p
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = spec.classes * spec.per_class;
    let mut sample_rng = stream_rng(seed, Stream::Data, &[1]);
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % spec.classes;
        let gain: f64 = sample_rng.random_range(0.7..1.3);
        data.extend(
            prototypes[k]
                .iter()
                .map(|&p| (gain * p + noise.sample(&mut sample_rng)) as f32),
        );
        labels.push(k);
    }
    Dataset::new(Tensor::from_vec(Shape::new(n, c, h, w), data)?, labels)
}
