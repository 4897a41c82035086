//! Trainable embedding model: a small backbone, an L2-normalization layer and
//! a linear rating-regression head.
//!
//! Feature-vector inputs go through a perceptron (`hidden` widths, ReLU).
//! Image patches go through stride-2 3x3 conv blocks (`hidden` channel
//! counts, ReLU) and global max pooling. Both end in a dense projection to
//! `embedding_dim` followed by L2 normalization.
//!
//! All parameters live in one flat `Vec<f64>` in declaration order:
//! backbone layers, projection, head; weights before biases within a layer.

mod checkpoint;
mod layers;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Fnv1a, Matrix};
use crate::ratings::{CharacteristicSchema, RatingVector};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Conv2d, Dense};
pub use train::{
    embed_all, train, EpochRecord, ScheduleMode, ScheduleStep, SimilarityLoss, TrainOutcome,
    TrainSchedule, Validation,
};

/// Pre-normalization norms below this cannot be projected to the sphere.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    FeatureVector { dim: usize },
    ImagePatch { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputKind,
    pub embedding_dim: usize,
    /// Perceptron widths or conv channel counts, depending on `input`.
    pub hidden: Vec<usize>,
    pub rating_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn features(dim: usize, hidden: Vec<usize>, embedding_dim: usize, seed: u64) -> Self {
        ModelConfig {
            input: InputKind::FeatureVector { dim },
            embedding_dim,
            hidden,
            rating_dim: 9,
            seed,
        }
    }

    /// 128x128 patches (64 mm at 0.5 mm/px), conv channels 16/32/64.
    pub fn patch_default(seed: u64) -> Self {
        ModelConfig {
            input: InputKind::ImagePatch {
                height: 128,
                width: 128,
            },
            embedding_dim: 128,
            hidden: vec![16, 32, 64],
            rating_dim: 9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        if self.rating_dim == 0 {
            return Err(Error::Config("rating_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.input {
            InputKind::FeatureVector { dim: 0 } => {
                Err(Error::Config("feature dimension must be positive".into()))
            }
            InputKind::ImagePatch { height, width } if height == 0 || width == 0 => {
                Err(Error::Config("patch size must be positive".into()))
            }
            InputKind::ImagePatch { .. } if self.hidden.is_empty() => Err(Error::Config(
                "patch models need at least one conv block".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Features(Vec<f64>),
    Patch {
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
}

impl ModelInput {
    pub fn values(&self) -> &[f64] {
        match self {
            ModelInput::Features(v) => v,
            ModelInput::Patch { data, .. } => data,
        }
    }
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v`; fails when its norm is below [`MIN_NORM`].
    pub fn normalize(v: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&v);
        if !(norm >= MIN_NORM) {
            return Err(Error::Normalization { norm });
        }
        Ok(Embedding(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Backbone {
    Mlp(Vec<Dense>),
    Conv(Vec<Conv2d>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: ModelConfig,
    params: Vec<f64>,
    backbone: Backbone,
    projection: Dense,
    head: Dense,
}

/// Intermediate values of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Inputs to each backbone layer (the first is the raw input).
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each backbone layer.
    pre_activations: Vec<Vec<f64>>,
    pool_argmax: Vec<usize>,
    projection_input: Vec<f64>,
    raw_norm: f64,
    embedding: Embedding,
}

impl ForwardCache {
    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }
}

impl EmbeddingModel {
    fn layout(config: &ModelConfig) -> (Backbone, Dense, Dense, usize) {
        let mut offset = 0;
        let (backbone, feat) = match config.input {
            InputKind::FeatureVector { dim } => {
                let mut layers = Vec::new();
                let mut inp = dim;
                for &h in &config.hidden {
                    let l = Dense {
                        offset,
                        inp,
                        out: h,
                    };
                    offset = l.end();
                    layers.push(l);
                    inp = h;
                }
                (Backbone::Mlp(layers), inp)
            }
            InputKind::ImagePatch { height, width } => {
                let mut layers = Vec::new();
                let (mut c, mut h, mut w) = (1, height, width);
                for &oc in &config.hidden {
                    let l = Conv2d {
                        offset,
                        in_c: c,
                        out_c: oc,
                        in_h: h,
                        in_w: w,
                    };
                    offset = l.end();
                    h = l.out_h();
                    w = l.out_w();
                    c = oc;
                    layers.push(l);
                }
                (Backbone::Conv(layers), c)
            }
        };
        let projection = Dense {
            offset,
            inp: feat,
            out: config.embedding_dim,
        };
        let head = Dense {
            offset: projection.end(),
            inp: config.embedding_dim,
            out: config.rating_dim,
        };
        let total = head.end();
        (backbone, projection, head, total)
    }

    /// Seeded initialization: weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (backbone, projection, head, total) = Self::layout(&config);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |start: usize, end: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        };
        match &backbone {
            Backbone::Mlp(layers) => {
                for l in layers {
                    fill(l.offset, l.end(), l.inp);
                }
            }
            Backbone::Conv(layers) => {
                for l in layers {
                    fill(l.offset, l.end(), l.in_c * layers::KERNEL * layers::KERNEL);
                }
            }
        }
        fill(projection.offset, projection.end(), projection.inp);
        fill(head.offset, head.end(), head.inp);
        Ok(EmbeddingModel {
            config,
            params,
            backbone,
            projection,
            head,
        })
    }

    /// Rebuilds a model from a config and a full parameter vector.
    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (backbone, projection, head, total) = Self::layout(&config);
        if params.len() != total {
            return Err(Error::shape(format!("{total} parameters"), params.len()));
        }
        Ok(EmbeddingModel {
            config,
            params,
            backbone,
            projection,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter range of the rating head (weights then biases).
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.head.offset..self.head.end()
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_f64s(&self.params);
        h.finish()
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        match (&self.config.input, input) {
            (InputKind::FeatureVector { dim }, ModelInput::Features(v)) if v.len() == *dim => {
                Ok(())
            }
            (
                InputKind::ImagePatch { height, width },
                ModelInput::Patch {
                    height: h,
                    width: w,
                    data,
                },
            ) if h == height && w == width && data.len() == h * w => Ok(()),
            (expected, _) => Err(Error::shape(
                format!("{expected:?}"),
                format!("input of {} values", input.values().len()),
            )),
        }
    }

    pub fn forward_cached(&self, input: &ModelInput) -> Result<ForwardCache> {
        self.check_input(input)?;
        let p = &self.params;
        let mut layer_inputs = Vec::new();
        let mut pre_activations = Vec::new();
        let mut x = input.values().to_vec();
        let mut pool_argmax = Vec::new();
        match &self.backbone {
            Backbone::Mlp(layers) => {
                for l in layers {
                    let z = l.forward(p, &x);
                    layer_inputs.push(std::mem::replace(&mut x, layers::relu(&z)));
                    pre_activations.push(z);
                }
            }
            Backbone::Conv(layers) => {
                for l in layers {
                    let z = l.forward(p, &x);
                    layer_inputs.push(std::mem::replace(&mut x, layers::relu(&z)));
                    pre_activations.push(z);
                }
                let channels = layers.last().map_or(1, |l| l.out_c);
                let (pooled, argmax) = layers::global_max_pool(&x, channels);
                layer_inputs.push(x);
                x = pooled;
                pool_argmax = argmax;
            }
        }
        let raw = self.projection.forward(p, &x);
        let raw_norm = l2_norm(&raw);
        let embedding = Embedding::normalize(raw)?;
        Ok(ForwardCache {
            layer_inputs,
            pre_activations,
            pool_argmax,
            projection_input: x,
            raw_norm,
            embedding,
        })
    }

    pub fn forward(&self, input: &ModelInput) -> Result<Embedding> {
        Ok(self.forward_cached(input)?.embedding)
    }

    /// Linear rating head; unbounded output.
    pub fn rating_head(&self, embedding: &Embedding) -> RatingVector {
        RatingVector::new(self.head.forward(&self.params, embedding.as_slice()))
    }

    /// Head output clamped to the schema ranges, for reporting.
    pub fn predict_ratings(
        &self,
        inputs: &[ModelInput],
        schema: &CharacteristicSchema,
    ) -> Result<Vec<RatingVector>> {
        inputs
            .iter()
            .map(|x| Ok(schema.clamp(&self.rating_head(&self.forward(x)?))))
            .collect()
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// gradients w.r.t. the embedding and (optionally) the head output are
    /// given.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_embedding: &[f64],
        grad_rating: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let p = &self.params;
        let e = cache.embedding.as_slice();
        let mut ge = grad_embedding.to_vec();
        if let Some(gr) = grad_rating {
            let back = self.head.backward(p, e, gr, grad);
            for (a, b) in ge.iter_mut().zip(back) {
                *a += b;
            }
        }
        // d(v/|v|)/dv applied to ge
        let proj = dot(e, &ge);
        let graw: Vec<f64> = e
            .iter()
            .zip(&ge)
            .map(|(ei, gi)| (gi - ei * proj) / cache.raw_norm)
            .collect();
        let mut gx = self
            .projection
            .backward(p, &cache.projection_input, &graw, grad);
        match &self.backbone {
            Backbone::Mlp(layers) => {
                for (i, l) in layers.iter().enumerate().rev() {
                    let gz = layers::relu_backward(&cache.pre_activations[i], &gx);
                    gx = l.backward(p, &cache.layer_inputs[i], &gz, grad);
                }
            }
            Backbone::Conv(layers) => {
                let pooled_from = cache.layer_inputs.last().expect("conv cache");
                let mut g_map = vec![0.0; pooled_from.len()];
                for (c, &pos) in cache.pool_argmax.iter().enumerate() {
                    g_map[pos] += gx[c];
                }
                gx = g_map;
                for (i, l) in layers.iter().enumerate().rev() {
                    let gz = layers::relu_backward(&cache.pre_activations[i], &gx);
                    gx = l.backward(p, &cache.layer_inputs[i], &gz, grad);
                }
            }
        }
    }

    /// Plain gradient-descent step.
    pub fn apply_gradient(&mut self, grad: &[f64], learning_rate: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }

    pub fn embed_matrix(&self, inputs: &[ModelInput]) -> Result<Matrix> {
        let rows = inputs
            .iter()
            .map(|x| self.forward(x).map(Embedding::into_inner))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{dm_logcosh, pairwise_distances, pairwise_distances_backward};

    fn feature_input(seed: u64, dim: usize) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelInput::Features((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn init_is_deterministic() {
        let a = EmbeddingModel::init(ModelConfig::features(8, vec![16], 4, 7)).unwrap();
        let b = EmbeddingModel::init(ModelConfig::features(8, vec![16], 4, 7)).unwrap();
        let c = EmbeddingModel::init(ModelConfig::features(8, vec![16], 4, 8)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn parameter_count_closed_form() {
        let m = EmbeddingModel::init(ModelConfig::features(32, vec![64, 64], 128, 1)).unwrap();
        let expected = (32 * 64 + 64) + (64 * 64 + 64) + (64 * 128 + 128) + (128 * 9 + 9);
        assert_eq!(m.param_count(), expected);
        let conv = EmbeddingModel::init(ModelConfig::patch_default(1)).unwrap();
        let expected = (16 * 9 + 16)
            + (32 * 16 * 9 + 32)
            + (64 * 32 * 9 + 64)
            + (64 * 128 + 128)
            + (128 * 9 + 9);
        assert_eq!(conv.param_count(), expected);
    }

    #[test]
    fn tiny_embedding_dim_rejected() {
        assert!(matches!(
            EmbeddingModel::init(ModelConfig::features(4, vec![4], 1, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_unit_norm_and_deterministic() {
        let m = EmbeddingModel::init(ModelConfig::features(8, vec![16], 6, 3)).unwrap();
        for s in 0..10 {
            let x = feature_input(s, 8);
            let e = m.forward(&x).unwrap();
            assert!((l2_norm(e.as_slice()) - 1.0).abs() < 1e-6);
            assert_eq!(e, m.forward(&x).unwrap());
        }
        assert!(m.forward(&ModelInput::Features(vec![0.0; 3])).is_err());
    }

    #[test]
    fn zero_model_cannot_normalize() {
        let mut m = EmbeddingModel::init(ModelConfig::features(8, vec![16], 6, 3)).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert!(matches!(
            m.forward(&feature_input(1, 8)),
            Err(Error::Normalization { .. })
        ));
    }

    #[test]
    fn rating_head_cases() {
        let mut m = EmbeddingModel::init(ModelConfig::features(4, vec![4], 9, 3)).unwrap();
        let e = Embedding::normalize(vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let range = m.head_range();
        m.params_mut()[range.clone()]
            .iter_mut()
            .for_each(|p| *p = 0.0);
        assert_eq!(m.rating_head(&e).values(), &[0.0; 9]);
        // identity weights, bias 0.5
        for o in 0..9 {
            m.params_mut()[range.start + o * 9 + o] = 1.0;
            m.params_mut()[range.start + 81 + o] = 0.5;
        }
        let out = m.rating_head(&e);
        assert_eq!(out.dim(), 9);
        let expected = [
            1.0 / 3.0 + 0.5,
            2.0 / 3.0 + 0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            2.0 / 3.0 + 0.5,
        ];
        for (a, b) in out.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn composite_fd(model: &EmbeddingModel, inputs: &[ModelInput], t: &Matrix) -> f64 {
        let loss = |m: &EmbeddingModel| {
            let e = m.embed_matrix(inputs).unwrap();
            let head: Vec<f64> = (0..e.rows())
                .flat_map(|i| m.rating_head(&Embedding(e.row(i).to_vec())).into_inner())
                .collect();
            dm_logcosh(&pairwise_distances(&e), t).unwrap().value
                + 0.1 * head.iter().map(|v| v * v).sum::<f64>()
        };
        let mut grad = vec![0.0; model.param_count()];
        let caches: Vec<_> = inputs
            .iter()
            .map(|x| model.forward_cached(x).unwrap())
            .collect();
        let e = Matrix::from_rows(
            &caches
                .iter()
                .map(|c| c.embedding().as_slice().to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let p = pairwise_distances(&e);
        let ge = pairwise_distances_backward(&e, &p, &dm_logcosh(&p, t).unwrap().gradient);
        for (i, c) in caches.iter().enumerate() {
            let r = model.rating_head(c.embedding()).into_inner();
            let gr: Vec<f64> = r.iter().map(|v| 0.2 * v).collect();
            model.backward(c, ge.row(i), Some(&gr), &mut grad);
        }
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = num.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max((num - grad[k]).abs() / denom);
        }
        worst
    }

    #[test]
    fn mlp_composite_gradient() {
        let m = EmbeddingModel::init(ModelConfig::features(6, vec![8], 4, 21)).unwrap();
        let inputs: Vec<_> = (0..5).map(|s| feature_input(100 + s, 6)).collect();
        let t = Matrix::from_fn(5, 5, |i, j| {
            if i == j {
                0.0
            } else {
                ((i + j) % 3) as f64 * 0.4 + 0.2
            }
        });
        assert!(composite_fd(&m, &inputs, &t) < 1e-3);
    }

    #[test]
    fn conv_composite_gradient() {
        let cfg = ModelConfig {
            input: InputKind::ImagePatch {
                height: 7,
                width: 6,
            },
            embedding_dim: 3,
            hidden: vec![2, 3],
            rating_dim: 2,
            seed: 5,
        };
        let m = EmbeddingModel::init(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let inputs: Vec<_> = (0..4)
            .map(|_| ModelInput::Patch {
                height: 7,
                width: 6,
                data: (0..42).map(|_| rng.random_range(0.0..1.0)).collect(),
            })
            .collect();
        let t = Matrix::from_fn(4, 4, |i, j| {
            if i == j {
                0.0
            } else {
                0.3 + 0.1 * (i + j) as f64
            }
        });
        assert!(composite_fd(&m, &inputs, &t) < 1e-3);
    }
}
