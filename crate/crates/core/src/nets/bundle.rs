use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::components::{Discriminator, OaLayer, RelationClassifier, Transform, TransformKind};
use super::layers::{Linear, Module};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dimensions of every learnable component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Channels of the base feature map.
    pub channels: usize,
    /// Output channels of the OA layer.
    pub oa_channels: usize,
    /// RoI pooling grid side `P`.
    pub pool_size: usize,
    pub transform: TransformKind,
    pub disc_hidden: usize,
    /// Score two concatenated domain samples instead of one.
    pub disc_paired: bool,
    pub mlp_hidden: usize,
    pub relations: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 8,
            oa_channels: 8,
            pool_size: 4,
            transform: TransformKind::Residual,
            disc_hidden: 256,
            disc_paired: false,
            mlp_hidden: 256,
            relations: 8,
        }
    }
}

impl NetConfig {
    /// Width `P²·C_out` of one pooled RoI feature on the OA map.
    pub fn feature_dim(&self) -> usize {
        self.pool_size * self.pool_size * self.oa_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("oa_channels", self.oa_channels),
            ("pool_size", self.pool_size),
            ("disc_hidden", self.disc_hidden),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.relations < 2 {
            return Err(Error::config("relations", "must be at least 2"));
        }
        Ok(())
    }
}

/// Every learnable parameter of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: NetConfig,
    /// OA layer φ.
    pub oa: OaLayer,
    /// `F: A -> B`.
    pub f: Transform,
    /// `G: B -> A`.
    pub g: Transform,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    pub classifier: RelationClassifier,
}

/// Deterministic initialization from `seed`; see [`ModelBundle::init`].
pub fn init_params(config: &NetConfig, seed: u64) -> Result<ModelBundle> {
    ModelBundle::init(config, seed)
}

impl ModelBundle {
    /// Scaled-normal weights (`std = sqrt(2 / fan_in)`), zero biases, and
    /// zero-initialized residual tails so both transforms start as the
    /// identity.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.feature_dim();
        let oa = OaLayer {
            proj: Linear::scaled_normal(config.channels, config.oa_channels, true, &mut rng),
        };
        let f = Transform::init(config.transform, d, &mut rng);
        let g = Transform::init(config.transform, d, &mut rng);
        let d_a = Discriminator::init(d, config.disc_hidden, config.disc_paired, &mut rng);
        let d_b = Discriminator::init(d, config.disc_hidden, config.disc_paired, &mut rng);
        let classifier = RelationClassifier::init(d, config.mlp_hidden, config.relations, &mut rng);
        Ok(ModelBundle {
            config: config.clone(),
            oa,
            f,
            g,
            d_a,
            d_b,
            classifier,
        })
    }

    /// Classifier reading features of a map with `channels` channels, for
    /// variants that bypass the OA layer.
    pub fn reinit_classifier(&mut self, channels: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.pool_size * self.config.pool_size * channels;
        self.classifier = RelationClassifier::init(d, self.config.mlp_hidden, self.config.relations, &mut rng);
    }

    /// All parameters, prefixed by component name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        let parts: [(&str, Vec<(String, &Tensor)>); 6] = [
            ("phi", self.oa.named_params()),
            ("f", self.f.named_params()),
            ("g", self.g.named_params()),
            ("d_a", self.d_a.named_params()),
            ("d_b", self.d_b.named_params()),
            ("theta", self.classifier.named_params()),
        ];
        for (prefix, params) in parts {
            out.extend(params.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    /// Mutable parameters in the order of [`ModelBundle::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.oa.params_mut();
        out.extend(self.f.params_mut());
        out.extend(self.g.params_mut());
        out.extend(self.d_a.params_mut());
        out.extend(self.d_b.params_mut());
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn bit_eq(&self, other: &ModelBundle) -> bool {
        let (a, b) = (self.named_params(), other.named_params());
        a.len() == b.len() && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}
