use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{alignment_recovery, per_relation_accuracy, recall_at_k, relation_bias, truths_of};
use super::predict::{eval_threads, score_scenes, FeatureSource};
use super::report::{BiasPoint, MetricsReport, RunMeta};
use crate::canonical::config_hash;
use crate::dataworld::{generate_world, make_splits, Experiment, Scene, Setting, TrainSet, World, WorldSpec};
use crate::error::{Error, Result};
use crate::nets::{ModelBundle, NetConfig, TransformKind};
use crate::trainer::{finetune, pretrain, FinetuneConfig, FinetuneMode, PretrainConfig};

/// The five ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Classifier on the base map; φ bypassed.
    Base,
    /// φ and classifier trained from scratch, no pre-training.
    BaseOa,
    /// Pre-trained φ kept frozen during fine-tuning.
    StaNoft,
    /// Pre-training with plain (non-residual) transforms.
    StaNores,
    /// Pre-training then fine-tuning of φ and the classifier.
    Sta,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::BaseOa,
        Variant::StaNoft,
        Variant::StaNores,
        Variant::Sta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BaseOa => "base-oa",
            Variant::StaNoft => "sta-noft",
            Variant::StaNores => "sta-nores",
            Variant::Sta => "sta",
        }
    }

    /// Transform kind used when the variant pre-trains.
    pub fn transform(self) -> TransformKind {
        match self {
            Variant::StaNores => TransformKind::Plain,
            _ => TransformKind::Residual,
        }
    }

    pub fn pretrains(self) -> bool {
        matches!(self, Variant::StaNoft | Variant::StaNores | Variant::Sta)
    }

    /// The map the variant's classifier reads.
    pub fn source(self) -> FeatureSource {
        match self {
            Variant::Base => FeatureSource::Base,
            _ => FeatureSource::Oa,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

/// World, network and both training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub net: NetConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Seed of parameter initialization and simulated detections.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl ExperimentConfig {
    /// The desk-scale preset used by the directional experiments.
    ///
    /// Pre-training runs with discriminator and generator learning rates of
    /// 1e-2 and 1e-3; at 1e-4 twenty epochs over 200 small scenes leave φ
    /// where it started.
    pub fn desk(seed: u64) -> Self {
        let world = WorldSpec::desk(seed);
        let net = NetConfig {
            channels: world.channels,
            relations: world.relations,
            ..NetConfig::default()
        };
        ExperimentConfig {
            world,
            net,
            pretrain: PretrainConfig {
                d_lr: 1e-2,
                g_lr: 1e-3,
                seed,
                ..PretrainConfig::default()
            },
            finetune: FinetuneConfig {
                seed,
                ..FinetuneConfig::default()
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.net.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.net.channels != self.world.channels {
            return Err(Error::config(
                "net.channels",
                format!(
                    "network expects {} channels, world has {}",
                    self.net.channels, self.world.channels
                ),
            ));
        }
        if self.net.relations != self.world.relations {
            return Err(Error::config(
                "net.relations",
                format!(
                    "network predicts {} relations, world has {}",
                    self.net.relations, self.world.relations
                ),
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// Replaces every seed: world, initialization and both stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.seed = seed;
        self
    }

    /// The network a variant pre-trains, with its transform kind.
    pub fn net_for(&self, variant: Variant) -> NetConfig {
        NetConfig {
            transform: variant.transform(),
            ..self.net.clone()
        }
    }

    /// Fine-tuning settings of `variant` in `setting`.
    pub fn finetune_for(&self, variant: Variant, setting: Setting) -> FinetuneConfig {
        FinetuneConfig {
            mode: finetune_mode(setting),
            use_oa: variant != Variant::Base,
            freeze_oa: variant == Variant::StaNoft,
            ..self.finetune.clone()
        }
    }

    /// The bundle fine-tuning of `variant` starts from.
    pub fn initial_bundle(&self, variant: Variant, pretrained: Option<ModelBundle>) -> Result<ModelBundle> {
        match (variant.pretrains(), pretrained) {
            (true, Some(b)) => Ok(b),
            (true, None) => Err(Error::Contract(format!("variant {variant} needs a pre-trained bundle"))),
            (false, _) => {
                let mut b = ModelBundle::init(&self.net, self.seed)?;
                if variant == Variant::Base {
                    b.reinit_classifier(self.net.channels, self.seed);
                }
                Ok(b)
            }
        }
    }
}

/// A trained variant.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub variant: Variant,
    pub bundle: ModelBundle,
    pub source: FeatureSource,
}

/// Training scenes as pre-training sees them: held-out compositions
/// removed, pair roles intact (the shuffle step discards the links).
pub fn pretrain_scenes(world: &World) -> Result<Vec<Scene>> {
    match make_splits(world, Setting::Supervised, 0)?.train {
        TrainSet::Pairs(s) => Ok(s),
        TrainSet::Weak(_) => unreachable!("supervised splits carry pairs"),
    }
}

fn finetune_mode(setting: Setting) -> FinetuneMode {
    match setting {
        Setting::Weak => FinetuneMode::Weak,
        _ => FinetuneMode::Supervised,
    }
}

/// Pre-trains the bundle a variant starts from. Variants sharing a
/// transform kind share the result.
pub fn pretrained_bundle(config: &ExperimentConfig, kind: TransformKind, world: &World) -> Result<ModelBundle> {
    let net = NetConfig {
        transform: kind,
        ..config.net.clone()
    };
    let bundle = ModelBundle::init(&net, config.seed)?;
    Ok(pretrain(&config.pretrain, bundle, &pretrain_scenes(world)?)?.bundle)
}

/// Fine-tunes `variant` on `experiment.train`. Pre-training variants take
/// `pretrained`, the others start from a fresh bundle.
pub fn train_variant(
    config: &ExperimentConfig,
    variant: Variant,
    experiment: &Experiment,
    pretrained: Option<ModelBundle>,
) -> Result<TrainedModel> {
    let ft = config.finetune_for(variant, experiment.setting);
    let bundle = config.initial_bundle(variant, pretrained)?;
    let bundle = finetune(&ft, bundle, &experiment.train)?.bundle;
    Ok(TrainedModel {
        variant,
        bundle,
        source: variant.source(),
    })
}

/// Metrics of `model` on `experiment.test`.
pub fn evaluate(
    model: &TrainedModel,
    experiment: &Experiment,
    train: &[Scene],
    meta: RunMeta,
) -> Result<MetricsReport> {
    let test = &experiment.test;
    let scored = score_scenes(&model.bundle, model.source, test, eval_threads())?;
    let truths = truths_of(test);
    let accuracy = per_relation_accuracy(&scored.top1, &scored.truth)?;
    let bias_curve = relation_bias(train)
        .into_iter()
        .map(|b| BiasPoint {
            relation: b.relation,
            bias: b.bias,
            accuracy: accuracy.get(&b.relation).copied(),
        })
        .collect();
    let overlap = if scored.overlap.is_empty() {
        return Err(Error::Metric("no test pair carries activation".into()));
    } else {
        scored.overlap.iter().sum::<f64>() / scored.overlap.len() as f64
    };
    Ok(MetricsReport {
        setting: experiment.setting,
        variant: Some(model.variant.name().into()),
        recall_at_50: recall_at_k(&scored.predictions, &truths, 50)?,
        recall_at_100: recall_at_k(&scored.predictions, &truths, 100)?,
        per_relation_accuracy: accuracy,
        overlap_ratio: overlap,
        alignment: match alignment_recovery(&model.bundle, test) {
            Ok(a) => Some(a),
            Err(Error::Metric(_)) => None,
            Err(e) => return Err(e),
        },
        bias_curve,
        meta,
    })
}

/// Generates the world, trains `variants` for `setting` and evaluates each.
/// Pre-training runs once per transform kind.
pub fn run_variants(
    config: &ExperimentConfig,
    setting: Setting,
    variants: &[Variant],
) -> Result<Vec<(TrainedModel, MetricsReport)>> {
    config.validate()?;
    let world = generate_world(&config.world)?;
    run_variants_on(config, &world, setting, variants)
}

/// As [`run_variants`] on an already generated world.
pub fn run_variants_on(
    config: &ExperimentConfig,
    world: &World,
    setting: Setting,
    variants: &[Variant],
) -> Result<Vec<(TrainedModel, MetricsReport)>> {
    let hash = config.hash()?;
    let experiment = make_splits(world, setting, config.seed)?;
    let train = pretrain_scenes(world)?;
    let mut cache: Vec<(TransformKind, ModelBundle, f64)> = Vec::new();
    let mut out = Vec::new();
    for &v in variants {
        let start = Instant::now();
        let mut pre_secs = 0.0;
        let pretrained = if v.pretrains() {
            let kind = v.transform();
            if let Some((_, b, secs)) = cache.iter().find(|c| c.0 == kind) {
                pre_secs = *secs;
                Some(b.clone())
            } else {
                let b = pretrained_bundle(config, kind, world)?;
                cache.push((kind, b.clone(), start.elapsed().as_secs_f64()));
                Some(b)
            }
        } else {
            None
        };
        let model = train_variant(config, v, &experiment, pretrained)?;
        let meta = RunMeta {
            seed: config.seed,
            config_hash: hash.clone(),
            wall_time_secs: pre_secs + start.elapsed().as_secs_f64(),
        };
        let report = evaluate(&model, &experiment, &train, meta)?;
        out.push((model, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!(matches!("sta-xl".parse::<Variant>(), Err(Error::Config { field, .. }) if field == "variant"));
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        let mut c = ExperimentConfig::desk(0);
        c.net.channels = 5;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "net.channels"));
    }

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig::desk(3);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
    }
}
