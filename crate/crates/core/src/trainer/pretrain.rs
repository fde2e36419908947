use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_grads, fresh_rng, mean, sample_up_to, select_params, ParamLayout};
use crate::dataworld::{augment_rois, shuffle_domains, RoleSet, Scene};
use crate::error::{Error, Result};
use crate::nets::{pool_rois, BBox, ModelBundle, Module};
use crate::objectives::{
    adversarial_from_scores, discriminator_objective, pretrain_objective, pretrain_terms, GanVariant, LossBreakdown,
};
use crate::tensor::{Graph, OptimizerState, Tensor};

/// Settings of the adversarial pre-training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Weight of the cycle loss.
    pub lambda: f64,
    /// SGD learning rate of the discriminators.
    pub d_lr: f64,
    /// Adam learning rate of φ, F and G.
    pub g_lr: f64,
    pub d_steps_per_g: usize,
    pub epochs: usize,
    /// Cap on the RoIs drawn per domain from one image.
    pub pairs_per_image: usize,
    /// Augmented boxes per annotated box, the original included.
    pub rois_per_box: usize,
    pub iou_min: f64,
    pub gan_variant: GanVariant,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lambda: 10.0,
            d_lr: 1e-4,
            g_lr: 1e-4,
            d_steps_per_g: 3,
            epochs: 20,
            pairs_per_image: 128,
            rois_per_box: 10,
            iou_min: 0.7,
            gan_variant: GanVariant::LeastSquares,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be positive"));
        }
        for (field, v) in [("d_lr", self.d_lr), ("g_lr", self.g_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [
            ("d_steps_per_g", self.d_steps_per_g),
            ("pairs_per_image", self.pairs_per_image),
            ("rois_per_box", self.rois_per_box),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::config("iou_min", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Update and skip counters of a pre-training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateLedger {
    pub d_steps: u64,
    pub g_steps: u64,
    /// Images passed over because they hold no relationship.
    pub skipped_images: u64,
    /// Discriminator outputs that hit the log floor (log variant).
    pub clamped_probabilities: u64,
}

/// Result of [`pretrain`].
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub bundle: ModelBundle,
    /// Per-epoch means of each loss component.
    pub history: Vec<LossBreakdown>,
    pub ledger: UpdateLedger,
}

/// Resumable pre-training state.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub config: PretrainConfig,
    pub bundle: ModelBundle,
    pub d_opt: OptimizerState,
    pub g_opt: OptimizerState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<LossBreakdown>,
    pub ledger: UpdateLedger,
}

fn mean_breakdown(items: &[LossBreakdown], variant: GanVariant) -> LossBreakdown {
    let pick = |f: fn(&LossBreakdown) -> f64| mean(&items.iter().map(f).collect::<Vec<_>>());
    LossBreakdown {
        variant,
        adv_d_a: pick(|b| b.adv_d_a),
        adv_d_b: pick(|b| b.adv_d_b),
        adv_gen: pick(|b| b.adv_gen),
        cycle: pick(|b| b.cycle),
        total: pick(|b| b.total),
    }
}

impl Pretrainer {
    pub fn new(config: PretrainConfig, bundle: ModelBundle) -> Result<Self> {
        config.validate()?;
        Ok(Pretrainer {
            d_opt: OptimizerState::sgd(config.d_lr),
            g_opt: OptimizerState::adam(config.g_lr),
            rng: fresh_rng(config.seed),
            epoch: 0,
            history: Vec::new(),
            ledger: UpdateLedger::default(),
            config,
            bundle,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, scenes: &[Scene]) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(scenes)?;
        }
        Ok(())
    }

    pub fn finish(self) -> PretrainOutcome {
        PretrainOutcome {
            bundle: self.bundle,
            history: self.history,
            ledger: self.ledger,
        }
    }

    /// One pass over every image that has at least one relationship.
    ///
    /// The pass sees the scenes only through [`shuffle_domains`], so
    /// pairings never reach the optimizer.
    pub fn run_epoch(&mut self, scenes: &[Scene]) -> Result<LossBreakdown> {
        if scenes.is_empty() {
            return Err(Error::Data("pre-training needs at least one scene".into()));
        }
        let maps: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.id, s)).collect();
        let mut roles = shuffle_domains(scenes, self.rng.random()).by_scene();
        let skipped = scenes.len() - roles.len();
        self.ledger.skipped_images += skipped as u64;
        if roles.is_empty() {
            return Err(Error::Data(format!(
                "all {} images skipped: none holds a relationship",
                scenes.len()
            )));
        }
        roles.shuffle(&mut self.rng);
        let mut losses = Vec::with_capacity(roles.len());
        for r in &roles {
            losses.push(self.image_step(maps[&r.scene_id], r)?);
        }
        let summary = mean_breakdown(&losses, self.config.gan_variant);
        self.history.push(summary);
        self.epoch += 1;
        Ok(summary)
    }

    fn sample_domain(&mut self, boxes: &[BBox], bounds: (usize, usize)) -> Result<Vec<BBox>> {
        let mut all = Vec::with_capacity(boxes.len() * self.config.rois_per_box);
        for b in boxes {
            all.extend(augment_rois(
                b,
                self.config.rois_per_box,
                self.config.iou_min,
                bounds,
                self.rng.random(),
            )?);
        }
        Ok(sample_up_to(&all, self.config.pairs_per_image, &mut self.rng))
    }

    /// `d_steps_per_g` discriminator updates followed by one joint update of
    /// φ, F and G, all on one image.
    fn image_step(&mut self, scene: &Scene, roles: &RoleSet) -> Result<LossBreakdown> {
        let bounds = (scene.map.width(), scene.map.height());
        let a_boxes = self.sample_domain(&roles.subjects, bounds)?;
        let b_boxes = self.sample_domain(&roles.objects, bounds)?;
        let layout = ParamLayout::of(&self.bundle);
        let variant = self.config.gan_variant;

        // Real and translated samples under the current φ, F, G; fixed while
        // the discriminators step.
        let (a, b, fa, gb) = {
            let mut g = Graph::new();
            let oa = self.bundle.oa.bind(&mut g, false);
            let f = self.bundle.f.bind(&mut g, false);
            let gm = self.bundle.g.bind(&mut g, false);
            let map = g.constant(scene.map.tensor());
            let oa_map = oa.forward(&mut g, map)?;
            let p = self.bundle.config.pool_size;
            let a = pool_rois(&mut g, oa_map, &a_boxes, p)?;
            let b = pool_rois(&mut g, oa_map, &b_boxes, p)?;
            let fa = f.forward(&mut g, a)?;
            let gb = gm.forward(&mut g, b)?;
            let take = |v| -> Tensor { g.value(v).clone() };
            (take(a), take(b), take(fa), take(gb))
        };

        for _ in 0..self.config.d_steps_per_g {
            let mut g = Graph::new();
            let da = self.bundle.d_a.bind(&mut g, true);
            let db = self.bundle.d_b.bind(&mut g, true);
            let [a, b, fa, gb] = [&a, &b, &fa, &gb].map(|t| g.constant(t));
            let real_a = da.forward(&mut g, a)?;
            let fake_a = da.forward(&mut g, gb)?;
            let real_b = db.forward(&mut g, b)?;
            let fake_b = db.forward(&mut g, fa)?;
            let adv = adversarial_from_scores(&mut g, real_a, fake_a, real_b, fake_b, variant)?;
            self.ledger.clamped_probabilities += adv.clamped as u64;
            let loss = discriminator_objective(&mut g, &adv)?;
            let grads = g.backward(loss)?;
            let gs = collect_grads(&[&da, &db], &grads);
            let mut params = select_params(&mut self.bundle, &[layout.d_a.clone(), layout.d_b.clone()]);
            self.d_opt.step(&mut params, &gs)?;
            self.ledger.d_steps += 1;
        }

        let mut g = Graph::new();
        let oa = self.bundle.oa.bind(&mut g, true);
        let f = self.bundle.f.bind(&mut g, true);
        let gm = self.bundle.g.bind(&mut g, true);
        let da = self.bundle.d_a.bind(&mut g, false);
        let db = self.bundle.d_b.bind(&mut g, false);
        let map = g.constant(scene.map.tensor());
        let oa_map = oa.forward(&mut g, map)?;
        let p = self.bundle.config.pool_size;
        let a = pool_rois(&mut g, oa_map, &a_boxes, p)?;
        let b = pool_rois(&mut g, oa_map, &b_boxes, p)?;
        let terms = pretrain_terms(&mut g, a, b, &f, &gm, &da, &db, variant)?;
        self.ledger.clamped_probabilities += terms.adv.clamped as u64;
        let objective = pretrain_objective(&mut g, &terms.adv, terms.cycle, self.config.lambda)?;
        let breakdown = LossBreakdown::read(&g, &terms.adv, terms.cycle, self.config.lambda);
        let grads = g.backward(objective.generator)?;
        let gs = collect_grads(&[&oa, &f, &gm], &grads);
        let mut params = select_params(&mut self.bundle, &[layout.phi, layout.f, layout.g]);
        self.g_opt.step(&mut params, &gs)?;
        self.ledger.g_steps += 1;
        Ok(breakdown)
    }
}

/// Adversarial pre-training of `bundle` on the training scenes.
///
/// Each image is a mini-batch: its subject and object boxes, augmented and
/// capped at `pairs_per_image` per domain, form the two domains. The
/// discriminators take `d_steps_per_g` SGD steps, then φ, F and G take one
/// joint Adam step on the adversarial plus λ-weighted cycle loss.
pub fn pretrain(config: &PretrainConfig, bundle: ModelBundle, scenes: &[Scene]) -> Result<PretrainOutcome> {
    let mut p = Pretrainer::new(config.clone(), bundle)?;
    p.run(scenes)?;
    Ok(p.finish())
}
