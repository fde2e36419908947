//! Loss functions: the adversarial objective in its log and least-squares
//! forms, the cycle-consistency penalty, their weighted combination, and the
//! supervised and image-level relationship losses.
//!
//! Expectations are batch means. Losses are recorded on a [`Graph`] so that
//! the same code serves training and finite-difference checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DiscriminatorVars, TransformVars};
use crate::tensor::{Graph, Tensor, Var, LOG_FLOOR};

/// Which adversarial loss family to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanVariant {
    /// Negative log-likelihood form.
    Log,
    /// Least-squares form: real → 1, fake → 0, generator target 1.
    #[default]
    LeastSquares,
}

/// A mapping between the two RoI domains (`F` or `G`).
pub trait DomainMap {
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

impl DomainMap for TransformVars {
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward(g, x)
    }
}

impl<F: Fn(&mut Graph, Var) -> Result<Var>> DomainMap for F {
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self(g, x)
    }
}

/// A domain discriminator: `[n, d]` batch to `[n]` probabilities.
pub trait Critic {
    fn score(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

impl Critic for DiscriminatorVars {
    fn score(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward(g, x)
    }
}

impl<F: Fn(&mut Graph, Var) -> Result<Var>> Critic for F {
    fn score(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self(g, x)
    }
}

/// Scalar handles of the adversarial terms.
#[derive(Clone, Copy, Debug)]
pub struct AdvTerms {
    pub variant: GanVariant,
    /// `D_A`'s term. Least squares: `E[(D_A(a)-1)²] + E[D_A(G(b))²]`, minimized.
    /// Log: `E[log D_A(a)] + E[log(1-D_A(G(b)))]`, maximized.
    pub d_a: Var,
    /// `D_B`'s term, symmetric to `d_a`.
    pub d_b: Var,
    /// Generator term of `F` (judged by `D_B`).
    pub gen_f: Var,
    /// Generator term of `G` (judged by `D_A`).
    pub gen_g: Var,
    /// `gen_f + gen_g`.
    pub gen: Var,
    /// Probabilities that hit the log floor (log variant only).
    pub clamped: usize,
}

fn batch_rows(g: &Graph, x: Var, what: &str) -> Result<usize> {
    match g.shape(x) {
        [n, _] if *n > 0 => Ok(*n),
        s => Err(Error::Contract(format!(
            "{what} must be a non-empty [n, d] batch, got {s:?}"
        ))),
    }
}

fn count_clamped(g: &Graph, v: Var, complement: bool) -> usize {
    g.value(v)
        .data()
        .iter()
        .filter(|&&p| {
            if complement {
                1.0 - p <= LOG_FLOOR
            } else {
                p <= LOG_FLOOR
            }
        })
        .count()
}

/// Adversarial terms from discriminator outputs on real and translated
/// samples of both domains (each an `[n]` probability vector).
pub fn adversarial_from_scores(
    g: &mut Graph,
    real_a: Var,
    fake_a: Var,
    real_b: Var,
    fake_b: Var,
    variant: GanVariant,
) -> Result<AdvTerms> {
    let (d_a, d_b, gen_f, gen_g, clamped) = match variant {
        GanVariant::LeastSquares => {
            let ls_pair = |g: &mut Graph, real: Var, fake: Var| -> Result<Var> {
                let r = g.add_scalar(real, -1.0)?;
                let r = g.square(r)?;
                let r = g.mean(r)?;
                let f = g.square(fake)?;
                let f = g.mean(f)?;
                g.add(r, f)
            };
            let ls_gen = |g: &mut Graph, fake: Var| -> Result<Var> {
                let f = g.add_scalar(fake, -1.0)?;
                let f = g.square(f)?;
                g.mean(f)
            };
            let d_a = ls_pair(g, real_a, fake_a)?;
            let d_b = ls_pair(g, real_b, fake_b)?;
            let gen_f = ls_gen(g, fake_b)?;
            let gen_g = ls_gen(g, fake_a)?;
            (d_a, d_b, gen_f, gen_g, 0)
        }
        GanVariant::Log => {
            let clamped = count_clamped(g, real_a, false)
                + count_clamped(g, real_b, false)
                + 2 * (count_clamped(g, fake_a, true) + count_clamped(g, fake_b, true));
            let mean_log = |g: &mut Graph, p: Var| -> Result<Var> {
                let l = g.log_clamped(p)?;
                g.mean(l)
            };
            let mean_log_complement = |g: &mut Graph, p: Var| -> Result<Var> {
                let c = g.scale(p, -1.0)?;
                let c = g.add_scalar(c, 1.0)?;
                let l = g.log_clamped(c)?;
                g.mean(l)
            };
            let ra = mean_log(g, real_a)?;
            let fa = mean_log_complement(g, fake_a)?;
            let d_a = g.add(ra, fa)?;
            let rb = mean_log(g, real_b)?;
            let fb = mean_log_complement(g, fake_b)?;
            let d_b = g.add(rb, fb)?;
            (d_a, d_b, fb, fa, clamped)
        }
    };
    let gen = g.add(gen_f, gen_g)?;
    Ok(AdvTerms {
        variant,
        d_a,
        d_b,
        gen_f,
        gen_g,
        gen,
        clamped,
    })
}

/// The adversarial objective for batches `a ⊂ A`, `b ⊂ B`: `F(a)` is judged
/// by `D_B` against `b`, `G(b)` by `D_A` against `a`.
#[allow(clippy::too_many_arguments)]
pub fn adv_loss(
    g: &mut Graph,
    a: Var,
    b: Var,
    f: &impl DomainMap,
    gm: &impl DomainMap,
    d_a: &impl Critic,
    d_b: &impl Critic,
    variant: GanVariant,
) -> Result<AdvTerms> {
    batch_rows(g, a, "batch_a")?;
    batch_rows(g, b, "batch_b")?;
    let fa = f.map(g, a)?;
    let gb = gm.map(g, b)?;
    let real_a = d_a.score(g, a)?;
    let fake_a = d_a.score(g, gb)?;
    let real_b = d_b.score(g, b)?;
    let fake_b = d_b.score(g, fa)?;
    adversarial_from_scores(g, real_a, fake_a, real_b, fake_b, variant)
}

/// Mean per-sample L1 round-trip error of `x` through `there` then `back`,
/// given `there(x)` already computed.
fn round_trip(g: &mut Graph, x: Var, mapped: Var, back: &impl DomainMap) -> Result<Var> {
    let n = batch_rows(g, x, "cycle batch")?;
    let restored = back.map(g, mapped)?;
    let diff = g.sub(x, restored)?;
    let l1 = g.abs(diff)?;
    let total = g.sum(l1)?;
    g.scale(total, 1.0 / n as f64)
}

/// `E_a ‖a - G(F(a))‖₁ + E_b ‖b - F(G(b))‖₁`.
///
/// ```
/// use sta::objectives::cycle_loss;
/// use sta::tensor::{Graph, Tensor};
/// let mut g = Graph::new();
/// let a = g.constant(&Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
/// let b = g.constant(&Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap());
/// let shift = |g: &mut Graph, x| g.add_scalar(x, 1.0);
/// let identity = |_: &mut Graph, x| Ok(x);
/// let c = cycle_loss(&mut g, a, b, &shift, &identity).unwrap();
/// assert_eq!(g.value(c).item(), 6.0);
/// ```
pub fn cycle_loss(g: &mut Graph, a: Var, b: Var, f: &impl DomainMap, gm: &impl DomainMap) -> Result<Var> {
    let fa = f.map(g, a)?;
    let gb = gm.map(g, b)?;
    cycle_from_mapped(g, a, b, fa, gb, f, gm)
}

fn cycle_from_mapped(
    g: &mut Graph,
    a: Var,
    b: Var,
    fa: Var,
    gb: Var,
    f: &impl DomainMap,
    gm: &impl DomainMap,
) -> Result<Var> {
    let side_a = round_trip(g, a, fa, gm)?;
    let side_b = round_trip(g, b, gb, f)?;
    g.add(side_a, side_b)
}

/// Everything the pre-training step needs from one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PretrainTerms {
    pub adv: AdvTerms,
    pub cycle: Var,
}

/// Adversarial and cycle terms sharing a single evaluation of `F(a)`, `G(b)`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_terms(
    g: &mut Graph,
    a: Var,
    b: Var,
    f: &impl DomainMap,
    gm: &impl DomainMap,
    d_a: &impl Critic,
    d_b: &impl Critic,
    variant: GanVariant,
) -> Result<PretrainTerms> {
    batch_rows(g, a, "batch_a")?;
    batch_rows(g, b, "batch_b")?;
    let fa = f.map(g, a)?;
    let gb = gm.map(g, b)?;
    let real_a = d_a.score(g, a)?;
    let fake_a = d_a.score(g, gb)?;
    let real_b = d_b.score(g, b)?;
    let fake_b = d_b.score(g, fa)?;
    let adv = adversarial_from_scores(g, real_a, fake_a, real_b, fake_b, variant)?;
    let cycle = cycle_from_mapped(g, a, b, fa, gb, f, gm)?;
    Ok(PretrainTerms { adv, cycle })
}

/// The losses each party minimizes.
#[derive(Clone, Copy, Debug)]
pub struct PretrainObjective {
    /// For `D_A` and `D_B`.
    pub discriminator: Var,
    /// For `F`, `G` and φ: generator adversarial part + λ·cycle.
    pub generator: Var,
}

/// The loss both discriminators minimize: the sum of their terms, negated
/// for the log variant (whose terms are maximized).
pub fn discriminator_objective(g: &mut Graph, adv: &AdvTerms) -> Result<Var> {
    let d_sum = g.add(adv.d_a, adv.d_b)?;
    match adv.variant {
        GanVariant::LeastSquares => Ok(d_sum),
        GanVariant::Log => g.scale(d_sum, -1.0),
    }
}

/// Combines adversarial and cycle terms with trade-off `lambda`.
pub fn pretrain_objective(g: &mut Graph, adv: &AdvTerms, cycle: Var, lambda: f64) -> Result<PretrainObjective> {
    if lambda.is_nan() || lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::config("lambda", format!("must be positive, got {lambda}")));
    }
    let discriminator = discriminator_objective(g, adv)?;
    let weighted = g.scale(cycle, lambda)?;
    let generator = g.add(adv.gen, weighted)?;
    Ok(PretrainObjective {
        discriminator,
        generator,
    })
}

/// Scalar summary of one pre-training evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub variant: GanVariant,
    pub adv_d_a: f64,
    pub adv_d_b: f64,
    pub adv_gen: f64,
    pub cycle: f64,
    /// `adv_gen + λ·cycle`, the generator-side objective.
    pub total: f64,
}

impl LossBreakdown {
    pub fn read(g: &Graph, adv: &AdvTerms, cycle: Var, lambda: f64) -> Self {
        let v = |x: Var| g.value(x).item();
        LossBreakdown {
            variant: adv.variant,
            adv_d_a: v(adv.d_a),
            adv_d_b: v(adv.d_b),
            adv_gen: v(adv.gen),
            cycle: v(cycle),
            total: v(adv.gen) + lambda * v(cycle),
        }
    }
}

/// Mean over pairs of `-ln S(i, j, r_true)`; `scores` is `[n, R]`, relations
/// are 0-based.
pub fn supervised_ce_loss(g: &mut Graph, scores: Var, true_relations: &[usize]) -> Result<Var> {
    let r = match g.shape(scores) {
        [_, r] => *r,
        s => {
            return Err(Error::shape(
                "supervised_ce_loss",
                format!("scores {s:?} are not [n, R]"),
            ))
        }
    };
    if let Some(bad) = true_relations.iter().find(|&&t| t >= r) {
        return Err(Error::Contract(format!("relation index {bad} outside 0..{r}")));
    }
    let picked = g.pick(scores, true_relations)?;
    let logs = g.log_clamped(picked)?;
    let m = g.mean(logs)?;
    g.scale(m, -1.0)
}

/// Image-level loss from average-pooled pair scores.
///
/// `scores` is `[pairs, R]` (one row per ordered object pair), `labels[r]` is
/// whether relation `r` occurs anywhere in the image. With
/// `s_r = mean_pairs S(·, ·, r)` the loss is
/// `-Σ_r [y_r ln s_r + (1 - y_r) ln(1 - s_r)]`, `s` clamped to `[1e-12, 1 - 1e-12]`.
pub fn weak_loss(g: &mut Graph, scores: Var, labels: &[bool]) -> Result<Var> {
    let r = match g.shape(scores) {
        [n, r] if *n > 0 => *r,
        s => {
            return Err(Error::Contract(format!(
                "weak loss needs a non-empty [pairs, R] matrix, got {s:?}"
            )))
        }
    };
    if labels.len() != r {
        return Err(Error::shape(
            "weak_loss",
            format!("{} labels for {r} relations", labels.len()),
        ));
    }
    let pooled = g.mean_rows(scores)?;
    let y = Tensor::vector(labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect());
    let not_y = Tensor::vector(y.data().iter().map(|v| 1.0 - v).collect());
    let y = g.constant_owned(y);
    let not_y = g.constant_owned(not_y);
    let log_s = g.log_clamped(pooled)?;
    let comp = g.scale(pooled, -1.0)?;
    let comp = g.add_scalar(comp, 1.0)?;
    let log_comp = g.log_clamped(comp)?;
    let pos = g.mul(y, log_s)?;
    let neg = g.mul(not_y, log_comp)?;
    let both = g.add(pos, neg)?;
    let total = g.sum(both)?;
    g.scale(total, -1.0)
}
