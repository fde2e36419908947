//! The two training stages: adversarial pre-training of φ, F, G, D_A, D_B
//! and fine-tuning of φ and the relation classifier, plus checkpoints.

mod checkpoint;
mod finetune;
mod pretrain;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use finetune::{finetune, FinetuneConfig, FinetuneMode, FinetuneOutcome, Finetuner};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome, Pretrainer, UpdateLedger};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Bound, ModelBundle, Module};

/// Serializable position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal word position (a u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |why: &str| Error::Integrity(format!("rng state: {why}"));
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| bad("word position is not a number"))?,
        );
        Ok(rng)
    }
}

/// Up to `cap` items of `items`, chosen without replacement in random order
/// when there are more.
pub(crate) fn sample_up_to<T: Clone>(items: &[T], cap: usize, rng: &mut impl Rng) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    index::sample(rng, items.len(), cap)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

/// Parameter indices in [`ModelBundle::params_mut`] order for each component.
pub(crate) struct ParamLayout {
    pub phi: std::ops::Range<usize>,
    pub f: std::ops::Range<usize>,
    pub g: std::ops::Range<usize>,
    pub d_a: std::ops::Range<usize>,
    pub d_b: std::ops::Range<usize>,
    pub theta: std::ops::Range<usize>,
}

impl ParamLayout {
    pub fn of(bundle: &ModelBundle) -> Self {
        let sizes = [
            bundle.oa.named_params().len(),
            bundle.f.named_params().len(),
            bundle.g.named_params().len(),
            bundle.d_a.named_params().len(),
            bundle.d_b.named_params().len(),
            bundle.classifier.named_params().len(),
        ];
        let mut start = 0;
        let mut next = |n: usize| {
            let r = start..start + n;
            start += n;
            r
        };
        ParamLayout {
            phi: next(sizes[0]),
            f: next(sizes[1]),
            g: next(sizes[2]),
            d_a: next(sizes[3]),
            d_b: next(sizes[4]),
            theta: next(sizes[5]),
        }
    }
}

/// Mutable references to the parameters at `ranges`, in order.
pub(crate) fn select_params<'a>(
    bundle: &'a mut ModelBundle,
    ranges: &[std::ops::Range<usize>],
) -> Vec<&'a mut crate::tensor::Tensor> {
    let mut all: Vec<Option<&mut crate::tensor::Tensor>> = bundle.params_mut().into_iter().map(Some).collect();
    ranges
        .iter()
        .flat_map(|r| r.clone())
        .map(|i| all[i].take().expect("parameter selected twice"))
        .collect()
}

pub(crate) fn collect_grads(parts: &[&dyn BoundGrads], grads: &crate::tensor::Gradients) -> Vec<crate::tensor::Tensor> {
    parts.iter().flat_map(|p| p.grads_of(grads)).collect()
}

/// Object-safe view of [`Bound::grads`].
pub(crate) trait BoundGrads {
    fn grads_of(&self, grads: &crate::tensor::Gradients) -> Vec<crate::tensor::Tensor>;
}

impl<B: Bound> BoundGrads for B {
    fn grads_of(&self, grads: &crate::tensor::Gradients) -> Vec<crate::tensor::Tensor> {
        self.grads(grads)
    }
}

pub(crate) fn fresh_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.set_stream(5);
        for _ in 0..13 {
            rng.random::<u64>();
        }
        let state = RngState::capture(&rng);
        let mut back = state.restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.random::<u64>(), back.random::<u64>());
        }
    }

    #[test]
    fn sampling_caps_and_keeps_small_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(sample_up_to(&items, 20, &mut rng), items);
        let s = sample_up_to(&items, 4, &mut rng);
        assert_eq!(s.len(), 4);
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn layout_covers_every_parameter() {
        let b = ModelBundle::init(&Default::default(), 0).unwrap();
        let l = ParamLayout::of(&b);
        assert_eq!(l.phi.start, 0);
        assert_eq!(l.theta.end, b.named_params().len());
        for (n, _) in &b.named_params()[l.d_a.clone()] {
            assert!(n.starts_with("d_a."));
        }
    }
}
