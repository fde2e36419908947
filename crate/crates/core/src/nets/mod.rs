//! Learnable components: the OA layer φ, RoI pooling, the domain transforms
//! `F` and `G`, the discriminators `D_A` and `D_B`, and the relationship
//! classifier θ.
//!
//! Every component implements [`Module`]: parameters are plain tensors that
//! get bound onto a [`Graph`](crate::tensor::Graph) for one step, either as
//! trainable leaves or as constants.

mod bundle;
mod components;
mod layers;
mod roi;

pub use bundle::{init_params, ModelBundle, NetConfig};
pub use components::{
    discriminator_forward, oa_forward, relation_scores, transform_forward, ClassifierVars, Discriminator,
    DiscriminatorVars, OaLayer, OaVars, RelationClassifier, Transform, TransformKind, TransformVars,
};
pub use layers::{Bound, Linear, LinearVars, Module};
pub use roi::{pool_rois, roi_pool, BBox, FeatureMap, RoiFeature};

#[cfg(test)]
mod tests;
