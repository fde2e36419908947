use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bound, Linear, LinearVars, Module};
use super::roi::{FeatureMap, RoiFeature};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Per-location `C_in -> C_out` projection followed by a leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct OaLayer {
    pub proj: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct OaVars(pub LinearVars);

impl OaLayer {
    pub fn in_channels(&self) -> usize {
        self.proj.fan_in()
    }

    pub fn out_channels(&self) -> usize {
        self.proj.fan_out()
    }

    /// Value-only forward pass.
    pub fn apply(&self, base: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let m = g.constant(base.tensor());
        let out = bound.forward(&mut g, m)?;
        FeatureMap::from_tensor(g.value(out).clone())
    }
}

impl OaVars {
    /// Maps a recorded `[H, W, C_in]` map to `[H, W, C_out]`.
    pub fn forward(&self, g: &mut Graph, map: Var) -> Result<Var> {
        let (h, w, c) = match g.shape(map) {
            [h, w, c] => (*h, *w, *c),
            s => return Err(Error::shape("oa_forward", format!("map must be [H, W, C], got {s:?}"))),
        };
        let c_in = g.shape(self.0.weight)[0];
        if c != c_in {
            return Err(Error::shape(
                "oa_forward",
                format!("map has {c} channels, layer expects {c_in}"),
            ));
        }
        let c_out = g.shape(self.0.weight)[1];
        let flat = g.reshape(map, vec![h * w, c])?;
        let proj = self.0.forward(g, flat)?;
        let act = g.leaky_relu(proj)?;
        g.reshape(act, vec![h, w, c_out])
    }
}

impl Bound for OaVars {
    fn vars(&self) -> Vec<Var> {
        self.0.vars()
    }
}

impl Module for OaLayer {
    type Bound = OaVars;

    fn bind(&self, g: &mut Graph, trainable: bool) -> OaVars {
        OaVars(self.proj.bind(g, trainable))
    }

    fn rebind(&self, vars: &[Var]) -> OaVars {
        OaVars(self.proj.rebind(vars))
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.proj.named_into("oa", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.proj.params_mut()
    }
}

/// Convenience wrapper for [`OaLayer::apply`].
pub fn oa_forward(base: &FeatureMap, oa: &OaLayer) -> Result<FeatureMap> {
    oa.apply(base)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// Two residual blocks `x + W2·lrelu(W1·x + b1) + b2`.
    Residual,
    /// Plain two-layer MLP `W2·lrelu(W1·x + b1) + b2` without shortcut.
    Plain,
}

/// Domain mapping `F: A -> B` or `G: B -> A` on flattened RoI features.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub kind: TransformKind,
    /// Residual: `[block0.in, block0.out, block1.in, block1.out]`; plain: `[in, out]`.
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct TransformVars {
    kind: TransformKind,
    layers: Vec<LinearVars>,
}

impl Transform {
    /// Residual blocks start with a zero second layer, so a fresh residual
    /// transform is the identity.
    pub fn init(kind: TransformKind, dim: usize, rng: &mut impl Rng) -> Self {
        let layers = match kind {
            TransformKind::Residual => (0..2)
                .flat_map(|_| {
                    let first = Linear::scaled_normal(dim, dim, true, rng);
                    [first, Linear::zeros(dim, dim, true)]
                })
                .collect(),
            TransformKind::Plain => vec![
                Linear::scaled_normal(dim, dim, true, rng),
                Linear::scaled_normal(dim, dim, true, rng),
            ],
        };
        Transform { kind, layers }
    }

    pub fn dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Value-only forward pass of one feature.
    pub fn apply(&self, x: &RoiFeature) -> Result<RoiFeature> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let v = g.constant_owned(Tensor::new(vec![1, x.0.len()], x.0.clone())?);
        let y = bound.forward(&mut g, v)?;
        Ok(RoiFeature(g.value(y).data().to_vec()))
    }
}

impl TransformVars {
    /// Maps an `[n, d]` batch.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let d = g.shape(self.layers[0].weight)[0];
        if g.shape(x).len() != 2 || g.shape(x)[1] != d {
            return Err(Error::shape(
                "transform_forward",
                format!("input {:?} vs dimension {d}", g.shape(x)),
            ));
        }
        match self.kind {
            TransformKind::Residual => {
                let mut h = x;
                for block in self.layers.chunks(2) {
                    let inner = block[0].forward(g, h)?;
                    let inner = g.leaky_relu(inner)?;
                    let residual = block[1].forward(g, inner)?;
                    h = g.add(h, residual)?;
                }
                Ok(h)
            }
            TransformKind::Plain => {
                let inner = self.layers[0].forward(g, x)?;
                let inner = g.leaky_relu(inner)?;
                self.layers[1].forward(g, inner)
            }
        }
    }
}

impl Bound for TransformVars {
    fn vars(&self) -> Vec<Var> {
        self.layers.vars()
    }
}

impl Module for Transform {
    type Bound = TransformVars;

    fn bind(&self, g: &mut Graph, trainable: bool) -> TransformVars {
        TransformVars {
            kind: self.kind,
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    fn rebind(&self, vars: &[Var]) -> TransformVars {
        let mut it = vars.iter().copied();
        TransformVars {
            kind: self.kind,
            layers: self.layers.iter().map(|l| l.rebind_from(&mut it)).collect(),
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.named_into(&format!("layer{i}"), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.params_into(&mut out);
        }
        out
    }
}

/// Convenience wrapper for [`Transform::apply`].
pub fn transform_forward(x: &RoiFeature, t: &Transform) -> Result<RoiFeature> {
    t.apply(x)
}

/// Two fully connected layers with a leaky ReLU between and a sigmoid on top.
///
/// In paired mode each sample is concatenated with the next sample of the
/// batch (cyclically) before scoring, so the input width is `2·d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub hidden: Linear,
    pub out: Linear,
    pub paired: bool,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorVars {
    hidden: LinearVars,
    out: LinearVars,
    paired: bool,
}

impl Discriminator {
    pub fn init(sample_dim: usize, hidden: usize, paired: bool, rng: &mut impl Rng) -> Self {
        let input = if paired { 2 * sample_dim } else { sample_dim };
        Discriminator {
            hidden: Linear::scaled_normal(input, hidden, true, rng),
            out: Linear::scaled_normal(hidden, 1, true, rng),
            paired,
        }
    }

    /// Width of one domain sample.
    pub fn sample_dim(&self) -> usize {
        if self.paired {
            self.hidden.fan_in() / 2
        } else {
            self.hidden.fan_in()
        }
    }

    /// Value-only probability for one sample.
    pub fn score(&self, x: &RoiFeature) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let v = g.constant_owned(Tensor::new(vec![1, x.0.len()], x.0.clone())?);
        let y = bound.forward(&mut g, v)?;
        Ok(g.value(y).item())
    }
}

impl DiscriminatorVars {
    /// Scores an `[n, d]` batch, returning an `[n]` vector in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let expected = g.shape(self.hidden.weight)[0] / if self.paired { 2 } else { 1 };
        let [n, d] = shape[..] else {
            return Err(Error::shape(
                "discriminator_forward",
                format!("input {shape:?} is not rank 2"),
            ));
        };
        if d != expected {
            return Err(Error::shape(
                "discriminator_forward",
                format!("sample width {d}, expected {expected}"),
            ));
        }
        let input = if self.paired {
            let next: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
            let partner = g.select_rows(x, &next)?;
            g.concat(&[x, partner])?
        } else {
            x
        };
        let h = self.hidden.forward(g, input)?;
        let h = g.leaky_relu(h)?;
        let logit = self.out.forward(g, h)?;
        let p = g.sigmoid(logit)?;
        g.reshape(p, vec![n])
    }
}

impl Bound for DiscriminatorVars {
    fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.hidden.vars_into(&mut out);
        self.out.vars_into(&mut out);
        out
    }
}

impl Module for Discriminator {
    type Bound = DiscriminatorVars;

    fn bind(&self, g: &mut Graph, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            hidden: self.hidden.bind(g, trainable),
            out: self.out.bind(g, trainable),
            paired: self.paired,
        }
    }

    fn rebind(&self, vars: &[Var]) -> DiscriminatorVars {
        let mut it = vars.iter().copied();
        DiscriminatorVars {
            hidden: self.hidden.rebind_from(&mut it),
            out: self.out.rebind_from(&mut it),
            paired: self.paired,
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.hidden.named_into("hidden", &mut out);
        self.out.named_into("out", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.hidden.params_into(&mut out);
        self.out.params_into(&mut out);
        out
    }
}

/// Convenience wrapper for [`Discriminator::score`].
pub fn discriminator_forward(x: &RoiFeature, d: &Discriminator) -> Result<f64> {
    d.score(x)
}

/// Softmax relationship classifier over `[subject, object]`: two hidden
/// leaky-ReLU layers followed by one weight vector per relation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationClassifier {
    pub hidden1: Linear,
    pub hidden2: Linear,
    /// `[hidden, R]`, no bias.
    pub relation_weights: Linear,
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    hidden1: LinearVars,
    hidden2: LinearVars,
    relation_weights: LinearVars,
}

impl RelationClassifier {
    pub fn init(feature_dim: usize, hidden: usize, relations: usize, rng: &mut impl Rng) -> Self {
        RelationClassifier {
            hidden1: Linear::scaled_normal(2 * feature_dim, hidden, true, rng),
            hidden2: Linear::scaled_normal(hidden, hidden, true, rng),
            relation_weights: Linear::scaled_normal(hidden, relations, false, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden1.fan_in() / 2
    }

    pub fn relations(&self) -> usize {
        self.relation_weights.fan_out()
    }

    /// Value-only `S(i, j, ·)` for one ordered pair.
    pub fn scores(&self, subject: &RoiFeature, object: &RoiFeature) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let s = g.constant_owned(Tensor::new(vec![1, subject.0.len()], subject.0.clone())?);
        let o = g.constant_owned(Tensor::new(vec![1, object.0.len()], object.0.clone())?);
        let y = bound.forward(&mut g, s, o)?;
        Ok(g.value(y).data().to_vec())
    }
}

impl ClassifierVars {
    /// `[n, d] × [n, d] -> [n, R]` relation probabilities. Row `i` scores the
    /// ordered pair (subject `i`, object `i`).
    pub fn forward(&self, g: &mut Graph, subjects: Var, objects: Var) -> Result<Var> {
        let d = g.shape(self.hidden1.weight)[0] / 2;
        for v in [subjects, objects] {
            if g.shape(v).len() != 2 || g.shape(v)[1] != d {
                return Err(Error::shape(
                    "relation_scores",
                    format!("feature {:?} vs dimension {d}", g.shape(v)),
                ));
            }
        }
        let pair = g.concat(&[subjects, objects])?;
        let h = self.hidden1.forward(g, pair)?;
        let h = g.leaky_relu(h)?;
        let h = self.hidden2.forward(g, h)?;
        let h = g.leaky_relu(h)?;
        let logits = self.relation_weights.forward(g, h)?;
        g.softmax(logits)
    }
}

impl Bound for ClassifierVars {
    fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.hidden1.vars_into(&mut out);
        self.hidden2.vars_into(&mut out);
        self.relation_weights.vars_into(&mut out);
        out
    }
}

impl Module for RelationClassifier {
    type Bound = ClassifierVars;

    fn bind(&self, g: &mut Graph, trainable: bool) -> ClassifierVars {
        ClassifierVars {
            hidden1: self.hidden1.bind(g, trainable),
            hidden2: self.hidden2.bind(g, trainable),
            relation_weights: self.relation_weights.bind(g, trainable),
        }
    }

    fn rebind(&self, vars: &[Var]) -> ClassifierVars {
        let mut it = vars.iter().copied();
        ClassifierVars {
            hidden1: self.hidden1.rebind_from(&mut it),
            hidden2: self.hidden2.rebind_from(&mut it),
            relation_weights: self.relation_weights.rebind_from(&mut it),
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.hidden1.named_into("hidden1", &mut out);
        self.hidden2.named_into("hidden2", &mut out);
        self.relation_weights.named_into("relation", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.hidden1.params_into(&mut out);
        self.hidden2.params_into(&mut out);
        self.relation_weights.params_into(&mut out);
        out
    }
}

/// Convenience wrapper for [`RelationClassifier::scores`].
pub fn relation_scores(subject: &RoiFeature, object: &RoiFeature, classifier: &RelationClassifier) -> Result<Vec<f64>> {
    classifier.scores(subject, object)
}
