//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "STACKPT\0"                      8 bytes
//! version                          u32
//! header length, header            u64, canonical JSON bytes
//! array count                      u64
//! per array:
//!   name length, name              u32, UTF-8 bytes
//!   rank, dims                     u32, rank × u64
//!   value count, values            u64, count × f64
//! crc32 of everything above        u32
//! ```
//!
//! The header echoes the network and stage configuration, the epoch
//! counter, the generator position, optimizer hyperparameters and the loss
//! history. Arrays hold every bundle parameter under its dotted name, then
//! the Adam moment buffers as `opt.<name>.m.<i>` and `opt.<name>.v.<i>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FinetuneConfig, Finetuner, PretrainConfig, Pretrainer, RngState, UpdateLedger};
use crate::canonical::canonical_json;
use crate::error::{Error, Result};
use crate::nets::{ModelBundle, NetConfig};
use crate::objectives::LossBreakdown;
use crate::tensor::{OptimizerKind, OptimizerState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a checkpoint file restores to.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    /// Parameters only.
    Model(ModelBundle),
    /// Mid- or post-pretraining state.
    Pretrain(Pretrainer),
    /// Mid- or post-finetuning state.
    Finetune(Finetuner),
}

impl Checkpoint {
    pub fn bundle(&self) -> &ModelBundle {
        match self {
            Checkpoint::Model(b) => b,
            Checkpoint::Pretrain(p) => &p.bundle,
            Checkpoint::Finetune(f) => &f.bundle,
        }
    }

    pub fn into_bundle(self) -> ModelBundle {
        match self {
            Checkpoint::Model(b) => b,
            Checkpoint::Pretrain(p) => p.bundle,
            Checkpoint::Finetune(f) => f.bundle,
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            Checkpoint::Model(_) => "model",
            Checkpoint::Pretrain(_) => "pretrain",
            Checkpoint::Finetune(_) => "finetune",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    name: String,
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    stage: String,
    net: NetConfig,
    #[serde(default)]
    pretrain: Option<PretrainConfig>,
    #[serde(default)]
    finetune: Option<FinetuneConfig>,
    #[serde(default)]
    epoch: usize,
    #[serde(default)]
    rng: Option<RngState>,
    #[serde(default)]
    optimizers: Vec<OptimizerHeader>,
    #[serde(default)]
    pretrain_history: Vec<LossBreakdown>,
    #[serde(default)]
    finetune_history: Vec<f64>,
    #[serde(default)]
    ledger: Option<UpdateLedger>,
}

fn opt_header(name: &str, o: &OptimizerState) -> OptimizerHeader {
    OptimizerHeader {
        name: name.into(),
        kind: o.kind,
        lr: o.lr,
        beta1: o.beta1,
        beta2: o.beta2,
        eps: o.eps,
        t: o.t,
        slots: o.first_moment.len(),
    }
}

fn opt_arrays(name: &str, o: &OptimizerState, out: &mut Vec<(String, Tensor)>) {
    for (tag, slots) in [("m", &o.first_moment), ("v", &o.second_moment)] {
        for (i, s) in slots.iter().enumerate() {
            out.push((format!("opt.{name}.{tag}.{i}"), Tensor::vector(s.clone())));
        }
    }
}

fn encode(header: &Header, arrays: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let json = canonical_json(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Serializes `state` to bytes.
pub fn checkpoint_bytes(state: &Checkpoint) -> Result<Vec<u8>> {
    let bundle = state.bundle();
    let mut arrays: Vec<(String, Tensor)> = bundle.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut header = Header {
        stage: state.stage().into(),
        net: bundle.config.clone(),
        pretrain: None,
        finetune: None,
        epoch: 0,
        rng: None,
        optimizers: Vec::new(),
        pretrain_history: Vec::new(),
        finetune_history: Vec::new(),
        ledger: None,
    };
    match state {
        Checkpoint::Model(_) => {}
        Checkpoint::Pretrain(p) => {
            header.pretrain = Some(p.config.clone());
            header.epoch = p.epoch;
            header.rng = Some(RngState::capture(&p.rng));
            header.optimizers = vec![opt_header("d", &p.d_opt), opt_header("g", &p.g_opt)];
            header.pretrain_history = p.history.clone();
            header.ledger = Some(p.ledger);
            opt_arrays("d", &p.d_opt, &mut arrays);
            opt_arrays("g", &p.g_opt, &mut arrays);
        }
        Checkpoint::Finetune(f) => {
            header.finetune = Some(f.config.clone());
            header.epoch = f.epoch;
            header.rng = Some(RngState::capture(&f.rng));
            header.optimizers = vec![opt_header("theta", &f.opt)];
            header.finetune_history = f.history.clone();
            opt_arrays("theta", &f.opt, &mut arrays);
        }
    }
    encode(&header, &arrays)
}

/// Writes `state` to `path`.
pub fn checkpoint_save(state: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(state)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Integrity(format!("length {v} out of range")))
    }
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>)> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let n = r.len()?;
    let header: Header = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Integrity(format!("header: {e}")))?;
    let count = r.len()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Integrity("array name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let len = r.len()?;
        let raw = r.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Integrity("array too long".into()))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, values).map_err(|e| Error::Integrity(format!("array `{name}`: {e}")))?;
        arrays.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Integrity(format!(
            "{} unexpected bytes after the arrays",
            body.len() - r.pos
        )));
    }
    Ok((header, arrays))
}

struct Arrays {
    items: std::collections::BTreeMap<String, Tensor>,
}

impl Arrays {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.items
            .remove(name)
            .ok_or_else(|| Error::Integrity(format!("missing array `{name}`")))
    }
}

fn restore_optimizer(h: &OptimizerHeader, arrays: &mut Arrays) -> Result<OptimizerState> {
    let mut o = match h.kind {
        OptimizerKind::Sgd => OptimizerState::sgd(h.lr),
        OptimizerKind::Adam => OptimizerState::adam(h.lr),
    };
    o.beta1 = h.beta1;
    o.beta2 = h.beta2;
    o.eps = h.eps;
    o.t = h.t;
    for i in 0..h.slots {
        o.first_moment
            .push(arrays.take(&format!("opt.{}.m.{i}", h.name))?.into_data());
        o.second_moment
            .push(arrays.take(&format!("opt.{}.v.{i}", h.name))?.into_data());
    }
    Ok(o)
}

/// Parses a checkpoint from bytes. Nothing is returned unless the whole
/// file checks out.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, list) = decode(bytes)?;
    let mut bundle = ModelBundle::init(&header.net, 0).map_err(|e| Error::Integrity(format!("network config: {e}")))?;
    let mut arrays = Arrays {
        items: list.into_iter().collect(),
    };
    let names: Vec<String> = bundle.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(bundle.params_mut()) {
        let t = arrays.take(name)?;
        // A classifier reading the base map directly has a different input
        // width than the network config implies.
        let free_width = name == "theta.hidden1.weight" && t.shape().len() == 2 && t.shape()[1] == slot.shape()[1];
        if t.shape() != slot.shape() && !free_width {
            return Err(Error::Integrity(format!(
                "`{name}` has shape {:?}, the network needs {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    let opt = |name: &str, arrays: &mut Arrays| -> Result<OptimizerState> {
        let h = header
            .optimizers
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::Integrity(format!("missing optimizer `{name}`")))?;
        restore_optimizer(h, arrays)
    };
    let rng = || -> Result<_> {
        header
            .rng
            .as_ref()
            .ok_or_else(|| Error::Integrity("missing rng state".into()))?
            .restore()
    };
    let state = match header.stage.as_str() {
        "model" => Checkpoint::Model(bundle),
        "pretrain" => {
            let config = header
                .pretrain
                .clone()
                .ok_or_else(|| Error::Integrity("missing pretrain config".into()))?;
            Checkpoint::Pretrain(Pretrainer {
                d_opt: opt("d", &mut arrays)?,
                g_opt: opt("g", &mut arrays)?,
                rng: rng()?,
                epoch: header.epoch,
                history: header.pretrain_history.clone(),
                ledger: header.ledger.unwrap_or_default(),
                config,
                bundle,
            })
        }
        "finetune" => {
            let config = header
                .finetune
                .clone()
                .ok_or_else(|| Error::Integrity("missing finetune config".into()))?;
            Checkpoint::Finetune(Finetuner {
                opt: opt("theta", &mut arrays)?,
                rng: rng()?,
                epoch: header.epoch,
                history: header.finetune_history.clone(),
                config,
                bundle,
            })
        }
        other => return Err(Error::Integrity(format!("unknown stage `{other}`"))),
    };
    if let Some(name) = arrays.items.keys().next() {
        return Err(Error::Integrity(format!("unexpected array `{name}`")));
    }
    Ok(state)
}

/// Reads a checkpoint written by [`checkpoint_save`].
pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataworld::{generate_world, Scene, TrainSet, WorldSpec};
    use crate::nets::{pool_rois, Module};
    use crate::tensor::Graph;
    use crate::trainer::FinetuneMode;

    fn setup() -> (Vec<Scene>, ModelBundle) {
        let mut spec = WorldSpec::desk(5);
        spec.train_scenes = 4;
        spec.test_scenes = 2;
        let w = generate_world(&spec).unwrap();
        let cfg = NetConfig {
            pool_size: 2,
            disc_hidden: 8,
            mlp_hidden: 8,
            ..NetConfig::default()
        };
        (w.train, ModelBundle::init(&cfg, 1).unwrap())
    }

    fn scores(b: &ModelBundle, s: &Scene) -> Vec<u64> {
        let mut g = Graph::new();
        let oa = b.oa.bind(&mut g, false);
        let cls = b.classifier.bind(&mut g, false);
        let map = g.constant(s.map.tensor());
        let m = oa.forward(&mut g, map).unwrap();
        let boxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
        let x = pool_rois(&mut g, m, &boxes, b.config.pool_size).unwrap();
        let out = cls.forward(&mut g, x, x).unwrap();
        g.value(out).data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let (scenes, b) = setup();
        let back = checkpoint_from_bytes(&checkpoint_bytes(&Checkpoint::Model(b.clone())).unwrap()).unwrap();
        let back = back.into_bundle();
        assert!(back.bit_eq(&b));
        for s in &scenes {
            assert_eq!(scores(&back, s), scores(&b, s));
        }
    }

    #[test]
    fn pretrain_resume_matches_uninterrupted() {
        let (scenes, b) = setup();
        let cfg = PretrainConfig {
            epochs: 4,
            rois_per_box: 2,
            pairs_per_image: 8,
            ..PretrainConfig::default()
        };
        let mut full = Pretrainer::new(cfg.clone(), b.clone()).unwrap();
        full.run(&scenes).unwrap();

        let mut half = Pretrainer::new(cfg, b).unwrap();
        half.run_epoch(&scenes).unwrap();
        half.run_epoch(&scenes).unwrap();
        let bytes = checkpoint_bytes(&Checkpoint::Pretrain(half)).unwrap();
        let Checkpoint::Pretrain(mut resumed) = checkpoint_from_bytes(&bytes).unwrap() else {
            panic!()
        };
        resumed.run(&scenes).unwrap();
        assert!(resumed.bundle.bit_eq(&full.bundle));
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.ledger, full.ledger);
    }

    #[test]
    fn finetune_resume_matches_uninterrupted() {
        let (scenes, b) = setup();
        let data = TrainSet::Pairs(scenes);
        let cfg = FinetuneConfig {
            epochs: 4,
            lr: 1e-3,
            mode: FinetuneMode::Supervised,
            ..FinetuneConfig::default()
        };
        let mut full = Finetuner::new(cfg.clone(), b.clone()).unwrap();
        full.run(&data).unwrap();
        let mut half = Finetuner::new(cfg, b).unwrap();
        half.run_epoch(&data).unwrap();
        let bytes = checkpoint_bytes(&Checkpoint::Finetune(half)).unwrap();
        let Checkpoint::Finetune(mut resumed) = checkpoint_from_bytes(&bytes).unwrap() else {
            panic!()
        };
        resumed.run(&data).unwrap();
        assert!(resumed.bundle.bit_eq(&full.bundle));
        assert_eq!(resumed.history, full.history);
    }

    #[test]
    fn every_flipped_byte_is_caught() {
        let (_, b) = setup();
        let bytes = checkpoint_bytes(&Checkpoint::Model(b)).unwrap();
        let step = (bytes.len() / 97).max(1);
        for i in (0..bytes.len()).step_by(step) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(
                matches!(checkpoint_from_bytes(&bad), Err(Error::Integrity(_))),
                "byte {i}"
            );
        }
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(checkpoint_from_bytes(&bytes[..cut]), Err(Error::Integrity(_))));
        }
    }

    #[test]
    fn other_version_is_incompatible() {
        let (_, b) = setup();
        let mut bytes = checkpoint_bytes(&Checkpoint::Model(b)).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let (_, b) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint_save(&Checkpoint::Model(b.clone()), &path).unwrap();
        assert!(checkpoint_load(&path).unwrap().bundle().bit_eq(&b));
        assert!(matches!(
            checkpoint_load(dir.path().join("none")),
            Err(Error::Io { .. })
        ));
    }
}
