//! Scene files.
//!
//! ```text
//! "STAWORLD"                 8 bytes
//! version                    u32
//! spec echo                  canonical JSON, one line ending in '\n'
//! scene count                u64
//! per scene:
//!   scene id                 u64
//!   H, W, C                  3 × u32
//!   features                 H·W·C × f64, row-major [H, W, C]
//!   objects                  JSON array line: [{"bbox":{"x0",..},"category"}]
//!   triplets                 JSON array line: [{"subject","relation","object"}]
//!   crc32                    u32 over the record bytes before it
//! ```
//!
//! Integers and floats are little-endian.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{Object, Scene, Triplet, World, WorldSpec};
use crate::canonical::canonical_json;
use crate::error::{Error, Result};
use crate::nets::FeatureMap;

pub const SCENE_MAGIC: &[u8; 8] = b"STAWORLD";
pub const SCENE_VERSION: u32 = 1;
pub const TRAIN_FILE: &str = "train.scenes";
pub const TEST_FILE: &str = "test.scenes";

/// Contents of a scene file.
#[derive(Clone, Debug)]
pub struct SceneFile {
    /// The spec echo from the header, as written.
    pub spec: serde_json::Value,
    pub scenes: Vec<Scene>,
}

fn record_bytes(scene: &Scene) -> Result<Vec<u8>> {
    let m = &scene.map;
    let mut buf = Vec::with_capacity(20 + m.values().len() * 8 + 256);
    buf.extend_from_slice(&scene.id.to_le_bytes());
    for d in [m.height(), m.width(), m.channels()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    serde_json::to_writer(&mut buf, &scene.objects)?;
    buf.push(b'\n');
    serde_json::to_writer(&mut buf, &scene.triplets)?;
    buf.push(b'\n');
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Writes `scenes` with `spec` echoed in the header.
pub fn write_scenes_to(out: &mut impl Write, spec: &impl Serialize, scenes: &[Scene]) -> Result<()> {
    let io = |e| Error::io("<scene stream>", e);
    out.write_all(SCENE_MAGIC).map_err(io)?;
    out.write_all(&SCENE_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(canonical_json(spec)?.as_bytes()).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    out.write_all(&(scenes.len() as u64).to_le_bytes()).map_err(io)?;
    for s in scenes {
        out.write_all(&record_bytes(s)?).map_err(io)?;
    }
    Ok(())
}

pub fn write_scenes(path: &Path, spec: &impl Serialize, scenes: &[Scene]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_scenes_to(&mut w, spec, scenes)?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn line(&mut self, what: &str) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(self.fail(format!("unterminated {what} line")));
        };
        self.pos += end + 1;
        Ok(&rest[..end])
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let start = self.pos;
        let line = self.line(what)?;
        serde_json::from_slice(line).map_err(|e| Error::Format {
            offset: start as u64,
            reason: format!("bad {what}: {e}"),
        })
    }
}

fn read_record(c: &mut Cursor<'_>) -> Result<Scene> {
    let start = c.pos;
    let id = c.u64("scene id")?;
    let (h, w, ch) = (
        c.u32("height")? as usize,
        c.u32("width")? as usize,
        c.u32("channels")? as usize,
    );
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(ch))
        .filter(|&n| n > 0 && n <= (c.bytes.len() - c.pos) / 8)
        .ok_or_else(|| c.fail(format!("feature payload of {h}x{w}x{ch} does not fit the file")))?;
    let payload = c.take(n * 8, "features")?;
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let objects: Vec<Object> = c.json("objects")?;
    let triplets: Vec<Triplet> = c.json("triplets")?;
    let end = c.pos;
    let stored = c.u32("checksum")?;
    if crc32fast::hash(&c.bytes[start..end]) != stored {
        return Err(Error::Format {
            offset: end as u64,
            reason: format!("checksum mismatch for scene {id}"),
        });
    }
    let map = FeatureMap::new(h, w, ch, values).map_err(|e| Error::Format {
        offset: start as u64,
        reason: e.to_string(),
    })?;
    let scene = Scene {
        id,
        map,
        objects,
        triplets,
    };
    scene.validate().map_err(|e| Error::Format {
        offset: start as u64,
        reason: e.to_string(),
    })?;
    Ok(scene)
}

/// Parses a whole scene file. Nothing is returned unless every record is
/// intact.
pub fn read_scenes_from(bytes: &[u8]) -> Result<SceneFile> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != SCENE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "not a scene file (bad magic)".into(),
        });
    }
    let version = c.u32("version")?;
    if version != SCENE_VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported scene file version {version}"),
        });
    }
    let spec = c.json("spec echo")?;
    let count = c.u64("scene count")?;
    let mut scenes = Vec::new();
    for _ in 0..count {
        scenes.push(read_record(&mut c)?);
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes after the last scene"));
    }
    Ok(SceneFile { spec, scenes })
}

pub fn read_scenes(path: &Path) -> Result<SceneFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_scenes_from(&bytes)
}

/// Writes `train.scenes` and `test.scenes` into `dir`, creating it.
pub fn write_world(dir: &Path, world: &World) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scenes(&dir.join(TRAIN_FILE), &world.spec, &world.train)?;
    write_scenes(&dir.join(TEST_FILE), &world.spec, &world.test)
}

/// Reads a directory written by [`write_world`]. Both files must echo the
/// same spec.
pub fn read_world(dir: &Path) -> Result<World> {
    let train = read_scenes(&dir.join(TRAIN_FILE))?;
    let test = read_scenes(&dir.join(TEST_FILE))?;
    if train.spec != test.spec {
        return Err(Error::Data(format!(
            "{} holds scene files of different worlds",
            dir.display()
        )));
    }
    let spec: WorldSpec = serde_json::from_value(train.spec)?;
    Ok(World {
        spec,
        train: train.scenes,
        test: test.scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataworld::{generate_world, WorldSpec};

    fn sample() -> (WorldSpec, Vec<Scene>) {
        let mut spec = WorldSpec::desk(21);
        spec.train_scenes = 10;
        spec.test_scenes = 4;
        let w = generate_world(&spec).unwrap();
        (spec, w.train)
    }

    fn encode(spec: &WorldSpec, scenes: &[Scene]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_scenes_to(&mut buf, spec, scenes).unwrap();
        buf
    }

    #[test]
    fn world_directory_round_trip() {
        let mut spec = WorldSpec::desk(4);
        spec.train_scenes = 3;
        spec.test_scenes = 2;
        let w = generate_world(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_world(dir.path(), &w).unwrap();
        let back = read_world(dir.path()).unwrap();
        assert_eq!(back.spec, spec);
        assert!(back.train.iter().zip(&w.train).all(|(a, b)| a.bit_eq(b)));
        assert!(back.test.iter().zip(&w.test).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (spec, scenes) = sample();
        let file = read_scenes_from(&encode(&spec, &scenes)).unwrap();
        assert_eq!(file.scenes.len(), 10);
        assert!(file.scenes.iter().zip(&scenes).all(|(a, b)| a.bit_eq(b)));
        assert_eq!(serde_json::from_value::<WorldSpec>(file.spec).unwrap(), spec);
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let (spec, scenes) = sample();
        let bytes = encode(&spec, &scenes);
        for cut in [4, 30, bytes.len() / 2, bytes.len() - 1] {
            match read_scenes_from(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let (spec, scenes) = sample();
        let mut bytes = encode(&spec, &scenes);
        let header = 8 + 4 + canonical_json(&spec).unwrap().len() + 1 + 8;
        // Inside the first feature payload.
        bytes[header + 20 + 100] ^= 0x01;
        assert!(matches!(read_scenes_from(&bytes), Err(Error::Format { reason, .. }) if reason.contains("checksum")));
    }

    #[test]
    fn bad_magic_and_version() {
        let (spec, scenes) = sample();
        let mut bytes = encode(&spec, &scenes);
        bytes[0] = b'X';
        assert!(matches!(read_scenes_from(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode(&spec, &scenes);
        bytes[8] = 9;
        assert!(matches!(read_scenes_from(&bytes), Err(Error::Format { offset: 8, .. })));
    }
}
