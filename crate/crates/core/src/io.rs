//! On-disk formats.
//!
//! **OGCS frame block**, little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `OGCS` |
//! | 4 | version (`1`) |
//! | 4 | `n_points` (≥ 1) |
//! | 4 | flags: bit 0 flow, bit 1 labels, bit 2 ground-truth flow |
//! | 12·n | xyz as `f32` |
//! | 12·n | flow, if flagged |
//! | 2·n | labels as `u16`, if flagged |
//! | 12·n | ground-truth flow, if flagged |
//!
//! A scene-pair file is the frame-`t` block followed by the frame-`t+1`
//! block. Label `0xFFFF` stands for noise (`-1`).
//!
//! **OGCM mask file**: magic `OGCM`, version, `n_t`, `n_t1`, `k` (all `u32`),
//! then `n_t·k` and `n_t1·k` mask logits as `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::masks::SoftSegmentation;
use crate::report::{FailureRecord, TOOL_VERSION};
use crate::scene::{SceneFlow, ScenePair};

pub const SCENE_MAGIC: [u8; 4] = *b"OGCS";
pub const MASK_MAGIC: [u8; 4] = *b"OGCM";
pub const VERSION: u32 = 1;
pub const NOISE_LABEL: u16 = u16::MAX;

pub const FLAG_FLOW: u32 = 1;
pub const FLAG_LABELS: u32 = 2;
pub const FLAG_GT_FLOW: u32 = 4;

/// One frame as stored in an OGCS block.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub points: PointCloud,
    pub flow: Option<SceneFlow>,
    pub labels: Option<Vec<u16>>,
    pub gt_flow: Option<SceneFlow>,
}

impl FrameRecord {
    pub fn flags(&self) -> u32 {
        let mut f = 0;
        if self.flow.is_some() {
            f |= FLAG_FLOW;
        }
        if self.labels.is_some() {
            f |= FLAG_LABELS;
        }
        if self.gt_flow.is_some() {
            f |= FLAG_GT_FLOW;
        }
        f
    }

    pub fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        let n = self.points.len();
        if n == 0 || n > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("frame with {n} points cannot be stored")));
        }
        for (what, len) in [
            ("flow", self.flow.as_ref().map(|f| f.len())),
            ("labels", self.labels.as_ref().map(|l| l.len())),
            ("ground-truth flow", self.gt_flow.as_ref().map(|f| f.len())),
        ] {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::DimensionMismatch {
                        context: what_context(what),
                        expected: n,
                        actual: len,
                    });
                }
            }
        }
        out.extend_from_slice(&SCENE_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&self.flags().to_le_bytes());
        put_vec3s(out, self.points.points());
        if let Some(f) = &self.flow {
            put_vec3s(out, f.vectors());
        }
        if let Some(l) = &self.labels {
            for v in l {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(f) = &self.gt_flow {
            put_vec3s(out, f.vectors());
        }
        Ok(())
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        if r.take(4)? != SCENE_MAGIC {
            return Err(Error::BadMagic { offset: at });
        }
        let version_at = r.offset();
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                version,
                offset: version_at,
            });
        }
        let n_at = r.offset();
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(Error::InvalidConfig(format!("zero-point frame at byte offset {n_at}")));
        }
        let flags = r.u32()?;
        let points = PointCloud::new(r.vec3s(n)?)?;
        let flow = (flags & FLAG_FLOW != 0).then(|| r.vec3s(n).map(SceneFlow::new)).transpose()?.transpose()?;
        let labels = (flags & FLAG_LABELS != 0)
            .then(|| -> Result<Vec<u16>> {
                let bytes = r.take(2 * n)?;
                Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
            })
            .transpose()?;
        let gt_flow = (flags & FLAG_GT_FLOW != 0).then(|| r.vec3s(n).map(SceneFlow::new)).transpose()?.transpose()?;
        Ok(Self {
            points,
            flow,
            labels,
            gt_flow,
        })
    }
}

fn what_context(what: &str) -> &'static str {
    match what {
        "flow" => "stored flow",
        "labels" => "stored labels",
        _ => "stored ground-truth flow",
    }
}

fn put_vec3s(out: &mut Vec<u8>, v: &[Vec3]) {
    for p in v {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
}

/// Byte cursor that reports offsets on truncation.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, needed: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < needed {
            return Err(Error::TruncatedFile {
                offset: self.pos as u64,
                needed,
            });
        }
        let s = &self.bytes[self.pos..self.pos + needed];
        self.pos += needed;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * count)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn vec3s(&mut self, n: usize) -> Result<Vec<Vec3>> {
        Ok(self
            .f32s(3 * n)?
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect())
    }
}

fn labels_to_u16(labels: &[u32]) -> Result<Vec<u16>> {
    labels
        .iter()
        .map(|&l| {
            u16::try_from(l)
                .ok()
                .filter(|&v| v != NOISE_LABEL)
                .ok_or_else(|| Error::InvalidConfig(format!("label {l} does not fit the 16-bit label block")))
        })
        .collect()
}

/// Signed labels to the on-disk form; negatives become [`NOISE_LABEL`].
pub fn encode_labels(labels: &[i64]) -> Result<Vec<u16>> {
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                Ok(NOISE_LABEL)
            } else {
                u16::try_from(l)
                    .ok()
                    .filter(|&v| v != NOISE_LABEL)
                    .ok_or_else(|| Error::InvalidConfig(format!("label {l} does not fit the 16-bit label block")))
            }
        })
        .collect()
}

pub fn decode_labels(labels: &[u16]) -> Vec<i64> {
    labels
        .iter()
        .map(|&l| if l == NOISE_LABEL { -1 } else { l as i64 })
        .collect()
}

/// Encodes a scene pair as two frame blocks.
pub fn encode_scene(scene: &ScenePair) -> Result<Vec<u8>> {
    scene.validate()?;
    let mut out = Vec::new();
    FrameRecord {
        points: scene.frame_t.clone(),
        flow: Some(scene.flow.clone()),
        labels: scene.gt_labels_t.as_deref().map(labels_to_u16).transpose()?,
        gt_flow: scene.gt_flow.clone(),
    }
    .encode(&mut out)?;
    FrameRecord {
        points: scene.frame_t1.clone(),
        flow: None,
        labels: scene.gt_labels_t1.as_deref().map(labels_to_u16).transpose()?,
        gt_flow: None,
    }
    .encode(&mut out)?;
    Ok(out)
}

/// Both frame blocks of a scene file, without requiring flow.
pub fn decode_frames(bytes: &[u8]) -> Result<(FrameRecord, FrameRecord)> {
    let mut r = Reader::new(bytes);
    let a = FrameRecord::decode(&mut r)?;
    let b = FrameRecord::decode(&mut r)?;
    Ok((a, b))
}

pub fn decode_scene(scene_id: impl Into<String>, bytes: &[u8]) -> Result<ScenePair> {
    let (a, b) = decode_frames(bytes)?;
    let flow = a.flow.ok_or(Error::MissingFlow)?;
    let widen = |l: Vec<u16>| l.into_iter().map(u32::from).collect::<Vec<u32>>();
    let scene = ScenePair {
        scene_id: scene_id.into(),
        frame_t: a.points,
        frame_t1: b.points,
        flow,
        gt_labels_t: a.labels.map(widen),
        gt_labels_t1: b.labels.map(widen),
        gt_flow: a.gt_flow,
    };
    scene.validate()?;
    Ok(scene)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_scene(path: &Path, scene: &ScenePair) -> Result<()> {
    write_bytes(path, &encode_scene(scene)?)
}

/// Reads a scene pair; the id is the file stem.
pub fn read_scene(path: &Path) -> Result<ScenePair> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_scene(id, &read_bytes(path)?)
}

pub fn read_frames(path: &Path) -> Result<(FrameRecord, FrameRecord)> {
    decode_frames(&read_bytes(path)?)
}

/// Masks of both frames of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub seg_t: SoftSegmentation,
    pub seg_t1: Option<SoftSegmentation>,
}

pub fn encode_masks(m: &MaskRecord) -> Result<Vec<u8>> {
    let k = m.seg_t.num_slots();
    let n1 = m.seg_t1.as_ref().map_or(0, |s| s.num_points());
    if let Some(s) = &m.seg_t1 {
        if s.num_slots() != k {
            return Err(Error::DimensionMismatch {
                context: "stored mask slots",
                expected: k,
                actual: s.num_slots(),
            });
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MASK_MAGIC);
    for v in [VERSION, m.seg_t.num_points() as u32, n1 as u32, k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in std::iter::once(&m.seg_t).chain(&m.seg_t1) {
        for x in s.logits() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_masks(bytes: &[u8]) -> Result<MaskRecord> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MASK_MAGIC {
        return Err(Error::BadMagic { offset: 0 });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { version, offset: 4 });
    }
    let n = r.u32()? as usize;
    let n1 = r.u32()? as usize;
    let k = r.u32()? as usize;
    let seg_t = SoftSegmentation::from_logits(n, k, r.f32s(n * k)?)?;
    let seg_t1 = if n1 > 0 {
        Some(SoftSegmentation::from_logits(n1, k, r.f32s(n1 * k)?)?)
    } else {
        None
    };
    Ok(MaskRecord { seg_t, seg_t1 })
}

pub fn write_masks(path: &Path, m: &MaskRecord) -> Result<()> {
    write_bytes(path, &encode_masks(m)?)
}

pub fn read_masks(path: &Path) -> Result<MaskRecord> {
    decode_masks(&read_bytes(path)?)
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Index of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub scenes: Vec<ManifestEntry>,
    #[serde(default)]
    pub failures: Vec<FailureRecord>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, seed: u64, config: &impl Serialize) -> Self {
        Self {
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            scenes: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        text.push('\n');
        write_bytes(&path, text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = read_bytes(&path)?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path, source })
    }
}

pub fn scene_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ogcs"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ogcm"))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_gen::{generate_scene, SceneGenConfig};

    fn scene() -> ScenePair {
        let g = generate_scene(&SceneGenConfig {
            num_objects: (4, 4),
            frames: 2,
            points_per_frame: 128,
            seed: 3,
            ..SceneGenConfig::default()
        })
        .unwrap();
        g.pair("s", 0)
    }

    #[test]
    fn scene_round_trip_is_bit_exact_after_first_write() {
        let bytes = encode_scene(&scene()).unwrap();
        let back = decode_scene("s", &bytes).unwrap();
        assert_eq!(encode_scene(&back).unwrap(), bytes);
        let again = decode_scene("s", &bytes).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn header_errors_name_offsets() {
        let mut bytes = encode_scene(&scene()).unwrap();
        let n = 128;
        let cut = 16 + 12 * n + 6 * n;
        assert!(matches!(
            decode_scene("s", &bytes[..cut]),
            Err(Error::TruncatedFile { offset, .. }) if offset == 16 + 12 * n as u64
        ));
        bytes[4] = 2;
        assert!(matches!(
            decode_scene("s", &bytes),
            Err(Error::UnsupportedVersion { version: 2, offset: 4 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_scene("s", &bytes), Err(Error::BadMagic { offset: 0 })));
    }

    #[test]
    fn second_block_magic_offset() {
        let bytes = encode_scene(&scene()).unwrap();
        let first = FrameRecord::decode(&mut Reader::new(&bytes)).unwrap();
        let mut one = Vec::new();
        first.encode(&mut one).unwrap();
        let mut broken = bytes.clone();
        broken[one.len()] = 0;
        assert!(matches!(
            decode_scene("s", &broken),
            Err(Error::BadMagic { offset }) if offset == one.len() as u64
        ));
    }

    #[test]
    fn flowless_file_is_missing_flow() {
        let s = scene();
        let mut out = Vec::new();
        for p in [&s.frame_t, &s.frame_t1] {
            FrameRecord {
                points: p.clone(),
                flow: None,
                labels: None,
                gt_flow: None,
            }
            .encode(&mut out)
            .unwrap();
        }
        assert!(matches!(decode_scene("s", &out), Err(Error::MissingFlow)));
        let (a, _) = decode_frames(&out).unwrap();
        assert_eq!(a.flags(), 0);
    }

    #[test]
    fn masks_round_trip() {
        let s = SoftSegmentation::from_logits(3, 2, vec![0.5, -0.25, 1.0, 2.0, -3.0, 0.0]).unwrap();
        let m = MaskRecord {
            seg_t: s.clone(),
            seg_t1: Some(s),
        };
        let bytes = encode_masks(&m).unwrap();
        assert_eq!(decode_masks(&bytes).unwrap(), m);
        assert!(matches!(decode_masks(&bytes[..20]), Err(Error::TruncatedFile { offset: 20, .. })));
    }

    #[test]
    fn noise_labels() {
        assert_eq!(decode_labels(&encode_labels(&[-1, 0, 7]).unwrap()), vec![-1, 0, 7]);
        assert!(encode_labels(&[70_000]).is_err());
    }
}
