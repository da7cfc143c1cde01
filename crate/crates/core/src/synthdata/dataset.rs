//! On-disk dataset: `manifest.json` plus fixed-layout binary chunks.
//!
//! Byte layout is documented in `docs/FORMATS.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CropTransform, Pose25D, Pose3D};
use crate::segmentation::PartLabelMap;

use super::{GenConfig, SampleRecord};

pub const DATASET_VERSION: u32 = 1;
const FORMAT_NAME: &str = "handseg-dataset";
const CHUNK_MAGIC: &[u8; 4] = b"HSDS";
const CHUNK_HEADER: usize = 32;
const RECORDS_PER_CHUNK: usize = 256;
const JOINTS: usize = 42;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    /// Free-form origin line, such as the code version and config hash.
    #[serde(default)]
    pub provenance: String,
    pub count: usize,
    pub crop_size: usize,
    pub seg_size: usize,
    pub joints: usize,
    pub gen_config: Option<GenConfig>,
    pub chunks: Vec<ChunkEntry>,
    /// SHA-256 of this manifest serialized with an empty checksum.
    pub checksum: String,
}

impl DatasetManifest {
    fn digest(&self) -> String {
        let body = DatasetManifest {
            checksum: String::new(),
            ..self.clone()
        };
        hex(&Sha256::digest(serde_json::to_vec(&body).expect("manifest serializes")))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn record_bytes(crop: usize, seg: usize) -> usize {
    8 + 8 + 8 + 32 + 32 + JOINTS * 24 * 2 + JOINTS + 3 * crop * crop * 4 + seg * seg
}

fn encode_record(r: &SampleRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&r.seed.to_le_bytes());
    out.push(r.presence[0] as u8 | (r.presence[1] as u8) << 1);
    out.push(r.best_effort as u8);
    out.extend_from_slice(&[0; 6]);
    out.extend_from_slice(&r.interaction_iou.to_le_bytes());
    for v in [r.cam.fx, r.cam.fy, r.cam.cx, r.cam.cy] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [r.crop.scale_x, r.crop.scale_y, r.crop.offset_x, r.crop.offset_y] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for j in r.pose3d.joints.iter().chain(&r.pose25d.joints) {
        for v in j {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend(r.pose3d.valid.iter().map(|&v| v as u8));
    for v in &r.image {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&r.part_labels.labels);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }
}

fn decode_record(buf: &[u8], crop: usize, seg: usize) -> std::result::Result<SampleRecord, String> {
    let mut c = Cursor { buf, pos: 0 };
    let seed = u64::from_le_bytes(c.take(8).try_into().unwrap());
    let flags = c.take(8);
    let presence = [flags[0] & 1 != 0, flags[0] & 2 != 0];
    let best_effort = flags[1] != 0;
    let interaction_iou = c.f64();
    let cam = CameraIntrinsics::new(c.f64(), c.f64(), c.f64(), c.f64()).map_err(|e| e.to_string())?;
    let crop_t = CropTransform::new(c.f64(), c.f64(), c.f64(), c.f64()).map_err(|e| e.to_string())?;
    let mut joints = || (0..JOINTS).map(|_| [c.f64(), c.f64(), c.f64()]).collect::<Vec<_>>();
    let j3 = joints();
    let j25 = joints();
    let valid: Vec<bool> = c.take(JOINTS).iter().map(|&v| v != 0).collect();
    let image = c.take(3 * crop * crop * 4).chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let labels = c.take(seg * seg).to_vec();
    Ok(SampleRecord {
        seed,
        image,
        crop_size: crop,
        part_labels: PartLabelMap { width: seg, height: seg, labels },
        pose3d: Pose3D::new(j3, valid.clone()),
        pose25d: Pose25D::new(j25, valid),
        cam,
        crop: crop_t,
        presence,
        interaction_iou,
        best_effort,
    })
}

fn chunk_header(count: usize, crop: usize, seg: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(CHUNK_HEADER);
    h.extend_from_slice(CHUNK_MAGIC);
    for v in [DATASET_VERSION as usize, count, crop, seg, JOINTS, record_bytes(crop, seg)] {
        h.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let crc = crc32fast::hash(&h);
    h.extend_from_slice(&crc.to_le_bytes());
    h
}

/// Writes `records` to the directory `dir`, creating it if needed.
pub fn write_dataset(
    records: &[SampleRecord],
    dir: &Path,
    gen_config: Option<&GenConfig>,
    provenance: &str,
) -> Result<DatasetManifest> {
    let (crop, seg) = match (records.first(), gen_config) {
        (Some(r), _) => (r.crop_size, r.part_labels.width),
        (None, Some(g)) => (g.crop_size, g.seg_size),
        (None, None) => (0, 0),
    };
    for r in records {
        if r.crop_size != crop || r.part_labels.width != seg || r.pose3d.len() != JOINTS {
            return Err(Error::Contract("all records in a dataset must share sizes".into()));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut chunks = Vec::new();
    for (i, part) in records.chunks(RECORDS_PER_CHUNK).enumerate() {
        let mut bytes = chunk_header(part.len(), crop, seg);
        for r in part {
            encode_record(r, &mut bytes);
        }
        let file = format!("chunk_{i:05}.bin");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        chunks.push(ChunkEntry {
            file,
            count: part.len(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    let mut manifest = DatasetManifest {
        format: FORMAT_NAME.into(),
        version: DATASET_VERSION,
        provenance: provenance.into(),
        count: records.len(),
        crop_size: crop,
        seg_size: seg,
        joints: JOINTS,
        gen_config: gen_config.cloned(),
        chunks,
        checksum: String::new(),
    };
    manifest.checksum = manifest.digest();
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads and verifies the manifest only.
pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("unreadable manifest: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == DATASET_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::format(
                &path,
                format!("dataset version {v} is not supported (this build reads version {DATASET_VERSION})"),
            ))
        }
        None => return Err(Error::format(&path, "manifest has no version")),
    }
    let m: DatasetManifest =
        serde_json::from_value(value).map_err(|e| Error::format(&path, format!("malformed manifest: {e}")))?;
    if m.format != FORMAT_NAME {
        return Err(Error::format(&path, format!("not a dataset manifest ({})", m.format)));
    }
    if m.digest() != m.checksum {
        return Err(Error::format(&path, "manifest checksum mismatch"));
    }
    Ok(m)
}

/// Reads every record, verifying checksums along the way.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let m = read_manifest(dir)?;
    let (crop, seg) = (m.crop_size, m.seg_size);
    let rb = record_bytes(crop, seg);
    let mut records = Vec::with_capacity(m.count);
    for ch in &m.chunks {
        let path = dir.join(&ch.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() < CHUNK_HEADER {
            return Err(Error::format(&path, "chunk shorter than its header"));
        }
        let (head, body) = bytes.split_at(CHUNK_HEADER);
        if &head[..4] != CHUNK_MAGIC {
            return Err(Error::format(&path, "bad chunk magic"));
        }
        if crc32fast::hash(&head[..28]) != u32::from_le_bytes(head[28..32].try_into().unwrap()) {
            return Err(Error::format(&path, "chunk header checksum mismatch"));
        }
        if head != chunk_header(ch.count, crop, seg).as_slice() {
            return Err(Error::format(&path, "chunk header disagrees with the manifest"));
        }
        if hex(&Sha256::digest(&bytes)) != ch.sha256 {
            return Err(Error::format(&path, "chunk checksum mismatch"));
        }
        if body.len() != ch.count * rb {
            return Err(Error::format(&path, "chunk length does not match its record count"));
        }
        for rec in body.chunks_exact(rb) {
            records.push(decode_record(rec, crop, seg).map_err(|e| Error::format(&path, e))?);
        }
    }
    if records.len() != m.count {
        return Err(Error::format(dir.join("manifest.json"), "record count mismatch"));
    }
    Ok((m, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate;

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = GenConfig::default();
        let recs = generate(&cfg, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&recs, dir.path(), Some(&cfg), "test").unwrap();
        let (m, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(m.gen_config.as_ref(), Some(&cfg));
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[], dir.path(), None, "").unwrap();
        let (m, back) = read_dataset(dir.path()).unwrap();
        assert_eq!((m.count, back.len()), (0, 0));
    }

    #[test]
    fn corruption_and_versions_are_refused() {
        let cfg = GenConfig::default();
        let recs = generate(&cfg, 2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&recs, dir.path(), Some(&cfg), "test").unwrap();
        let chunk = dir.path().join("chunk_00000.bin");
        let pristine = std::fs::read(&chunk).unwrap();

        let mut bad = pristine.clone();
        bad[9] ^= 0x40; // record count in the header
        std::fs::write(&chunk, &bad).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("header checksum"), "{err}");

        let mut bad = pristine.clone();
        let n = bad.len();
        bad[n - 3] ^= 1;
        std::fs::write(&chunk, &bad).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("chunk checksum"));
        std::fs::write(&chunk, &pristine).unwrap();

        let mpath = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("version 2 is not supported"), "{err}");

        std::fs::write(&mpath, text.replace("\"count\": 2", "\"count\": 3")).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("manifest checksum"));
    }
}
