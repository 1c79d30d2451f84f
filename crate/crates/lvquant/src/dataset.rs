//! On-disk dataset format and its round trip.
//!
//! A dataset directory holds `manifest.json` plus, per subject, a raw frame
//! tensor `frames_<id>.bin` (16-byte header: magic `LVQ1`, then u32 frame
//! count / height / width, little-endian; payload F·H·W little-endian f32,
//! row-major) and a `labels_<id>.csv`. The manifest records a sha256 per
//! payload file, checked on read. Contours are not persisted.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::phantom::{CardiacSequence, IndexLabels};

const MAGIC: &[u8; 4] = b"LVQ1";
const LABELS_HEADER: &str =
    "frame,cavity_area,myo_area,dim1,dim2,dim3,rwt_is,rwt_i,rwt_il,rwt_al,rwt_a,rwt_as,phase";

#[derive(Debug)]
pub enum DataError {
    Io(String, std::io::Error),
    BadManifest(String),
    MissingFile(String),
    BadMagic(String),
    SizeMismatch(String),
    ChecksumMismatch(String),
    BadLabels(String),
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataError::Io(path, e) => write!(f, "io error on {}: {}", path, e),
            DataError::BadManifest(m) => write!(f, "bad manifest: {}", m),
            DataError::MissingFile(m) => write!(f, "missing file: {}", m),
            DataError::BadMagic(m) => write!(f, "bad magic: {}", m),
            DataError::SizeMismatch(m) => write!(f, "size mismatch: {}", m),
            DataError::ChecksumMismatch(m) => write!(f, "checksum mismatch: {}", m),
            DataError::BadLabels(m) => write!(f, "bad labels: {}", m),
        }
    }
}

impl std::error::Error for DataError {}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    frames: usize,
    height: usize,
    width: usize,
    spacing: f64,
    landmarks: [[f64; 2]; 2],
    tensor_file: String,
    labels_file: String,
    tensor_sha256: String,
    labels_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    subjects: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

fn encode_tensor(seq: &CardiacSequence) -> Vec<u8> {
    let mut buf =
        Vec::with_capacity(16 + seq.frames.len() * seq.height * seq.width * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(seq.frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.height as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.width as u32).to_le_bytes());
    for frame in &seq.frames {
        for &v in frame {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn encode_labels(seq: &CardiacSequence) -> String {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for (f, lab) in seq.labels.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            f,
            lab.cavity_area,
            lab.myo_area,
            lab.dims[0],
            lab.dims[1],
            lab.dims[2],
            lab.rwt[0],
            lab.rwt[1],
            lab.rwt[2],
            lab.rwt[3],
            lab.rwt[4],
            lab.rwt[5],
            lab.phase
        ));
    }
    out
}

pub fn write_dataset(sequences: &[CardiacSequence], dir: &Path) -> Result<(), DataError> {
    let ctx = |e: std::io::Error, p: &Path| DataError::Io(p.display().to_string(), e);
    fs::create_dir_all(dir).map_err(|e| ctx(e, dir))?;
    let mut manifest = Manifest {
        subjects: Vec::with_capacity(sequences.len()),
    };
    for seq in sequences {
        let tensor_file = format!("frames_{}.bin", seq.subject_id);
        let labels_file = format!("labels_{}.csv", seq.subject_id);
        let tensor = encode_tensor(seq);
        let labels = encode_labels(seq);
        let tpath = dir.join(&tensor_file);
        let lpath = dir.join(&labels_file);
        fs::write(&tpath, &tensor).map_err(|e| ctx(e, &tpath))?;
        fs::write(&lpath, labels.as_bytes()).map_err(|e| ctx(e, &lpath))?;
        manifest.subjects.push(ManifestEntry {
            id: seq.subject_id.clone(),
            frames: seq.frames.len(),
            height: seq.height,
            width: seq.width,
            spacing: seq.pixel_spacing,
            landmarks: [
                [seq.landmarks[0].0, seq.landmarks[0].1],
                [seq.landmarks[1].0, seq.landmarks[1].1],
            ],
            tensor_file,
            labels_file,
            tensor_sha256: sha256_hex(&tensor),
            labels_sha256: sha256_hex(labels.as_bytes()),
        });
    }
    let mpath = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::BadManifest(e.to_string()))?;
    fs::write(&mpath, body).map_err(|e| ctx(e, &mpath))?;
    Ok(())
}

fn read_payload(dir: &Path, name: &str, subject: &str) -> Result<Vec<u8>, DataError> {
    let path = dir.join(name);
    let mut buf = Vec::new();
    match fs::File::open(&path) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DataError::MissingFile(format!(
                "{} (subject {})",
                path.display(),
                subject
            )))
        }
        Err(e) => return Err(DataError::Io(path.display().to_string(), e)),
        Ok(mut f) => f
            .read_to_end(&mut buf)
            .map_err(|e| DataError::Io(path.display().to_string(), e))?,
    };
    Ok(buf)
}

fn decode_tensor(bytes: &[u8], name: &str, entry: &ManifestEntry) -> Result<Vec<Vec<f32>>, DataError> {
    if bytes.len() < 16 {
        return Err(DataError::SizeMismatch(format!(
            "{}: {} bytes is shorter than the 16-byte header",
            name,
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic(format!(
            "{}: expected 'LVQ1', found {:?}",
            name,
            &bytes[..4]
        )));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (f, h, w) = (word(4), word(8), word(12));
    if f != entry.frames || h != entry.height || w != entry.width {
        return Err(DataError::SizeMismatch(format!(
            "{}: header says {}x{}x{}, manifest says {}x{}x{}",
            name, f, h, w, entry.frames, entry.height, entry.width
        )));
    }
    let expected = 16 + f * h * w * 4;
    if bytes.len() != expected {
        return Err(DataError::SizeMismatch(format!(
            "{}: {} bytes on disk, header implies {}",
            name,
            bytes.len(),
            expected
        )));
    }
    let mut frames = Vec::with_capacity(f);
    let mut off = 16;
    for _ in 0..f {
        let mut frame = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            frame.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn decode_labels(text: &str, name: &str, frames: usize) -> Result<Vec<IndexLabels>, DataError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LABELS_HEADER => {}
        other => {
            return Err(DataError::BadLabels(format!(
                "{}: bad header {:?}",
                name, other
            )))
        }
    }
    let mut labels = Vec::with_capacity(frames);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(DataError::BadLabels(format!(
                "{} line {}: {} fields, expected 13",
                name,
                lineno + 2,
                fields.len()
            )));
        }
        let err = |m: &str| {
            DataError::BadLabels(format!("{} line {}: {}", name, lineno + 2, m))
        };
        let idx: usize = fields[0].parse().map_err(|_| err("bad frame index"))?;
        if idx != labels.len() {
            return Err(err(&format!(
                "frame index {} out of order (expected {})",
                idx,
                labels.len()
            )));
        }
        let mut vals = [0f64; 11];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = fields[k + 1]
                .parse()
                .map_err(|_| err(&format!("bad number {:?}", fields[k + 1])))?;
        }
        let phase: u8 = fields[12].parse().map_err(|_| err("bad phase"))?;
        if phase > 1 {
            return Err(err(&format!("phase {} not binary", phase)));
        }
        labels.push(IndexLabels {
            cavity_area: vals[0],
            myo_area: vals[1],
            dims: [vals[2], vals[3], vals[4]],
            rwt: [vals[5], vals[6], vals[7], vals[8], vals[9], vals[10]],
            phase,
        });
    }
    if labels.len() != frames {
        return Err(DataError::BadLabels(format!(
            "{}: {} label rows for {} frames",
            name,
            labels.len(),
            frames
        )));
    }
    Ok(labels)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<CardiacSequence>, DataError> {
    let mpath = dir.join("manifest.json");
    let body = match fs::read_to_string(&mpath) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DataError::MissingFile(mpath.display().to_string()))
        }
        Err(e) => return Err(DataError::Io(mpath.display().to_string(), e)),
        Ok(b) => b,
    };
    let manifest: Manifest =
        serde_json::from_str(&body).map_err(|e| DataError::BadManifest(e.to_string()))?;

    let mut out = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let tensor = read_payload(dir, &entry.tensor_file, &entry.id)?;
        if sha256_hex(&tensor) != entry.tensor_sha256 {
            return Err(DataError::ChecksumMismatch(entry.tensor_file.clone()));
        }
        let frames = decode_tensor(&tensor, &entry.tensor_file, entry)?;
        let ltext = read_payload(dir, &entry.labels_file, &entry.id)?;
        if sha256_hex(&ltext) != entry.labels_sha256 {
            return Err(DataError::ChecksumMismatch(entry.labels_file.clone()));
        }
        let ltext = String::from_utf8(ltext)
            .map_err(|e| DataError::BadLabels(format!("{}: {}", entry.labels_file, e)))?;
        let labels = decode_labels(&ltext, &entry.labels_file, entry.frames)?;
        out.push(CardiacSequence {
            subject_id: entry.id.clone(),
            height: entry.height,
            width: entry.width,
            frames,
            landmarks: [
                (entry.landmarks[0][0], entry.landmarks[0][1]),
                (entry.landmarks[1][0], entry.landmarks[1][1]),
            ],
            pixel_spacing: entry.spacing,
            labels,
            contours: None,
        });
    }
    Ok(out)
}
