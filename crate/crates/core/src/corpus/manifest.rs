//! Corpus persistence: a line-delimited JSON manifest plus a binary sidecar
//! holding all frame data as little-endian f64 (bit-exact round trip).
//!
//! Sidecar layout (integers little-endian; see docs/formats.md):
//!
//! ```text
//! magic   8 bytes  "AMPSFRM1"
//! u32     version (currently 1)
//! u32     frame width (floats per frame)
//! u64     entry count
//! per entry: u64 utterance id, u64 offset, u64 length  (both in f64 units,
//!            relative to the start of the data block)
//! data:   f64 values
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Split, UttKind, Utterance};
use crate::error::{AmpsError, Result};

const FRAMES_MAGIC: &[u8; 8] = b"AMPSFRM1";
const FRAMES_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: u64,
    kind: UttKind,
    split: Split,
    transcript: Vec<u32>,
    paraphrase: Option<Vec<u32>>,
    sigma: f64,
    frames_ref: FramesRef,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
struct FramesRef {
    offset: u64,
    len: u64,
}

/// The sidecar lives next to the manifest with a `.frames` extension.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("frames")
}

pub fn write_manifest(path: &Path, utts: &[Utterance], frame_dim: usize) -> Result<()> {
    let mut manifest = BufWriter::new(File::create(path)?);
    let mut sidecar = BufWriter::new(File::create(sidecar_path(path))?);

    sidecar.write_all(FRAMES_MAGIC)?;
    sidecar.write_all(&FRAMES_VERSION.to_le_bytes())?;
    sidecar.write_all(&(frame_dim as u32).to_le_bytes())?;
    sidecar.write_all(&(utts.len() as u64).to_le_bytes())?;
    let mut offset = 0u64;
    for u in utts {
        sidecar.write_all(&u.id.to_le_bytes())?;
        sidecar.write_all(&offset.to_le_bytes())?;
        sidecar.write_all(&(u.frames.len() as u64).to_le_bytes())?;
        offset += u.frames.len() as u64;
    }
    let mut offset = 0u64;
    for u in utts {
        let mut bytes = Vec::with_capacity(u.frames.len() * 8);
        for v in &u.frames {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sidecar.write_all(&bytes)?;

        let line = ManifestLine {
            id: u.id,
            kind: u.kind,
            split: u.split,
            transcript: u.transcript.clone(),
            paraphrase: u.paraphrase.clone(),
            sigma: u.noise_sigma,
            frames_ref: FramesRef {
                offset,
                len: u.frames.len() as u64,
            },
        };
        offset += u.frames.len() as u64;
        serde_json::to_writer(&mut manifest, &line)
            .map_err(|e| AmpsError::data(format!("manifest serialization failed: {e}")))?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    sidecar.flush()?;
    Ok(())
}

/// Read a manifest and its sidecar back into utterances. Returns the corpus
/// and the sidecar's frame width. Errors name the offending manifest line.
pub fn read_manifest(path: &Path) -> Result<(Vec<Utterance>, usize)> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(AmpsError::data(format!(
            "frames sidecar {} is missing",
            side.display()
        )));
    }
    let (index, data, frame_dim) = read_sidecar(&side)?;

    let file = File::open(path)
        .map_err(|e| AmpsError::data(format!("cannot open manifest {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut utts = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| {
            AmpsError::data(format!(
                "manifest {} line {}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        let idx = index.get(&rec.id).ok_or_else(|| {
            AmpsError::data(format!(
                "manifest {} line {}: utterance {} not in sidecar index",
                path.display(),
                lineno + 1,
                rec.id
            ))
        })?;
        if *idx != rec.frames_ref {
            return Err(AmpsError::data(format!(
                "manifest {} line {}: frame reference disagrees with sidecar index",
                path.display(),
                lineno + 1
            )));
        }
        let (start, len) = (rec.frames_ref.offset as usize, rec.frames_ref.len as usize);
        let end = start.checked_add(len).filter(|&e| e <= data.len()).ok_or_else(|| {
            AmpsError::data(format!(
                "manifest {} line {}: frame reference outside sidecar data",
                path.display(),
                lineno + 1
            ))
        })?;
        utts.push(Utterance {
            id: rec.id,
            kind: rec.kind,
            split: rec.split,
            transcript: rec.transcript,
            paraphrase: rec.paraphrase,
            frames: data[start..end].to_vec(),
            noise_sigma: rec.sigma,
        });
    }
    Ok((utts, frame_dim))
}

fn read_sidecar(path: &Path) -> Result<(HashMap<u64, FramesRef>, Vec<f64>, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| AmpsError::data("frames sidecar too short for header"))?;
    if &magic != FRAMES_MAGIC {
        return Err(AmpsError::data("bad frames sidecar magic"));
    }
    let version = read_u32(&mut r)?;
    if version != FRAMES_VERSION {
        return Err(AmpsError::data(format!(
            "unsupported frames sidecar version {version}"
        )));
    }
    let frame_dim = read_u32(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let mut index = HashMap::with_capacity(n);
    let mut total = 0u64;
    for _ in 0..n {
        let id = read_u64(&mut r)?;
        let offset = read_u64(&mut r)?;
        let len = read_u64(&mut r)?;
        index.insert(id, FramesRef { offset, len });
        total = total.max(offset + len);
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != total as usize * 8 {
        return Err(AmpsError::data(format!(
            "frames sidecar data block holds {} bytes, index expects {}",
            bytes.len(),
            total * 8
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((index, data, frame_dim))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corpus(n: usize, seed: u64) -> Vec<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n as u64)
            .map(|id| {
                let l = rng.gen_range(1..6usize);
                Utterance {
                    id,
                    kind: if rng.gen::<bool>() {
                        UttKind::Read
                    } else {
                        UttKind::Spontaneous
                    },
                    split: match id % 3 {
                        0 => Split::Train,
                        1 => Split::Valid,
                        _ => Split::Test,
                    },
                    transcript: (0..l as u32).map(|t| 14 + t).chain([2]).collect(),
                    paraphrase: if rng.gen::<bool>() {
                        Some(vec![15, 4, 2])
                    } else {
                        None
                    },
                    frames: (0..l * 4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
                    noise_sigma: rng.gen::<f64>(),
                }
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let utts = random_corpus(100, 9);
        write_manifest(&path, &utts, 4).unwrap();
        let (back, dim) = read_manifest(&path).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(back.len(), utts.len());
        for (a, b) in utts.iter().zip(back.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.split, b.split);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.paraphrase, b.paraphrase);
            assert_eq!(a.noise_sigma.to_bits(), b.noise_sigma.to_bits());
            assert_eq!(a.frames.len(), b.frames.len());
            for (x, y) in a.frames.iter().zip(b.frames.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn missing_sidecar_is_an_explicit_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_manifest(&path, &random_corpus(3, 1), 4).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let e = read_manifest(&path).unwrap_err();
        assert!(e.to_string().contains("sidecar"), "{e}");
    }

    #[test]
    fn truncated_final_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_manifest(&path, &random_corpus(3, 2), 4).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() - 25; // chop into the last record
        std::fs::write(&path, &text[..cut]).unwrap();
        let e = read_manifest(&path).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn malformed_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_manifest(&path, &random_corpus(3, 3), 4).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let second_start = text.match_indices('\n').next().unwrap().0 + 1;
        text.insert_str(second_start, "not json ");
        std::fs::write(&path, &text).unwrap();
        let e = read_manifest(&path).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
