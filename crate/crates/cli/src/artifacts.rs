//! Loading and saving the pipeline's on-disk artifacts, with manifest
//! verification for consumers.

use std::path::{Path, PathBuf};

use motif_core::manifest::{hash_hex, Manifest};
use motif_core::mine::{read_cover, Cover};
use motif_core::model::{read_latents, LatentSequence};
use motif_core::pose::{atomic_write, read_labels, read_sequence, PoseSequence};
use motif_core::segment::SegmentMap;

use crate::CmdError;

/// Sorted files with the given extension.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CmdError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CmdError::data(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CmdError::data(e.to_string()))?.path();
        if path.extension().map_or(false, |x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CmdError::data(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// All sequences in a directory, sorted by name.
pub fn load_sequences(dir: &Path) -> Result<Vec<(String, PoseSequence)>, CmdError> {
    list_files(dir, "mseq")?
        .into_iter()
        .map(|p| {
            let seq = read_sequence(&p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))?;
            Ok((stem(&p), seq))
        })
        .collect()
}

pub fn load_label_files(dir: &Path, stems: &[String]) -> Result<Vec<Vec<u16>>, CmdError> {
    stems
        .iter()
        .map(|s| {
            let p = dir.join(format!("{s}.lbl"));
            read_labels(&p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Writes one segment map as text: one `start end` line per segment.
pub fn write_seg_file(map: &SegmentMap, path: &Path) -> Result<(), CmdError> {
    let mut out = String::new();
    for &(s, e) in &map.segments {
        out.push_str(&format!("{s} {e}\n"));
    }
    atomic_write(path, out.as_bytes()).map_err(|e| CmdError::data(e.to_string()))
}

pub fn read_seg_file(path: &Path) -> Result<SegmentMap, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::data(format!("{}: {e}", path.display())))?;
    let mut starts = Vec::new();
    let mut len = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let s: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CmdError::data(format!("bad segment line in {}", path.display())))?;
        let e: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CmdError::data(format!("bad segment line in {}", path.display())))?;
        starts.push(s);
        len = len.max(e);
    }
    if starts.is_empty() {
        return Err(CmdError::data(format!("{} has no segments", path.display())));
    }
    Ok(SegmentMap::from_boundaries(&starts, len))
}

pub fn load_seg_files(dir: &Path, stems: &[String]) -> Result<Vec<SegmentMap>, CmdError> {
    stems.iter().map(|s| read_seg_file(&dir.join(format!("{s}.seg")))).collect()
}

pub fn load_cover_files(dir: &Path, stems: &[String]) -> Result<Vec<Cover>, CmdError> {
    stems
        .iter()
        .map(|s| {
            let p = dir.join(format!("{s}.cover"));
            read_cover(&p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn load_latent_files(dir: &Path, stems: &[String]) -> Result<Vec<LatentSequence>, CmdError> {
    stems
        .iter()
        .map(|s| {
            let p = dir.join(format!("{s}.mlat"));
            read_latents(&p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn load_codes(dir: &Path) -> Result<Vec<(String, Vec<u16>)>, CmdError> {
    list_files(dir, "codes")?
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CmdError::data(format!("{}: {e}", p.display())))?;
            let codes: Vec<u16> = text
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| CmdError::data(format!("bad code {t:?} in {}", p.display())))
                })
                .collect::<Result<_, _>>()?;
            Ok((stem(&p), codes))
        })
        .collect()
}

/// Records `paths` in the output directory's manifest.
pub fn record_artifacts(
    out_dir: &Path,
    paths: &[PathBuf],
    inputs: &[(String, String)],
    config_text: &str,
    seed: u64,
) -> Result<(), CmdError> {
    let mut manifest =
        Manifest::load(out_dir).map_err(|e| CmdError::data(format!("manifest: {e}")))?;
    let config_hash = hash_hex(config_text.as_bytes());
    for p in paths {
        manifest
            .record(p, inputs, &config_hash, seed)
            .map_err(|e| CmdError::data(format!("manifest: {e}")))?;
    }
    manifest.save(out_dir).map_err(|e| CmdError::data(format!("manifest: {e}")))
}

/// Verifies every file of the given extension in `dir` against the
/// directory's manifest; refuses unrecorded or modified artifacts.
pub fn verify_dir(dir: &Path, ext: &str) -> Result<(), CmdError> {
    let manifest =
        Manifest::load(dir).map_err(|e| CmdError::data(format!("manifest: {e}")))?;
    if manifest.entries.is_empty() {
        return Err(CmdError::data(format!(
            "{} has no manifest; refusing unverifiable artifacts",
            dir.display()
        )));
    }
    for p in list_files(dir, ext)? {
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        manifest
            .verify(dir, &name)
            .map_err(|e| CmdError::data(format!("upstream hash mismatch: {e}")))?;
    }
    Ok(())
}
