//! Artifact hashing and pipeline manifests.
//!
//! Every pipeline stage records, for each artifact it writes, a manifest line
//! with the artifact's own hash, the hashes of the inputs it was derived
//! from, the config hash, and the seed. Consumers can then verify that the
//! upstream files they read are the ones the artifact was built from.
//!
//! Hashes are 64-bit FNV-1a over the raw file bytes, rendered as 16 hex
//! digits.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::pose::atomic_write;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(hash_hex(&fs::read(path)?))
}

/// One artifact's provenance record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Artifact file name (relative to the manifest's directory).
    pub name: String,
    pub hash: String,
    /// `(input file name, input hash)` pairs.
    pub inputs: Vec<(String, String)>,
    pub config_hash: String,
    pub seed: u64,
    pub version: u32,
}

/// Manifest for one output directory: artifact name → entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "MANIFEST";

impl Manifest {
    pub fn load(dir: &Path) -> io::Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
            for part in line.split('\t') {
                if let Some((k, v)) = part.split_once('=') {
                    fields.insert(k, v);
                }
            }
            let entry = ManifestEntry {
                name: fields.get("name").unwrap_or(&"").to_string(),
                hash: fields.get("hash").unwrap_or(&"").to_string(),
                inputs: fields
                    .get("inputs")
                    .map(|s| {
                        s.split(';')
                            .filter(|p| !p.is_empty())
                            .filter_map(|p| {
                                p.split_once(':').map(|(a, b)| (a.to_string(), b.to_string()))
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
                config_hash: fields.get("config").unwrap_or(&"").to_string(),
                seed: fields.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
                version: fields.get("version").and_then(|s| s.parse().ok()).unwrap_or(1),
            };
            if entry.name.is_empty() {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "manifest line without name"));
            }
            entries.insert(entry.name.clone(), entry);
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let mut out = String::new();
        for e in self.entries.values() {
            let inputs: Vec<String> =
                e.inputs.iter().map(|(n, h)| format!("{n}:{h}")).collect();
            out.push_str(&format!(
                "name={}\thash={}\tinputs={}\tconfig={}\tseed={}\tversion={}\n",
                e.name,
                e.hash,
                inputs.join(";"),
                e.config_hash,
                e.seed,
                e.version
            ));
        }
        atomic_write(&dir.join(MANIFEST_FILE), out.as_bytes())
    }

    /// Records `path` (hashing its current bytes) with its input provenance.
    pub fn record(
        &mut self,
        path: &Path,
        inputs: &[(String, String)],
        config_hash: &str,
        seed: u64,
    ) -> io::Result<()> {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "artifact has no name"))?;
        let hash = hash_file(path)?;
        self.entries.insert(
            name.clone(),
            ManifestEntry {
                name,
                hash,
                inputs: inputs.to_vec(),
                config_hash: config_hash.to_string(),
                seed,
                version: 1,
            },
        );
        Ok(())
    }

    /// Verifies that `path`'s bytes still match its recorded hash. Returns
    /// the entry for upstream chaining. Files without an entry fail.
    pub fn verify(&self, dir: &Path, name: &str) -> io::Result<&ManifestEntry> {
        let entry = self.entries.get(name).ok_or_else(|| {
            io::Error::new(io::ErrorKind::NotFound, format!("no manifest entry for {name}"))
        })?;
        let actual = hash_file(&dir.join(name))?;
        if actual != entry.hash {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("hash mismatch for {name}: manifest {} vs file {actual}", entry.hash),
            ));
        }
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn manifest_round_trip_and_verify() {
        let dir = std::env::temp_dir().join(format!("manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let art = dir.join("artifact.bin");
        std::fs::write(&art, b"payload").unwrap();

        let mut m = Manifest::default();
        m.record(&art, &[("input.bin".into(), "abc".into())], "cfg123", 42).unwrap();
        m.save(&dir).unwrap();

        let loaded = Manifest::load(&dir).unwrap();
        assert_eq!(loaded, m);
        loaded.verify(&dir, "artifact.bin").unwrap();

        // Tampering is caught.
        std::fs::write(&art, b"tampered").unwrap();
        assert!(loaded.verify(&dir, "artifact.bin").is_err());
    }
}
