//! Provenance plumbing: content hashing, per-artifact manifests, and the
//! audit walk that verifies hash chains between artifacts.
//!
//! Every artifact directory gets a `manifest.json` recording the resolved
//! configuration, the seeds, the hashes of its input artifacts, and the
//! hashes of the files it produced. Manifests carry no timestamps so
//! identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Stable hash over every regular file under `dir` except manifests:
/// `sha256(relative_path || '\0' || sha256(bytes) || '\n' ...)` with paths
/// sorted.
pub fn hash_tree(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut acc = String::new();
    for rel in files {
        if rel.ends_with("manifest.json") {
            continue;
        }
        let h = hash_file(&dir.join(&rel))?;
        acc.push_str(&rel);
        acc.push('\0');
        acc.push_str(&h);
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))? {
        let entry = entry.map_err(|e| CoreError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Artifact kind: dataset, pdm, ae, lmgan, inpaint, recognizer,
    /// obfuscation, eval-report.
    pub kind: String,
    pub tool_version: String,
    pub seed: u64,
    /// Resolved configuration, serialized by the producing command.
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Input artifacts: name -> manifest-recorded tree hash.
    pub inputs: BTreeMap<String, ArtifactRef>,
    /// Files this artifact produced: relative path -> sha256.
    pub outputs: BTreeMap<String, String>,
    /// Hash over all output files (what downstream artifacts reference).
    pub tree_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub tree_hash: String,
}

impl Manifest {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value) -> Self {
        let cfg_bytes = serde_json::to_vec(&config).expect("config serializes");
        Manifest {
            kind: kind.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: sha256_hex(&cfg_bytes),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tree_hash: String::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, dir: &Path) -> Result<()> {
        let loaded = Manifest::load(dir)?;
        self.inputs.insert(
            name.to_string(),
            ArtifactRef {
                path: dir.to_string_lossy().into_owned(),
                tree_hash: loaded.tree_hash,
            },
        );
        Ok(())
    }

    /// Hash every file in `dir`, fill `outputs` and `tree_hash`, and write
    /// `manifest.json`.
    pub fn finalize(mut self, dir: &Path) -> Result<Manifest> {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        files.sort();
        self.outputs.clear();
        for rel in files {
            if rel.ends_with("manifest.json") {
                continue;
            }
            let h = hash_file(&dir.join(&rel))?;
            self.outputs.insert(rel, h);
        }
        self.tree_hash = hash_tree(dir)?;
        let path = dir.join("manifest.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&self).expect("manifest serializes"),
        )
        .map_err(|e| CoreError::io(&path, e))?;
        Ok(self)
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        serde_json::from_str(&fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?)
            .map_err(|e| CoreError::json(&path, e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditFinding {
    pub artifact: PathBuf,
    pub problem: String,
}

/// Verify one artifact directory: every recorded output hash must match the
/// file on disk, the tree hash must match, and every referenced input
/// artifact must exist and still have its recorded tree hash.
pub fn audit_artifact(dir: &Path, findings: &mut Vec<AuditFinding>) {
    let manifest = match Manifest::load(dir) {
        Ok(m) => m,
        Err(e) => {
            findings.push(AuditFinding {
                artifact: dir.to_path_buf(),
                problem: format!("missing or unreadable manifest: {e}"),
            });
            return;
        }
    };
    for (rel, want) in &manifest.outputs {
        match hash_file(&dir.join(rel)) {
            Ok(got) if &got == want => {}
            Ok(got) => findings.push(AuditFinding {
                artifact: dir.to_path_buf(),
                problem: format!("output `{rel}` hash mismatch: {got} != recorded {want}"),
            }),
            Err(e) => findings.push(AuditFinding {
                artifact: dir.to_path_buf(),
                problem: format!("output `{rel}` unreadable: {e}"),
            }),
        }
    }
    match hash_tree(dir) {
        Ok(h) if h == manifest.tree_hash => {}
        Ok(h) => findings.push(AuditFinding {
            artifact: dir.to_path_buf(),
            problem: format!("tree hash mismatch: {h} != recorded {}", manifest.tree_hash),
        }),
        Err(e) => findings.push(AuditFinding {
            artifact: dir.to_path_buf(),
            problem: format!("tree unhashable: {e}"),
        }),
    }
    for (name, input) in &manifest.inputs {
        let ipath = Path::new(&input.path);
        match Manifest::load(ipath) {
            Ok(im) if im.tree_hash == input.tree_hash => {}
            Ok(im) => findings.push(AuditFinding {
                artifact: dir.to_path_buf(),
                problem: format!(
                    "input `{name}` changed since this artifact was built: {} != {}",
                    im.tree_hash, input.tree_hash
                ),
            }),
            Err(e) => findings.push(AuditFinding {
                artifact: dir.to_path_buf(),
                problem: format!("input `{name}` at {} unreadable: {e}", input.path),
            }),
        }
    }
}

/// Audit every artifact directory (any directory holding a manifest.json)
/// under `root`.
pub fn audit_tree(root: &Path) -> Result<Vec<AuditFinding>> {
    let mut findings = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("manifest.json").is_file() {
            audit_artifact(&dir, &mut findings);
        }
        for entry in fs::read_dir(&dir).map_err(|e| CoreError::io(&dir, e))? {
            let entry = entry.map_err(|e| CoreError::io(&dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_roundtrip_and_audit_detects_tampering() {
        let dir = std::env::temp_dir().join("headgen_artifact_test");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("data.bin"), b"payload").unwrap();
        let m = Manifest::new("dataset", 7, serde_json::json!({"x": 1}));
        m.finalize(&dir).unwrap();

        let mut findings = Vec::new();
        audit_artifact(&dir, &mut findings);
        assert!(findings.is_empty(), "{findings:?}");

        fs::write(dir.join("data.bin"), b"tampered").unwrap();
        let mut findings = Vec::new();
        audit_artifact(&dir, &mut findings);
        assert!(!findings.is_empty());
    }

    #[test]
    fn identical_content_gives_identical_tree_hash() {
        let d1 = std::env::temp_dir().join("headgen_artifact_h1");
        let d2 = std::env::temp_dir().join("headgen_artifact_h2");
        for d in [&d1, &d2] {
            let _ = fs::remove_dir_all(d);
            fs::create_dir_all(d.join("sub")).unwrap();
            fs::write(d.join("a.txt"), b"alpha").unwrap();
            fs::write(d.join("sub/b.txt"), b"beta").unwrap();
        }
        assert_eq!(hash_tree(&d1).unwrap(), hash_tree(&d2).unwrap());
    }
}
