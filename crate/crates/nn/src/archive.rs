use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use crate::param::{visit_scoped, Net};

const MAGIC: &[u8; 4] = b"NTAR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    BadVersion(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

/// Named collection of f64 tensors with a simple, deterministic binary
/// serialization: magic, version, a length-prefixed header of
/// `name shape...` lines, then the raw little-endian payloads in header
/// order. Keys are stored sorted so identical contents produce identical
/// bytes.
#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn insert_scalar(&mut self, name: &str, value: f64) {
        self.insert(name, ArrayD::from_elem(IxDyn(&[1]), value));
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>, ArchiveError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ArchiveError::Missing(name.to_string()))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64, ArchiveError> {
        let t = self.get(name)?;
        t.iter()
            .next()
            .copied()
            .ok_or_else(|| ArchiveError::Corrupt(format!("scalar `{name}` is empty")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Store a network's parameters (value and Adam moments) under `prefix`.
    pub fn store_net(&mut self, prefix: &str, net: &mut dyn Net) {
        visit_scoped(net, prefix, &mut |name, p| {
            self.tensors.insert(format!("{name}.value"), p.value.clone());
            self.tensors.insert(format!("{name}.m"), p.m.clone());
            self.tensors.insert(format!("{name}.v"), p.v.clone());
        });
    }

    /// Restore a network's parameters previously stored with `store_net`.
    /// Shapes must match the freshly constructed network.
    pub fn load_net(&self, prefix: &str, net: &mut dyn Net) -> Result<(), ArchiveError> {
        let mut err = None;
        visit_scoped(net, prefix, &mut |name, p| {
            if err.is_some() {
                return;
            }
            for (suffix, slot) in [
                (".value", &mut p.value),
                (".m", &mut p.m),
                (".v", &mut p.v),
            ] {
                let key = format!("{name}{suffix}");
                match self.tensors.get(&key) {
                    None => {
                        err = Some(ArchiveError::Missing(key));
                        return;
                    }
                    Some(t) if t.shape() != slot.shape() => {
                        err = Some(ArchiveError::ShapeMismatch {
                            name: key,
                            got: t.shape().to_vec(),
                            want: slot.shape().to_vec(),
                        });
                        return;
                    }
                    Some(t) => *slot = t.clone(),
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let mut header = String::new();
        for (name, t) in &self.tensors {
            header.push_str(name);
            for d in t.shape() {
                header.push(' ');
                header.push_str(&d.to_string());
            }
            header.push('\n');
        }
        let hb = header.as_bytes();
        out.write_all(&(hb.len() as u64).to_le_bytes())?;
        out.write_all(hb)?;
        for t in self.tensors.values() {
            let c = t.as_standard_layout();
            for v in c.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let mut inp = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        inp.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let mut vbuf = [0u8; 4];
        inp.read_exact(&mut vbuf)?;
        let version = u32::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(ArchiveError::BadVersion(version));
        }
        let mut lbuf = [0u8; 8];
        inp.read_exact(&mut lbuf)?;
        let hlen = u64::from_le_bytes(lbuf) as usize;
        let mut hbytes = vec![0u8; hlen];
        inp.read_exact(&mut hbytes)?;
        let header = String::from_utf8(hbytes)
            .map_err(|e| ArchiveError::Corrupt(format!("header not utf-8: {e}")))?;

        let mut tensors = BTreeMap::new();
        for line in header.lines() {
            let mut parts = line.split(' ');
            let name = parts
                .next()
                .ok_or_else(|| ArchiveError::Corrupt("empty header line".into()))?
                .to_string();
            let shape: Vec<usize> = parts
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|e| ArchiveError::Corrupt(format!("bad dim `{s}`: {e}")))
                })
                .collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let mut data = vec![0.0f64; n];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                inp.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| ArchiveError::Corrupt(format!("shape error for `{name}`: {e}")))?;
            tensors.insert(name, arr);
        }
        Ok(TensorArchive { tensors })
    }
}
