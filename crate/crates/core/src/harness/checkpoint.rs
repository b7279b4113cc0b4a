//! Binary checkpoints: run config, step counter and every parameter with
//! its gradient and Adam state, all numbers little-endian.

use std::fs;
use std::path::Path;

use inttravel_tensor::{ParamEntry, ParameterStore, Tensor};

use super::config::RunConfig;
use super::HarnessError;

const MAGIC: &[u8; 8] = b"ITRVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub store: ParameterStore,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, String> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.bytes.len()).ok_or_else(|| format!("implausible length {n}"))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_floats(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u64(&mut out, self.step);
        put_str(&mut out, &self.config.to_text());
        put_u64(&mut out, self.store.len() as u64);
        for (name, e) in self.store.iter() {
            put_str(&mut out, name);
            let shape = e.value.shape();
            put_u64(&mut out, shape.len() as u64);
            for &d in shape {
                put_u64(&mut out, d as u64);
            }
            put_u64(&mut out, e.step);
            out.push(u8::from(e.has_grad));
            for t in [&e.value, &e.grad, &e.m, &e.v] {
                put_floats(&mut out, t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format!("format version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let step = r.u64()?;
        let config = RunConfig::parse(&r.string()?).map_err(|e| e.to_string())?;
        let count = r.len()?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.len()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
            let adam_step = r.u64()?;
            let has_grad = r.take(1)?[0] != 0;
            let mut tensors = Vec::with_capacity(4);
            for _ in 0..4 {
                tensors.push(Tensor::new(shape.clone(), r.floats(numel)?).map_err(|e| e.to_string())?);
            }
            let v = tensors.pop().expect("four tensors");
            let m = tensors.pop().expect("four tensors");
            let grad = tensors.pop().expect("four tensors");
            let value = tensors.pop().expect("four tensors");
            let entry = ParamEntry {
                value,
                grad,
                m,
                v,
                step: adam_step,
                has_grad,
            };
            store.insert_entry(name, entry).map_err(|e| e.to_string())?;
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { config, step, store })
    }

    /// Writes through a temporary file so an interrupted save never
    /// replaces the previous checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = fs::read(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|message| HarnessError::Checkpoint {
            path: path.display().to_string(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParameterStore::new();
        store.insert("a.w", Tensor::new(vec![2, 3], vec![0.1, -2.5, 1e-300, 3.0, f64::MIN_POSITIVE, 7.0]).unwrap()).unwrap();
        store.insert("b", Tensor::new(vec![1, 1], vec![std::f64::consts::PI]).unwrap()).unwrap();
        let e = store.get_mut("a.w").unwrap();
        e.m = Tensor::full(&[2, 3], 0.25);
        e.step = 11;
        e.has_grad = true;
        Checkpoint {
            config: RunConfig {
                lr: 3.3e-4,
                ..RunConfig::default()
            },
            step: 42,
            store,
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn version_mismatch_refused() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn truncation_and_garbage_refused() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
