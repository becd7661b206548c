use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Every learnable array of a model, addressed by a dotted path such as
/// `pcm.l_to_a.layer0.Wq`. Iteration order is lexicographic by path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(Error::invalid(format!("duplicate parameter `{path}`")));
        }
        self.params.insert(path, value);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all arrays.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Scalar count restricted to paths starting with `prefix`.
    pub fn scalar_count_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }
}

/// Initialization schemes used by the model builders.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot/Xavier uniform over `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Normal {
        std: f64,
    },
}

impl Init {
    pub fn sample<R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Normal { std } => (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }
}

/// A tape bound to a parameter store for one forward/backward pass.
/// Each parameter becomes a single leaf the first time it is requested.
pub struct Session<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: BTreeMap<String, Var>,
    track_grads: bool,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, track_grads: bool) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            track_grads,
        }
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let value = self.store.get(path)?.clone();
        let v = self.tape.leaf(value, self.track_grads);
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Gradients for every parameter touched in this session, after
    /// `tape.backward`. Untouched parameters are absent.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(k, &v)| (k.clone(), self.tape.grad(v)))
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"MMERCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    extra: serde_json::Value,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    path: String,
    shape: Vec<usize>,
}

/// Writes `store` as: 8-byte magic, u32 version, u64 header length, a JSON
/// header (`extra` plus the ordered path/shape index), then every array's
/// values as little-endian f64 in index order.
pub fn write_checkpoint(path: &Path, extra: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let header = Header {
        extra: extra.clone(),
        params: store
            .iter()
            .map(|(p, t)| Entry {
                path: p.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in store.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let mut r = BufReader::new(File::open(path).map_err(Error::file(path))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for `{}`", e.path)))?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(e.path, Tensor::new(e.shape, data)?)?;
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter data".into(),
        ));
    }
    Ok((header.extra, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.insert("b.w", Init::Normal { std: 1.0 }.sample(&[3, 2], &mut rng))
            .unwrap();
        s.insert(
            "a.bias",
            Init::Xavier {
                fan_in: 4,
                fan_out: 4,
            }
            .sample(&[4], &mut rng),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let extra = serde_json::json!({"note": "x"});
        write_checkpoint(&path, &extra, &s).unwrap();
        let (back_extra, back) = read_checkpoint(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back_extra, extra);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[10])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&path, &serde_json::Value::Null, &s).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn session_binds_each_parameter_once() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut sess = Session::new(&s, true);
        let a = sess.param("w").unwrap();
        let b = sess.param("w").unwrap();
        assert_eq!(a, b);
        // f(w) = w * w, used through two handles; gradient 2w = 6.
        let y = sess.tape.mul(a, b).unwrap();
        let loss = sess.tape.sum(y);
        sess.tape.backward(loss).unwrap();
        assert_eq!(sess.grads()["w"].item(), 6.0);
        assert!(matches!(sess.param("nope"), Err(Error::UnknownParam(_))));
    }
}
