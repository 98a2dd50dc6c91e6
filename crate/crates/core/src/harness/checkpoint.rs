use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::Vocabulary;

use super::{TrainConfig, Trained};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JGR1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `{ckpt}.config.json`
pub fn config_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, "config.json")
}

/// `{ckpt}.vocab.txt`
pub fn vocab_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, "vocab.txt")
}

fn sidecar(ckpt: &Path, suffix: &str) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub fn encode_tensors(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + store.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(store.len())
            .map_err(|_| Error::Format("too many tensors".into()))?
            .to_le_bytes(),
    );
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("{name}: rank too large")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {} while reading {what}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        if store.by_name(&name).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{name}: shape {shape:?} overflows")))?;
        let data = r
            .take(numel, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn write_tensors(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, encode_tensors(store)?)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<ParamStore<f32>> {
    decode_tensors(&fs::read(path)?)
}

/// Tensor file plus config and vocabulary sidecars.
pub fn save_checkpoint(path: &Path, trained: &Trained) -> Result<()> {
    write_tensors(path, &trained.params)?;
    fs::write(config_path(path), trained.config.to_json())?;
    trained.vocab.save(&vocab_path(path))?;
    Ok(())
}

/// Rebuilds the model from the sidecars and loads its parameters.
pub fn load_checkpoint(path: &Path) -> Result<Trained> {
    let config = TrainConfig::load(&config_path(path))?;
    let vocab = Vocabulary::load(&vocab_path(path))?;
    let mut trained = Trained::init(&config, vocab)?;
    load_params_into(path, &mut trained.params)?;
    Ok(trained)
}

/// Overwrites `target` with the checkpoint's tensors; names and shapes must
/// match exactly.
pub fn load_params_into(path: &Path, target: &mut ParamStore<f32>) -> Result<()> {
    target.assign_from(&read_tensors(path)?)
}
