//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `EATSR`, format version u16, tensor count
//! u32, then per tensor: name length u16, UTF-8 name, rank u8, dims as u32,
//! f32 payload. Optional tagged sections follow, each a 4-byte tag, a u32
//! byte length and the payload:
//!
//! * `META`: version u16, epochs completed u64, steps u64, config text
//!   (u32 length + UTF-8).
//! * `OPTM`: version u16, optimizer count u8, then per optimizer: step u64,
//!   entry count u32 and per entry: name, element count u32, first-moment
//!   and second-moment f32 arrays.

use super::optim::Adam;
use crate::error::{Error, Result};
use crate::network::{ModelParams, ParamKind};
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"EATSR";
pub const FORMAT_VERSION: u16 = 1;
pub const META_VERSION: u16 = 1;
pub const OPTIM_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Meta {
    pub epochs_completed: u64,
    pub steps: u64,
    pub config: String,
}

/// Optimizer moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub t: u64,
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

impl OptimState {
    pub fn capture(opt: &Adam, params: &ModelParams) -> Self {
        let moments = params
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ParamKind::Weight)
            .map(|(i, e)| (e.name.clone(), opt.m[i].clone(), opt.v[i].clone()))
            .collect();
        Self { t: opt.t, moments }
    }

    pub fn restore(&self, opt: &mut Adam, params: &ModelParams) -> Result<()> {
        let weights = params.entries().iter().filter(|e| e.kind == ParamKind::Weight).count();
        if weights != self.moments.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} entries, model has {weights} learnable tensors",
                self.moments.len()
            )));
        }
        for (name, m, v) in &self.moments {
            let id = params
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown tensor {name}")))?;
            let i = id.index();
            if m.len() != opt.m[i].len() || v.len() != opt.v[i].len() {
                return Err(Error::Checkpoint(format!("optimizer state for {name} has the wrong size")));
            }
            opt.m[i].clone_from(m);
            opt.v[i].clone_from(v);
        }
        opt.t = self.t;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: Option<Meta>,
    /// Generator optimizer first, then the discriminator's if present.
    pub optim: Vec<OptimState>,
}

impl Checkpoint {
    pub fn push_params(&mut self, params: &ModelParams) {
        self.tensors
            .extend(params.entries().iter().map(|e| (e.name.clone(), e.value.clone())));
    }

    /// Tensors whose names start with `prefix.`.
    pub fn params_with_prefix(&self, prefix: &str) -> ModelParams {
        let mut out = ModelParams::new();
        let p = format!("{prefix}.");
        for (name, t) in &self.tensors {
            if name.starts_with(&p) {
                // names are unique within a valid checkpoint
                let _ = out.insert(name.clone(), ParamKind::Weight, t.clone());
            }
        }
        out
    }

    /// Loads matching tensors into `params` (names and shapes must agree).
    pub fn load_into(&self, prefix: &str, params: &mut ModelParams) -> Result<()> {
        params.load_from(&self.params_with_prefix(prefix))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.name(name)?;
            w.u8(t.rank() as u8);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            w.f32s(t.data());
        }
        if let Some(meta) = &self.meta {
            let mut s = Writer::default();
            s.u16(META_VERSION);
            s.u64(meta.epochs_completed);
            s.u64(meta.steps);
            s.u32(meta.config.len() as u32);
            s.bytes(meta.config.as_bytes());
            w.section(b"META", &s.buf);
        }
        if !self.optim.is_empty() {
            let mut s = Writer::default();
            s.u16(OPTIM_VERSION);
            s.u8(self.optim.len() as u8);
            for o in &self.optim {
                s.u64(o.t);
                s.u32(o.moments.len() as u32);
                for (name, m, v) in &o.moments {
                    s.name(name)?;
                    s.u32(m.len() as u32);
                    s.f32s(m);
                    s.f32s(v);
                }
            }
            w.section(b"OPTM", &s.buf);
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}: not a checkpoint file",
                String::from_utf8_lossy(magic),
                std::str::from_utf8(MAGIC).unwrap_or_default()
            )));
        }
        let version = r.u16("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let count = r.u32("tensor count")? as usize;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let name = r.name()?;
            let rank = r.u8("rank")? as usize;
            if rank == 0 || rank > crate::tensor::MAX_RANK {
                return Err(Error::Checkpoint(format!("tensor {name} has invalid rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let data = r.f32s(numel, &name)?;
            ck.tensors.push((name, Tensor::new(&shape, data)?));
        }
        while r.pos < bytes.len() {
            let tag: [u8; 4] = r.take(4, "section tag")?.try_into().expect("4 bytes");
            let len = r.u32("section length")? as usize;
            let body = r.take(len, "section body")?;
            let mut s = Reader { buf: body, pos: 0 };
            match &tag {
                b"META" => {
                    let v = s.u16("metadata version")?;
                    if v != META_VERSION {
                        return Err(Error::Checkpoint(format!(
                            "unsupported metadata version {v}, expected {META_VERSION}"
                        )));
                    }
                    let epochs_completed = s.u64("epoch")?;
                    let steps = s.u64("step")?;
                    let n = s.u32("config length")? as usize;
                    let config = String::from_utf8(s.take(n, "config text")?.to_vec())
                        .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
                    ck.meta = Some(Meta {
                        epochs_completed,
                        steps,
                        config,
                    });
                }
                b"OPTM" => {
                    let v = s.u16("optimizer version")?;
                    if v != OPTIM_VERSION {
                        return Err(Error::Checkpoint(format!(
                            "unsupported optimizer section version {v}, expected {OPTIM_VERSION}"
                        )));
                    }
                    let n = s.u8("optimizer count")?;
                    for _ in 0..n {
                        let t = s.u64("optimizer step")?;
                        let entries = s.u32("moment count")? as usize;
                        let mut moments = Vec::with_capacity(entries);
                        for _ in 0..entries {
                            let name = s.name()?;
                            let len = s.u32("moment length")? as usize;
                            let m = s.f32s(len, &name)?;
                            let v = s.f32s(len, &name)?;
                            moments.push((name, m, v));
                        }
                        ck.optim.push(OptimState { t, moments });
                    }
                }
                // sections from newer writers are skipped
                _ => {}
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
    fn name(&mut self, name: &str) -> Result<()> {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        self.u16(len);
        self.bytes(name.as_bytes());
        Ok(())
    }
    fn section(&mut self, tag: &[u8; 4], body: &[u8]) {
        self.bytes(tag);
        self.u32(body.len() as u32);
        self.bytes(body);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} while reading {what}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
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
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn name(&mut self) -> Result<String> {
        let n = self.u16("name length")? as usize;
        String::from_utf8(self.take(n, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                ("g.a".into(), Tensor::new(&[2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap()),
                ("d.b".into(), Tensor::new(&[1], vec![7.0]).unwrap()),
            ],
            meta: Some(Meta {
                epochs_completed: 3,
                steps: 12,
                config: "seed = 1\n".into(),
            }),
            optim: vec![OptimState {
                t: 12,
                moments: vec![("g.a".into(), vec![0.5; 6], vec![0.25; 6])],
            }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..5], b"EATSR");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn diagnoses_corruption() {
        let bytes = sample().encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(Checkpoint::decode(&bad).unwrap_err().to_string().contains("version 9"));
        let err = Checkpoint::decode(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
