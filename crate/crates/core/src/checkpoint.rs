//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//! magic `UFLST\0`, version u32, layer count u32, (out, in) u32 per layer,
//! row-major weights of every layer, biases, Adam first moments (weights then
//! biases), Adam second moments, step counter u64. Then the round state:
//! one activation tag byte per hidden layer, completed round u32, and the
//! metrics history.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::eval::{Fallback, RoundMetrics};
use crate::nn::{Activation, AdamState, Layer, ModelParams};

pub const MAGIC: &[u8; 6] = b"UFLST\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Rounds completed so far.
    pub round: usize,
    pub history: Vec<RoundMetrics>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn opt(&mut self, v: Option<f64>) {
        self.u8(v.is_some() as u8);
        self.f64(v.unwrap_or(0.0));
    }
    fn layers(&mut self, layers: &[Layer]) {
        for l in layers {
            l.weight.iter().for_each(|&v| self.f64(v));
        }
        for l in layers {
            l.bias.iter().for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn opt(&mut self) -> Result<Option<f64>> {
        let present = self.u8()?;
        let v = self.f64()?;
        Ok((present != 0).then_some(v))
    }
    fn layers(&mut self, dims: &[(usize, usize)]) -> Result<Vec<Layer>> {
        let mut weights = Vec::with_capacity(dims.len());
        for &(o, i) in dims {
            let vals = (0..o * i).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Array2::from_shape_vec((o, i), vals).expect("sized"));
        }
        let mut out = Vec::with_capacity(dims.len());
        for (w, &(o, _)) in weights.into_iter().zip(dims) {
            let b = (0..o).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push(Layer {
                weight: w,
                bias: Array1::from(b),
            });
        }
        Ok(out)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let p = &ckpt.params;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(p.layers.len());
    for l in &p.layers {
        w.u32(l.out_dim());
        w.u32(l.in_dim());
    }
    w.layers(&p.layers);
    w.layers(&p.adam.first);
    w.layers(&p.adam.second);
    w.u64(p.adam.step);
    for a in &p.activations {
        w.u8(a.tag());
    }
    w.u32(ckpt.round);
    w.u32(ckpt.history.len());
    for m in &ckpt.history {
        w.u32(m.round);
        w.f64(m.epsilon);
        let (tag, val) = match m.fallback {
            Fallback::None => (0, 0),
            Fallback::WidenEpsilon(n) => (1, n as usize),
            Fallback::ShrinkMs(ms) => (2, ms),
            Fallback::Failed => (3, 0),
        };
        w.u8(tag);
        w.u32(val);
        w.u32(m.num_clusters);
        w.u32(m.num_outliers);
        w.f64(m.mean_cluster_size);
        w.opt(m.nmi);
        w.u32(m.way);
        w.u32(m.episodes);
        w.opt(m.mean_loss);
        w.opt(m.accuracy_mean);
        w.opt(m.accuracy_std);
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()?;
    if count == 0 || count > 1024 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let dims = (0..count)
        .map(|_| Ok((r.u32()?, r.u32()?)))
        .collect::<Result<Vec<_>>>()?;
    let layers = r.layers(&dims)?;
    let first = r.layers(&dims)?;
    let second = r.layers(&dims)?;
    let step = r.u64()?;
    let activations = (0..count - 1)
        .map(|_| {
            let t = r.u8()?;
            Activation::from_tag(t).ok_or_else(|| Error::Format(format!("unknown activation tag {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let round = r.u32()?;
    let n_hist = r.u32()?;
    let mut history = Vec::with_capacity(n_hist.min(1 << 16));
    for _ in 0..n_hist {
        let round = r.u32()?;
        let epsilon = r.f64()?;
        let tag = r.u8()?;
        let val = r.u32()?;
        let fallback = match tag {
            0 => Fallback::None,
            1 => Fallback::WidenEpsilon(val as u32),
            2 => Fallback::ShrinkMs(val),
            3 => Fallback::Failed,
            t => return Err(Error::Format(format!("unknown fallback tag {t}"))),
        };
        history.push(RoundMetrics {
            round,
            epsilon,
            fallback,
            num_clusters: r.u32()?,
            num_outliers: r.u32()?,
            mean_cluster_size: r.f64()?,
            nmi: r.opt()?,
            way: r.u32()?,
            episodes: r.u32()?,
            mean_loss: r.opt()?,
            accuracy_mean: r.opt()?,
            accuracy_std: r.opt()?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let mut params = ModelParams::from_layers(layers, activations)?;
    params.adam = AdamState {
        first,
        second,
        step,
    };
    Ok(Checkpoint {
        params,
        round,
        history,
    })
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
