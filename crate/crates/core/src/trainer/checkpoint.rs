//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SEPCKPT\0" | version u32 | topology (u32 len + UTF-8) | kappa f64
//! n_classes u32 | n_perclass u32 | seed u64 | epoch u64
//! n_tensors u32 | per tensor: rank u32, dims u64 × rank, values f64 × len
//! optimizer kind u8 (0 sgd, 1 adamw) | lr f64 | weight_decay f64 | step u64
//! adamw only: first moments, then second moments, tensor layout as above
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::model::{Network, Params, Topology};
use crate::trainer::{Optimizer, OptimizerKind};

pub const MAGIC: &[u8; 8] = b"SEPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Optimizer,
    pub n_classes: usize,
    pub n_perclass: usize,
    pub seed: u64,
    pub epoch: u64,
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_params(w: &mut impl Write, p: &Params) -> io::Result<()> {
    put_u32(w, p.0.len() as u32)?;
    for t in &p.0 {
        put_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            put_u64(w, d as u64)?;
        }
        for &v in t.data() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_params(r: &mut impl Read) -> Result<Params> {
    let n = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = get_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank} in checkpoint")));
        }
        let shape = (0..rank)
            .map(|_| get_u64(r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| get_f64(r))
            .collect::<io::Result<Vec<_>>>()?;
        out.push(Tensor::new(shape, data)?);
    }
    Ok(Params(out))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write(&mut w).expect("writing to a Vec cannot fail");
        w
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        let topo = self.network.topology.to_string();
        put_u32(w, topo.len() as u32)?;
        w.write_all(topo.as_bytes())?;
        put_f64(w, self.network.kappa)?;
        put_u32(w, self.n_classes as u32)?;
        put_u32(w, self.n_perclass as u32)?;
        put_u64(w, self.seed)?;
        put_u64(w, self.epoch)?;
        put_params(w, &self.network.params)?;
        let o = &self.optimizer;
        w.write_all(&[match o.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::AdamW => 1,
        }])?;
        put_f64(w, o.lr)?;
        put_f64(w, o.weight_decay)?;
        put_u64(w, o.step)?;
        if let (Some(m), Some(v)) = (&o.m, &o.v) {
            put_params(w, m)?;
            put_params(w, v)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let magic: [u8; 8] = get(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let n = get_u32(&mut r)? as usize;
        if n > r.len() {
            return Err(Error::Format("topology descriptor truncated".into()));
        }
        let (topo_bytes, rest) = r.split_at(n);
        r = rest;
        let topology: Topology = std::str::from_utf8(topo_bytes)
            .map_err(|_| Error::Format("topology descriptor is not UTF-8".into()))?
            .parse()?;
        let kappa = get_f64(&mut r)?;
        let n_classes = get_u32(&mut r)? as usize;
        let n_perclass = get_u32(&mut r)? as usize;
        let seed = get_u64(&mut r)?;
        let epoch = get_u64(&mut r)?;
        let params = get_params(&mut r)?;
        let network = Network::with_params(topology, params, kappa)?;
        let kind = match get::<1>(&mut r)?[0] {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::AdamW,
            k => return Err(Error::Format(format!("unknown optimizer tag {k}"))),
        };
        let lr = get_f64(&mut r)?;
        let weight_decay = get_f64(&mut r)?;
        let step = get_u64(&mut r)?;
        let (m, v) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::AdamW => (Some(get_params(&mut r)?), Some(get_params(&mut r)?)),
        };
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                r.len()
            )));
        }
        Ok(Self {
            network,
            optimizer: Optimizer {
                kind,
                lr,
                weight_decay,
                step,
                m,
                v,
            },
            n_classes,
            n_perclass,
            seed,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
