//! File formats: datasets (`HYD1`), checkpoints (`HYC1`), flat configs and CSV reports.
//! All integers and floats are little-endian.

mod config;
mod report;

use std::fs;
use std::path::Path;

pub use config::{parse_config, RunConfig, CONFIG_KEYS};
pub use report::{
    attack_rows, certificate_rows, certified_accuracy, history_csv, write_report, ReportRow, RADIUS_GRID,
    REPORT_HEADER,
};

use crate::block::{HycasNetwork, NetworkConfig};
use crate::data::Dataset;
use crate::error::{HycasError, Result};
use crate::scalar::Real;
use crate::tensor::{Padding, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"HYD1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYC1";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HycasError::Format(format!("truncated at byte {} (wanted {n} more of {})", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(HycasError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| HycasError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(24 + d.len() * (4 * d.sample_len() + 4));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [d.len(), d.height, d.width, d.channels, d.num_classes] {
        put_u32(&mut out, v)?;
    }
    let per = d.sample_len();
    for (i, &label) in d.labels.iter().enumerate() {
        for v in &d.images[i * per..(i + 1) * per] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&label.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let (count, h, w, c, k) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let per = h * w * c;
    let expected = 24 + count as u128 * (4 * per as u128 + 4);
    if bytes.len() as u128 != expected {
        return Err(HycasError::Format(format!("dataset is {} bytes, header implies {expected}", bytes.len())));
    }
    let mut images = Vec::with_capacity(count * per);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        for chunk in r.take(4 * per)?.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !(0.0..=1.0).contains(&v) {
                return Err(HycasError::Format(format!("sample {i} has pixel {v} outside [0, 1]")));
            }
            images.push(v);
        }
        labels.push(r.u32()?);
    }
    Dataset::new((h, w, c), k, images, labels)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(d)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// One named tensor of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named `f64` tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<f64>) {
        self.tensors.push(NamedTensor { name: name.into(), dims: dims.to_vec(), data });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name).ok_or_else(|| HycasError::Format(format!("checkpoint lacks tensor '{name}'")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(HycasError::Format(format!("tensor '{}' dims {:?} vs {} values", t.name, t.dims, t.data.len())));
            }
            put_u32(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.dims.len())?;
            for &d in &t.dims {
                put_u32(&mut out, d)?;
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(HycasError::Format(format!("checkpoint of {} bytes is too short", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(HycasError::Format(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Reader::new(body);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(HycasError::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.usize()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.usize()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| HycasError::Format(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.usize()?;
            let dims = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| HycasError::Format(format!("tensor '{name}' dims overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| HycasError::Format("payload overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != body.len() {
            return Err(HycasError::Format(format!("{} trailing bytes before the CRC", body.len() - r.pos)));
        }
        Ok(Self { tensors })
    }
}

fn split_seed(seed: u64) -> [f64; 2] {
    [(seed >> 32) as f64, (seed & 0xffff_ffff) as f64]
}

fn join_seed(hi: f64, lo: f64) -> u64 {
    ((hi as u64) << 32) | lo as u64
}

/// Parameters, kernel estimates, architecture and calibration state of a network.
pub fn network_checkpoint<S: Real>(net: &HycasNetwork<S>) -> Checkpoint {
    let c = &net.config;
    let mut ck = Checkpoint::default();
    let [hi, lo] = split_seed(c.seed);
    let meta = vec![
        c.input_hw.0 as f64,
        c.input_hw.1 as f64,
        c.in_channels as f64,
        c.kernel_size as f64,
        c.num_classes as f64,
        match c.padding {
            Padding::Circular => 0.0,
            Padding::Zero => 1.0,
        },
        c.cutoff_rho,
        c.skip_beta,
        f64::from(u8::from(c.fusion_rani)),
        f64::from(u8::from(c.rpfan_guard)),
        f64::from(u8::from(c.rani)),
        hi,
        lo,
    ];
    ck.push("meta.config", &[meta.len()], meta);
    ck.push("meta.channels", &[c.channels.len()], c.channels.iter().map(|&v| v as f64).collect());
    ck.push("meta.calibration", &[2], vec![net.calibrator_gamma, net.lip_bound.unwrap_or(f64::NAN)]);
    net.visit_params(&mut |name, t| ck.push(name, t.shape(), t.to_f64_vec()));
    for (name, k) in net.kernels() {
        ck.push(format!("{name}.sigma_hat"), &[1], vec![k.sigma_hat.map_or(f64::NAN, |v| v.as_f64())]);
    }
    ck
}

/// Rebuilds a network from [`network_checkpoint`] output. Kernels are loaded as stored, without
/// re-normalization, so a tampered checkpoint is left for the audit to catch.
pub fn network_from_checkpoint<S: Real>(ck: &Checkpoint) -> Result<HycasNetwork<S>> {
    let m = &ck.require("meta.config")?.data;
    if m.len() != 13 {
        return Err(HycasError::Format(format!("meta.config has {} entries, expected 13", m.len())));
    }
    let padding = match m[5] {
        0.0 => Padding::Circular,
        1.0 => Padding::Zero,
        other => return Err(HycasError::Format(format!("unknown padding code {other}"))),
    };
    let config = NetworkConfig {
        input_hw: (m[0] as usize, m[1] as usize),
        in_channels: m[2] as usize,
        channels: ck.require("meta.channels")?.data.iter().map(|&v| v as usize).collect(),
        kernel_size: m[3] as usize,
        num_classes: m[4] as usize,
        padding,
        cutoff_rho: m[6],
        skip_beta: m[7],
        fusion_rani: m[8] != 0.0,
        rpfan_guard: m[9] != 0.0,
        rani: m[10] != 0.0,
        seed: join_seed(m[11], m[12]),
    };
    let mut net = HycasNetwork::<S>::new(config)?;
    let mut missing = None;
    let mut mismatch = None;
    net.visit_params_mut(&mut |name, t| match ck.get(name) {
        None => missing = missing.take().or(Some(name.to_string())),
        Some(nt) if nt.dims != t.shape() => {
            mismatch = mismatch.take().or(Some(format!("{name}: stored {:?}, expected {:?}", nt.dims, t.shape())))
        }
        Some(nt) => {
            *t = Tensor::from_f64(&nt.dims, &nt.data).expect("dims checked");
        }
    });
    if let Some(name) = missing {
        return Err(HycasError::Format(format!("checkpoint lacks tensor '{name}'")));
    }
    if let Some(detail) = mismatch {
        return Err(HycasError::Format(format!("shape mismatch for {detail}")));
    }
    for (i, b) in net.blocks.iter_mut().enumerate() {
        let prefix = format!("block{i}");
        for s in &mut b.streams {
            if let Some(k) = &mut s.kernel {
                let name = format!("{prefix}.{}.kernel.sigma_hat", s.kind.name());
                let v = ck.require(&name)?.data.first().copied().unwrap_or(f64::NAN);
                k.sigma_hat = v.is_finite().then(|| S::lit(v));
            }
        }
    }
    let cal = &ck.require("meta.calibration")?.data;
    if cal.len() != 2 {
        return Err(HycasError::Format("meta.calibration must hold two values".into()));
    }
    net.calibrator_gamma = cal[0];
    net.lip_bound = cal[1].is_finite().then_some(cal[1]);
    Ok(net)
}

pub fn save_network<S: Real>(path: &Path, net: &HycasNetwork<S>) -> Result<()> {
    fs::write(path, network_checkpoint(net).encode()?)?;
    Ok(())
}

pub fn load_network<S: Real>(path: &Path) -> Result<HycasNetwork<S>> {
    network_from_checkpoint(&Checkpoint::decode(&fs::read(path)?)?)
}
