//! Versioned binary checkpoints.
//!
//! Byte layout (little-endian throughout):
//!
//! ```text
//! magic    4 bytes   "MRFC"
//! version  u16       currently 1
//! then five sections, each:  tag [4 bytes], payload length u64, payload
//!   CFG  model configuration
//!   PAR  parameter tensors (name, shape, values), in store order
//!   STA  batch-norm running statistics
//!   ADM  Adam step counter and first/second moment tensors
//!   MET  epoch counter, base seed, best-OA tracking
//! ```
//!
//! Gradients are not stored: the optimizer zeroes them after every step, so
//! a checkpoint written between epochs always has zero gradients. The RNG
//! state is the pair (base seed, epoch counter): every random stream in
//! training is derived from `(seed, epoch, index)`, so these two values
//! reproduce the remainder of a run exactly.
//!
//! Loads validate magic, version, section order, section lengths, and the
//! parameter layout against the embedded configuration; a truncated file
//! fails with the section it died in, never a silent partial load.

use crate::autodiff::AdamState;
use crate::error::{Error, Result};
use crate::model::{param_count, param_init, MrfgatConfig, NetworkParams};
use crate::train::TrainStateTag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MRFC";
pub const CHECKPOINT_VERSION: u16 = 1;

const SECTION_TAGS: [&[u8; 4]; 5] = [b"CFG\0", b"PAR\0", b"STA\0", b"ADM\0", b"MET\0"];

/// Complete training state: everything needed to resume a run or evaluate.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: MrfgatConfig,
    pub net: NetworkParams,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: u32,
    /// Base seed; together with `epoch` this is the full RNG state (all
    /// training streams are derived from `(seed, epoch, index)`).
    pub seed: u64,
    /// Best test overall accuracy seen at any eval point, NaN-free:
    /// starts at -1 before the first evaluation.
    pub best_oa: f64,
    pub best_epoch: u32,
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_list(out: &mut Vec<u8>, items: &[usize]) {
    push_u32(out, items.len() as u32);
    for &v in items {
        push_u32(out, v as u32);
    }
}

fn encode_cfg(cfg: &MrfgatConfig) -> Vec<u8> {
    let mut out = Vec::new();
    push_u32(&mut out, cfg.num_scales as u32);
    push_list(&mut out, &cfg.neighbor_counts);
    push_list(&mut out, &cfg.scale_channels);
    push_list(&mut out, &cfg.mlp_widths);
    push_u32(&mut out, cfg.global_width as u32);
    push_list(&mut out, &cfg.head_widths);
    push_u32(&mut out, cfg.num_classes as u32);
    push_f64(&mut out, cfg.leaky_slope);
    push_f64(&mut out, cfg.dropout_keep);
    out
}

fn encode_par(net: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    push_u32(&mut out, net.store.len() as u32);
    for (_, p) in net.store.iter() {
        push_u16(&mut out, p.name.len() as u16);
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            push_u32(&mut out, d as u32);
        }
        for &v in p.value.data() {
            push_f64(&mut out, v);
        }
    }
    out
}

fn encode_sta(net: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    push_u32(&mut out, net.stats.len() as u32);
    for s in &net.stats {
        push_u32(&mut out, s.channels() as u32);
        for &v in &s.mean {
            push_f64(&mut out, v);
        }
        for &v in &s.var {
            push_f64(&mut out, v);
        }
    }
    out
}

fn encode_adm(adam: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    push_u64(&mut out, adam.t);
    push_u32(&mut out, adam.m.len() as u32);
    for (m, v) in adam.m.iter().zip(&adam.v) {
        for &x in m.data() {
            push_f64(&mut out, x);
        }
        for &x in v.data() {
            push_f64(&mut out, x);
        }
    }
    out
}

fn encode_met(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    push_u32(&mut out, ckpt.epoch);
    push_u64(&mut out, ckpt.seed);
    push_f64(&mut out, ckpt.best_oa);
    push_u32(&mut out, ckpt.best_epoch);
    out
}

/// Serializes a checkpoint; see the module docs for the layout.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.net.check_config(&ckpt.model_config)?;
    if ckpt.adam.m.len() != ckpt.net.store.len() {
        return Err(Error::Contract(format!(
            "adam state has {} moment tensors for {} parameters",
            ckpt.adam.m.len(),
            ckpt.net.store.len()
        )));
    }
    let sections = [
        encode_cfg(&ckpt.model_config),
        encode_par(&ckpt.net),
        encode_sta(&ckpt.net),
        encode_adm(&ckpt.adam),
        encode_met(ckpt),
    ];
    let mut file = fs::File::create(path)?;
    file.write_all(&CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (tag, payload) in SECTION_TAGS.iter().zip(&sections) {
        file.write_all(*tag)?;
        file.write_all(&(payload.len() as u64).to_le_bytes())?;
        file.write_all(payload)?;
    }
    file.flush()?;
    Ok(())
}

/// Byte cursor over one section with truncation errors naming the section.
struct Cur<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated in {} section",
                self.section
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok(self.u32()? as usize)).collect()
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} section has {} unparsed trailing bytes",
                self.section,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_cfg(buf: &[u8]) -> Result<MrfgatConfig> {
    let mut c = Cur {
        buf,
        pos: 0,
        section: "CFG",
    };
    let cfg = MrfgatConfig {
        num_scales: c.u32()? as usize,
        neighbor_counts: c.list()?,
        scale_channels: c.list()?,
        mlp_widths: c.list()?,
        global_width: c.u32()? as usize,
        head_widths: c.list()?,
        num_classes: c.u32()? as usize,
        leaky_slope: c.f64()?,
        dropout_keep: c.f64()?,
    };
    c.done()?;
    cfg.validate()?;
    Ok(cfg)
}

fn decode_par(buf: &[u8], cfg: &MrfgatConfig) -> Result<NetworkParams> {
    let mut c = Cur {
        buf,
        pos: 0,
        section: "PAR",
    };
    // Rebuild the id layout from the config, then overwrite every value.
    let mut net = param_init(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = c.u32()? as usize;
    if count != net.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters but the config defines {}",
            net.store.len()
        )));
    }
    for (_, param) in net.store.iter_mut() {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::Format(format!("parameter name is not UTF-8: {e}")))?;
        if name != param.name {
            return Err(Error::Format(format!(
                "parameter order mismatch: file has {name:?}, config expects {:?}",
                param.name
            )));
        }
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        if shape != param.value.shape() {
            return Err(Error::Format(format!(
                "parameter {name:?} has shape {shape:?}, config expects {:?}",
                param.value.shape()
            )));
        }
        let values = c.f64s(param.value.numel())?;
        param.value.data_mut().copy_from_slice(&values);
        param.grad.data_mut().fill(0.0);
    }
    c.done()?;
    debug_assert_eq!(net.store.scalar_count(), param_count(cfg));
    Ok(net)
}

fn decode_sta(buf: &[u8], net: &mut NetworkParams) -> Result<()> {
    let mut c = Cur {
        buf,
        pos: 0,
        section: "STA",
    };
    let count = c.u32()? as usize;
    if count != net.stats.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} batch-norm stats, config defines {}",
            net.stats.len()
        )));
    }
    for s in &mut net.stats {
        let channels = c.u32()? as usize;
        if channels != s.channels() {
            return Err(Error::Format(format!(
                "batch-norm stats have {channels} channels, config expects {}",
                s.channels()
            )));
        }
        s.mean = c.f64s(channels)?;
        s.var = c.f64s(channels)?;
    }
    c.done()
}

fn decode_adm(buf: &[u8], net: &NetworkParams) -> Result<AdamState> {
    let mut c = Cur {
        buf,
        pos: 0,
        section: "ADM",
    };
    let mut adam = AdamState::new(&net.store);
    adam.t = c.u64()?;
    let count = c.u32()? as usize;
    if count != adam.m.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} Adam moment pairs, config defines {}",
            adam.m.len()
        )));
    }
    for (m, v) in adam.m.iter_mut().zip(&mut adam.v) {
        let mv = c.f64s(m.numel())?;
        m.data_mut().copy_from_slice(&mv);
        let vv = c.f64s(v.numel())?;
        v.data_mut().copy_from_slice(&vv);
    }
    c.done()?;
    Ok(adam)
}

fn decode_met(buf: &[u8]) -> Result<TrainStateTag> {
    let mut c = Cur {
        buf,
        pos: 0,
        section: "MET",
    };
    let tag = TrainStateTag {
        epoch: c.u32()?,
        seed: c.u64()?,
        best_oa: c.f64()?,
        best_epoch: c.u32()?,
    };
    c.done()?;
    Ok(tag)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 6 {
        return Err(Error::Format("checkpoint truncated in header".into()));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint: magic {:?} (expected {CHECKPOINT_MAGIC:?})",
            &bytes[0..4]
        )));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let mut pos = 6usize;
    let mut payloads: Vec<&[u8]> = Vec::with_capacity(5);
    for (i, tag) in SECTION_TAGS.iter().enumerate() {
        let name = std::str::from_utf8(&tag[..3]).unwrap();
        if pos + 12 > bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated before {name} section"
            )));
        }
        if &bytes[pos..pos + 4] != *tag {
            return Err(Error::Format(format!(
                "expected {name} section tag at offset {pos}, found {:?}",
                &bytes[pos..pos + 4]
            )));
        }
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        pos += 12;
        if pos + len > bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated in {name} section"
            )));
        }
        payloads.push(&bytes[pos..pos + len]);
        let _ = i;
        pos += len;
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes after MET section",
            bytes.len() - pos
        )));
    }
    let model_config = decode_cfg(payloads[0])?;
    let mut net = decode_par(payloads[1], &model_config)?;
    decode_sta(payloads[2], &mut net)?;
    let adam = decode_adm(payloads[3], &net)?;
    let tag = decode_met(payloads[4])?;
    Ok(Checkpoint {
        model_config,
        net,
        adam,
        epoch: tag.epoch,
        seed: tag.seed,
        best_oa: tag.best_oa,
        best_epoch: tag.best_epoch,
    })
}
