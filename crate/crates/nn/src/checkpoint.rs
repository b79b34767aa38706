//! Checkpoint directories: `params.bin`, `config.toml` and `train_log.csv`.
//!
//! `params.bin` layout, little-endian: the 8-byte magic `DCCAPRM1`, a `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, four
//! `u32` dimensions and the `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{build_network, NetConfig, SegNet};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{LogRow, TrainConfig};

pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const MAGIC: &[u8; 8] = b"DCCAPRM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: SegNet,
    pub train: TrainConfig,
}

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let t = store.value(id);
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses a `params.bin` payload into a store of named tensors.
pub fn decode_params(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_owned();
        let shape = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} {shape:?} exceeds the payload")))?;
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(store)
}

/// CSV with header `epoch,step,loss,val_dice`; `val_dice` is empty when there
/// was no validation set.
pub fn log_csv(log: &[LogRow]) -> String {
    let mut s = String::from("epoch,step,loss,val_dice\n");
    for r in log {
        let val = r.val_dice.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.loss, val));
    }
    s
}

pub fn parse_log_csv(text: &str) -> Result<Vec<LogRow>> {
    let bad = |line: &str| Error::Checkpoint(format!("bad log row {line:?}"));
    let mut lines = text.lines();
    if lines.next() != Some("epoch,step,loss,val_dice") {
        return Err(Error::Checkpoint("missing log header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(LogRow {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                step: f[1].parse().map_err(|_| bad(line))?,
                loss: f[2].parse().map_err(|_| bad(line))?,
                val_dice: if f[3].is_empty() {
                    None
                } else {
                    Some(f[3].parse().map_err(|_| bad(line))?)
                },
            })
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_log(dir: &Path, log: &[LogRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(LOG_FILE), log_csv(log).as_bytes())
}

pub fn config_toml(net: &NetConfig, train: &TrainConfig) -> Result<String> {
    let cfg = CheckpointConfig {
        net: net.clone(),
        train: train.clone(),
    };
    toml::to_string(&cfg).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn parse_config_toml(text: &str) -> Result<CheckpointConfig> {
    toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes parameters, configuration and log into `dir`.
pub fn save(dir: &Path, net: &SegNet, train: &TrainConfig, log: &[LogRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(PARAMS_FILE), &encode_params(net.params()))?;
    write(&dir.join(CONFIG_FILE), config_toml(net.config(), train)?.as_bytes())?;
    write_log(dir, log)
}

/// Rebuilds the network from `config.toml` and loads `params.bin` into it.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let text = String::from_utf8(read(&dir.join(CONFIG_FILE))?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let cfg = parse_config_toml(&text)?;
    cfg.train.validate()?;
    let mut net = build_network(&cfg.net, 0)?;
    let archive = decode_params(&read(&dir.join(PARAMS_FILE))?)?;
    net.params_mut().load_values_from(&archive)?;
    Ok(Checkpoint { net, train: cfg.train })
}

pub fn load_log(dir: &Path) -> Result<Vec<LogRow>> {
    let path = dir.join(LOG_FILE);
    let text = String::from_utf8(read(&path)?).map_err(|_| Error::Checkpoint("log is not UTF-8".into()))?;
    parse_log_csv(&text)
}
