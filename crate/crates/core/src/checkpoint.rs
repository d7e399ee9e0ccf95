//! Stage checkpoint container.
//!
//! Layout: the 8-byte magic `P360CKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header and
//! finally every tensor as little-endian `f32` in header order. The header
//! lists each tensor's name, parameter group, kind, shape and element offset,
//! plus an FNV-1a checksum per parameter group and per optimizer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::fov::FovClassSpec;
use crate::generator::{group_of, GeneratorConfig};
use crate::geometry::FovScaleLaw;
use crate::nn::{Adam, AdamConfig, AdamState, Module, Tensor};
use crate::training::TrainConfig;
use crate::{Error, Result, Stage};

pub const MAGIC: &[u8; 8] = b"P360CKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything besides tensors needed to rebuild the networks and resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub fov_classes: FovClassSpec,
    pub fov_input_size: usize,
    pub fov_law: FovScaleLaw,
    pub fill_value: f32,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub steps: u64,
    pub moments: BTreeMap<String, AdamState<f32>>,
}

impl OptimizerState {
    pub fn from_adam(adam: &Adam<f32>) -> Self {
        Self {
            config: adam.config(),
            steps: adam.steps(),
            moments: adam.state().clone(),
        }
    }

    pub fn into_adam(self) -> Adam<f32> {
        Adam::from_parts(self.config, self.steps, self.moments)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageCheckpoint {
    pub stage: Stage,
    /// Optimizer steps completed within `stage`.
    pub step: u64,
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, Tensor<f32>>,
    /// Keyed by optimizer role (`g`, `d`, `fov`).
    pub optimizers: BTreeMap<String, OptimizerState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    group: String,
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<String>,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: Stage,
    step: u64,
    meta: CheckpointMeta,
    optimizers: BTreeMap<String, OptimizerHeader>,
    checksums: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv_tensor(h: &mut u64, name: &str, t: &Tensor<f32>) {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            *h ^= *b as u64;
            *h = h.wrapping_mul(PRIME);
        }
    };
    feed(name.as_bytes());
    for d in t.shape() {
        feed(&(*d as u64).to_le_bytes());
    }
    for v in t.data() {
        feed(&v.to_le_bytes());
    }
}

/// FNV-1a over each group's parameter names, shapes and values.
pub fn group_checksums(params: &BTreeMap<String, Tensor<f32>>) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for (name, t) in params {
        fnv_tensor(out.entry(group_of(name).to_string()).or_insert(FNV_OFFSET), name, t);
    }
    out
}

/// Checksum keys for optimizer state, kept apart from parameter groups.
fn optimizer_checksums(opts: &BTreeMap<String, OptimizerState>) -> BTreeMap<String, u64> {
    opts.iter()
        .map(|(role, o)| {
            let mut h = FNV_OFFSET;
            for (name, st) in &o.moments {
                fnv_tensor(&mut h, name, &st.m);
                fnv_tensor(&mut h, name, &st.v);
            }
            (format!("optimizer:{role}"), h)
        })
        .collect()
}

/// Named parameter values of a module.
pub fn params_of<M: Module<f32> + ?Sized>(m: &M) -> BTreeMap<String, Tensor<f32>> {
    m.named_values("").into_iter().collect()
}

impl StageCheckpoint {
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.params.keys().map(|k| group_of(k).to_string()).collect();
        g.dedup();
        g
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.params.keys().any(|k| group_of(k) == group)
    }

    pub fn checksums(&self) -> BTreeMap<String, u64> {
        group_checksums(&self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload: Vec<&Tensor<f32>> = Vec::new();
        let mut offset = 0;
        for (name, t) in &self.params {
            entries.push(Entry {
                name: name.clone(),
                group: group_of(name).to_string(),
                kind: Kind::Param,
                optimizer: None,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            payload.push(t);
        }
        for (role, opt) in &self.optimizers {
            for (name, st) in &opt.moments {
                for (kind, t) in [(Kind::AdamM, &st.m), (Kind::AdamV, &st.v)] {
                    entries.push(Entry {
                        name: name.clone(),
                        group: group_of(name).to_string(),
                        kind,
                        optimizer: Some(role.clone()),
                        shape: t.shape().to_vec(),
                        offset,
                    });
                    offset += t.len();
                    payload.push(t);
                }
            }
        }
        let header = Header {
            stage: self.stage,
            step: self.step,
            meta: self.meta.clone(),
            optimizers: self
                .optimizers
                .iter()
                .map(|(k, o)| {
                    (
                        k.clone(),
                        OptimizerHeader {
                            config: o.config,
                            steps: o.steps,
                        },
                    )
                })
                .collect(),
            checksums: self
                .checksums()
                .into_iter()
                .chain(optimizer_checksums(&self.optimizers))
                .map(|(k, v)| (k, format!("{v:016x}")))
                .collect(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let payload = &bytes[20 + hlen..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let read = |e: &Entry| -> Result<Tensor<f32>> {
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(4 * e.offset..4 * (e.offset + n))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(&e.shape, data)
        };
        let mut params = BTreeMap::new();
        let mut optimizers: BTreeMap<String, OptimizerState> = header
            .optimizers
            .into_iter()
            .map(|(k, o)| {
                (
                    k,
                    OptimizerState {
                        config: o.config,
                        steps: o.steps,
                        moments: BTreeMap::new(),
                    },
                )
            })
            .collect();
        let mut pending: BTreeMap<(String, String), (Option<Tensor<f32>>, Option<Tensor<f32>>)> = BTreeMap::new();
        for e in &header.tensors {
            let t = read(e)?;
            match e.kind {
                Kind::Param => {
                    params.insert(e.name.clone(), t);
                }
                Kind::AdamM | Kind::AdamV => {
                    let role = e
                        .optimizer
                        .clone()
                        .ok_or_else(|| Error::Checkpoint(format!("moment `{}` without optimizer", e.name)))?;
                    let slot = pending.entry((role, e.name.clone())).or_default();
                    if e.kind == Kind::AdamM {
                        slot.0 = Some(t);
                    } else {
                        slot.1 = Some(t);
                    }
                }
            }
        }
        for ((role, name), (m, v)) in pending {
            let (Some(m), Some(v)) = (m, v) else {
                return Err(Error::Checkpoint(format!("incomplete optimizer moments for `{name}`")));
            };
            optimizers
                .get_mut(&role)
                .ok_or_else(|| Error::Checkpoint(format!("moments for unknown optimizer `{role}`")))?
                .moments
                .insert(name, AdamState { m, v });
        }
        let ckpt = StageCheckpoint {
            stage: header.stage,
            step: header.step,
            meta: header.meta,
            params,
            optimizers,
        };
        let mut actual = ckpt.checksums();
        actual.extend(optimizer_checksums(&ckpt.optimizers));
        for (group, want) in &header.checksums {
            match actual.get(group) {
                Some(got) if format!("{got:016x}") == *want => {}
                _ => return Err(Error::Checkpoint(format!("checksum mismatch in `{group}`"))),
            }
        }
        Ok(ckpt)
    }

    /// Write to a sibling temp file, then rename over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
