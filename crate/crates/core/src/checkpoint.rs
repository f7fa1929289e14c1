//! Self-describing checkpoint format shared by the policy, the
//! discriminator, and the feature classifier.
//!
//! Layout: magic + format version + JSON header length + JSON header +
//! raw little-endian array payload. The header names every array with its
//! shape, dtype, and role (value / Adam moments / running buffer), plus the
//! network configuration and scalar trainer state. Loading validates every
//! shape before anything is copied.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::AdamW;
use crate::num::Real;

const MAGIC: &[u8; 4] = b"SCRW";
const FORMAT_VERSION: u32 = 1;
/// Schema of the header contents.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("header decode failure: {0}")]
    Header(String),
    #[error("expected component {expected}, found {found}")]
    WrongComponent { expected: String, found: String },
    #[error("array {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("missing array {0}")]
    MissingArray(String),
    #[error("payload truncated")]
    Truncated,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum ArrayKind {
    Value,
    AdamM1,
    AdamM2,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayDesc {
    pub name: String,
    pub kind: ArrayKind,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    /// "policy" | "discriminator" | "classifier"
    pub component: String,
    pub grid: usize,
    /// Learned width bins; None when the width head is bypassed.
    pub width_bins: Option<usize>,
    pub fixed_width_bin: Option<usize>,
    pub arch: String,
    pub training_step: u64,
    pub arrays: Vec<ArrayDesc>,
    pub scalars: BTreeMap<String, f64>,
}

/// One named tensor queued for writing or produced by reading.
pub struct NamedArray<S> {
    pub name: String,
    pub kind: ArrayKind,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

fn dtype_of<S: Real>() -> &'static str {
    if std::mem::size_of::<S>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn write_checkpoint<S: Real>(
    path: &Path,
    mut header: Header,
    arrays: &[NamedArray<S>],
) -> Result<(), CheckpointError> {
    header.schema_version = SCHEMA_VERSION;
    header.arrays = arrays
        .iter()
        .map(|a| ArrayDesc {
            name: a.name.clone(),
            kind: a.kind.clone(),
            shape: a.shape.clone(),
            dtype: dtype_of::<S>().to_string(),
        })
        .collect();
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for a in arrays {
        for &v in &a.data {
            if dtype_of::<S>() == "f32" {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_checkpoint<S: Real>(
    path: &Path,
) -> Result<(Header, Vec<NamedArray<S>>), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(CheckpointError::Truncated);
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut offset = 16 + header_len;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for desc in &header.arrays {
        let n: usize = desc.shape.iter().product();
        let width = if desc.dtype == "f32" { 4 } else { 8 };
        if bytes.len() < offset + n * width {
            return Err(CheckpointError::Truncated);
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let start = offset + i * width;
            let v = if desc.dtype == "f32" {
                f32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap())
            };
            data.push(S::of_f64(v));
        }
        offset += n * width;
        arrays.push(NamedArray {
            name: desc.name.clone(),
            kind: desc.kind.clone(),
            shape: desc.shape.clone(),
            data,
        });
    }
    Ok((header, arrays))
}

// ============================================================================
// Policy / discriminator adapters
// ============================================================================

use crate::discriminator::Discriminator;
use crate::policy::{PolicyArch, PolicyConfig, PolicyNet, WidthMode};

fn optimizer_scalars<S: Real>(prefix: &str, opt: &AdamW<S>, scalars: &mut BTreeMap<String, f64>) {
    scalars.insert(format!("{prefix}.lr"), opt.lr.as_f64());
    scalars.insert(format!("{prefix}.beta1"), opt.beta1);
    scalars.insert(format!("{prefix}.beta2"), opt.beta2);
    scalars.insert(format!("{prefix}.eps"), opt.eps);
    scalars.insert(format!("{prefix}.weight_decay"), opt.weight_decay.as_f64());
    scalars.insert(format!("{prefix}.step_count"), opt.step_count as f64);
}

fn optimizer_from_scalars<S: Real>(
    prefix: &str,
    scalars: &BTreeMap<String, f64>,
) -> AdamW<S> {
    let get = |k: &str| scalars.get(&format!("{prefix}.{k}")).cloned().unwrap_or(0.0);
    let mut opt = AdamW::new(S::of_f64(get("lr")), S::of_f64(get("weight_decay")))
        .with_betas(get("beta1"), get("beta2"));
    opt.eps = get("eps");
    opt.step_count = get("step_count") as u64;
    opt
}

fn params_to_arrays<S: Real>(
    named: Vec<(String, &mut crate::nn::Param<S>)>,
) -> Vec<NamedArray<S>> {
    let mut arrays = Vec::new();
    for (name, p) in named {
        let shape: Vec<usize> = p.v.shape().to_vec();
        arrays.push(NamedArray {
            name: name.clone(),
            kind: ArrayKind::Value,
            shape: shape.clone(),
            data: p.v.iter().cloned().collect(),
        });
        arrays.push(NamedArray {
            name: format!("{name}.m1"),
            kind: ArrayKind::AdamM1,
            shape: shape.clone(),
            data: p.m1.iter().cloned().collect(),
        });
        arrays.push(NamedArray {
            name: format!("{name}.m2"),
            kind: ArrayKind::AdamM2,
            shape,
            data: p.m2.iter().cloned().collect(),
        });
    }
    arrays
}

fn restore_params<S: Real>(
    named: Vec<(String, &mut crate::nn::Param<S>)>,
    arrays: &[NamedArray<S>],
) -> Result<(), CheckpointError> {
    let index: std::collections::HashMap<&str, &NamedArray<S>> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    for (name, p) in named {
        let expected: Vec<usize> = p.v.shape().to_vec();
        for (suffix, target) in [("", 0usize), (".m1", 1), (".m2", 2)] {
            let key = format!("{name}{suffix}");
            let a = index
                .get(key.as_str())
                .ok_or_else(|| CheckpointError::MissingArray(key.clone()))?;
            if a.shape != expected {
                return Err(CheckpointError::ShapeMismatch {
                    name: key,
                    expected,
                    found: a.shape.clone(),
                });
            }
            let dst = match target {
                0 => &mut p.v,
                1 => &mut p.m1,
                _ => &mut p.m2,
            };
            for (d, &s) in dst.iter_mut().zip(a.data.iter()) {
                *d = s;
            }
        }
    }
    Ok(())
}

fn restore_buffers<S: Real>(
    named: Vec<(String, &mut Vec<S>)>,
    arrays: &[NamedArray<S>],
) -> Result<(), CheckpointError> {
    let index: std::collections::HashMap<&str, &NamedArray<S>> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    for (name, buf) in named {
        let a = index
            .get(name.as_str())
            .ok_or_else(|| CheckpointError::MissingArray(name.clone()))?;
        if a.shape != vec![buf.len()] {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: vec![buf.len()],
                found: a.shape.clone(),
            });
        }
        buf.copy_from_slice(&a.data);
    }
    Ok(())
}

pub fn save_policy<S: Real>(
    path: &Path,
    policy: &mut PolicyNet<S>,
    opt: &AdamW<S>,
    training_step: u64,
    extra_scalars: &BTreeMap<String, f64>,
) -> Result<(), CheckpointError> {
    let mut scalars = extra_scalars.clone();
    optimizer_scalars("adamw", opt, &mut scalars);
    let config = policy.config;
    let mut arrays = params_to_arrays(policy.named_params());
    for (name, buf) in policy.named_buffers() {
        arrays.push(NamedArray {
            name,
            kind: ArrayKind::Buffer,
            shape: vec![buf.len()],
            data: buf.clone(),
        });
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        component: "policy".into(),
        grid: config.grid,
        width_bins: config.width_mode.learned_bins(),
        fixed_width_bin: match config.width_mode {
            WidthMode::Fixed(b) => Some(b),
            WidthMode::Learned(_) => None,
        },
        arch: match config.arch {
            PolicyArch::ResNet => "resnet".into(),
            PolicyArch::Linear => "linear".into(),
        },
        training_step,
        arrays: Vec::new(),
        scalars,
    };
    write_checkpoint(path, header, &arrays)
}

pub fn load_policy<S: Real>(
    path: &Path,
) -> Result<(PolicyNet<S>, AdamW<S>, u64, BTreeMap<String, f64>), CheckpointError> {
    let (header, arrays) = read_checkpoint::<S>(path)?;
    if header.component != "policy" {
        return Err(CheckpointError::WrongComponent {
            expected: "policy".into(),
            found: header.component,
        });
    }
    let width_mode = match (header.width_bins, header.fixed_width_bin) {
        (Some(w), _) => WidthMode::Learned(w),
        (None, Some(b)) => WidthMode::Fixed(b),
        (None, None) => WidthMode::Fixed(0),
    };
    let arch = match header.arch.as_str() {
        "linear" => PolicyArch::Linear,
        _ => PolicyArch::ResNet,
    };
    let config = PolicyConfig { grid: header.grid, width_mode, arch };
    let mut policy = PolicyNet::new(config, 0)
        .map_err(|e| CheckpointError::Header(format!("bad config: {e}")))?;
    restore_params(policy.named_params(), &arrays)?;
    restore_buffers(policy.named_buffers(), &arrays)?;
    let opt = optimizer_from_scalars("adamw", &header.scalars);
    Ok((policy, opt, header.training_step, header.scalars))
}

pub fn save_discriminator<S: Real>(
    path: &Path,
    disc: &mut Discriminator<S>,
    opt: &AdamW<S>,
    training_step: u64,
) -> Result<(), CheckpointError> {
    let mut scalars = BTreeMap::new();
    optimizer_scalars("adam", opt, &mut scalars);
    let grid = disc.grid;
    let mut arrays = params_to_arrays(disc.named_params());
    for (name, buf) in disc.named_buffers() {
        arrays.push(NamedArray {
            name,
            kind: ArrayKind::Buffer,
            shape: vec![buf.len()],
            data: buf.clone(),
        });
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        component: "discriminator".into(),
        grid,
        width_bins: None,
        fixed_width_bin: None,
        arch: "sn-conv".into(),
        training_step,
        arrays: Vec::new(),
        scalars,
    };
    write_checkpoint(path, header, &arrays)
}

pub fn load_discriminator<S: Real>(
    path: &Path,
) -> Result<(Discriminator<S>, AdamW<S>, u64), CheckpointError> {
    let (header, arrays) = read_checkpoint::<S>(path)?;
    if header.component != "discriminator" {
        return Err(CheckpointError::WrongComponent {
            expected: "discriminator".into(),
            found: header.component,
        });
    }
    let mut disc = Discriminator::new(header.grid, 0);
    restore_params(disc.named_params(), &arrays)?;
    restore_buffers(disc.named_buffers(), &arrays)?;
    let opt = optimizer_from_scalars("adam", &header.scalars);
    Ok((disc, opt, header.training_step))
}
