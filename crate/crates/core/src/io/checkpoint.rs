use std::collections::BTreeMap;
use std::path::Path;

use super::gzt::{decode, encode, load_gzt, write_atomic};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ModelParams;
use crate::tensor::Tensor;

const ARCH: &str = "meta/arch";
const PARAM: &str = "param/";
const VELOCITY: &str = "velocity/";
const EXTRA: &str = "extra/";

/// A saved network: architecture, parameters, momentum buffers and any
/// auxiliary tensors (such as a distillation projection).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub extras: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            config,
            params,
            extras: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch = self.config.to_json();
        let arch = Tensor::new(&[arch.len()], arch.bytes().map(f32::from).collect())?;
        let mut owned: Vec<(String, &Tensor)> = vec![(ARCH.to_string(), &arch)];
        owned.extend(self.params.iter().map(|(n, t)| (format!("{PARAM}{n}"), t)));
        owned.extend(self.params.velocities().map(|(n, t)| (format!("{VELOCITY}{n}"), t)));
        owned.extend(self.extras.iter().map(|(n, t)| (format!("{EXTRA}{n}"), t)));
        encode(owned.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Parses a checkpoint and checks its tensors against the stored
    /// architecture, and against `expected` when given.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_entries(decode(bytes)?, expected)
    }

    fn from_entries(entries: Vec<(String, Tensor)>, expected: Option<&ModelConfig>) -> Result<Self> {
        let mut arch = None;
        let mut params = ModelParams::new();
        let mut velocities = Vec::new();
        let mut extras = BTreeMap::new();
        for (name, t) in entries {
            if name == ARCH {
                arch = Some(t);
            } else if let Some(n) = name.strip_prefix(PARAM) {
                params.insert(n, t.with_requires_grad())?;
            } else if let Some(n) = name.strip_prefix(VELOCITY) {
                velocities.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(EXTRA) {
                extras.insert(n.to_string(), t);
            } else {
                return Err(Error::Format(format!("unexpected checkpoint entry {name:?}")));
            }
        }
        let arch = arch.ok_or_else(|| Error::MissingTensor(ARCH.into()))?;
        let text: Vec<u8> = arch
            .data()
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Format("architecture record is not a byte string".into()))
                }
            })
            .collect::<Result<_>>()?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("architecture record is not UTF-8".into()))?;
        let config = ModelConfig::from_json(&text)?;
        if let Some(exp) = expected {
            if exp != &config {
                return Err(Error::Config(
                    "checkpoint architecture differs from the requested configuration".into(),
                ));
            }
        }
        check_shapes(&config, &params)?;
        for (n, v) in velocities {
            params.set_velocity(&n, v)?;
        }
        Ok(Checkpoint { config, params, extras })
    }
}

/// Every expected parameter is present with the right shape and nothing else is.
pub fn check_shapes(config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let shapes = config.param_shapes()?;
    for (name, dims) in &shapes {
        let t = params.get(name)?;
        if t.dims() != dims.as_slice() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: dims.clone(),
                actual: t.dims().to_vec(),
            });
        }
    }
    if params.len() != shapes.len() {
        let known: Vec<&str> = shapes.iter().map(|(n, _)| n.as_str()).collect();
        let extra = params.names().find(|n| !known.contains(n)).unwrap_or_default();
        return Err(Error::Format(format!("tensor {extra:?} is not part of the architecture")));
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    Checkpoint::from_entries(load_gzt(path)?, expected)
}
