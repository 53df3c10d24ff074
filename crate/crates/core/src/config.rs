//! Flat `key = value` run configuration.
//!
//! ```text
//! # desk run
//! arch = desk
//! iterations = 2000
//! lr_initial = 0.001
//! seed = 7
//! ```
//!
//! Keys are the [`TrainConfig`] and [`DistillConfig`] field names plus `arch`
//! (`desk` or `full`), `student` (`desk` or `full`), `ridge_lambda` and
//! `ablate` (`none`, `eyes`, `face` or `facegrid`). `format = 1` is accepted
//! so that [`RunConfig::canonical`] output parses back. Unset keys take the
//! defaults of the chosen architecture scale.

use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, EnabledInputs, StudentConfig};
use crate::training::{DistillConfig, TrainConfig};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(format!("expected desk or full, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: Scale,
    pub student: Scale,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub ridge_lambda: f64,
    /// Input left out of the network, if any.
    pub ablate: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Scale::Desk,
            student: Scale::Desk,
            train: TrainConfig::desk(),
            distill: DistillConfig::default(),
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            ablate: None,
        }
    }
}

fn value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value {v:?}: {e}"))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                file: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(_, seen, _)| *seen == k) {
                return Err(perr(format!("duplicate key {k:?}")));
            }
            pairs.push((i + 1, k, v));
        }

        // The architecture scale picks the defaults every other key overrides.
        let mut cfg = RunConfig::default();
        if let Some(&(line, _, v)) = pairs.iter().find(|(_, k, _)| *k == "arch") {
            cfg.arch = value(v).map_err(|msg| Error::Parse {
                file: origin.to_string(),
                line,
                msg,
            })?;
            if cfg.arch == Scale::Full {
                cfg.train = TrainConfig::paper();
                cfg.student = Scale::Full;
            }
        }
        for (line, k, v) in pairs {
            let t = &mut cfg.train;
            let r = match k {
                "arch" => Ok(()),
                "format" => match v {
                    "1" => Ok(()),
                    _ => Err(format!("unsupported config format {v:?}")),
                },
                "student" => value(v).map(|x| cfg.student = x),
                "iterations" => value(v).map(|x| t.iterations = x),
                "batch_size" => value(v).map(|x| t.batch_size = x),
                "lr_initial" => value(v).map(|x| t.lr_initial = x),
                "lr_drop_iteration" => value(v).map(|x| t.lr_drop_iteration = x),
                "lr_after_drop" => value(v).map(|x| t.lr_after_drop = x),
                "momentum" => value(v).map(|x| t.momentum = x),
                "weight_decay" => value(v).map(|x| t.weight_decay = x),
                "augment_train" => value(v).map(|x| t.augment_train = x),
                "max_shift_frac" => value(v).map(|x| t.max_shift_frac = x),
                "trace_every" => value(v).map(|x| t.trace_every = x),
                "seed" => value(v).map(|x| t.seed = x),
                "alpha" => value(v).map(|x| cfg.distill.alpha = x),
                "beta" => value(v).map(|x| cfg.distill.beta = x),
                "gamma" => value(v).map(|x| cfg.distill.gamma = x),
                "ridge_lambda" => value(v).map(|x| cfg.ridge_lambda = x),
                "ablate" => match v {
                    "none" => Ok(cfg.ablate = None),
                    _ => EnabledInputs::without(v)
                        .map(|_| cfg.ablate = Some(v.to_string()))
                        .map_err(|e| e.to_string()),
                },
                _ => Err(format!("unknown key {k:?}")),
            };
            r.map_err(|msg| Error::Parse {
                file: origin.to_string(),
                line,
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.distill.validate()?;
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::Config("ridge_lambda must be finite and ≥ 0".into()));
        }
        self.architecture()?.validate()
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        let base = match self.arch {
            Scale::Desk => ArchitectureConfig::desk(),
            Scale::Full => ArchitectureConfig::full(),
        };
        Ok(match &self.ablate {
            Some(name) => base.with_inputs(EnabledInputs::without(name)?),
            None => base,
        })
    }

    pub fn student_architecture(&self) -> StudentConfig {
        match self.student {
            Scale::Desk => StudentConfig::desk(),
            Scale::Full => StudentConfig::full(),
        }
    }

    /// Every key with its effective value, one per line in a fixed order.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let d = &self.distill;
        let rows: [(&str, String); 19] = [
            ("arch", self.arch.as_str().into()),
            ("student", self.student.as_str().into()),
            ("iterations", t.iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_initial", t.lr_initial.to_string()),
            ("lr_drop_iteration", t.lr_drop_iteration.to_string()),
            ("lr_after_drop", t.lr_after_drop.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("augment_train", t.augment_train.to_string()),
            ("max_shift_frac", t.max_shift_frac.to_string()),
            ("trace_every", t.trace_every.to_string()),
            ("seed", t.seed.to_string()),
            ("alpha", d.alpha.to_string()),
            ("beta", d.beta.to_string()),
            ("gamma", d.gamma.to_string()),
            ("ridge_lambda", self.ridge_lambda.to_string()),
            ("ablate", self.ablate.clone().unwrap_or_else(|| "none".into())),
            ("format", "1".into()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), so equivalent files hash equal.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_desk_defaults() {
        let c = RunConfig::parse("# nothing\n\n", "t").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train, TrainConfig::desk());
    }

    #[test]
    fn full_scale_takes_paper_schedule_and_keys_override() {
        let c = RunConfig::parse("iterations = 10\narch = full\nlr_drop_iteration = 5", "t").unwrap();
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.student, Scale::Full);
    }

    #[test]
    fn canonical_round_trips() {
        let c = RunConfig::parse("seed = 9\nablate = face\nbeta = 0\n", "t").unwrap();
        let again = RunConfig::parse(&c.canonical(), "t").unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
        assert!(!c.architecture().unwrap().enabled_inputs.face);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("seed = 1\nbogus = 2", 2),
            ("momentum = fast", 1),
            ("seed = 1\n\nseed = 2", 3),
            ("no equals sign", 1),
            ("ablate = nose", 1),
            ("seed = 1\nformat = 2", 2),
        ] {
            match RunConfig::parse(text, "f.cfg") {
                Err(Error::Parse { line: l, file, .. }) => {
                    assert_eq!((l, file.as_str()), (line, "f.cfg"), "{text}")
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn infeasible_values_are_config_errors() {
        let e = RunConfig::parse("iterations = 5\nlr_drop_iteration = 10", "t").unwrap_err();
        assert_eq!(e.kind(), "config");
        let e = RunConfig::parse("alpha = 0\nbeta = 0\ngamma = 0", "t").unwrap_err();
        assert_eq!(e.kind(), "config");
    }
}
