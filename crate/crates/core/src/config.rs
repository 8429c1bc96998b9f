//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guided::DagfConfig;
use crate::optim::{OptimHyper, ScheduleConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: DagfConfig,
    pub optim: OptimHyper,
    pub schedule: ScheduleConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training pairs, `<data_root>/degraded` and `<data_root>/clean`.
    pub data_root: PathBuf,
    /// Validation pairs in the same layout; the training pairs when absent.
    pub val_root: Option<PathBuf>,
    pub loss: LossKind,
    pub pretrain_checkpoint: Option<PathBuf>,
    /// Checkpoints and the metrics log go here.
    pub output_dir: PathBuf,
    /// Random aligned `[H, W]` crops; full images when absent.
    pub crop: Option<[usize; 2]>,
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: DagfConfig::default(),
            optim: OptimHyper::default(),
            schedule: ScheduleConfig::default(),
            epochs: 960,
            batch_size: 4,
            seed: 0,
            data_root: PathBuf::from("data/train"),
            val_root: None,
            loss: LossKind::L1,
            pretrain_checkpoint: None,
            output_dir: PathBuf::from("runs/default"),
            crop: None,
            augment: true,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile.
    pub fn tiny() -> Self {
        Self {
            model: DagfConfig::tiny(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.schedule.validate()?;
        if self.epochs == 0 {
            return Err(field("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be >= 1"));
        }
        if let Some([h, w]) = self.crop {
            let m = self.model.size_multiple();
            if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
                return Err(field("crop", &format!("extents must be positive multiples of {m}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::ConfigField {
                path: if path == "." { "<root>".into() } else { path },
                msg: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_root);
        fix(&mut cfg.output_dir);
        cfg.val_root.as_mut().map(fix);
        cfg.pretrain_checkpoint.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn field(path: &str, msg: &str) -> Error {
    Error::ConfigField {
        path: path.into(),
        msg: msg.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_names_its_path() {
        let err = RunConfig::from_json(r#"{"model": {"lrnet": {"chanels": 16}}}"#).unwrap_err();
        match err {
            Error::ConfigField { path, .. } => assert_eq!(path, "model.lrnet.chanels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_its_path() {
        let err = RunConfig::from_json(r#"{"optim": {"lr": "fast"}}"#).unwrap_err();
        assert!(matches!(err, Error::ConfigField { ref path, .. } if path == "optim.lr"), "{err:?}");
    }

    #[test]
    fn invariants_checked() {
        assert!(RunConfig::from_json(r#"{"epochs": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"downsample_factor": 0}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::tiny();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }
}
