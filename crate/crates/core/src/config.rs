//! JSON run configuration.
//!
//! ```json
//! {
//!   "arch": "mv1",
//!   "alpha": 1.0,
//!   "num_classes": 1000,
//!   "ulsam": {"g": 4, "positions": ["8:1", "9:1", "11"]}
//! }
//! ```
//!
//! Optional sections: `"seed"`, `"input_size"`, `"train"` (see
//! [`TrainConfig`]), `"dataset"` and `"eval_dataset"` (see
//! [`DatasetSource`]).

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{build_mv1, build_mv2, Arch, ModelGraph, PositionDirective};
use crate::tensor::Element;
use crate::train::{DatasetSource, TrainConfig};

fn default_alpha() -> f64 {
    1.0
}
fn default_num_classes() -> usize {
    1000
}
fn default_input_size() -> usize {
    224
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlsamSection {
    pub g: usize,
    #[serde(default)]
    pub positions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: Arch,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Square input resolution used by cost analysis.
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default)]
    pub ulsam: Option<UlsamSection>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub eval_dataset: Option<DatasetSource>,
}

impl RunConfig {
    pub fn new(arch: Arch) -> Self {
        RunConfig {
            arch,
            alpha: default_alpha(),
            num_classes: default_num_classes(),
            seed: 0,
            input_size: default_input_size(),
            ulsam: None,
            train: None,
            dataset: None,
            eval_dataset: None,
        }
    }

    /// Parse and validate. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                Error::config(format!("config: {inner}"))
            } else {
                Error::config(format!("config field `{path}`: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn directives(&self) -> Result<Vec<PositionDirective>> {
        self.ulsam
            .as_ref()
            .map_or(Ok(Vec::new()), |u| u.positions.iter().map(|p| p.parse()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("config field `alpha`: must be in (0, 1], got {}", self.alpha)));
        }
        if self.arch == Arch::Mv2 && self.alpha != 1.0 {
            return Err(Error::config(format!(
                "config field `alpha`: mv2 is built at width 1.0 only, got {}",
                self.alpha
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::config("config field `num_classes`: must be at least 1"));
        }
        if self.input_size == 0 {
            return Err(Error::config("config field `input_size`: must be at least 1"));
        }
        if let Some(u) = &self.ulsam {
            if u.g == 0 {
                return Err(Error::config("config field `ulsam.g`: must be at least 1"));
            }
        }
        self.directives()?;
        if let Some(t) = &self.train {
            t.validate()?;
        }
        Ok(())
    }

    /// Build the network, with ULSAM blocks placed.
    pub fn build_graph<T: Element>(&self) -> Result<ModelGraph<T>> {
        let mut graph = match self.arch {
            Arch::Mv1 => build_mv1(self.alpha, self.num_classes, self.seed)?,
            Arch::Mv2 => build_mv2(self.num_classes, self.seed)?,
        };
        if let Some(u) = &self.ulsam {
            graph.apply_ulsam(&self.directives()?, u.g)?;
        }
        Ok(graph)
    }

    /// The `train` section (or defaults) with the run seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone().unwrap_or_default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_full() {
        let c = RunConfig::from_json(r#"{"arch": "mv2"}"#).unwrap();
        assert_eq!((c.alpha, c.num_classes, c.input_size), (1.0, 1000, 224));
        let c = RunConfig::from_json(
            r#"{"arch":"mv1","alpha":0.5,"num_classes":10,"ulsam":{"g":4,"positions":["8:1","11"]},
                "train":{"epochs":2},"dataset":{"kind":"synthetic","classes":10,"samples":20,"image_size":8}}"#,
        )
        .unwrap();
        assert_eq!(c.directives().unwrap().len(), 2);
        assert_eq!(c.train_config().epochs, 2);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"arch":"mv1","alpha":"big"}"#, "alpha"),
            (r#"{"arch":"mv1","alpha":0}"#, "alpha"),
            (r#"{"arch":"mv3"}"#, "arch"),
            (r#"{"arch":"mv1","colour":1}"#, "colour"),
            (r#"{"arch":"mv1","ulsam":{"g":0}}"#, "ulsam.g"),
            (r#"{"arch":"mv1","train":{"lr":-1}}"#, "lr"),
            (r#"{"arch":"mv1","dataset":{"kind":"synthetic","classes":2}}"#, "dataset"),
        ];
        for (text, field) in cases {
            let err = RunConfig::from_json(text).unwrap_err().to_string();
            assert!(err.contains(field), "{text}: {err}");
        }
    }

    #[test]
    fn bad_position_is_a_directive_error() {
        let err = RunConfig::from_json(r#"{"arch":"mv1","ulsam":{"g":4,"positions":["9:2"]}}"#).unwrap_err();
        assert!(matches!(err, Error::Directive { .. }));
    }
}
