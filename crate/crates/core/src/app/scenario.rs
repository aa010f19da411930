use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accuracy {
    Low,
    Medium,
    High,
}

/// One deployment scenario: camera rig, frame rate and compute budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub num_classes: usize,
    pub n_cameras: usize,
    pub fps_per_camera: usize,
    /// Informational only; does not enter the search.
    pub required_accuracy: Accuracy,
    pub budget_gops: f64,
    pub max_iterations: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl ScenarioSpec {
    pub fn images_per_second(&self) -> usize {
        self.n_cameras * self.fps_per_camera
    }

    pub fn workload(&self) -> Workload {
        Workload {
            n_cameras: self.n_cameras,
            fps_per_camera: self.fps_per_camera,
            budget_gops: self.budget_gops,
            max_iterations: self.max_iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::field("num_classes", "must be >= 1"));
        }
        if self.n_cameras == 0 {
            return Err(Error::field("n_cameras", "must be >= 1"));
        }
        if self.fps_per_camera == 0 {
            return Err(Error::field("fps_per_camera", "must be >= 1"));
        }
        if !self.budget_gops.is_finite() || self.budget_gops <= 0.0 {
            return Err(Error::field("budget_gops", format!("must be > 0, got {}", self.budget_gops)));
        }
        if self.max_iterations == 0 {
            return Err(Error::field("max_iterations", "must be >= 1"));
        }
        for (field, v) in [("input_h", self.input_h), ("input_w", self.input_w)] {
            if v == 0 || v % 32 != 0 {
                return Err(Error::field(field, format!("must be a positive multiple of 32, got {v}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| Error::from_json(origin, e))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioSpec::parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RURAL: &str = r#"{"name":"rural","num_classes":2,"n_cameras":1,"fps_per_camera":30,
        "required_accuracy":"high","budget_gops":120,"max_iterations":200,"input_h":512,"input_w":1024}"#;

    #[test]
    fn parses_and_validates() {
        let s = ScenarioSpec::parse(RURAL, Path::new("rural.json")).unwrap();
        assert_eq!(s.num_classes, 2);
        assert_eq!(s.images_per_second(), 30);
    }

    #[test]
    fn negative_budget_names_field() {
        let text = RURAL.replace("\"budget_gops\":120", "\"budget_gops\":-1");
        match ScenarioSpec::parse(&text, Path::new("x.json")) {
            Err(Error::InvalidField { field, .. }) => assert_eq!(field, "budget_gops"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = RURAL.replace("\"name\"", "\"colour\":1,\"name\"");
        assert!(matches!(ScenarioSpec::parse(&text, Path::new("x.json")), Err(Error::Parse { .. })));
    }

    #[test]
    fn input_must_divide_by_32() {
        let text = RURAL.replace("\"input_h\":512", "\"input_h\":500");
        assert!(matches!(
            ScenarioSpec::parse(&text, Path::new("x.json")),
            Err(Error::InvalidField { ref field, .. }) if field == "input_h"
        ));
    }
}
