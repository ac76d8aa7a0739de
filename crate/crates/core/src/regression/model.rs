use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpModel, MlrModel};
use crate::dataset::ColumnStats;
use crate::error::{Error, Result};
use crate::feature::Feature;

const FORMAT: &str = "stormcause-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Mlr(MlrModel),
    Mlp(MlpModel),
}

/// A trained head plus the context needed to apply it to raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub format: String,
    pub target: String,
    pub features: Vec<Feature>,
    /// Standardization applied to the inputs before training.
    pub standardization: BTreeMap<String, ColumnStats>,
    pub head: Head,
}

impl RegressionModel {
    pub fn new(target: &str, standardization: BTreeMap<String, ColumnStats>, head: Head) -> Self {
        let features = match &head {
            Head::Mlr(m) => m.features.clone(),
            Head::Mlp(m) => m.features.clone(),
        };
        RegressionModel {
            format: FORMAT.into(),
            target: target.into(),
            features,
            standardization,
            head,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        match &self.head {
            Head::Mlr(m) => m.predict(x),
            Head::Mlp(m) => m.predict(x),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RegressionModel =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("invalid model file: {e}")))?;
        if m.format != FORMAT {
            return Err(Error::Validation(format!("unsupported model format {}", m.format)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{fit_mlp, fit_mlr, MlpConfig};

    #[test]
    fn round_trips_bit_exactly() {
        let f = vec![Feature::new("A", 1), Feature::new("B", 0)];
        let x = vec![vec![0.1, 0.7, -1.3, 2.2, 0.05], vec![1.0, -0.4, 0.33, 0.9, -2.0]];
        let y = [0.3, 1.1, -0.7, 2.0, 1.0 / 3.0];
        let mut stats = BTreeMap::new();
        stats.insert("A".to_string(), ColumnStats { mean: 0.1 + 0.2, std: 1.7 });
        let cfg = MlpConfig { hidden: vec![6; 4], max_epochs: 5, ..Default::default() };
        for head in [
            Head::Mlr(fit_mlr(&f, &x, &y).unwrap()),
            Head::Mlp(fit_mlp(&f, &x, &y, &x, &y, &cfg).unwrap()),
        ] {
            let m = RegressionModel::new("DELV24", stats.clone(), head);
            let back = RegressionModel::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
    }

    #[test]
    fn non_finite_diagnostics_survive() {
        let f = vec![Feature::new("A", 0)];
        let m = fit_mlr(&f, &[vec![0.0, 1.0]], &[1.0, 2.0]).unwrap();
        assert!(m.std_errors[0].is_nan());
        let back = RegressionModel::from_json(&RegressionModel::new("Y", BTreeMap::new(), Head::Mlr(m)).to_json()).unwrap();
        let Head::Mlr(b) = back.head else { panic!() };
        assert!(b.std_errors[0].is_nan());
    }
}
