use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{file_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub lr: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub wallclock_s: f64,
}

/// Per-epoch record of a run. Metrics are accuracies for classification
/// objectives and mean losses for instance discrimination and autoencoding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
    pub halted_early: bool,
}

impl TrainingCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn epochs_run(&self) -> usize {
        self.points.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
        for p in &self.points {
            w.serialize(p).map_err(|e| file_err(path, e))?;
        }
        w.flush().map_err(|e| file_err(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
        let points = r.deserialize().collect::<std::result::Result<Vec<CurvePoint>, _>>().map_err(|e| file_err(path, e))?;
        Ok(Self { points, halted_early: false })
    }
}
