use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExplainedVarianceCurve, GeneralizationResult, NeighborList, RandomLabelResult};
use crate::error::{file_err, Result};

/// Everything the diagnostics battery found for one run. Absent sections
/// were not requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub run_id: String,
    pub pretext: String,
    pub dataset: String,
    pub generalization: Option<GeneralizationResult>,
    pub random_labels: Option<RandomLabelResult>,
    pub pca: Vec<ExplainedVarianceCurve>,
    pub knn: Vec<NeighborList>,
    pub id_loss: Option<f64>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| file_err(path, e))
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `n` then one fraction column per curve, named `<split>_<dim>`.
    pub fn pca_csv(&self) -> String {
        let mut out = String::from("n");
        for c in &self.pca {
            out.push_str(&format!(",{}_{}", c.split.map_or("all", |s| s.as_str()), c.dim));
        }
        out.push('\n');
        let mut ns: Vec<usize> = self.pca.iter().flat_map(|c| c.ns.iter().copied()).collect();
        ns.sort_unstable();
        ns.dedup();
        for n in ns {
            out.push_str(&n.to_string());
            for c in &self.pca {
                match c.at(n) {
                    Some(f) => out.push_str(&format!(",{f}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn knn_csv(&self) -> String {
        let mut out = String::from("query_id,rank,image_id,distance,pooled_dim\n");
        for list in &self.knn {
            let mode = list.pooled_dim.map_or("unpooled".to_string(), |d| d.to_string());
            for (rank, n) in list.neighbors.iter().enumerate() {
                out.push_str(&format!("{},{},{},{},{mode}\n", list.query_id, rank + 1, n.image_id, n.distance));
            }
        }
        out
    }

    pub fn generalization_csv(&self) -> Option<String> {
        self.generalization.map(|g| {
            format!(
                "dataset,pretext,pretext_acc_val_half,pretext_acc_test_full,ratio\n{},{},{},{},{}\n",
                self.dataset, self.pretext, g.pretext_acc_val_half, g.pretext_acc_test_full, g.ratio
            )
        })
    }

    pub fn random_labels_csv(&self) -> Option<String> {
        self.random_labels.map(|r| {
            format!(
                "dataset,pretext,normal_train_acc,shuffled_train_acc,gap\n{},{},{},{},{}\n",
                self.dataset,
                self.pretext,
                r.normal_train_acc,
                r.shuffled_train_acc,
                r.gap()
            )
        })
    }

    /// `report.json` plus one CSV per populated section.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
        write(&dir.join("report.json"), &self.to_json()?)?;
        if !self.pca.is_empty() {
            write(&dir.join("pca.csv"), &self.pca_csv())?;
        }
        if !self.knn.is_empty() {
            write(&dir.join("knn.csv"), &self.knn_csv())?;
        }
        if let Some(t) = self.generalization_csv() {
            write(&dir.join("generalization.csv"), &t)?;
        }
        if let Some(t) = self.random_labels_csv() {
            write(&dir.join("random_labels.csv"), &t)?;
        }
        if let Some(l) = self.id_loss {
            write(&dir.join("id_loss.csv"), &format!("dataset,mean_loss\n{},{l}\n", self.dataset))?;
        }
        Ok(())
    }
}
