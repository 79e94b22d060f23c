//! Networked observational dataset and its on-disk layout.
//!
//! A dataset directory holds a `manifest.json` naming the component files:
//! a sparse feature table (one line per node of space-separated
//! `index:value` pairs), a tab-separated edge list, and a headerless CSV of
//! per-unit columns `t,y_f,mu0,mu1`. Latent confounders, when present, are
//! written to a side file that models never read. Floats are written in
//! Rust's shortest round-trip form, so save/load is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub graph: Graph,
    pub treatment: Vec<u8>,
    /// Observed (factual) outcomes.
    pub outcomes: Vec<f64>,
    /// Noiseless potential outcomes under control, when ground truth exists.
    pub mu0: Option<Vec<f64>>,
    /// Noiseless potential outcomes under treatment.
    pub mu1: Option<Vec<f64>>,
    /// Hidden confounders; evaluation-only.
    pub latent: Option<Matrix>,
    pub gen_config: Option<GenConfig>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    /// Ground-truth per-unit effects mu1 - mu0, when available.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        match (&self.mu0, &self.mu1) {
            (Some(mu0), Some(mu1)) => Some(mu1.iter().zip(mu0).map(|(a, b)| a - b).collect()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.graph.node_count() != n {
            return Err(Error::contract(format!(
                "graph has {} nodes but features have {n} rows",
                self.graph.node_count()
            )));
        }
        if self.treatment.len() != n || self.outcomes.len() != n {
            return Err(Error::contract(
                "treatment and outcome lengths must match the unit count",
            ));
        }
        if self.treatment.iter().any(|&t| t > 1) {
            return Err(Error::contract("treatment entries must be 0 or 1"));
        }
        for arr in [&self.mu0, &self.mu1].into_iter().flatten() {
            if arr.len() != n {
                return Err(Error::contract(
                    "ground-truth arrays must have one entry per unit",
                ));
            }
        }
        if !self.features.is_finite() || self.outcomes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    nodes: usize,
    feature_dim: usize,
    features: String,
    edges: String,
    arrays: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_config: Option<GenConfig>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn features_to_sparse_text(features: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..features.rows() {
        let row = features.row_slice(i);
        let mut first = true;
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{j}:{}", fmt_f64(v)));
                first = false;
            }
        }
        out.push('\n');
    }
    out
}

fn features_from_sparse_text(text: &str, dim: usize, source: &str) -> Result<Matrix> {
    let lines: Vec<&str> = text.lines().collect();
    let mut m = Matrix::zeros(lines.len(), dim);
    for (i, line) in lines.iter().enumerate() {
        for pair in line.split_whitespace() {
            let err = || Error::Parse {
                path: source.to_string(),
                line: i + 1,
                detail: format!("expected `index:value`, got `{pair}`"),
            };
            let (idx, value) = pair.split_once(':').ok_or_else(err)?;
            let j: usize = idx.parse().map_err(|_| err())?;
            let v: f64 = value.parse().map_err(|_| err())?;
            if j >= dim {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    detail: format!("feature index {j} out of {dim}"),
                });
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row_slice(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn matrix_from_csv(text: &str, source: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    detail: format!("bad number `{cell}`"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Parses a headerless single-column CSV of 0/1 entries.
pub fn read_treatment_column(text: &str, source: &str) -> Result<Vec<u8>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| match line.trim() {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                detail: format!("treatment entries must be 0 or 1, got `{other}`"),
            }),
        })
        .collect()
}

impl Dataset {
    /// Writes `manifest.json` plus the component files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("features.txt"),
            features_to_sparse_text(&self.features),
        )?;
        fs::write(dir.join("edges.tsv"), self.graph.to_edge_list())?;

        let n = self.n();
        let mut arrays = String::new();
        for i in 0..n {
            arrays.push_str(&format!("{}", self.treatment[i]));
            arrays.push(',');
            arrays.push_str(&fmt_f64(self.outcomes[i]));
            if let (Some(mu0), Some(mu1)) = (&self.mu0, &self.mu1) {
                arrays.push(',');
                arrays.push_str(&fmt_f64(mu0[i]));
                arrays.push(',');
                arrays.push_str(&fmt_f64(mu1[i]));
            }
            arrays.push('\n');
        }
        fs::write(dir.join("arrays.csv"), arrays)?;

        let latent = match &self.latent {
            Some(z) => {
                fs::write(dir.join("latent.csv"), matrix_to_csv(z))?;
                Some("latent.csv".to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            nodes: n,
            feature_dim: self.features.cols(),
            features: "features.txt".to_string(),
            edges: "edges.tsv".to_string(),
            arrays: "arrays.csv".to_string(),
            latent,
            gen_config: self.gen_config.clone(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Loads a dataset from its manifest; component paths resolve relative
    /// to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |name: &str| -> PathBuf { dir.join(name) };

        let features_text = fs::read_to_string(resolve(&manifest.features))?;
        let features =
            features_from_sparse_text(&features_text, manifest.feature_dim, &manifest.features)?;
        if features.rows() != manifest.nodes {
            return Err(Error::contract(format!(
                "manifest says {} nodes, features file has {}",
                manifest.nodes,
                features.rows()
            )));
        }

        let edges_text = fs::read_to_string(resolve(&manifest.edges))?;
        let edges = Graph::parse_edge_list(&edges_text, &manifest.edges)?;
        let graph = Graph::new(manifest.nodes, edges)?;

        let arrays_text = fs::read_to_string(resolve(&manifest.arrays))?;
        let arrays = matrix_from_csv(&arrays_text, &manifest.arrays)?;
        if arrays.rows() != manifest.nodes {
            return Err(Error::contract(format!(
                "manifest says {} nodes, arrays file has {} rows",
                manifest.nodes,
                arrays.rows()
            )));
        }
        if arrays.cols() != 2 && arrays.cols() != 4 {
            return Err(Error::contract(format!(
                "arrays file must have columns t,y_f[,mu0,mu1]; found {}",
                arrays.cols()
            )));
        }
        let mut treatment = Vec::with_capacity(arrays.rows());
        for i in 0..arrays.rows() {
            let t = arrays[(i, 0)];
            if t != 0.0 && t != 1.0 {
                return Err(Error::contract(format!("treatment entry {t} at unit {i}")));
            }
            treatment.push(t as u8);
        }
        let outcomes: Vec<f64> = (0..arrays.rows()).map(|i| arrays[(i, 1)]).collect();
        let (mu0, mu1) = if arrays.cols() == 4 {
            (
                Some((0..arrays.rows()).map(|i| arrays[(i, 2)]).collect()),
                Some((0..arrays.rows()).map(|i| arrays[(i, 3)]).collect()),
            )
        } else {
            (None, None)
        };

        let latent = match &manifest.latent {
            Some(name) => {
                let text = fs::read_to_string(resolve(name))?;
                Some(matrix_from_csv(&text, name)?)
            }
            None => None,
        };

        let dataset = Dataset {
            features,
            graph,
            treatment,
            outcomes,
            mu0,
            mu1,
            latent,
            gen_config: manifest.gen_config,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let cfg = GenConfig {
            nodes: 60,
            feature_dim: 12,
            seed: 77,
            ..GenConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let dir = std::env::temp_dir().join("gial_dataset_roundtrip");
        let _ = fs::remove_dir_all(&dir);
        data.save(&dir).unwrap();
        let loaded = Dataset::load(&dir.join("manifest.json")).unwrap();
        assert_eq!(loaded, data);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn sparse_feature_text_round_trips() {
        let m = Matrix::from_rows(&[
            vec![0.0, 1.5, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![-2.25, 0.0, 1.0 / 3.0],
        ])
        .unwrap();
        let text = features_to_sparse_text(&m);
        let back = features_from_sparse_text(&text, 3, "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn feature_parse_errors_carry_line_numbers() {
        let err = features_from_sparse_text("0:1.0\n5:bad\n", 8, "features.txt").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn treatment_column_parser_validates() {
        assert_eq!(
            read_treatment_column("1\n0\n1\n", "t.csv").unwrap(),
            vec![1, 0, 1]
        );
        assert!(read_treatment_column("1\n2\n", "t.csv").is_err());
    }
}
