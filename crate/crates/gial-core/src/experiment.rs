//! File-level orchestration: generating dataset directories, the
//! graph-imbalance analyzer, and experiment runners that write report JSON
//! and trace CSV artifacts. Everything here is deterministic under a fixed
//! seed and configuration, apart from the reports' runtime field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{generate, GenConfig};
use crate::dataset::{read_treatment_column, Dataset};
use crate::error::{Error, Result};
use crate::graph::{EdgeCensus, Graph};
use crate::metrics::MetricsReport;
use crate::training::{ablate, sensitivity_sweep, AblationVariant, SweepPoint, TrainConfig};

/// Generates a dataset and writes it as a directory with a manifest.
pub fn run_generate(config: &GenConfig, out_dir: &Path) -> Result<()> {
    let dataset = generate(config)?;
    dataset.save(out_dir)
}

/// Output of the `analyze` command: observed counts next to the
/// complete-graph null expectations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub nodes: usize,
    pub treated: usize,
    pub control: usize,
    pub edges: u64,
    pub census: EdgeCensus,
    /// homogeneous / heterogeneous; absent when nothing is heterogeneous.
    pub observed_ratio: Option<f64>,
    pub expected_ratio: f64,
}

impl AnalyzeReport {
    pub fn csv_header() -> &'static str {
        "nodes,treated,control,edges,homogeneous,heterogeneous,expected_homogeneous,expected_heterogeneous,observed_ratio,expected_ratio\n"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            self.nodes,
            self.treated,
            self.control,
            self.edges,
            self.census.homogeneous_count,
            self.census.heterogeneous_count,
            self.census.expected_homogeneous,
            self.census.expected_heterogeneous,
            self.observed_ratio
                .map(|r| format!("{r}"))
                .unwrap_or_default(),
            self.expected_ratio,
        )
    }
}

/// Runs the edge census over an edge-list file and a treatment column.
/// The node count is the treatment vector's length.
pub fn analyze_files(edges_path: &Path, treatment_path: &Path) -> Result<AnalyzeReport> {
    let edges_text = fs::read_to_string(edges_path)?;
    let edges = Graph::parse_edge_list(&edges_text, &edges_path.to_string_lossy())?;
    let treatment_text = fs::read_to_string(treatment_path)?;
    let treatment = read_treatment_column(&treatment_text, &treatment_path.to_string_lossy())?;
    let n = treatment.len();
    let graph = Graph::new(n, edges)?;
    let census = graph.edge_census(&treatment)?;
    let treated = treatment.iter().filter(|&&t| t == 1).count();
    Ok(AnalyzeReport {
        nodes: n,
        treated,
        control: n - treated,
        edges: census.total(),
        observed_ratio: census.observed_ratio(),
        expected_ratio: census.expected_ratio(),
        census,
    })
}

fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Trains one model and writes `report.json` plus `trace.csv` into
/// `out_dir`. Returns the report.
pub fn run_experiment(
    manifest: &Path,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let dataset = Dataset::load(manifest)?;
    fs::create_dir_all(out_dir)?;
    let (report, trace) = ablate(&dataset, config, AblationVariant::Full)?;
    write_report(&report, &out_dir.join("report.json"))?;
    fs::write(out_dir.join("trace.csv"), trace.to_csv())?;
    Ok(report)
}

/// Trains the full model and both ablations, writing one report and trace
/// pair per variant.
pub fn run_ablation(
    manifest: &Path,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<Vec<MetricsReport>> {
    let dataset = Dataset::load(manifest)?;
    fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    for variant in [
        AblationVariant::Full,
        AblationVariant::NoSmi,
        AblationVariant::NoCd,
    ] {
        let (report, trace) = ablate(&dataset, config, variant)?;
        write_report(
            &report,
            &out_dir.join(format!("report_{}.json", variant.name())),
        )?;
        fs::write(
            out_dir.join(format!("trace_{}.csv", variant.name())),
            trace.to_csv(),
        )?;
        reports.push(report);
    }
    Ok(reports)
}

/// Sweeps the (alpha, beta) grid and writes `sweep.csv`, one row per grid
/// point, suitable for any plotting tool.
pub fn run_sweep(
    manifest: &Path,
    config: &TrainConfig,
    alphas: &[f64],
    betas: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let dataset = Dataset::load(manifest)?;
    fs::create_dir_all(out_dir)?;
    let points = sensitivity_sweep(&dataset, config, alphas, betas)?;
    let mut csv =
        String::from("alpha,beta,seed,sqrt_pehe,eps_ate,factual_mse_test,best_epoch,epochs_run\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.alpha,
            p.beta,
            p.report.seed,
            p.report.sqrt_pehe,
            p.report.eps_ate,
            p.report.factual_mse.test,
            p.report.best_epoch,
            p.report.epochs_run,
        ));
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(points)
}

/// Reads a training config file, or the defaults when no path is given.
pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let cfg: TrainConfig = serde_json::from_str(&text)?;
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(TrainConfig::default()),
    }
}

/// Reads a generator config file.
pub fn load_gen_config(path: &Path) -> Result<GenConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: GenConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Maps an error to the process exit code contract: 4 for numerical
/// failures, 3 for anything else (usage errors exit with 2 before reaching
/// this mapping).
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Numerical(_) => 4,
        _ => 3,
    }
}
