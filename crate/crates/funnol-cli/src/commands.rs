//! Implementations of the CLI subcommands.
//!
//! Every command is a pure function of its configuration and input files:
//! output files are byte-identical across reruns with the same seed.
//! Progress and timing go to stderr; stdout carries only deterministic
//! results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use funnol_core::checkpoint::{Checkpoint, CheckpointKind, FpcaCheckpoint, FunnolCheckpoint};
use funnol_core::dataset::{self, apply_standardization, load_grid, load_ucr, ChannelStats};
use funnol_core::fpca::{concat_channels, fpc_scores, fpca_fit, fpca_reconstruct, impute_dataset};
use funnol_core::linalg::Vector;
use funnol_core::model::{classify, decode, representation};
use funnol_core::train::fit;
use funnol_core::{
    run_sparsity_experiment, run_split_protocol, Dataset, Method, ProtocolConfig, ProtocolResult,
    TrainConfig,
};

pub fn load_dataset(paths: &[PathBuf], grid: Option<&Path>) -> Result<Dataset> {
    let grid = grid.map(load_grid).transpose()?;
    Ok(load_ucr(paths, grid)?)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_channels(ds: &Dataset, stats: &ChannelStats) -> Result<()> {
    if ds.num_channels != stats.means.len() {
        bail!(
            "dataset has {} channels but the checkpoint was trained with {}",
            ds.num_channels,
            stats.means.len()
        );
    }
    Ok(())
}

pub fn cmd_train(
    data: &[PathBuf],
    grid: Option<&Path>,
    out_dir: &Path,
    cfg: &TrainConfig,
) -> Result<()> {
    let ds = load_dataset(data, grid)?;
    let (standardized, _, stats) = dataset::standardize(&ds, &ds)?;
    let (params, report) = fit(&standardized, cfg)?;
    ensure_out_dir(out_dir)?;
    let checkpoint = Checkpoint::funnol(FunnolCheckpoint {
        params,
        grid: ds.grid.clone(),
        standardization: stats,
        num_classes: ds.num_classes,
    });
    checkpoint.save(out_dir.join("checkpoint.json"))?;
    fs::write(out_dir.join("report.csv"), report.to_csv())?;
    if let Some(last) = report.epochs.last() {
        println!("final_loss {}", last.loss);
    }
    eprintln!("trained {} samples in {:.2}s", ds.len(), report.wall_secs);
    Ok(())
}

pub fn cmd_fpca(
    data: &[PathBuf],
    grid: Option<&Path>,
    out_dir: &Path,
    num_components: usize,
) -> Result<()> {
    let ds = load_dataset(data, grid)?;
    let (standardized, _, stats) = dataset::standardize(&ds, &ds)?;
    let full = impute_dataset(&standardized)?;
    let model = fpca_fit(&full, num_components)?;
    ensure_out_dir(out_dir)?;
    let checkpoint = Checkpoint::fpca(FpcaCheckpoint {
        model,
        standardization: stats,
        num_classes: ds.num_classes,
    });
    checkpoint.save(out_dir.join("fpca.json"))?;
    println!("components {num_components}");
    Ok(())
}

/// Per-sample representations: encoder features for a network checkpoint,
/// FPC scores for an FPCA checkpoint.
fn compute_representations(checkpoint: &Checkpoint, ds: &Dataset) -> Result<Vec<Vector>> {
    match &checkpoint.payload {
        CheckpointKind::Funnol(inner) => {
            check_channels(ds, &inner.standardization)?;
            let standardized = apply_standardization(ds, &inner.standardization);
            Ok(standardized
                .samples
                .iter()
                .map(|s| representation(&inner.params, s))
                .collect())
        }
        CheckpointKind::Fpca(inner) => {
            check_channels(ds, &inner.standardization)?;
            if ds.grid_len() != inner.model.grid.len() {
                bail!(
                    "dataset grid has {} points but the FPCA model was fitted on {}",
                    ds.grid_len(),
                    inner.model.grid.len()
                );
            }
            let standardized = apply_standardization(ds, &inner.standardization);
            let full = impute_dataset(&standardized)?;
            Ok(full
                .samples
                .iter()
                .map(|s| fpc_scores(&inner.model, s))
                .collect::<funnol_core::Result<_>>()?)
        }
    }
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_encode(
    checkpoint_path: &Path,
    data: &[PathBuf],
    grid: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let ds = load_dataset(data, grid)?;
    let reps = compute_representations(&checkpoint, &ds)?;
    let width = reps.first().map(Vector::len).unwrap_or(0);
    let header: Vec<String> = (0..width).map(|k| format!("z{k}")).collect();
    let rows: Vec<Vec<f64>> = reps.iter().map(|z| z.as_slice().to_vec()).collect();
    write_csv(out, &header.join(","), &rows)?;
    println!("encoded {} samples", rows.len());
    Ok(())
}

pub fn cmd_reconstruct(
    checkpoint_path: &Path,
    data: &[PathBuf],
    grid: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let ds = load_dataset(data, grid)?;
    let j = ds.grid_len();
    let d = ds.num_channels;

    // Reconstructions in original units, channel-major like the
    // concatenated FPCA layout.
    let rows = match &checkpoint.payload {
        CheckpointKind::Funnol(inner) => {
            check_channels(&ds, &inner.standardization)?;
            let standardized = apply_standardization(&ds, &inner.standardization);
            let rows: Vec<Vec<f64>> = standardized
                .samples
                .iter()
                .map(|s| {
                    let z = representation(&inner.params, s);
                    let trace = decode(&inner.params, &z, j);
                    let mut row = vec![0.0; j * d];
                    for ch in 0..d {
                        for t in 0..j {
                            row[ch * j + t] = dataset::destandardize_value(
                                trace.output[t][ch],
                                ch,
                                &inner.standardization,
                            );
                        }
                    }
                    row
                })
                .collect();
            rows
        }
        CheckpointKind::Fpca(inner) => {
            check_channels(&ds, &inner.standardization)?;
            if j != inner.model.grid.len() {
                bail!(
                    "dataset grid has {} points but the FPCA model was fitted on {}",
                    j,
                    inner.model.grid.len()
                );
            }
            let standardized = apply_standardization(&ds, &inner.standardization);
            let full = impute_dataset(&standardized)?;
            let rows: Vec<Vec<f64>> = full
                .samples
                .iter()
                .map(|s| {
                    let scores = fpc_scores(&inner.model, s)?;
                    let rec = fpca_reconstruct(&inner.model, &scores)?;
                    let row: Vec<f64> = (0..j * d)
                        .map(|a| {
                            dataset::destandardize_value(rec[a], a / j, &inner.standardization)
                        })
                        .collect();
                    Ok(row)
                })
                .collect::<funnol_core::Result<_>>()?;
            rows
        }
    };

    let header: Vec<String> = (0..d)
        .flat_map(|ch| (0..j).map(move |t| format!("c{ch}_t{t}")))
        .collect();
    write_csv(out, &header.join(","), &rows)?;

    // Masked MSE against the observed cells, original units.
    let mut err = 0.0;
    let mut count = 0usize;
    for (s, row) in ds.samples.iter().zip(&rows) {
        let x = concat_channels(s);
        for ch in 0..d {
            for t in 0..j {
                if s.observed(t, ch) {
                    let diff = x[ch * j + t] - row[ch * j + t];
                    err += diff * diff;
                    count += 1;
                }
            }
        }
    }
    let mse = if count > 0 {
        err / count as f64
    } else {
        f64::NAN
    };
    println!("masked_mse {mse}");
    Ok(())
}

pub fn cmd_classify(
    checkpoint_path: &Path,
    data: &[PathBuf],
    grid: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let inner = checkpoint.expect_funnol()?;
    let ds = load_dataset(data, grid)?;
    check_channels(&ds, &inner.standardization)?;
    let standardized = apply_standardization(&ds, &inner.standardization);
    let q = inner.params.dims.classes;
    let mut rows = Vec::with_capacity(ds.len());
    let mut hits = 0usize;
    let mut labeled = 0usize;
    for s in &standardized.samples {
        let z = representation(&inner.params, s);
        let probs = classify(&inner.params, &z);
        let label = probs.argmax();
        if let Some(y) = s.label() {
            labeled += 1;
            hits += (label == y) as usize;
        }
        let mut row = vec![label as f64];
        row.extend_from_slice(probs.as_slice());
        rows.push(row);
    }
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..q).map(|c| format!("p{c}")))
        .collect();
    write_csv(out, &header.join(","), &rows)?;
    if labeled > 0 {
        println!("accuracy {}", hits as f64 / labeled as f64);
    }
    Ok(())
}

/// The JSON summary sidecar of a protocol run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub mean: f64,
    pub se: f64,
    pub splits: usize,
    pub keep_fraction: Option<f64>,
}

impl Summary {
    fn of(result: &ProtocolResult) -> Self {
        Summary {
            method: result.method.clone(),
            mean: result.mean,
            se: result.se,
            splits: result.splits,
            keep_fraction: result.keep_fraction,
        }
    }
}

fn write_protocol_outputs(
    result: &ProtocolResult,
    csv_path: &Path,
    json_path: &Path,
) -> Result<()> {
    let mut csv = String::from("split,accuracy\n");
    for (i, acc) in result.accuracies.iter().enumerate() {
        writeln!(csv, "{i},{acc}").expect("write to string");
    }
    fs::write(csv_path, csv)?;
    fs::write(
        json_path,
        serde_json::to_string_pretty(&Summary::of(result))?,
    )?;
    Ok(())
}

pub fn cmd_protocol(
    data: &[PathBuf],
    grid: Option<&Path>,
    out_dir: &Path,
    method: Method,
    splits: usize,
    cfg: &ProtocolConfig,
) -> Result<()> {
    let ds = load_dataset(data, grid)?;
    let result = run_split_protocol(&ds, method, splits, cfg)?;
    ensure_out_dir(out_dir)?;
    write_protocol_outputs(
        &result,
        &out_dir.join(format!("protocol_{}.csv", method.tag())),
        &out_dir.join(format!("protocol_{}.json", method.tag())),
    )?;
    println!("{} mean {} se {}", method.tag(), result.mean, result.se);
    Ok(())
}

pub fn cmd_sparsity(
    data: &[PathBuf],
    grid: Option<&Path>,
    out_dir: &Path,
    method: Method,
    keep_fractions: &[f64],
    splits: usize,
    cfg: &ProtocolConfig,
) -> Result<()> {
    let ds = load_dataset(data, grid)?;
    let results = run_sparsity_experiment(&ds, method, keep_fractions, splits, cfg)?;
    ensure_out_dir(out_dir)?;
    for result in &results {
        let kf = result
            .keep_fraction
            .expect("sparsity results carry the fraction");
        write_protocol_outputs(
            result,
            &out_dir.join(format!("sparsity_{}_keep{}.csv", method.tag(), kf)),
            &out_dir.join(format!("sparsity_{}_keep{}.json", method.tag(), kf)),
        )?;
        println!(
            "{} keep {} mean {} se {}",
            method.tag(),
            kf,
            result.mean,
            result.se
        );
    }
    Ok(())
}

/// Accuracy cell in the style of the result tables: .839(.035).
fn format_cell(mean: f64, se: f64) -> String {
    let trim = |v: f64| -> String {
        let s = format!("{v:.3}");
        s.strip_prefix('0').map(str::to_string).unwrap_or(s)
    };
    format!("{}({})", trim(mean), trim(se))
}

pub fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut table = String::from("| method | keep | splits | accuracy (se) |\n|---|---|---|---|\n");
    for path in inputs {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading summary {}", path.display()))?;
        let summary: Summary = serde_json::from_str(&text)
            .with_context(|| format!("parsing summary {}", path.display()))?;
        let keep = summary
            .keep_fraction
            .map(|k| k.to_string())
            .unwrap_or_else(|| "1".to_string());
        writeln!(
            table,
            "| {} | {} | {} | {} |",
            summary.method,
            keep,
            summary.splits,
            format_cell(summary.mean, summary.se)
        )
        .expect("write to string");
    }
    print!("{table}");
    if let Some(path) = out {
        fs::write(path, table)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cells_match_table_style() {
        assert_eq!(format_cell(0.839, 0.035), ".839(.035)");
        assert_eq!(format_cell(0.9751, 0.0034), ".975(.003)");
        assert_eq!(format_cell(1.0, 0.0), "1.000(.000)");
    }
}
