//! CSV reports. Floats are written with fixed precision so repeated runs
//! produce identical bytes.

use std::path::Path;

use edgelab_core::probe::{LayerProbe, ProbeReport};
use edgelab_core::robustness::RobustnessReport;
use edgelab_core::stimulus::DeltaSummary;
use edgelab_core::trainer::{EpochRecord, TrialReport};
use edgelab_core::transforms::ShiftParams;

use crate::error::{LabError, Result};

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// Writes a header and rows of already formatted fields.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let fail = |e: csv::Error| LabError::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush().map_err(|e| LabError::data(format!("{}: {e}", path.display())))
}

/// One row per architecture with mean and std at every checkpoint.
pub fn table1_rows(reports: &[TrialReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let checkpoints = reports.first().map(|r| r.checkpoints.clone()).unwrap_or_default();
    let mut header = vec!["model".to_string()];
    for c in &checkpoints {
        header.push(format!("mean_n{c}"));
        header.push(format!("std_n{c}"));
    }
    header.extend(["diverged", "loss_decreased", "repetitions"].map(String::from));
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            for (m, s) in r.mean.iter().zip(&r.std) {
                row.push(num(*m));
                row.push(num(*s));
            }
            row.push(r.diverged().to_string());
            row.push(r.loss_decreased().to_string());
            row.push(r.repetitions.len().to_string());
            row
        })
        .collect();
    (header, rows)
}

pub fn write_table1(path: &Path, reports: &[TrialReport]) -> Result<()> {
    let (header, rows) = table1_rows(reports);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, &rows)
}

/// Every repetition's accuracy at every checkpoint.
pub fn write_table1_repetitions(path: &Path, reports: &[TrialReport]) -> Result<()> {
    let mut rows = Vec::new();
    for r in reports {
        for (i, rep) in r.repetitions.iter().enumerate() {
            for (c, acc) in r.checkpoints.iter().zip(&rep.accuracies) {
                rows.push(vec![
                    r.label.clone(),
                    i.to_string(),
                    rep.seed.to_string(),
                    c.to_string(),
                    num(*acc),
                    rep.diverged_at.map_or_else(String::new, |d| d.to_string()),
                ]);
            }
        }
    }
    write_csv(path, &["model", "repetition", "seed", "updates", "accuracy", "diverged_at"], &rows)
}

pub fn write_stats(path: &Path, s: &DeltaSummary, patch: usize, analytic_sigma: f64, normal_inside: f64) -> Result<()> {
    let row = vec![
        s.samples.to_string(),
        patch.to_string(),
        num(s.epsilon),
        num(s.mean),
        num(s.std),
        num(s.inside),
        num(analytic_sigma),
        num(normal_inside),
    ];
    write_csv(
        path,
        &["samples", "patch", "epsilon", "mean", "sigma", "inside_fraction", "analytic_sigma", "normal_inside"],
        &[row],
    )
}

/// One row per neuron × angle.
pub fn write_probe_cells(path: &Path, report: &ProbeReport) -> Result<()> {
    let rows = report
        .layers
        .iter()
        .flat_map(|l| &l.cells)
        .map(|c| {
            vec![
                c.layer.to_string(),
                c.neuron.to_string(),
                num(c.angle),
                num(c.accuracy),
                num(c.threshold),
                c.above.to_string(),
                num(c.edge_mean),
                num(c.edge_std),
                num(c.noise_mean),
                num(c.noise_std),
                opt(c.cv),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(
        path,
        &[
            "layer", "neuron", "angle", "accuracy", "threshold", "above", "edge_mean", "edge_std", "noise_mean", "noise_std",
            "cv",
        ],
        &rows,
    )
}

pub fn probe_summary_row(l: &LayerProbe) -> Vec<String> {
    vec![
        l.layer.to_string(),
        l.stimulus_size.to_string(),
        l.units.to_string(),
        l.floor_center.to_string(),
        num(l.edge_accuracy()),
        opt(l.edge_variation()),
        num(l.fraction_above(0.9)),
        num(l.fraction_at_least(0.99)),
        num(l.cv_fraction_above(0.5)),
    ]
}

/// One row per probed layer.
pub fn write_probe_summary(path: &Path, report: &ProbeReport) -> Result<()> {
    let rows: Vec<_> = report.layers.iter().map(probe_summary_row).collect();
    write_csv(
        path,
        &[
            "layer",
            "stimulus_size",
            "units",
            "floor_center",
            "edge_accuracy",
            "edge_variation",
            "frac_accuracy_above_0.9",
            "frac_accuracy_at_least_0.99",
            "frac_cv_above_0.5",
        ],
        &rows,
    )
}

pub fn write_robustness(path: &Path, reports: &[RobustnessReport]) -> Result<()> {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                num(r.regular),
                num(r.negative),
                num(r.delta_negative_pct),
                num(r.color),
                num(r.delta_color_pct),
                opt(r.edge_accuracy),
                opt(r.edge_variation),
                opt(r.activation_delta_negative),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "model",
            "regular",
            "negative",
            "delta_negative_pct",
            "color",
            "delta_color_pct",
            "edge_accuracy",
            "edge_variation",
            "activation_delta_negative",
        ],
        &rows,
    )
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let rows: Vec<_> = history
        .iter()
        .map(|e| vec![e.epoch.to_string(), num(e.train_loss), num(e.train_accuracy), num(e.val_accuracy)])
        .collect();
    write_csv(path, &["epoch", "train_loss", "train_accuracy", "val_accuracy"], &rows)
}

/// Per-image replay record of a colour-shift transform.
pub fn write_shift_manifest(path: &Path, entries: &[(String, ShiftParams, usize)]) -> Result<()> {
    let rows: Vec<_> = entries
        .iter()
        .map(|(f, p, clipped)| vec![f.clone(), p.seed.to_string(), p.dh.to_string(), p.ds.to_string(), clipped.to_string()])
        .collect();
    write_csv(path, &["file", "seed", "dh", "ds", "clipped"], &rows)
}
