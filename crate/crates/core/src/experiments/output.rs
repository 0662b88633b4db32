use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, WelfareSummary};
use crate::error::Result;
use crate::rng::PRNG_ID;

pub const OUTPUT_FILES: [&str; 8] = [
    "summary.csv",
    "oracle.csv",
    "runs.csv",
    "plot_relative_gain.csv",
    "plot_absolute_gain.csv",
    "plot_oracle.csv",
    "heatmaps.csv",
    "manifest.json",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub gamma: Option<f64>,
    pub n_train: usize,
    pub inv_eta: f64,
    pub runs: usize,
    pub nonconverged: usize,
    pub vacuous_bounds: usize,
    /// Repetitions with a row in `runs.csv` for this cell.
    pub repetitions: Vec<usize>,
    pub nonconverged_repetitions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub prng: String,
    pub started_at: String,
    pub finished_at: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    pub total_runs: usize,
    pub nonconverged_runs: usize,
    pub cells: Vec<CellDiagnostics>,
}

/// Fixed 17 significant digits so values survive a text round trip.
pub(crate) fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

/// Writes to a sibling temp file, then renames over the target.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Writes every table plus `manifest.json` into `dir`, creating it if needed.
pub fn write_outputs(
    summary: &WelfareSummary,
    cfg: &ExperimentConfig,
    dir: &Path,
    started_at: DateTime<Utc>,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let panels = &summary.panels;

    write_table(
        &dir.join("summary.csv"),
        &[
            "gamma",
            "n",
            "n_train",
            "inv_eta",
            "runs",
            "converged_runs",
            "random_welfare",
            "oracle_opt_welfare",
            "mean_welfare",
            "std_welfare",
            "mean_abs_gain_pp",
            "std_abs_gain_pp",
            "mean_relative_gain",
            "std_relative_gain",
            "mean_regret",
            "std_regret",
            "mean_l1_grid",
            "mean_l1_mc",
            "mean_l2_mc",
            "mean_bound",
            "bounds_checked",
            "bound_holds_rate",
            "vacuous_bounds",
        ],
        panels.iter().flat_map(|p| {
            p.cells.iter().map(move |c| {
                vec![
                    opt_num(p.gamma),
                    p.n.to_string(),
                    c.n_train.to_string(),
                    num(c.inv_eta),
                    c.runs.to_string(),
                    c.converged_runs.to_string(),
                    num(p.random_welfare),
                    num(p.oracle_opt_welfare),
                    num(c.mean_welfare),
                    num(c.std_welfare),
                    num(c.mean_abs_gain_pp),
                    num(c.std_abs_gain_pp),
                    num(c.mean_relative_gain),
                    num(c.std_relative_gain),
                    num(c.mean_regret),
                    num(c.std_regret),
                    num(c.mean_l1_grid),
                    num(c.mean_l1_mc),
                    num(c.mean_l2_mc),
                    opt_num(c.mean_bound),
                    c.bounds_checked.to_string(),
                    opt_num(c.bound_holds_rate),
                    c.vacuous_bounds.to_string(),
                ]
            })
        }),
    )?;

    let oracle_header = [
        "gamma",
        "inv_eta",
        "welfare",
        "abs_gain_pp",
        "relative_gain",
        "regularization_loss",
        "bias_bound",
        "converged",
        "iterations",
    ];
    let oracle_rows = || {
        panels.iter().flat_map(|p| {
            p.oracle.iter().map(move |o| {
                vec![
                    opt_num(p.gamma),
                    num(o.inv_eta),
                    num(o.welfare),
                    num(o.abs_gain_pp),
                    num(o.relative_gain),
                    num(o.regularization_loss),
                    opt_num(o.bias_bound),
                    o.converged.to_string(),
                    o.iterations.to_string(),
                ]
            })
        })
    };
    write_table(&dir.join("oracle.csv"), &oracle_header, oracle_rows())?;
    write_table(
        &dir.join("plot_oracle.csv"),
        &oracle_header[..7],
        oracle_rows().map(|mut r| {
            r.truncate(7);
            r
        }),
    )?;

    write_table(
        &dir.join("runs.csv"),
        &[
            "gamma",
            "n_train",
            "inv_eta",
            "repetition",
            "sample_seed",
            "converged",
            "iterations",
            "feasible_welfare",
            "abs_gain_pp",
            "relative_gain",
            "regret",
            "rot_regret",
            "regularization_bias",
            "kl_feasible",
            "kl_oracle",
            "l1_grid",
            "l2_grid",
            "l1_mc",
            "l2_mc",
            "l1_mc_se",
            "l2_mc_se",
            "bound_total",
            "bound_vacuous",
            "bound_holds",
            "bound_total_mc",
            "prop1_cost_gap",
            "prop1_cost_gap_bound",
            "prop1_cost_gap_holds",
            "prop1_dual_gap",
            "prop1_dual_gap_bound",
            "prop1_dual_gap_holds",
            "prop1_dual_gap_first_order_holds",
            "lemma1_holds",
            "decomposition_holds",
        ],
        summary.runs.iter().map(|r| {
            vec![
                opt_num(r.gamma),
                r.n_train.to_string(),
                num(r.inv_eta),
                r.repetition.to_string(),
                r.sample_seed.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
                num(r.feasible_welfare),
                num(r.abs_gain_pp),
                num(r.relative_gain),
                num(r.regret),
                num(r.rot_regret),
                num(r.regularization_bias),
                num(r.kl_feasible),
                num(r.kl_oracle),
                num(r.l1_grid),
                num(r.l2_grid),
                num(r.l1_mc),
                num(r.l2_mc),
                num(r.l1_mc_se),
                num(r.l2_mc_se),
                opt_num(r.bound_total),
                opt_bool(r.bound_vacuous),
                opt_bool(r.bound_holds),
                opt_num(r.bound_total_mc),
                opt_num(r.prop1_cost_gap),
                opt_num(r.prop1_cost_gap_bound),
                opt_bool(r.prop1_cost_gap_holds),
                opt_num(r.prop1_dual_gap),
                opt_num(r.prop1_dual_gap_bound),
                opt_bool(r.prop1_dual_gap_holds),
                opt_bool(r.prop1_dual_gap_first_order_holds),
                opt_bool(r.lemma1_holds),
                r.decomposition_holds.to_string(),
            ]
        }),
    )?;

    for (file, mean, std) in [
        ("plot_relative_gain.csv", "mean_relative_gain", "std_relative_gain"),
        ("plot_absolute_gain.csv", "mean_abs_gain_pp", "std_abs_gain_pp"),
    ] {
        let relative = file == "plot_relative_gain.csv";
        write_table(
            &dir.join(file),
            &["gamma", "n_train", "inv_eta", mean, std, "converged_runs"],
            panels.iter().flat_map(|p| {
                p.cells.iter().map(move |c| {
                    let (m, s) = if relative {
                        (c.mean_relative_gain, c.std_relative_gain)
                    } else {
                        (c.mean_abs_gain_pp, c.std_abs_gain_pp)
                    };
                    vec![
                        opt_num(p.gamma),
                        c.n_train.to_string(),
                        num(c.inv_eta),
                        num(m),
                        num(s),
                        c.converged_runs.to_string(),
                    ]
                })
            }),
        )?;
    }

    write_table(
        &dir.join("heatmaps.csv"),
        &["gamma", "inv_eta", "x_index", "w_index", "mass"],
        panels.iter().flat_map(|p| {
            p.oracle.iter().zip(&p.oracle_couplings).flat_map(move |(o, c)| {
                let n = c.n();
                (0..n * n).map(move |k| {
                    let (i, j) = (k / n, k % n);
                    vec![opt_num(p.gamma), num(o.inv_eta), i.to_string(), j.to_string(), num(c.get(i, j))]
                })
            })
        }),
    )?;

    let cells: Vec<CellDiagnostics> = panels
        .iter()
        .flat_map(|p| {
            p.cells.iter().map(move |c| {
                let rows = || {
                    summary
                        .runs
                        .iter()
                        .filter(move |r| r.gamma == p.gamma && r.n_train == c.n_train && r.inv_eta == c.inv_eta)
                };
                CellDiagnostics {
                    gamma: p.gamma,
                    n_train: c.n_train,
                    inv_eta: c.inv_eta,
                    runs: c.runs,
                    nonconverged: c.runs - c.converged_runs,
                    vacuous_bounds: c.vacuous_bounds,
                    repetitions: rows().map(|r| r.repetition).collect(),
                    nonconverged_repetitions: rows().filter(|r| !r.converged).map(|r| r.repetition).collect(),
                }
            })
        })
        .collect();
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        prng: PRNG_ID.to_string(),
        started_at: started_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        config: cfg.clone(),
        files: OUTPUT_FILES.iter().map(|s| s.to_string()).collect(),
        total_runs: summary.runs.len(),
        nonconverged_runs: summary.runs.iter().filter(|r| !r.converged).count(),
        cells,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}
