use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{split_cross_subject, Record, SplitSpec};
use crate::error::{FlameError, Result};
use crate::model::Variant;
use crate::nn::Element;

use super::config::TrainConfig;
use super::eval::{evaluate, EvalReport};
use super::train::{train, TrainOutput};

/// Published (mean, std) angular errors in degrees on ColumbiaGaze and
/// EYEDIAP, shown next to measured values for comparison only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperReference {
    pub columbia: (Option<f64>, Option<f64>),
    pub eyediap: (Option<f64>, Option<f64>),
}

pub fn paper_variant_reference(v: Variant) -> PaperReference {
    let r = |a, b, c, d| PaperReference {
        columbia: (Some(a), Some(b)),
        eyediap: (Some(c), Some(d)),
    };
    match v {
        Variant::Baseline => r(5.93, 3.20, 5.32, 3.08),
        Variant::AdditiveFusion => r(5.88, 3.06, 5.30, 3.03),
        Variant::AggregationOnly => r(5.06, 3.13, 4.80, 3.02),
        Variant::Flame => r(4.64, 2.86, 4.62, 2.93),
        Variant::DenseFusion => PaperReference {
            columbia: (Some(4.83), None),
            eyediap: (Some(4.74), None),
        },
    }
}

pub fn paper_resolution_reference(resolution: usize) -> Option<PaperReference> {
    let r = |a, b, c, d| PaperReference {
        columbia: (Some(a), Some(b)),
        eyediap: (Some(c), Some(d)),
    };
    match resolution {
        120 => Some(r(4.64, 2.86, 4.62, 2.93)),
        60 => Some(r(4.79, 3.23, 4.81, 2.99)),
        30 => Some(r(5.5, 3.50, 4.77, 3.15)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    /// Variant tag or resolution.
    pub key: String,
    pub outcome: std::result::Result<EvalReport, String>,
    pub paper: Option<PaperReference>,
}

/// A variant or resolution table evaluated on the test split.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub key_column: &'static str,
    pub rows: Vec<ReportRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl ComparisonReport {
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "{}\tmean_deg\tstd_deg\tn\tstatus\tpaper_columbiagaze_mean\tpaper_columbiagaze_std\tpaper_eyediap_mean\tpaper_eyediap_std\n",
            self.key_column
        );
        for row in &self.rows {
            let p = row.paper.unwrap_or(PaperReference {
                columbia: (None, None),
                eyediap: (None, None),
            });
            let (m, sd, n, status) = match &row.outcome {
                Ok(r) => (
                    format!("{:.4}", r.mean_deg),
                    format!("{:.4}", r.std_deg),
                    r.samples.len().to_string(),
                    "ok".to_string(),
                ),
                Err(e) => (
                    "-".into(),
                    "-".into(),
                    "0".into(),
                    format!("failed: {}", e.replace(['\t', '\n'], " ")),
                ),
            };
            let _ = writeln!(
                s,
                "{}\t{m}\t{sd}\t{n}\t{status}\t{}\t{}\t{}\t{}",
                row.key,
                cell(p.columbia.0),
                cell(p.columbia.1),
                cell(p.eyediap.0),
                cell(p.eyediap.1)
            );
        }
        s
    }

    /// Writes the table plus one JSON evaluation report per successful row.
    pub fn write(&self, dir: &Path, table_name: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FlameError::io(dir, e))?;
        let table = dir.join(table_name);
        fs::write(&table, self.to_tsv()).map_err(|e| FlameError::io(&table, e))?;
        for row in &self.rows {
            if let Ok(r) = &row.outcome {
                let path = dir.join(format!("eval_{}.json", row.key));
                let json =
                    serde_json::to_string_pretty(r).map_err(|e| FlameError::Plot(e.to_string()))?;
                fs::write(&path, json).map_err(|e| FlameError::io(&path, e))?;
            }
        }
        Ok(())
    }
}

fn run_one<F: Element>(
    cfg: &TrainConfig,
    split: &crate::data::Split,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let output = TrainOutput {
        dir: out.map(Path::to_path_buf),
    };
    let outcome = train::<F>(cfg, &split.train, &split.val, &output)?;
    let mut model = outcome.selected().build_model()?;
    evaluate(
        &mut model,
        &split.test,
        cfg.eval_eye,
        cfg.seed,
        cfg.patch_size,
    )
}

/// Trains and tests each variant on the same subject-disjoint split with
/// the same seed. A failing variant is reported and the rest still run.
pub fn ablate<F: Element>(
    base: &TrainConfig,
    records: &[Record],
    split: &SplitSpec,
    variants: &[Variant],
    out: Option<&Path>,
) -> Result<ComparisonReport> {
    let parts = split_cross_subject(records, split)?;
    let rows = variants
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.model.variant = v;
            log::info!("ablation: training {v}");
            let dir = out.map(|d| d.join(v.tag()));
            ReportRow {
                key: v.tag().to_string(),
                outcome: run_one::<F>(&cfg, &parts, dir.as_deref()).map_err(|e| e.to_string()),
                paper: Some(paper_variant_reference(v)),
            }
        })
        .collect();
    Ok(ComparisonReport {
        key_column: "variant",
        rows,
    })
}

/// Trains and tests one variant at each input resolution.
pub fn resolution_sweep<F: Element>(
    base: &TrainConfig,
    records: &[Record],
    split: &SplitSpec,
    resolutions: &[usize],
    out: Option<&Path>,
) -> Result<ComparisonReport> {
    let parts = split_cross_subject(records, split)?;
    let rows = resolutions
        .iter()
        .map(|&r| {
            let mut cfg = base.clone();
            cfg.model.resolution = r;
            log::info!("resolution sweep: training {} at {r}px", cfg.model.variant);
            let dir = out.map(|d| d.join(format!("res{r}")));
            ReportRow {
                key: r.to_string(),
                outcome: run_one::<F>(&cfg, &parts, dir.as_deref()).map_err(|e| e.to_string()),
                paper: paper_resolution_reference(r),
            }
        })
        .collect();
    Ok(ComparisonReport {
        key_column: "resolution",
        rows,
    })
}
