//! Static SVG figures from history files and evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{FlameError, Result};
use crate::trainer::{EvalReport, HISTORY_HEADER};

/// Width of the error-histogram bins, in degrees.
pub const ERROR_BIN_DEG: f64 = 3.0;
const PRED_BINS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mean_deg: f64,
    pub val_std_deg: f64,
}

/// A comparison table row: key and whether it has a report next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub key: String,
    pub ok: bool,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> FlameError {
    FlameError::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn plot_err(e: impl std::fmt::Display) -> FlameError {
    FlameError::Plot(e.to_string())
}

pub fn parse_history(text: &str, file: &Path) -> Result<Vec<HistoryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HISTORY_HEADER => {}
        _ => return Err(parse_err(file, 1, "missing history header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(parse_err(
                file,
                i + 1,
                format!("expected 6 columns, got {}", cols.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            cols[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(file, i + 1, format!("column {}: {e}", j + 1)))
        };
        rows.push(HistoryRow {
            epoch: cols[0]
                .trim()
                .parse()
                .map_err(|e| parse_err(file, i + 1, format!("column 1: {e}")))?,
            lr: num(1)?,
            train_loss: num(2)?,
            val_mean_deg: num(3)?,
            val_std_deg: num(4)?,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(file, 1, "history has no epochs"));
    }
    Ok(rows)
}

pub fn parse_table(text: &str, file: &Path) -> Result<Vec<TableRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').nth(1) == Some("mean_deg") => {}
        _ => return Err(parse_err(file, 1, "missing report header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(parse_err(
                file,
                i + 1,
                format!("expected at least 5 columns, got {}", cols.len()),
            ));
        }
        rows.push(TableRow {
            key: cols[0].to_string(),
            ok: cols[4] == "ok",
        });
    }
    Ok(rows)
}

pub fn read_report(file: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(file).map_err(|e| FlameError::io(file, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(file, e.line(), e.to_string()))
}

/// Padded axis range that is never empty.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

fn svg_root(path: &Path, size: (u32, u32)) -> DrawingArea<SVGBackend<'_>, Shift> {
    let root = SVGBackend::new(path, size).into_drawing_area();
    let _ = root.fill(&WHITE);
    root
}

pub fn plot_history(rows: &[HistoryRow], path: &Path) -> Result<()> {
    let root = svg_root(path, (900, 400));
    let (left, right) = root.split_horizontally(450);
    let last = rows.last().map_or(0, |r| r.epoch) as f64;
    let xr = if rows.len() == 1 {
        last - 0.5..last + 0.5
    } else {
        rows[0].epoch as f64..last
    };
    let panels: [(&DrawingArea<_, _>, &str, &str, Vec<(f64, f64)>); 2] = [
        (
            &left,
            "training loss",
            "loss",
            rows.iter()
                .map(|r| (r.epoch as f64, r.train_loss))
                .collect(),
        ),
        (
            &right,
            "validation error",
            "mean angular error (deg)",
            rows.iter()
                .filter(|r| r.val_mean_deg.is_finite())
                .map(|r| (r.epoch as f64, r.val_mean_deg))
                .collect(),
        ),
    ];
    for (area, title, ylabel, pts) in panels {
        let (y0, y1) = span(pts.iter().map(|p| p.1));
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(xr.clone(), y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc(ylabel)
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), &BLUE))
            .map_err(plot_err)?;
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

#[derive(Debug, Clone, Copy)]
pub enum Angle {
    Pitch,
    Yaw,
}

impl Angle {
    fn name(self) -> &'static str {
        match self {
            Angle::Pitch => "pitch",
            Angle::Yaw => "yaw",
        }
    }
}

/// White to dark blue as `t` goes from 0 to 1.
fn shade_color(t: f64) -> RGBColor {
    let lerp = |a: f64, b: f64| (a + (b - a) * t.clamp(0.0, 1.0)).round() as u8;
    RGBColor(lerp(235.0, 8.0), lerp(242.0, 48.0), lerp(250.0, 107.0))
}

/// 2D histogram of predicted against true angle, both in degrees.
pub fn plot_prediction_histogram(report: &EvalReport, angle: Angle, path: &Path) -> Result<()> {
    let pairs: Vec<(f64, f64)> = report
        .samples
        .iter()
        .map(|s| {
            let (t, p) = match angle {
                Angle::Pitch => (s.truth.pitch, s.prediction.pitch),
                Angle::Yaw => (s.truth.yaw, s.prediction.yaw),
            };
            (t.to_degrees(), p.to_degrees())
        })
        .filter(|(t, p)| t.is_finite() && p.is_finite())
        .collect();
    let (lo, hi) = span(pairs.iter().flat_map(|&(t, p)| [t, p]));
    let bin = (hi - lo) / PRED_BINS as f64;
    let mut counts = vec![0usize; PRED_BINS * PRED_BINS];
    let idx = |v: f64| (((v - lo) / bin) as usize).min(PRED_BINS - 1);
    for &(t, p) in &pairs {
        counts[idx(p) * PRED_BINS + idx(t)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;

    let root = svg_root(path, (520, 480));
    let name = angle.name();
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{} {name}: prediction vs truth", report.variant),
            ("sans-serif", 18),
        )
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(format!("true {name} (deg)"))
        .y_desc(format!("predicted {name} (deg)"))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| {
                    let (r, col) = (i / PRED_BINS, i % PRED_BINS);
                    let x0 = lo + col as f64 * bin;
                    let y0 = lo + r as f64 * bin;
                    let shade = 0.15 + 0.85 * (c as f64 / peak);
                    Rectangle::new(
                        [(x0, y0), (x0 + bin, y0 + bin)],
                        shade_color(shade).filled(),
                    )
                }),
        )
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new([(lo, lo), (hi, hi)], BLACK.mix(0.4)))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Histogram of per-sample angular errors with fixed 3-degree bins.
pub fn plot_error_histogram(report: &EvalReport, path: &Path) -> Result<()> {
    let errors: Vec<f64> = report
        .samples
        .iter()
        .map(|s| s.error_deg)
        .filter(|e| e.is_finite())
        .collect();
    let max = errors.iter().copied().fold(0.0f64, f64::max);
    let nbins = ((max / ERROR_BIN_DEG).floor() as usize + 1).max(1);
    let mut counts = vec![0usize; nbins];
    for e in &errors {
        counts[((e / ERROR_BIN_DEG) as usize).min(nbins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64 * 1.05;

    let root = svg_root(path, (560, 400));
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{} angular error", report.variant),
            ("sans-serif", 18),
        )
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..nbins as f64 * ERROR_BIN_DEG, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("angular error (deg)")
        .y_desc("samples")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(counts.iter().enumerate().map(|(i, &c)| {
            let x0 = i as f64 * ERROR_BIN_DEG;
            Rectangle::new(
                [(x0, 0.0), (x0 + ERROR_BIN_DEG, c as f64)],
                BLUE.mix(0.6).filled(),
            )
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Quartiles by linear interpolation on the sorted sample.
pub fn quartiles(values: &[f64]) -> [f64; 5] {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return [f64::NAN; 5];
    }
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    let (q1, q3) = (q(0.25), q(0.75));
    let reach = 1.5 * (q3 - q1);
    let lo = v.iter().copied().find(|&x| x >= q1 - reach).unwrap_or(v[0]);
    let hi = v
        .iter()
        .rev()
        .copied()
        .find(|&x| x <= q3 + reach)
        .unwrap_or(v[v.len() - 1]);
    [lo, q1, q(0.5), q3, hi]
}

/// One box per labelled error sample; whiskers at 1.5 IQR.
pub fn plot_error_boxes(groups: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    let all = groups.iter().flat_map(|g| g.1.iter().copied());
    let (_, hi) = span(all);
    let n = groups.len().max(1);
    let root = svg_root(path, (140 + 110 * n as u32, 420));
    let labels: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("angular error per setting", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(-0.5..n as f64 - 0.5, 0.0..hi.max(1.0))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("angular error (deg)")
        .draw()
        .map_err(plot_err)?;
    for (i, (_, errs)) in groups.iter().enumerate() {
        let [lo, q1, med, q3, hi] = quartiles(errs);
        if !med.is_finite() {
            continue;
        }
        let x = i as f64;
        let w = 0.3;
        chart
            .draw_series([Rectangle::new(
                [(x - w, q1), (x + w, q3)],
                BLUE.mix(0.3).filled(),
            )])
            .map_err(plot_err)?;
        let lines = [
            vec![
                (x - w, q1),
                (x + w, q1),
                (x + w, q3),
                (x - w, q3),
                (x - w, q1),
            ],
            vec![(x - w, med), (x + w, med)],
            vec![(x, q3), (x, hi)],
            vec![(x, q1), (x, lo)],
            vec![(x - w / 2.0, hi), (x + w / 2.0, hi)],
            vec![(x - w / 2.0, lo), (x + w / 2.0, lo)],
        ];
        chart
            .draw_series(lines.into_iter().map(|l| PathElement::new(l, BLACK)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into())
}

/// Plots every input file into `out`, picking the figure by file content:
/// history TSVs give learning curves, evaluation JSON gives prediction
/// histograms and an error histogram, and comparison tables give box plots
/// from the `eval_<key>.json` files next to them.
pub fn plot_files(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| FlameError::io(out, e))?;
    let mut written = Vec::new();
    for input in inputs {
        let name = stem(input);
        let is_json = input.extension().is_some_and(|e| e == "json");
        if is_json {
            let report = read_report(input)?;
            for angle in [Angle::Pitch, Angle::Yaw] {
                let p = out.join(format!("{name}_{}.svg", angle.name()));
                plot_prediction_histogram(&report, angle, &p)?;
                written.push(p);
            }
            let p = out.join(format!("{name}_errors.svg"));
            plot_error_histogram(&report, &p)?;
            written.push(p);
            continue;
        }
        let text = fs::read_to_string(input).map_err(|e| FlameError::io(input, e))?;
        if text.starts_with("epoch\t") {
            let rows = parse_history(&text, input)?;
            let p = out.join(format!("{name}.svg"));
            plot_history(&rows, &p)?;
            written.push(p);
        } else {
            let rows = parse_table(&text, input)?;
            let dir = input.parent().unwrap_or(Path::new("."));
            let mut groups = Vec::new();
            for r in rows.iter().filter(|r| r.ok) {
                let report = read_report(&dir.join(format!("eval_{}.json", r.key)))?;
                groups.push((
                    r.key.clone(),
                    report.samples.iter().map(|s| s.error_deg).collect(),
                ));
            }
            let p = out.join(format!("{name}_box.svg"));
            plot_error_boxes(&groups, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_known_sample() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(quartiles(&v), [1.0, 3.0, 5.0, 7.0, 9.0]);
        let mut w = v.clone();
        w.push(100.0);
        let q = quartiles(&w);
        assert_eq!(q[4], 9.0, "outlier beyond the whisker");
    }

    #[test]
    fn history_parse_errors_name_the_line() {
        let text = format!("{HISTORY_HEADER}\n0\t1e-4\t0.5\t3\t1\t0\n1\t1e-4\tx\t3\t1\t0\n");
        let e = parse_history(&text, Path::new("h.tsv")).unwrap_err();
        assert!(e.to_string().starts_with("h.tsv:3:"), "{e}");
        let e = parse_history("nope\n", Path::new("h.tsv")).unwrap_err();
        assert!(e.to_string().starts_with("h.tsv:1:"), "{e}");
    }
}
