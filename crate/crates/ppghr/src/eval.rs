//! Post-processing and reporting: rolling-mean clipping, per-subject MAE,
//! comparison tables and charts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-window BPM predictions for one subject, one value per 2 s step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HRSeries {
    pub subject_id: String,
    pub predictions: Vec<f64>,
    pub labels: Option<Vec<f64>>,
}

impl HRSeries {
    pub fn validate(&self) -> Result<()> {
        if self.predictions.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "series {} holds non-finite predictions",
                self.subject_id
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.predictions.len() {
                return Err(Error::format(format!(
                    "series {}: {} labels vs {} predictions",
                    self.subject_id,
                    labels.len(),
                    self.predictions.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("series: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let series: HRSeries =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("series: {e}")))?;
        series.validate()?;
        Ok(series)
    }
}

/// Clip predictions that stray more than `tol` (fraction) from the mean of
/// the last `history` output values.
///
/// The first `history` predictions pass through untouched; after that, an
/// out-of-band prediction is clamped to the nearest band edge
/// `m · (1 ± tol)`. The rolling window holds post-clipping values, which
/// makes the bounded-deviation invariant hold and the operation idempotent.
pub fn clip_postprocess(series: &HRSeries, history: usize, tol: f64) -> Result<HRSeries> {
    if history < 1 {
        return Err(Error::argument("history must be ≥ 1"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::argument(format!("tol must lie in (0, 1), got {tol}")));
    }
    let mut out = Vec::with_capacity(series.predictions.len());
    for (i, &p) in series.predictions.iter().enumerate() {
        if i < history {
            out.push(p);
            continue;
        }
        let m: f64 = out[i - history..i].iter().sum::<f64>() / history as f64;
        let band = tol * m;
        let clipped = if (p - m).abs() > band {
            m + band * (p - m).signum()
        } else {
            p
        };
        out.push(clipped);
    }
    Ok(HRSeries {
        subject_id: series.subject_id.clone(),
        predictions: out,
        labels: series.labels.clone(),
    })
}

/// Mean absolute error in BPM.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::argument(format!(
            "mae needs equal non-empty arrays, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// A named per-subject MAE table used as a comparison row.
pub type BaselineRow = (String, BTreeMap<String, f64>);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_subject_mae: BTreeMap<String, f64>,
    pub mean_mae: f64,
    pub baselines: Vec<BaselineRow>,
}

impl MetricsReport {
    /// `mean_mae` must equal the arithmetic mean of the per-subject values.
    pub fn check_consistency(&self) -> Result<()> {
        let mean = self.per_subject_mae.values().sum::<f64>() / self.per_subject_mae.len() as f64;
        if (mean - self.mean_mae).abs() > 1e-9 {
            return Err(Error::format(format!(
                "mean_mae {} does not match recomputed {}",
                self.mean_mae, mean
            )));
        }
        Ok(())
    }
}

/// Aggregate per-subject MAE values and attach comparison rows.
pub fn aggregate_report(
    per_subject: &BTreeMap<String, f64>,
    baselines: &[BaselineRow],
) -> Result<MetricsReport> {
    if per_subject.is_empty() {
        return Err(Error::argument("report needs at least one subject"));
    }
    let mean_mae = per_subject.values().sum::<f64>() / per_subject.len() as f64;
    Ok(MetricsReport {
        per_subject_mae: per_subject.clone(),
        mean_mae,
        baselines: baselines.to_vec(),
    })
}

fn row_mean(row: &BTreeMap<String, f64>) -> f64 {
    row.values().sum::<f64>() / row.len().max(1) as f64
}

/// Delimited text table: one row per method, one column per subject, plus the
/// mean column.
pub fn render_table(report: &MetricsReport, method_name: &str) -> String {
    let subjects: Vec<&String> = report.per_subject_mae.keys().collect();
    let mut s = String::new();
    s.push_str("method");
    for subj in &subjects {
        s.push('\t');
        s.push_str(subj);
    }
    s.push_str("\tmean\n");

    for (name, row) in &report.baselines {
        s.push_str(name);
        for subj in &subjects {
            s.push('\t');
            match row.get(*subj) {
                Some(v) => s.push_str(&format!("{v:.2}")),
                None => s.push('-'),
            }
        }
        s.push_str(&format!("\t{:.2}\n", row_mean(row)));
    }

    s.push_str(method_name);
    for subj in &subjects {
        s.push_str(&format!("\t{:.2}", report.per_subject_mae[*subj]));
    }
    s.push_str(&format!("\t{:.2}\n", report.mean_mae));
    s
}

/// Per-method bar chart (mean MAE) with one dot per subject, as SVG.
pub fn render_chart(report: &MetricsReport, method_name: &str) -> String {
    let mut methods: Vec<(String, f64, Vec<f64>)> = report
        .baselines
        .iter()
        .map(|(name, row)| (name.clone(), row_mean(row), row.values().cloned().collect()))
        .collect();
    methods.push((
        method_name.to_string(),
        report.mean_mae,
        report.per_subject_mae.values().cloned().collect(),
    ));

    let max_val = methods
        .iter()
        .flat_map(|(_, mean, dots)| dots.iter().chain(std::iter::once(mean)))
        .cloned()
        .fold(1.0f64, f64::max)
        * 1.1;

    let (w, h, margin) = (120 * methods.len() + 80, 320usize, 50usize);
    let plot_h = h - 2 * margin;
    let y_of = |v: f64| h as f64 - margin as f64 - v / max_val * plot_h as f64;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{y0}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        m = margin,
        y0 = h - margin,
        x1 = w - 20
    ));
    for tick in 0..=4 {
        let v = max_val * tick as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y:.1}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>\n",
            x = margin - 6
        ));
    }
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"11\" transform=\"rotate(-90 14 {})\">MAE [BPM]</text>\n",
        h / 2,
        h / 2
    ));

    for (i, (name, mean, dots)) in methods.iter().enumerate() {
        let x0 = margin + 30 + i * 120;
        let bar_w = 60usize;
        let y = y_of(*mean);
        svg.push_str(&format!(
            "<rect x=\"{x0}\" y=\"{y:.1}\" width=\"{bar_w}\" height=\"{hh:.1}\" fill=\"#7aa6c2\"/>\n",
            hh = (h - margin) as f64 - y
        ));
        for (j, d) in dots.iter().enumerate() {
            let dx = x0 as f64 + 8.0 + (j as f64 * 7.3) % (bar_w as f64 - 16.0);
            svg.push_str(&format!(
                "<circle cx=\"{dx:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"#333333\"/>\n",
                y_of(*d)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{name}</text>\n",
            x0 + bar_w / 2,
            h - margin + 16
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{mean:.2}</text>\n",
            x0 + bar_w / 2,
            y - 5.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[f64]) -> HRSeries {
        HRSeries { subject_id: "s".into(), predictions: vals.to_vec(), labels: None }
    }

    #[test]
    fn clip_examples() {
        // history of ten 100s, then an outlier at 115 -> clamped to 110
        let mut vals = vec![100.0; 10];
        vals.push(115.0);
        let out = clip_postprocess(&series(&vals), 10, 0.10).unwrap();
        assert_eq!(out.predictions[10], 110.0);

        // 105 stays within the ±10% band
        let mut vals = vec![100.0; 10];
        vals.push(105.0);
        let out = clip_postprocess(&series(&vals), 10, 0.10).unwrap();
        assert_eq!(out.predictions[10], 105.0);

        // constant series is a fixed point
        let vals = vec![72.0; 40];
        let out = clip_postprocess(&series(&vals), 10, 0.10).unwrap();
        assert_eq!(out.predictions, vals);
    }

    #[test]
    fn clip_is_bounded_and_idempotent() {
        let vals: Vec<f64> = (0..200)
            .map(|i| 80.0 + 40.0 * ((i as f64) * 0.7).sin() + if i % 17 == 0 { 35.0 } else { 0.0 })
            .collect();
        let once = clip_postprocess(&series(&vals), 10, 0.10).unwrap();
        for i in 10..once.predictions.len() {
            let m: f64 = once.predictions[i - 10..i].iter().sum::<f64>() / 10.0;
            assert!(
                (once.predictions[i] - m).abs() <= 0.10 * m + 1e-9,
                "bounded deviation violated at {i}"
            );
        }
        let twice = clip_postprocess(&once, 10, 0.10).unwrap();
        assert_eq!(once.predictions, twice.predictions);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[80.0], &[84.0]).unwrap(), 4.0);
        assert_eq!(mae(&[80.0, 90.0], &[84.0, 88.0]).unwrap(), 3.0);
        assert_eq!(mae(&[70.0, 70.0], &[70.0, 70.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_mean_and_consistency() {
        let mut per_subject = BTreeMap::new();
        per_subject.insert("S1".to_string(), 4.0);
        let report = aggregate_report(&per_subject, &[]).unwrap();
        assert_eq!(report.mean_mae, 4.0);
        report.check_consistency().unwrap();
    }

    #[test]
    fn table_and_chart_render() {
        let mut per_subject = BTreeMap::new();
        per_subject.insert("S1".to_string(), 3.0);
        per_subject.insert("S2".to_string(), 5.0);
        let mut base = BTreeMap::new();
        base.insert("S1".to_string(), 4.0);
        base.insert("S2".to_string(), 6.0);
        let report =
            aggregate_report(&per_subject, &[("baseline".to_string(), base)]).unwrap();
        let table = render_table(&report, "ours");
        assert!(table.contains("baseline\t4.00\t6.00\t5.00"));
        assert!(table.contains("ours\t3.00\t5.00\t4.00"));
        let svg = render_chart(&report, "ours");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("</svg>"));
    }
}
