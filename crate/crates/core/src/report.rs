//! CSV tables and SVG line charts.

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::training::TrainLog;
use crate::ulg::ULabelState;
use crate::Modality;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn save_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_rows(std::io::BufWriter::new(f), rows)
}

pub fn load_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_rows(std::io::BufReader::new(f))
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub split: String,
    pub mae: f64,
    pub corr: f64,
    pub acc2_nonneg: f64,
    pub acc2_posneg: f64,
    pub f1_nonneg: f64,
    pub f1_posneg: f64,
    pub n_eval: usize,
    /// MAE of the constant training-mean predictor on the same split.
    pub baseline_mae: Option<f64>,
}

impl MetricsRow {
    pub fn new(split: &str, m: &MetricsReport, baseline_mae: Option<f64>) -> Self {
        Self {
            split: split.to_string(),
            mae: m.mae,
            corr: m.corr,
            acc2_nonneg: m.acc2_nonneg,
            acc2_posneg: m.acc2_posneg,
            f1_nonneg: m.f1_nonneg,
            f1_posneg: m.f1_posneg,
            n_eval: m.n_eval,
            baseline_mae,
        }
    }
}

/// One ablation setting. Metric cells are empty for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    #[serde(rename = "MAE")]
    pub mae: Option<f64>,
    #[serde(rename = "Corr")]
    pub corr: Option<f64>,
    #[serde(rename = "Acc2_nonneg")]
    pub acc2_nonneg: Option<f64>,
    #[serde(rename = "Acc2_posneg")]
    pub acc2_posneg: Option<f64>,
    #[serde(rename = "F1_nonneg")]
    pub f1_nonneg: Option<f64>,
    #[serde(rename = "F1_posneg")]
    pub f1_posneg: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl AblationRow {
    pub fn ok(setting: &str, m: &MetricsReport) -> Self {
        Self {
            setting: setting.to_string(),
            mae: Some(m.mae),
            corr: Some(m.corr),
            acc2_nonneg: Some(m.acc2_nonneg),
            acc2_posneg: Some(m.acc2_posneg),
            f1_nonneg: Some(m.f1_nonneg),
            f1_posneg: Some(m.f1_posneg),
            status: "ok".into(),
        }
    }

    pub fn failed(setting: &str, err: &Error) -> Self {
        Self {
            setting: setting.to_string(),
            mae: None,
            corr: None,
            acc2_nonneg: None,
            acc2_posneg: None,
            f1_nonneg: None,
            f1_posneg: None,
            status: format!("failed: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// One step of a standalone MI estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub step: usize,
    pub loss: f64,
    pub bound: f64,
    pub ln_n: f64,
    pub analytic_mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ULabelRow {
    pub id: String,
    pub y_m: f64,
    pub y_t: f64,
    pub y_a: f64,
    pub y_v: f64,
}

pub fn ulabel_rows(state: &ULabelState) -> Vec<ULabelRow> {
    let [t, a, v] = Modality::ALL.map(|m| state.labels(m));
    state
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| ULabelRow {
            id: id.clone(),
            y_m: state.y_m()[i],
            y_t: t[i],
            y_a: a[i],
            y_v: v[i],
        })
        .collect()
}

pub fn save_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    save_rows(path, &log.records)
}

pub fn load_train_log(path: &Path) -> Result<TrainLog> {
    Ok(TrainLog {
        records: load_rows(path)?,
    })
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG line chart. Non-finite points are skipped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (l, r, t, b) = (70.0, 160.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        (w - r + l) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {} L{} {}" stroke="black" fill="none"/>"#,
        h - b,
        w - r,
        h - b
    );
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{:.3}</text>"#,
            l - 6.0,
            py(fy) + 4.0,
            fy
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{:.4}</text>"#,
            px(fx),
            h - b + 16.0,
            fx
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        (w - r + l) / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        (h - b + t) / 2.0,
        (h - b + t) / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{colour}" stroke-width="1.5" fill="none"/>"#,
                d.join(" ")
            );
        }
        let ly = t + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            w - r + 10.0,
            w - r + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - r + 35.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn save_chart(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Loss curves from a training log.
pub fn loss_chart(log: &TrainLog) -> String {
    let pick = |f: fn(&crate::training::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        log.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    line_chart(
        "Training loss",
        "epoch",
        "loss",
        &[
            Series::new("total", pick(|r| r.total)),
            Series::new("multimodal L1", pick(|r| r.l1_m)),
            Series::new("L_CPC", pick(|r| r.cpc)),
            Series::new("L_task", pick(|r| r.label_task)),
            Series::new("val MAE", pick(|r| r.val_mae)),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EpochRecord;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            total: 1.0 / 3.0,
            l1_m: 0.1,
            weighted_t: 0.0,
            weighted_a: 2e-17,
            weighted_v: 1e10,
            cpc: 4.1,
            cpc_mt: 1.2,
            cpc_ma: 1.4,
            cpc_mv: 1.5,
            label_task: 0.3,
            gap_t: 0.2,
            gap_a: 0.25,
            gap_v: 0.5,
            val_mae: 0.7,
            val_corr: -0.1,
            val_acc2_nonneg: 0.5,
            val_acc2_posneg: 0.25,
            val_f1_nonneg: 0.0,
            val_f1_posneg: 1.0,
        }
    }

    #[test]
    fn train_log_round_trip() {
        let log = TrainLog {
            records: vec![record(1), record(2)],
        };
        let mut buf = Vec::new();
        write_rows(&mut buf, &log.records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,total,l1_m,"));
        let back: Vec<EpochRecord> = read_rows(&buf[..]).unwrap();
        assert_eq!(back, log.records);
    }

    #[test]
    fn ablation_round_trip_with_failure() {
        let m = MetricsReport {
            mae: 0.5,
            corr: 0.9,
            acc2_nonneg: 0.8,
            acc2_posneg: 0.85,
            f1_nonneg: 0.75,
            f1_posneg: 0.7,
            n_eval: 10,
        };
        let rows = vec![
            AblationRow::ok("M,T", &m),
            AblationRow::failed("M", &Error::NonFinite("loss term cpc, x".into())),
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("setting,MAE,Corr,Acc2_nonneg,Acc2_posneg,F1_nonneg,F1_posneg,status\n"));
        let back: Vec<AblationRow> = read_rows(&buf[..]).unwrap();
        assert_eq!(back, rows);
        assert!(!back[1].is_ok());
    }

    #[test]
    fn chart_is_well_formed() {
        let svg = line_chart(
            "a <b> & c",
            "x",
            "y",
            &[
                Series::new("one", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)]),
                Series::new("flat", vec![(0.0, 2.0)]),
                Series::new("empty", vec![]),
            ],
        );
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
        assert!(roxmltree::Document::parse(&line_chart("t", "x", "y", &[])).is_ok());
    }
}
