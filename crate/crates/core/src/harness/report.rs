use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Arm, MetricsReport, PredictionRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    SvgBars,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" | "svg_bars" => Ok(ReportFormat::SvgBars),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// One row per (arm, subject) after a header.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("database,arm,subject,accuracy,trial_vote_accuracy,windows\n");
    for a in &report.arms {
        for s in &a.subjects {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                report.database,
                a.arm.name(),
                s.subject,
                s.accuracy,
                s.trial_vote_accuracy,
                s.windows
            );
        }
    }
    out
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("window_id,true_label,predicted_label,max_prob\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.window_id, r.true_label, r.predicted_label, r.max_prob);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per report (database), one bar per
/// sEMG-only or generated-IMU arm with standard-deviation whiskers, and a
/// dashed reference line at the recorded-IMU mean.
pub fn svg_bars(reports: &[MetricsReport]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 60.0;
    const BOTTOM: f64 = 40.0;
    const TOP: f64 = 30.0;
    let plot_h = H - BOTTOM - TOP;
    let y = |acc: f64| TOP + plot_h * (1.0 - acc.clamp(0.0, 1.0));
    let bar_arms = [Arm::Unimodal, Arm::VirtualMultimodal];
    let colors = ["#8c8c8c", "#3a6ea5"];
    let group_w = (W - LEFT - 20.0) / reports.len().max(1) as f64;
    let bar_w = group_w / 4.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, H - BOTTOM);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{:.0}%</text>"#,
            LEFT - 6.0,
            y(v) + 3.0,
            v * 100.0
        );
    }
    for (gi, r) in reports.iter().enumerate() {
        let x0 = LEFT + gi as f64 * group_w;
        let _ = writeln!(s, r#"<g class="group" data-database="{}">"#, escape(&r.database));
        for (bi, (arm, color)) in bar_arms.iter().zip(colors).enumerate() {
            let Some(a) = r.arm(*arm) else { continue };
            let x = x0 + bar_w * (0.5 + bi as f64 * 1.25);
            let top = y(a.mean);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-arm="{}" x="{x:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                arm.name(),
                y(0.0) - top
            );
            let cx = x + bar_w / 2.0;
            let _ = writeln!(
                s,
                r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(a.mean + a.std),
                y(a.mean - a.std)
            );
        }
        if let Some(real) = r.arm(Arm::RealMultimodal) {
            let ry = y(real.mean);
            let _ = writeln!(
                s,
                r#"<line class="reference" x1="{:.2}" y1="{ry:.2}" x2="{:.2}" y2="{ry:.2}" stroke="red" stroke-dasharray="4 2"/>"#,
                x0 + bar_w * 0.25,
                x0 + bar_w * 3.25
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            x0 + bar_w * 1.75,
            H - BOTTOM + 16.0,
            escape(&r.database)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the requested formats into `dir` as `report.json`, `report.csv`
/// and `report.svg`; returns the paths written.
pub fn emit_report(report: &MetricsReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Json => ("report.json", report.to_json()),
            ReportFormat::Csv => ("report.csv", report_csv(report)),
            ReportFormat::SvgBars => ("report.svg", svg_bars(std::slice::from_ref(report))),
        };
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Experiment;
    use crate::harness::{aggregate, ArmReport, SubjectResult};

    pub(crate) fn sample_report() -> MetricsReport {
        let arm = |arm, accs: &[f64]| {
            let (mean, std) = aggregate(accs);
            ArmReport {
                arm,
                subjects: accs
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| SubjectResult {
                        subject: i as u32 + 3,
                        accuracy: a,
                        trial_vote_accuracy: 1.0,
                        windows: 40,
                    })
                    .collect(),
                mean,
                std,
            }
        };
        let arms = vec![
            arm(Arm::Unimodal, &[0.6, 0.7]),
            arm(Arm::VirtualMultimodal, &[0.75, 0.8]),
            arm(Arm::RealMultimodal, &[0.8, 0.85]),
        ];
        MetricsReport {
            vimu_report: 1,
            database: "synthetic".into(),
            experiment: Experiment::Exp1,
            seed: 3,
            config_fingerprint: "abc".into(),
            data_fingerprint: "def".into(),
            deltas: MetricsReport::compute_deltas(&arms),
            arms,
            generator: None,
        }
    }

    #[test]
    fn json_round_trip_and_deltas() {
        let r = sample_report();
        let back = MetricsReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let d = &r.deltas;
        assert_eq!(d.virtual_minus_unimodal, Some(r.arms[1].mean - r.arms[0].mean));
        assert_eq!(d.real_minus_virtual, Some(r.arms[2].mean - r.arms[1].mean));
        let mut bad = r.clone();
        bad.deltas.real_minus_virtual = Some(0.5);
        assert!(MetricsReport::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn csv_rows() {
        let csv = report_csv(&sample_report());
        assert_eq!(csv.lines().count(), 3 * 2 + 1);
        assert!(csv.lines().nth(1).unwrap().starts_with("synthetic,unimodal,3,0.6,"));
    }

    #[test]
    fn svg_structure() {
        let mut other = sample_report();
        other.database = "a<b".into();
        let svg = svg_bars(&[sample_report(), other]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"class="group""#).count(), 2);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 4);
        assert_eq!(svg.matches(r#"class="reference""#).count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<g ").count(), svg.matches("</g>").count());
    }

    #[test]
    fn emit_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&sample_report(), &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::SvgBars], dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.is_file()));
    }
}
