//! CSV tables and SVG plots. Plots are rendered from the emitted CSVs, never
//! from in-memory state, so a report can always be regenerated from its own
//! artifacts.

use super::{ExperimentError, RocPoint, RunRecord};
use std::fmt::Write as _;
use std::path::Path;

/// Per-slot detector trace rows for one record:
/// `slot,node,delta,knn_stat,p,ell,g,alarm`.
pub fn write_trace_csv(path: &Path, record: &RunRecord) -> Result<(), ExperimentError> {
    let mut out = String::from("slot,node,delta,knn_stat,p,ell,g,alarm\n");
    for trace in &record.node_traces {
        for row in &trace.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.slot,
                trace.node,
                row.delta,
                row.knn_stat,
                row.p,
                row.ell,
                row.g,
                u8::from(row.alarmed)
            )
            .expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Long-format aggregate score series: `record,slot,mean_g`.
pub fn write_aggregate_csv(path: &Path, records: &[RunRecord]) -> Result<(), ExperimentError> {
    let mut out = String::from("record,slot,mean_g\n");
    for (i, r) in records.iter().enumerate() {
        for (slot, g) in r.aggregate_g.iter().enumerate() {
            writeln!(out, "{i},{slot},{g}").expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// ROC table with columns exactly `h,fpr,tpr`.
pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<(), ExperimentError> {
    let mut out = String::from("h,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.h, p.fpr, p.tpr).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_csv(path: &Path, expect_header: &str) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let raw = std::fs::read_to_string(path)?;
    let mut lines = raw.lines();
    let header = lines
        .next()
        .ok_or_else(|| ExperimentError::Invalid(format!("{}: empty csv", path.display())))?;
    if header != expect_header {
        return Err(ExperimentError::Invalid(format!(
            "{}: header {header:?}, expected {expect_header:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| {
            ExperimentError::Invalid(format!("{}: bad row {line:?}: {e}", path.display()))
        })?);
    }
    Ok(rows)
}

/// Renders the ROC curve from a `h,fpr,tpr` CSV into an SVG file.
pub fn plot_roc_svg(csv_path: &Path, svg_path: &Path) -> Result<(), ExperimentError> {
    let rows = parse_csv(csv_path, "h,fpr,tpr")?;
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[1], r[2])).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let svg = line_plot_svg(
        &[Series {
            name: "roc",
            points: pts,
        }],
        "false positive rate",
        "true positive rate",
        Some(((0.0, 1.0), (0.0, 1.0))),
    );
    std::fs::write(svg_path, svg)?;
    Ok(())
}

/// Renders every record's aggregate score trace from a `record,slot,mean_g`
/// CSV into one SVG.
pub fn plot_score_trace_svg(csv_path: &Path, svg_path: &Path) -> Result<(), ExperimentError> {
    let rows = parse_csv(csv_path, "record,slot,mean_g")?;
    let mut by_record: std::collections::BTreeMap<u64, Vec<(f64, f64)>> = Default::default();
    for r in &rows {
        by_record.entry(r[0] as u64).or_default().push((r[1], r[2]));
    }
    let series: Vec<Series> = by_record
        .into_values()
        .map(|points| Series {
            name: "g",
            points,
        })
        .collect();
    let svg = line_plot_svg(&series, "slot", "mean g", None);
    std::fs::write(svg_path, svg)?;
    Ok(())
}

struct Series {
    name: &'static str,
    points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

/// Minimal deterministic line chart: fixed canvas, axes with min/max labels,
/// one polyline per series.
fn line_plot_svg(
    series: &[Series],
    x_label: &str,
    y_label: &str,
    fixed_range: Option<((f64, f64), (f64, f64))>,
) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 60.0, 15.0, 15.0, 45.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let ((x0, x1), (y0, y1)) = fixed_range.unwrap_or_else(|| {
        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for s in series {
            for &(x, y) in &s.points {
                xr = (xr.0.min(x), xr.1.max(x));
                yr = (yr.0.min(y), yr.1.max(y));
            }
        }
        if xr.0 == xr.1 {
            xr.1 += 1.0;
        }
        if yr.0 == yr.1 {
            yr.1 += 1.0;
        }
        (xr, yr)
    });
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{w}" height="{h}" fill="white"/>
<line x1="{ml}" y1="{y}" x2="{xr}" y2="{y}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{y}" stroke="black"/>"#,
        y = mt + ph,
        xr = ml + pw,
    );
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            PALETTE[i % PALETTE.len()],
            path.join(" "),
            s.name,
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{cx}" y="{by}" font-size="13" text-anchor="middle">{x_label}</text>
<text x="16" y="{cy}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {cy})">{y_label}</text>
<text x="{ml}" y="{by}" font-size="11" text-anchor="middle">{x0}</text>
<text x="{xr}" y="{by}" font-size="11" text-anchor="middle">{x1}</text>
<text x="{lx}" y="{ybot}" font-size="11" text-anchor="end">{y0}</text>
<text x="{lx}" y="{ytop}" font-size="11" text-anchor="end">{y1}</text>
</svg>"#,
        cx = ml + pw / 2.0,
        by = h - 12.0,
        cy = mt + ph / 2.0,
        xr = ml + pw,
        lx = ml - 6.0,
        ybot = mt + ph + 4.0,
        ytop = mt + 10.0,
    );
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{NodeTrace, TraceRow};
    use crate::sim::{NetMetrics, NodeId};

    fn record() -> RunRecord {
        RunRecord {
            seed: 1,
            label: "nominal".into(),
            anomaly_kind: "none".into(),
            episode_score: 2.0,
            aggregate_g: vec![0.0, 1.0, 2.0],
            node_traces: vec![NodeTrace {
                node: NodeId(0),
                rows: vec![TraceRow {
                    slot: 1,
                    delta: 0.5,
                    knn_stat: 0.25,
                    p: 0.4,
                    ell: -0.2,
                    g: 0.0,
                    alarmed: false,
                }],
                alarm_slot: None,
            }],
            metrics: NetMetrics {
                injected: 1,
                delivered: 1,
                delivery_ratio: 1.0,
                mean_hops: Some(1.0),
                transmissions: 2,
                overhead: Some(2.0),
                mean_reward: 0.5,
                steps: 2,
            },
            events: vec![],
        }
    }

    #[test]
    fn roc_csv_has_exact_header_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.csv");
        let pts = vec![RocPoint {
            h: 0.5,
            fpr: 0.25,
            tpr: 1.0,
            tp: 4,
            fp: 1,
            pos: 4,
            neg: 4,
        }];
        write_roc_csv(&path, &pts).unwrap();
        let a = std::fs::read(&path).unwrap();
        assert!(String::from_utf8_lossy(&a).starts_with("h,fpr,tpr\n"));
        write_roc_csv(&path, &pts).unwrap();
        assert_eq!(a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn trace_csv_contains_all_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &record()).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            raw.lines().next().unwrap(),
            "slot,node,delta,knn_stat,p,ell,g,alarm"
        );
        assert_eq!(raw.lines().count(), 2);
    }

    #[test]
    fn plots_render_from_their_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let roc_csv = dir.path().join("roc.csv");
        let agg_csv = dir.path().join("agg.csv");
        let roc_svg = dir.path().join("roc.svg");
        let agg_svg = dir.path().join("agg.svg");
        write_roc_csv(
            &roc_csv,
            &[RocPoint {
                h: 1.0,
                fpr: 0.0,
                tpr: 1.0,
                tp: 1,
                fp: 0,
                pos: 1,
                neg: 1,
            }],
        )
        .unwrap();
        write_aggregate_csv(&agg_csv, &[record()]).unwrap();
        plot_roc_svg(&roc_csv, &roc_svg).unwrap();
        plot_score_trace_svg(&agg_csv, &agg_svg).unwrap();
        let svg = std::fs::read_to_string(&roc_svg).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        // Re-rendering is byte-identical.
        let first = std::fs::read(&agg_svg).unwrap();
        plot_score_trace_svg(&agg_csv, &agg_svg).unwrap();
        assert_eq!(first, std::fs::read(&agg_svg).unwrap());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(plot_roc_svg(&path, &dir.path().join("out.svg")).is_err());
    }
}
