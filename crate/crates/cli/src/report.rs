//! Flat CSV and SVG renderings of a metrics report.

use std::fmt::Write;

use elicit_core::MetricsReport;

/// One `metric,key,value` row per scalar, per position score and per
/// weighted rank.
pub fn to_csv(report: &MetricsReport) -> String {
    let mut rows: Vec<(&str, String, f64)> = vec![
        ("transcripts", String::new(), report.transcripts as f64),
        ("match_rate", String::new(), report.match_rate),
        ("mean_questions", String::new(), report.mean_questions),
        ("bleu_mean", String::new(), report.bleu_mean),
        ("rouge1_f_mean", String::new(), report.rouge1_f_mean),
        ("rougeL_f_mean", String::new(), report.rouge_l_f_mean),
        ("unanswered_rate", String::new(), report.unanswered_rate),
        ("repetition_rate", String::new(), report.repetition_rate),
    ];
    for p in &report.per_position_scores {
        let key = p.position.to_string();
        rows.push(("bleu_at_position", key.clone(), p.bleu));
        rows.push(("rouge1_f_at_position", key.clone(), p.rouge1_f));
        rows.push(("rougeL_f_at_position", key, p.rouge_l_f));
    }
    for (concept, wr) in &report.weighted_ranks {
        rows.push(("weighted_rank", concept.clone(), *wr));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "key", "value"]).expect("writing to memory");
    for (metric, key, value) in rows {
        w.write_record([metric, &key, &value.to_string()])
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const METRICS: [(&str, &str); 3] = [("ROUGE-L", ""), ("ROUGE-1", "6 3"), ("BLEU", "2 3")];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Score-versus-questions curves, one colour per report and one dash style
/// per metric.
pub fn curves_svg(reports: &[(String, MetricsReport)]) -> String {
    let max_pos = reports
        .iter()
        .flat_map(|(_, r)| r.per_position_scores.iter().map(|p| p.position))
        .max()
        .unwrap_or(1)
        .max(1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |pos: usize| {
        if max_pos == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + (pos - 1) as f64 / (max_pos - 1) as f64 * plot_w
        }
    };
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{x2:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{v:.1}</text>"##,
            yy = y(v),
            x2 = LEFT + plot_w,
            tx = LEFT - 6.0,
            ty = y(v) + 4.0,
        );
    }
    for pos in 1..=max_pos {
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{ty:.2}" text-anchor="middle">{pos}</text>"#,
            xx = x(pos),
            ty = TOP + plot_h + 18.0,
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="{cy:.2}" text-anchor="middle">questions asked</text>"#,
        cx = LEFT + plot_w / 2.0,
        cy = HEIGHT - 10.0,
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">score</text>"#,
        cy = TOP + plot_h / 2.0,
    );

    let mut legend_y = TOP;
    for (i, (label, report)) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (m, (name, dash)) in METRICS.iter().enumerate() {
            let points = report
                .per_position_scores
                .iter()
                .map(|p| {
                    let v = [p.rouge_l_f, p.rouge1_f, p.bleu][m];
                    format!("{:.2},{:.2}", x(p.position), y(v))
                })
                .collect::<Vec<_>>()
                .join(" ");
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash_attr} points="{points}"/>"#
            );
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{legend_y:.2}" x2="{lx2:.2}" y2="{legend_y:.2}" stroke="{color}" stroke-width="2"{dash_attr}/><text x="{tx:.2}" y="{ty:.2}">{text}</text>"#,
                lx2 = lx + 24.0,
                tx = lx + 30.0,
                ty = legend_y + 4.0,
                text = escape(&format!("{label} {name}")),
            );
            legend_y += 16.0;
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use elicit_core::metrics::PositionScore;
    use std::collections::BTreeMap;

    fn report() -> MetricsReport {
        MetricsReport {
            transcripts: 2,
            match_rate: 1.0,
            mean_questions: 2.0,
            bleu_mean: 1.0,
            rouge1_f_mean: 1.0,
            rouge_l_f_mean: 1.0,
            unanswered_rate: 0.0,
            repetition_rate: 0.0,
            per_position_scores: (1..=2)
                .map(|position| PositionScore {
                    position,
                    bleu: position as f64 / 2.0,
                    rouge1_f: position as f64 / 2.0,
                    rouge_l_f: position as f64 / 2.0,
                })
                .collect(),
            weighted_ranks: BTreeMap::from([("Genre".to_string(), 1.0)]),
        }
    }

    #[test]
    fn csv_rows() {
        let csv = to_csv(&report());
        let lines = csv.lines().collect::<Vec<_>>();
        assert_eq!(lines[0], "metric,key,value");
        assert!(lines.contains(&"bleu_mean,,1"));
        assert!(lines.contains(&"rouge1_f_at_position,1,0.5"));
        assert!(lines.contains(&"weighted_rank,Genre,1"));
        assert_eq!(lines.len(), 1 + 8 + 6 + 1);
    }

    #[test]
    fn svg_has_one_curve_per_metric_and_report() {
        let svg = curves_svg(&[("a".into(), report()), ("b<c".into(), report())]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains("b&lt;c ROUGE-L"));
    }
}
