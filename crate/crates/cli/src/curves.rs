//! Learning-curve export: CSV of the logged means and an SVG line chart.

use std::fmt::Write;

use d2i_core::trainer::TrainLogRecord;

pub const CSV_HEADER: &str =
    "step,mean_total_reward,mean_format_reward,mean_accuracy_reward,mean_kl,clip_fraction";

pub fn to_csv(records: &[TrainLogRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.mean_total_reward, r.mean_format_reward, r.mean_accuracy_reward, r.mean_kl, r.clip_fraction
        );
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Total reward against step, on a fixed [0, 1] vertical axis.
pub fn total_reward_svg(records: &[TrainLogRecord]) -> String {
    let first = records.first().map_or(0, |r| r.step) as f64;
    let last = records.last().map_or(1, |r| r.step) as f64;
    let span = (last - first).max(1.0);
    let x = |step: usize| MARGIN + (step as f64 - first) / span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - v.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

    let points: Vec<String> =
        records.iter().map(|r| format!("{:.2},{:.2}", x(r.step), y(r.mean_total_reward))).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, y(0.0), y(1.0));
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for v in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x0}" y="{:.2}" font-size="11">{first}</text><text x="{x1}" y="{:.2}" font-size="11" text-anchor="end">{last}</text>"#,
        y0 + 16.0,
        y0 + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" font-size="13" text-anchor="middle">mean total reward by step</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    svg
}
