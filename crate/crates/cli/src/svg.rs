//! Minimal static SVG line charts.

use std::fmt::Write as _;

use crate::report::Aggregate;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn as a dashed horizontal reference line at this level.
    pub reference: Option<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with the y axis fixed to [0, 1]. `log_x` plots x on a log10
/// scale (all x must be positive).
pub fn line_chart(title: &str, x_label: &str, series: &[Series], log_x: bool) -> String {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))).collect();
    let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (tx(x) - lo) / (hi - lo) * pw;
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(title));
    // axes and y grid
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{y:.1}</text>"##,
            py(y),
            LEFT + pw,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{0}" stroke="black"/><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    // x ticks at the data points
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/><text x="{0:.1}" y="{3}" text-anchor="middle">{t}</text>"#,
            px(t),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">mean F1</text>"#,
        TOP + ph / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        if let Some(r) = ser.reference {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{c}" stroke-dasharray="6 4"/>"#,
                py(r),
                LEFT + pw
            );
        }
        if !ser.points.is_empty() {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(x), py(y));
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let dash = if ser.points.is_empty() { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn param_value(param: &str, key: &str) -> Option<f64> {
    param.strip_prefix(key)?.strip_prefix('=')?.parse().ok()
}

/// Mean F1 against a grid parameter for one mode, one line per model, with
/// the centralized and plain federated means as dashed references.
pub fn chart_for(groups: &[Aggregate], mode: &str, key: &str, title: &str, log_x: bool) -> String {
    let mut models: Vec<&str> = groups.iter().map(|g| g.model.as_str()).collect();
    models.dedup();
    let mut series = Vec::new();
    for m in &models {
        let mut points: Vec<(f64, f64)> = groups
            .iter()
            .filter(|g| g.model == *m && g.mode == mode && g.n > 0)
            .filter_map(|g| param_value(&g.param, key).map(|x| (x, g.mean_f1)))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series {
            name: format!("{m} {mode}"),
            points,
            reference: None,
        });
        for base in ["central", "federated"] {
            if let Some(g) = groups.iter().find(|g| g.model == *m && g.mode == base && g.n > 0) {
                series.push(Series {
                    name: format!("{m} {base}"),
                    points: Vec::new(),
                    reference: Some(g.mean_f1),
                });
            }
        }
    }
    line_chart(title, key, &series, log_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(mode: &str, param: &str, f1: f64) -> Aggregate {
        Aggregate {
            model: "logreg".into(),
            mode: mode.into(),
            param: param.into(),
            n: 2,
            failed: 0,
            mean_f1: f1,
            std_f1: 0.0,
        }
    }

    #[test]
    fn chart_has_one_marker_per_point() {
        let g = vec![
            agg("central", "", 0.9),
            agg("federated", "", 0.85),
            agg("federated-syntactic", "k=3", 0.7),
            agg("federated-syntactic", "k=10", 0.6),
            agg("federated-syntactic", "k=50", 0.5),
        ];
        let svg = chart_for(&g, "federated-syntactic", "k", "F1 vs k", false);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 4);
    }

    #[test]
    fn log_axis_and_empty_input_do_not_panic() {
        let g = vec![agg("federated-dp", "epsilon=0.01", 0.3), agg("federated-dp", "epsilon=0.9", 0.4)];
        let svg = chart_for(&g, "federated-dp", "epsilon", "F1 vs epsilon", true);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("NaN"));
        let empty = line_chart("t", "x", &[], true);
        assert!(!empty.contains("NaN"));
    }

    #[test]
    fn titles_are_escaped() {
        assert!(line_chart("a<b", "x", &[], false).contains("a&lt;b"));
    }
}
