//! Small dependency-free SVG plots: polylines, scatters and bars.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        if !x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    let _ = writeln!(s, "<text x=\"{MARGIN}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", H - MARGIN + 14.0, f.x0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", W - MARGIN, H - MARGIN + 14.0, f.x1);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", MARGIN - 4.0, H - MARGIN, f.y0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", MARGIN - 4.0, MARGIN + 4.0, f.y1);
    s
}

fn legend(s: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y}\" fill=\"{}\">{}</text>",
            MARGIN + 8.0,
            COLORS[k % COLORS.len()],
            escape(name)
        );
    }
}

/// One polyline per series.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, pts)| pts.iter()));
    let mut s = open(title, xlabel, ylabel, &f);
    for (k, (_, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            COLORS[k % COLORS.len()],
            path.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// ROC curves on the unit square with the chance diagonal.
pub fn roc(curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut series = curves.to_vec();
    series.push(("chance".into(), vec![(0.0, 0.0), (1.0, 1.0)]));
    lines("ROC", "false positive rate", "true positive rate", &series)
}

pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let f = Frame::fit(points.iter());
    let mut s = open(title, xlabel, ylabel, &f);
    for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>",
            f.px(x),
            f.py(y),
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn bars(title: &str, labels: &[String], values: &[f64]) -> String {
    let top = values.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let f = Frame {
        x0: 0.0,
        x1: values.len().max(1) as f64,
        y0: 0.0,
        y1: top,
    };
    let mut s = open(title, "", "", &f);
    let bw = (W - 2.0 * MARGIN) / values.len().max(1) as f64;
    for (k, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + bw * k as f64;
        let y = f.py(v.max(0.0));
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            x + 0.1 * bw,
            0.8 * bw,
            H - MARGIN - y,
            COLORS[0]
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
            x + 0.5 * bw,
            H - MARGIN + 26.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_closed_and_escaped() {
        let s = lines("a<b", "x", "y", &[("s".into(), vec![(0.0, 0.0), (1.0, 2.0)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
        assert!(s.contains("<polyline"));
        let r = roc(&[("lr".into(), vec![(0.0, 0.0), (0.5, 0.8), (1.0, 1.0)])]);
        assert_eq!(r.matches("<polyline").count(), 2);
        assert_eq!(scatter("t", "x", "y", &[(1.0, 1.0), (f64::NAN, 0.0)]).matches("<circle").count(), 1);
        assert_eq!(bars("t", &["a".into(), "b".into()], &[1.0, 3.0]).matches("<rect").count(), 3);
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let s = scatter("t", "x", "y", &[(1.0, 1.0), (1.0, 1.0)]);
        assert!(!s.contains("NaN"));
        assert!(!lines("t", "x", "y", &[]).contains("NaN"));
    }
}
