//! SVG figures rendered from their paired CSV files.
//!
//! Every figure is written by first saving its raw data and then rendering
//! that file, so `render_csv` on the saved data reproduces the figure byte for
//! byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Bins of a score histogram.
pub const HIST_BINS: usize = 30;

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 56.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Roc,
    Histogram,
    Bar,
}

impl FigureKind {
    pub fn prefix(self) -> &'static str {
        match self {
            Self::Roc => "roc",
            Self::Histogram => "hist",
            Self::Bar => "bar",
        }
    }

    fn from_stem(stem: &str) -> Option<(Self, &str)> {
        let (prefix, name) = stem.split_once('-')?;
        let kind = match prefix {
            "roc" => Self::Roc,
            "hist" => Self::Histogram,
            "bar" => Self::Bar,
            _ => return None,
        };
        Some((kind, name))
    }
}

/// A rendered figure and the data file it was rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub svg: PathBuf,
    pub data: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub id: usize,
    pub ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarValue {
    pub label: String,
    pub value: Option<f64>,
}

/// Lowercase alphanumerics, with every other run of characters turned into
/// one underscore.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let out = out.trim_matches('_').to_string();
    if out.is_empty() {
        "unnamed".into()
    } else {
        out
    }
}

/// Equal-width bins over the joint range of both score sets.
pub fn histogram(id: &[f64], ood: &[f64], bins: usize) -> Vec<HistBin> {
    let all = || id.iter().chain(ood);
    let lo = all().cloned().fold(f64::INFINITY, f64::min);
    let hi = all().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || bins == 0 {
        return vec![];
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistBin> = (0..bins)
        .map(|b| HistBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins && hi > lo { hi } else { lo + (b + 1) as f64 * width },
            id: 0,
            ood: 0,
        })
        .collect();
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in id {
        out[bin_of(v)].id += 1;
    }
    for &v in ood {
        out[bin_of(v)].ood += 1;
    }
    out
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| CliError::output(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::input(path, e))
}

/// Saves `points` as `roc-<name>.csv` in `dir` and renders the SVG next to it.
pub fn write_roc(dir: &Path, name: &str, points: &[RocPoint]) -> CliResult<Figure> {
    let data = dir.join(format!("roc-{}.csv", slug(name)));
    write_rows(&data, points, &["fpr", "tpr"])?;
    render_csv(&data)
}

pub fn write_histogram(dir: &Path, name: &str, bins: &[HistBin]) -> CliResult<Figure> {
    let data = dir.join(format!("hist-{}.csv", slug(name)));
    write_rows(&data, bins, &["lo", "hi", "id", "ood"])?;
    render_csv(&data)
}

pub fn write_bars(dir: &Path, name: &str, bars: &[BarValue]) -> CliResult<Figure> {
    let data = dir.join(format!("bar-{}.csv", slug(name)));
    write_rows(&data, bars, &["label", "value"])?;
    render_csv(&data)
}

/// Renders the figure belonging to a data file, writing `<stem>.svg` beside
/// it.
pub fn render_csv(data: &Path) -> CliResult<Figure> {
    let stem = data
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::usage(format!("{}: not a figure data file", data.display())))?;
    let (kind, name) = FigureKind::from_stem(stem)
        .ok_or_else(|| CliError::usage(format!("{}: unknown figure kind", data.display())))?;
    let svg = match kind {
        FigureKind::Roc => render_roc(&format!("ROC: {name}"), &read_rows(data)?),
        FigureKind::Histogram => render_histogram(&format!("Scores: {name}"), &read_rows(data)?),
        FigureKind::Bar => render_bars(&name.replace('_', " "), &read_rows(data)?),
    };
    let path = data.with_extension("svg");
    fs::write(&path, svg).map_err(|e| CliError::output(&path, e))?;
    Ok(Figure {
        svg: path,
        data: data.to_path_buf(),
    })
}

/// Re-renders every figure data file in `dir`, in file-name order.
pub fn render_dir(dir: &Path) -> CliResult<Vec<Figure>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(FigureKind::from_stem)
                    .is_some()
        })
        .collect();
    files.sort();
    files.iter().map(|f| render_csv(f)).collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Linear map from data ranges to the plot box.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let py = f.py(yv);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0,
            tick(yv)
        );
        if x_ticks {
            let xv = f.x.0 + t * (f.x.1 - f.x.0);
            let px = f.px(xv);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{y1:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y1 + 4.0,
                y1 + 16.0,
                tick(xv)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + 14.0 * i as f64;
        let x = W - RIGHT - 90.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}" fill-opacity="0.6"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 8.0,
            x + 14.0,
            y + 1.0,
            escape(label)
        );
    }
}

pub fn render_roc(title: &str, points: &[RocPoint]) -> String {
    let f = Frame::new((0.0, 1.0), (0.0, 1.0));
    let mut s = open(title);
    axes(&mut s, &f, "false positive rate", "true positive rate", true);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        f.px(0.0),
        f.py(0.0),
        f.px(1.0),
        f.py(1.0)
    );
    let mut path = String::new();
    for p in points {
        let _ = write!(path, "{:.2},{:.2} ", f.px(p.fpr), f.py(p.tpr));
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        path.trim_end()
    );
    s.push_str("</svg>\n");
    s
}

pub fn render_histogram(title: &str, bins: &[HistBin]) -> String {
    let n_id: usize = bins.iter().map(|b| b.id).sum();
    let n_ood: usize = bins.iter().map(|b| b.ood).sum();
    let frac = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let top = bins
        .iter()
        .map(|b| frac(b.id, n_id).max(frac(b.ood, n_ood)))
        .fold(0.0, f64::max);
    let lo = bins.first().map_or(0.0, |b| b.lo);
    let hi = bins.last().map_or(1.0, |b| b.hi);
    let f = Frame::new((lo, hi), (0.0, if top > 0.0 { top } else { 1.0 }));
    let mut s = open(title);
    axes(&mut s, &f, "score (higher = more in-distribution)", "fraction of samples", true);
    for (side, color) in [(true, "#1f77b4"), (false, "#d62728")] {
        for b in bins {
            let v = if side { frac(b.id, n_id) } else { frac(b.ood, n_ood) };
            if v == 0.0 {
                continue;
            }
            let (x0, x1) = (f.px(b.lo), f.px(b.hi));
            let y = f.py(v);
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                (x1 - x0).max(0.5),
                f.py(0.0) - y
            );
        }
    }
    legend(&mut s, &[("ID", "#1f77b4"), ("OOD", "#d62728")]);
    s.push_str("</svg>\n");
    s
}

pub fn render_bars(title: &str, bars: &[BarValue]) -> String {
    let top = bars.iter().filter_map(|b| b.value).fold(0.0, f64::max);
    let f = Frame::new((0.0, bars.len().max(1) as f64), (0.0, if top > 0.0 { top } else { 1.0 }));
    let mut s = open(title);
    axes(&mut s, &f, "", "value", false);
    for (i, b) in bars.iter().enumerate() {
        let (x0, x1) = (f.px(i as f64 + 0.15), f.px(i as f64 + 0.85));
        let cx = (x0 + x1) / 2.0;
        match b.value {
            Some(v) => {
                let y = f.py(v);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c"/>"##,
                    x1 - x0,
                    f.py(0.0) - y
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">n/a</text>"#,
                    f.py(0.0) - 4.0
                );
            }
        }
        let ly = H - BOTTOM + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-45 {cx:.2} {ly:.2})">{}</text>"#,
            escape(&b.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("Held Out/5"), "held_out_5");
        assert_eq!(slug("--"), "unnamed");
        assert_eq!(slug("svhn"), "svhn");
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0], &[1.0, 1.0], 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.id).sum::<usize>(), 3);
        assert_eq!(h[3].ood, 2);
        assert_eq!(h[0].lo, 0.0);
        assert_eq!(h[3].hi, 1.0);
        let flat = histogram(&[2.0], &[2.0], 3);
        assert_eq!(flat[0].id + flat[0].ood, 2);
    }

    #[test]
    fn svg_is_escaped_and_closed() {
        let s = render_bars("a<b", &[BarValue { label: "x&y".into(), value: None }]);
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
        assert!(s.ends_with("</svg>\n"));
    }
}
