//! Artifact writing: CSV tables, line-delimited JSON and SVG figures, each
//! hashed as it is written.

use crate::error::Result;
use crate::record::Artifact;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct OutputDir {
    pub root: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.root.join(name), bytes)?;
        let sha256 = hex::encode(Sha256::digest(bytes));
        self.artifacts.retain(|a| a.name != name);
        self.artifacts.push(Artifact {
            name: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut s = String::new();
        for r in rows {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 48.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Map `[lo, hi]` onto the plot area in both axes with a common scale.
struct Square {
    lo: [f64; 2],
    scale: f64,
}

impl Square {
    fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
        Self {
            lo,
            scale: (H - 2.0 * PAD) / span,
        }
    }

    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.lo[0]) * self.scale
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.lo[1]) * self.scale
    }
}

/// Circles and squares projected onto the first two coordinates.
/// Above `max_items` shapes a regular subsample is drawn.
pub fn scatter_svg(
    title: &str,
    circles: &[([f64; 2], f64)],
    squares: &[([f64; 2], f64)],
    max_items: usize,
) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (c, r) in circles.iter().chain(squares) {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k] - r);
            hi[k] = hi[k].max(c[k] + r);
        }
    }
    let mut s = header(title);
    if lo[0].is_finite() {
        let sq = Square::new(lo, hi);
        let total = circles.len() + squares.len();
        let stride = total.div_ceil(max_items.max(1)).max(1);
        for (c, r) in circles.iter().step_by(stride) {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"0.5\"/>",
                sq.x(c[0]),
                sq.y(c[1]),
                (r * sq.scale).max(0.3)
            );
        }
        for (c, h) in squares.iter().step_by(stride) {
            let side = (2.0 * h * sq.scale).max(0.3);
            let _ = writeln!(
                s,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{side:.3}\" height=\"{side:.3}\" fill=\"darkred\"/>",
                sq.x(c[0] - h),
                sq.y(c[1] + h)
            );
        }
        if stride > 1 {
            let _ = writeln!(
                s,
                "<text x=\"{PAD}\" y=\"{}\">every {stride}th of {total} shapes</text>",
                H - 12.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of `(x, y)` series, each drawn with markers, sharing axes.
pub fn line_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let mut s = header(title);
    if !pts.is_empty() {
        let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
            (a.0.min(p.0), a.1.max(p.0))
        });
        let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
            (a.0.min(p.1), a.1.max(p.1))
        });
        let (x1, y1) = (
            if x1 > x0 { x1 } else { x0 + 1.0 },
            if y1 > y0 { y1 } else { y0 + 1.0 },
        );
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        axes(&mut s, x_label, y_label, (x0, x1), (y0, y1));
        let colors = ["steelblue", "darkred", "darkgreen", "orange"];
        for (i, (name, v)) in series.iter().enumerate() {
            let c = colors[i % colors.len()];
            let path: Vec<String> = v
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\"/>",
                path.join(" ")
            );
            for p in path {
                let (a, b) = p.split_once(',').unwrap();
                let _ = writeln!(s, "<circle cx=\"{a}\" cy=\"{b}\" r=\"3\" fill=\"{c}\"/>");
            }
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>",
                W - PAD - 140.0,
                PAD + 16.0 * i as f64,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64)) {
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>",
        H - PAD + 16.0,
        xr.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>",
        W - PAD,
        H - PAD + 16.0,
        xr.1
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        PAD - 4.0,
        H - PAD,
        yr.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{PAD}\" text-anchor=\"end\">{:.3}</text>",
        PAD - 4.0,
        yr.1
    );
}

/// Bars of `p_hat` with three-sigma whiskers and a horizontal level line.
pub fn bars_svg(title: &str, bars: &[(f64, f64)], level: f64) -> String {
    let mut s = header(title);
    axes(
        &mut s,
        "probe",
        "hitting probability",
        (0.0, bars.len() as f64),
        (0.0, 1.0),
    );
    let n = bars.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / n;
    let py = |y: f64| H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    for (i, &(p, se)) in bars.iter().enumerate() {
        let x = PAD + bw * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
            x + 0.1 * bw,
            py(p),
            0.8 * bw,
            py(0.0) - py(p)
        );
        let xm = x + 0.5 * bw;
        let _ = writeln!(
            s,
            "<line x1=\"{xm:.2}\" y1=\"{:.2}\" x2=\"{xm:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            py(p - 3.0 * se),
            py(p + 3.0 * se)
        );
    }
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"darkred\" stroke-dasharray=\"4 3\"/>", py(level), W - PAD);
    s.push_str("</svg>\n");
    s
}
