//! Accuracy-vs-round line chart as a standalone SVG.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use crate::SimError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One plotted line: `(round, accuracy)` points in round order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(u32, f64)>,
}

/// Numeric ε first (ascending), then `noise-free`, then anything else by name.
fn series_order(a: &str, b: &str) -> Ordering {
    let rank = |s: &str| match s.parse::<f64>() {
        Ok(v) => (0, v),
        Err(_) if s == "noise-free" => (1, 0.0),
        Err(_) => (2, 0.0),
    };
    let (ra, rb) = (rank(a), rank(b));
    ra.0.cmp(&rb.0)
        .then(ra.1.total_cmp(&rb.1))
        .then_with(|| a.cmp(b))
}

fn legend_text(label: &str) -> String {
    match label.parse::<f64>() {
        Ok(_) => format!("ε={label}"),
        Err(_) => label.to_string(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Reads metrics CSVs into series. Rows are grouped by their `epsilon`
/// column (or by file stem when there is none) and accuracy is averaged
/// over all rows sharing a series and round, i.e. over seeds.
pub fn load_series(csv_paths: &[PathBuf]) -> Result<Vec<Series>, SimError> {
    let mut sums: BTreeMap<String, BTreeMap<u32, (f64, u32)>> = BTreeMap::new();
    for path in csv_paths {
        let err = |msg: String| SimError::Render(format!("{}: {msg}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(round_col), Some(acc_col)) = (col("round"), col("accuracy")) else {
            return Err(err("missing round or accuracy column".into()));
        };
        let eps_col = col("epsilon");
        let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let mut rows = 0;
        for row in reader.records() {
            let row = row.map_err(|e| err(e.to_string()))?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let round: u32 = field(round_col)
                .parse()
                .map_err(|_| err(format!("bad round {:?}", field(round_col))))?;
            let acc: f64 = field(acc_col)
                .parse()
                .map_err(|_| err(format!("bad accuracy {:?}", field(acc_col))))?;
            let label = eps_col.map_or_else(|| stem.clone(), |c| field(c).to_string());
            let slot = sums.entry(label).or_default().entry(round).or_insert((0.0, 0));
            slot.0 += acc;
            slot.1 += 1;
            rows += 1;
        }
        if rows == 0 {
            return Err(err("no data rows".into()));
        }
    }
    if sums.is_empty() {
        return Err(SimError::Render("no input CSVs".into()));
    }
    let mut series: Vec<Series> = sums
        .into_iter()
        .map(|(label, rounds)| Series {
            label,
            points: rounds.into_iter().map(|(r, (s, n))| (r, s / n as f64)).collect(),
        })
        .collect();
    series.sort_by(|a, b| series_order(&a.label, &b.label));
    Ok(series)
}

/// Renders series with accuracy on a fixed [0, 1] axis.
pub fn chart_svg(series: &[Series]) -> Result<String, SimError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(SimError::Render("nothing to plot".into()));
    }
    let rounds = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let lo = rounds.clone().min().unwrap_or(1) as f64;
    let hi = rounds.max().unwrap_or(1) as f64;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = |r: f64| match hi > lo {
        true => LEFT + (r - lo) / (hi - lo) * pw,
        false => LEFT + pw / 2.0,
    };
    let y = |a: f64| TOP + (1.0 - a.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let yy = y(a);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{a:.1}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let mut ticks: Vec<u32> = (0..=4).map(|k| (lo + (hi - lo) * k as f64 / 4.0).round() as u32).collect();
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            x(t as f64),
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">accuracy</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .points
            .iter()
            .map(|&(r, a)| format!("{:.2},{:.2}", x(r as f64), y(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&legend_text(&series.label))
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads the CSVs and renders one line per series.
pub fn render_chart(csv_paths: &[PathBuf]) -> Result<String, SimError> {
    chart_svg(&load_series(csv_paths)?)
}
