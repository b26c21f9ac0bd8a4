//! Self-contained SVG plots of reward curves, trajectories and priorities.
//!
//! Output depends only on the input CSV text, so identical input gives
//! identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    RewardCurves,
    Trajectories,
    Priorities,
}

impl PlotKind {
    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::RewardCurves => &["episode", "R1", "R2"],
            PlotKind::Trajectories => &["step", "entity_kind", "entity_id", "x", "y"],
            PlotKind::Priorities => &["step", "robot", "object", "phi"],
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "reward-curves" => Ok(PlotKind::RewardCurves),
            "trajectories" => Ok(PlotKind::Trajectories),
            "priorities" => Ok(PlotKind::Priorities),
            other => Err(Error::Schema(format!(
                "unknown plot kind `{other}` (expected reward-curves, trajectories or priorities)"
            ))),
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Columns of the input, looked up by name.
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str, required: &[&str]) -> Result<Self, Error> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Schema(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        for name in required {
            if !columns.iter().any(|c| c == name) {
                return Err(Error::Schema(format!("missing column `{name}`")));
            }
        }
        let rows = reader
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(str::to_owned).collect())
                    .map_err(|e| Error::Schema(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Table { columns, rows })
    }

    fn text(&self, name: &str) -> Result<Vec<String>, Error> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.get(idx)
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("row {}: column `{name}` is empty", r + 1)))
            })
            .collect()
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>, Error> {
        self.text(name)?
            .iter()
            .enumerate()
            .map(|(r, v)| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::Schema(format!("row {}: column `{name}` is not a number: {v:?}", r + 1))
                })
            })
            .collect()
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        num(v)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, svg: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            num(l),
            num(t),
            num(w),
            num(h)
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                svg,
                r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" font-size="10" text-anchor="middle">{4}</text>"#,
                num(xp),
                num(t + h),
                num(t + h + 4.0),
                num(t + h + 15.0),
                label(xv)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><text x="{3}" y="{4}" font-size="10" text-anchor="end">{5}</text>"#,
                num(l - 4.0),
                num(yp),
                num(l),
                num(l - 6.0),
                num(yp + 3.0),
                label(yv)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            num(l + w / 2.0),
            num(t - 8.0),
            title
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            num(l + w / 2.0),
            num(t + h + 32.0),
            x_label
        );
        let _ = writeln!(
            svg,
            r#"<text x="{0}" y="{1}" font-size="11" text-anchor="middle" transform="rotate(-90 {0} {1})">{2}</text>"#,
            num(l - 48.0),
            num(t + h / 2.0),
            y_label
        );
    }

    fn polyline(&self, svg: &mut String, points: &[(f64, f64)], color: &str) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{},{}", num(self.px(x)), num(self.py(y))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
    }

    fn legend(&self, svg: &mut String, entries: &[(String, &str)]) {
        for (k, (name, color)) in entries.iter().enumerate() {
            let y = self.top + 12.0 + 14.0 * k as f64;
            let x = self.left + self.width + 10.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{0}" y1="{2}" x2="{1}" y2="{2}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}" font-size="10">{name}</text>"#,
                num(x),
                num(x + 16.0),
                num(y),
                num(x + 20.0),
                num(y + 3.0)
            );
        }
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n",
        w = num(width),
        h = num(height)
    )
}

/// Per-episode R1 and R2 in two stacked panels.
pub fn reward_curves(csv_text: &str) -> Result<String, Error> {
    let table = Table::parse(csv_text, PlotKind::RewardCurves.required_columns())?;
    let episode = table.numbers("episode")?;
    let mut body = String::new();
    for (k, (column, title)) in [("R1", "First term (R1)"), ("R2", "Second term (R2)")]
        .into_iter()
        .enumerate()
    {
        let values = table.numbers(column)?;
        let panel = Panel {
            left: 80.0,
            top: 30.0 + 260.0 * k as f64,
            width: 480.0,
            height: 190.0,
            x: range(episode.iter().copied()),
            y: range(values.iter().copied()),
        };
        panel.axes(&mut body, title, "episode", "cumulative reward");
        let points: Vec<(f64, f64)> = episode.iter().copied().zip(values).collect();
        panel.polyline(&mut body, &points, PALETTE[k]);
    }
    Ok(document(600.0, 540.0, &body))
}

/// Robot and object paths in the plane.
pub fn trajectories(csv_text: &str) -> Result<String, Error> {
    let table = Table::parse(csv_text, PlotKind::Trajectories.required_columns())?;
    let step = table.numbers("step")?;
    let kind = table.text("entity_kind")?;
    let id = table.numbers("entity_id")?;
    let x = table.numbers("x")?;
    let y = table.numbers("y")?;
    let mut paths: BTreeMap<(String, i64), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in 0..step.len() {
        paths
            .entry((kind[r].clone(), id[r] as i64))
            .or_default()
            .push((step[r], x[r], y[r]));
    }
    let (x0, x1) = range(x.iter().copied().chain([0.0, 10.0]));
    let (y0, y1) = range(y.iter().copied().chain([0.0, 10.0]));
    let panel = Panel {
        left: 70.0,
        top: 30.0,
        width: 440.0,
        height: 440.0 * (y1 - y0) / (x1 - x0),
        x: (x0, x1),
        y: (y0, y1),
    };
    let mut body = String::new();
    panel.axes(&mut body, "Trajectories", "x [m]", "y [m]");
    let mut legend = Vec::new();
    for (k, ((kind, id), mut pts)) in paths.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[k % PALETTE.len()];
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
        panel.polyline(&mut body, &xy, color);
        if kind == "object" {
            if let Some(&(_, ex, ey)) = pts.last() {
                let _ = writeln!(
                    body,
                    r#"<rect x="{}" y="{}" width="6" height="6" fill="{color}"/>"#,
                    num(panel.px(ex) - 3.0),
                    num(panel.py(ey) - 3.0)
                );
            }
        }
        legend.push((format!("{kind} {id}"), color));
    }
    panel.legend(&mut body, &legend);
    Ok(document(640.0, panel.height + 80.0, &body))
}

/// One panel per robot, one line per object.
pub fn priorities(csv_text: &str) -> Result<String, Error> {
    let table = Table::parse(csv_text, PlotKind::Priorities.required_columns())?;
    let step = table.numbers("step")?;
    let robot = table.numbers("robot")?;
    let object = table.numbers("object")?;
    let phi = table.numbers("phi")?;
    let mut series: BTreeMap<i64, BTreeMap<i64, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in 0..step.len() {
        series
            .entry(robot[r] as i64)
            .or_default()
            .entry(object[r] as i64)
            .or_default()
            .push((step[r], phi[r]));
    }
    let x = range(step.iter().copied());
    let mut body = String::new();
    if series.is_empty() {
        series.insert(0, BTreeMap::new());
    }
    let n_panels = series.len();
    for (k, (robot, objects)) in series.into_iter().enumerate() {
        let panel = Panel {
            left: 80.0,
            top: 30.0 + 200.0 * k as f64,
            width: 480.0,
            height: 140.0,
            x,
            y: (0.0, 1.0),
        };
        panel.axes(&mut body, &format!("Robot {robot}"), "step", "priority");
        let mut legend = Vec::new();
        for (object, mut pts) in objects {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let color = PALETTE[object as usize % PALETTE.len()];
            panel.polyline(&mut body, &pts, color);
            legend.push((format!("object {object}"), color));
        }
        panel.legend(&mut body, &legend);
    }
    Ok(document(660.0, 200.0 * n_panels as f64 + 20.0, &body))
}

pub fn render(kind: PlotKind, csv_text: &str) -> Result<String, Error> {
    match kind {
        PlotKind::RewardCurves => reward_curves(csv_text),
        PlotKind::Trajectories => trajectories(csv_text),
        PlotKind::Priorities => priorities(csv_text),
    }
}
