//! Minimal SVG line charts of accuracy against training budget.

use std::collections::BTreeMap;
use std::fmt::Write;

use xmorph::eval::{AccuracyRow, Condition};
use xmorph::{Method, Task};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub condition: Condition,
    /// `(budget, mean, std)` in budget order.
    pub points: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub task: Task,
    pub method: Method,
    pub series: Vec<Series>,
    /// Mean accuracy with every training object or trial.
    pub a_all: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups report rows into one chart per task and method. Folds are
/// averaged within a repeat; the band is the spread across repeats.
pub fn charts(rows: &[(Task, Method, AccuracyRow)]) -> Vec<Chart> {
    type Cell = BTreeMap<(Condition, usize), BTreeMap<usize, Vec<f64>>>;
    let mut grouped: BTreeMap<(String, String), (Task, Method, Cell)> = BTreeMap::new();
    for (task, method, row) in rows {
        let budget = if row.condition == Condition::All { 0 } else { row.budget };
        grouped
            .entry((task.to_string(), method.to_string()))
            .or_insert_with(|| (*task, *method, BTreeMap::new()))
            .2
            .entry((row.condition, budget))
            .or_default()
            .entry(row.repeat)
            .or_default()
            .push(row.accuracy);
    }
    grouped
        .into_values()
        .map(|(task, method, cells)| {
            let mut series: BTreeMap<Condition, Vec<(usize, f64, f64)>> = BTreeMap::new();
            let mut a_all = None;
            for ((condition, budget), repeats) in cells {
                let per_repeat: Vec<f64> =
                    repeats.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
                let (mean, std) = mean_std(&per_repeat);
                if condition == Condition::All {
                    a_all = Some(mean);
                } else {
                    series.entry(condition).or_default().push((budget, mean, std));
                }
            }
            Chart {
                task,
                method,
                series: series.into_iter().map(|(condition, points)| Series { condition, points }).collect(),
                a_all,
            }
        })
        .collect()
}

fn color(condition: Condition) -> &'static str {
    match condition {
        Condition::Baseline => "#1f77b4",
        Condition::Transfer => "#d62728",
        Condition::All => "#555555",
    }
}

fn legend(condition: Condition) -> &'static str {
    match condition {
        Condition::Baseline => "baseline",
        Condition::Transfer => "transfer",
        Condition::All => "all data",
    }
}

pub fn file_name(chart: &Chart) -> String {
    format!("{}-{}.svg", chart.task, chart.method)
}

/// Renders a chart. Every plotted point carries its values as data
/// attributes so the file can be checked against the CSV.
pub fn render(chart: &Chart) -> String {
    let budgets: Vec<usize> = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x_min = budgets.iter().copied().min().unwrap_or(0) as f64;
    let mut x_max = budgets.iter().copied().max().unwrap_or(1) as f64;
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |b: f64| LEFT + (b - x_min) / (x_max - x_min) * plot_w;
    let sy = |a: f64| TOP + (1.0 - a.clamp(0.0, 100.0) / 100.0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} / {}</text>"#,
        LEFT + plot_w / 2.0,
        chart.task,
        chart.method
    );

    for tick in (0..=100).step_by(20) {
        let y = sy(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let mut seen = Vec::new();
    for &b in &budgets {
        if seen.contains(&b) {
            continue;
        }
        seen.push(b);
        let x = sx(b as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{b}</text>"#,
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">training budget</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy (%)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for series in &chart.series {
        let c = color(series.condition);
        let upper: Vec<String> =
            series.points.iter().map(|&(b, m, sd)| format!("{:.2},{:.2}", sx(b as f64), sy(m + sd))).collect();
        let lower: Vec<String> =
            series.points.iter().rev().map(|&(b, m, sd)| format!("{:.2},{:.2}", sx(b as f64), sy(m - sd))).collect();
        let _ = writeln!(
            s,
            r#"<polygon class="band" fill="{c}" fill-opacity="0.18" stroke="none" points="{} {}"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> =
            series.points.iter().map(|&(b, m, _)| format!("{:.2},{:.2}", sx(b as f64), sy(m))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" data-condition="{}" fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
            series.condition,
            line.join(" ")
        );
        for &(b, m, sd) in &series.points {
            let _ = writeln!(
                s,
                r#"<circle data-condition="{}" data-budget="{b}" data-mean="{m}" data-std="{sd}" cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                series.condition,
                sx(b as f64),
                sy(m)
            );
        }
    }
    if let Some(a) = chart.a_all {
        let y = sy(a);
        let _ = writeln!(
            s,
            r#"<line data-condition="all" data-mean="{a}" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-dasharray="6 4"/>"#,
            LEFT + plot_w,
            color(Condition::All)
        );
    }

    let mut entries: Vec<Condition> = chart.series.iter().map(|s| s.condition).collect();
    if chart.a_all.is_some() {
        entries.push(Condition::All);
    }
    for (i, cond) in entries.iter().enumerate() {
        let y = TOP + 12.0 + 20.0 * i as f64;
        let x = LEFT + plot_w + 14.0;
        let dash = if *cond == Condition::All { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            color(*cond),
            x + 30.0,
            y + 4.0,
            legend(*cond)
        );
    }
    s.push_str("</svg>\n");
    s
}
