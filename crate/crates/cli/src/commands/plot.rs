//! Plain SVG scatter plots and heatmaps, each with the plotted numbers as CSV.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use styleforge::analysis::ConfusionMatrix;
use styleforge::retrieval::RetrievalReport;
use styleforge::Error;

use super::{csv_field, write_text};
use crate::cli::PlotArgs;
use crate::manifest::Recorder;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub series: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Scatter {
        x_label: String,
        y_label: String,
        points: Vec<Point>,
    },
    Heatmap(ConfusionMatrix),
}

impl Figure {
    pub fn from_report(report: &RetrievalReport) -> Result<Self, Error> {
        let mut points = Vec::new();
        for (series, values) in [("map", &report.map_at_k), ("recall", &report.recall_at_k)] {
            for k in &report.k_values {
                let y = *values.get(k).ok_or_else(|| {
                    Error::validation(format!("report has no {series} value for k={k}"))
                })?;
                points.push(Point {
                    series: series.into(),
                    label: format!("k={k}"),
                    x: *k as f64,
                    y,
                });
            }
        }
        Self::scatter("k", "score", points)
    }

    /// Scores in row order, or joined on `(id, label)` against a second table.
    pub fn from_scores(first: &[ScoreRow], against: Option<&[ScoreRow]>) -> Result<Self, Error> {
        let points = match against {
            None => first
                .iter()
                .enumerate()
                .map(|(i, r)| Point {
                    series: "gss".into(),
                    label: r.key(),
                    x: i as f64,
                    y: r.score,
                })
                .collect(),
            Some(second) => {
                let lookup: HashMap<String, f64> =
                    second.iter().map(|r| (r.key(), r.score)).collect();
                first
                    .iter()
                    .filter_map(|r| {
                        lookup.get(&r.key()).map(|&y| Point {
                            series: "gss".into(),
                            label: r.key(),
                            x: r.score,
                            y,
                        })
                    })
                    .collect()
            }
        };
        let x_label = if against.is_some() {
            "score (first)"
        } else {
            "row"
        };
        Self::scatter(
            x_label,
            if against.is_some() {
                "score (second)"
            } else {
                "score"
            },
            points,
        )
    }

    pub fn from_confusion(matrix: ConfusionMatrix) -> Result<Self, Error> {
        if matrix.groups.is_empty() {
            return Err(Error::validation("confusion matrix is empty"));
        }
        Ok(Figure::Heatmap(matrix))
    }

    fn scatter(x_label: &str, y_label: &str, points: Vec<Point>) -> Result<Self, Error> {
        if points.is_empty() {
            return Err(Error::validation("nothing to plot"));
        }
        Ok(Figure::Scatter {
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
        })
    }

    pub fn to_csv(&self) -> String {
        match self {
            Figure::Scatter { points, .. } => {
                let mut out = String::from("series,label,x,y\n");
                for p in points {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        csv_field(&p.series),
                        csv_field(&p.label),
                        p.x,
                        p.y
                    );
                }
                out
            }
            Figure::Heatmap(m) => {
                let mut out = String::from("truth,predicted,count\n");
                for (t, row) in m.groups.iter().zip(&m.counts) {
                    for (p, c) in m.groups.iter().zip(row) {
                        let _ = writeln!(out, "{},{},{c}", csv_field(t), csv_field(p));
                    }
                }
                out
            }
        }
    }

    pub fn to_svg(&self) -> String {
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        match self {
            Figure::Scatter {
                x_label,
                y_label,
                points,
            } => scatter_svg(&mut svg, x_label, y_label, points),
            Figure::Heatmap(m) => heatmap_svg(&mut svg, m),
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: String,
    pub score: f64,
}

impl ScoreRow {
    fn key(&self) -> String {
        format!("{}/{}", self.id, self.label)
    }
}

/// Reads the `id,label,score,band` table written by `gss`.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>, Error> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("id,label,score") => {}
        _ => {
            return Err(Error::validation(
                "score CSV must start with an id,label,score header",
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < 3 {
                return Err(Error::validation(format!(
                    "score CSV row {}: too few cells",
                    n + 1
                )));
            }
            let score = cells[2].parse().map_err(|_| {
                Error::validation(format!("score CSV row {}: bad score {:?}", n + 1, cells[2]))
            })?;
            Ok(ScoreRow {
                id: cells[0].into(),
                label: cells[1].into(),
                score,
            })
        })
        .collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn scatter_svg(svg: &mut String, x_label: &str, y_label: &str, points: &[Point]) {
    let (x0, x1) = range(points.iter().map(|p| p.x));
    let (y0, y1) = range(points.iter().map(|p| p.y));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        "<path d=\"M{left} {top} V{bottom} H{right}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xv:.3}</text>",
            sx(xv),
            bottom + 16.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.3}</text>",
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16 {:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        HEIGHT / 2.0,
        escape(y_label)
    );
    let mut series: Vec<&str> = Vec::new();
    for p in points {
        if !series.contains(&p.series.as_str()) {
            series.push(&p.series);
        }
        let color = PALETTE[series.iter().position(|s| *s == p.series).unwrap() % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<circle class=\"marker\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"><title>{}</title></circle>",
            sx(p.x),
            sy(p.y),
            escape(&format!("{} {}: {}", p.series, p.label, p.y))
        );
    }
    for (i, s) in series.iter().enumerate() {
        let y = top + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{y:.2}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            right,
            escape(s)
        );
    }
}

fn heatmap_svg(svg: &mut String, m: &ConfusionMatrix) {
    let n = m.groups.len() as f64;
    let cell = ((WIDTH - 2.0 * MARGIN).min(HEIGHT - 2.0 * MARGIN)) / n;
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (i, row) in m.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let shade = 255 - (c as f64 / max * 200.0).round() as u8;
            let (x, y) = (MARGIN + j as f64 * cell, MARGIN + i as f64 * cell);
            let _ = writeln!(
                svg,
                "<rect class=\"cell\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"><title>{} → {}: {c}</title></rect>",
                escape(&m.groups[i]),
                escape(&m.groups[j])
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{c}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (i, g) in m.groups.iter().enumerate() {
        let mid = MARGIN + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{mid:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN - 6.0,
            escape(g)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{mid:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN - 8.0,
            escape(g)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">predicted (columns) by truth (rows)</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
}

fn read(path: &Path, rec: &mut Recorder) -> anyhow::Result<String> {
    rec.input(path)?;
    Ok(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn plot(args: &PlotArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let figure = if let Some(path) = &args.report {
        rec.input(path)?;
        Figure::from_report(&RetrievalReport::load(path)?)?
    } else if let Some(path) = &args.gss {
        let first = parse_scores(&read(path, rec)?)?;
        let second = match &args.against {
            Some(p) => Some(parse_scores(&read(p, rec)?)?),
            None => None,
        };
        Figure::from_scores(&first, second.as_deref())?
    } else {
        let path = args.confusion.as_ref().expect("clap requires one input");
        Figure::from_confusion(ConfusionMatrix::from_csv(&read(path, rec)?)?)?
    };
    let csv_path = args
        .csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    let inputs = [&args.report, &args.gss, &args.against, &args.confusion];
    if inputs
        .iter()
        .any(|p| p.as_deref() == Some(csv_path.as_path()))
    {
        return Err(Error::validation(format!(
            "{} is also an input; pass --csv",
            csv_path.display()
        ))
        .into());
    }
    write_text(&args.out, &figure.to_svg(), rec)?;
    write_text(&csv_path, &figure.to_csv(), rec)?;
    println!("wrote {} and {}", args.out.display(), csv_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: &str, score: f64) -> ScoreRow {
        ScoreRow {
            id: id.into(),
            label: label.into(),
            score,
        }
    }

    #[test]
    fn single_point_gives_one_marker_and_row() {
        let fig = Figure::from_scores(&[row("a", "x", 0.7)], None).unwrap();
        assert_eq!(fig.to_svg().matches("class=\"marker\"").count(), 1);
        assert_eq!(fig.to_csv().lines().count(), 2);
    }

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let m = ConfusionMatrix {
            groups: vec!["a".into(), "b".into(), "c".into()],
            counts: vec![vec![0, 1, 2]; 3],
        };
        let fig = Figure::from_confusion(m).unwrap();
        assert_eq!(fig.to_svg().matches("class=\"cell\"").count(), 9);
        assert_eq!(fig.to_csv().lines().count(), 10);
    }

    #[test]
    fn joins_on_id_and_label() {
        let a = [row("a", "x", 0.1), row("b", "x", 0.2)];
        let b = [row("b", "x", 0.9)];
        let Figure::Scatter { points, .. } = Figure::from_scores(&a, Some(&b)).unwrap() else {
            panic!()
        };
        assert_eq!(points.len(), 1);
        assert_eq!((points[0].x, points[0].y), (0.2, 0.9));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(Figure::from_scores(&[], None).unwrap_err().is_validation());
        let empty = ConfusionMatrix {
            groups: vec![],
            counts: vec![],
        };
        assert!(Figure::from_confusion(empty).unwrap_err().is_validation());
        assert!(parse_scores("id,label,score,band\na,x,nan?\n").is_err());
    }

    #[test]
    fn scores_parse() {
        let rows = parse_scores("id,label,score,band\na,x,0.5,inconclusive\n").unwrap();
        assert_eq!(rows, vec![row("a", "x", 0.5)]);
    }
}
