//! SVG charts drawn from the CSV artifacts.
//!
//! Both charts are 640×400 with a 50px margin. The plot area holds a y axis
//! from 0 to the larger of 1 and the column maximum (`<line class="axis">`),
//! one tick label per quarter of that range, one `<text class="label">` per
//! row under the x axis, and either one `<rect class="bar">` or one
//! `<circle class="point">` per row with a value, the points joined by a
//! `<polyline class="line">`. Rows with an empty value cell are labelled
//! but not drawn. Every mark carries `data-label` and `data-value`.

use std::fmt::Write;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

struct Column {
    labels: Vec<String>,
    values: Vec<Option<f64>>,
}

fn read_columns(csv_text: &str, label: &str, value: &str) -> Result<Column> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers().map_err(super::report::csv_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("csv has no column `{name}`")))
    };
    let (li, vi) = (find(label)?, find(value)?);
    let mut col = Column {
        labels: Vec::new(),
        values: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(super::report::csv_err)?;
        col.labels.push(rec.get(li).unwrap_or_default().to_string());
        let cell = rec.get(vi).unwrap_or_default().trim();
        col.values.push(if cell.is_empty() {
            None
        } else {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("`{cell}` is not finite")));
            }
            Some(v)
        });
    }
    Ok(col)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    top: f64,
    slot: f64,
    svg: String,
}

impl Frame {
    fn new(title: &str, col: &Column) -> Self {
        let top = col.values.iter().flatten().fold(1.0f64, |m, &v| m.max(v));
        let n = col.labels.len().max(1) as f64;
        let slot = (WIDTH - 2.0 * MARGIN) / n;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(
            svg,
            r#"<text class="title" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            MARGIN / 2.0,
            escape(title)
        );
        let (x0, y0, y1) = (MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(
            svg,
            r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
            WIDTH - MARGIN
        );
        let _ = writeln!(
            svg,
            r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
        );
        let mut f = Frame { top, slot, svg };
        for q in 0..=4 {
            let v = top * q as f64 / 4.0;
            let y = f.y(v);
            let _ = writeln!(
                f.svg,
                r#"<text class="tick" x="{}" y="{y}" text-anchor="end" font-size="10">{}</text>"#,
                MARGIN - 4.0,
                format_tick(v)
            );
        }
        for (i, l) in col.labels.iter().enumerate() {
            let _ = writeln!(
                f.svg,
                r#"<text class="label" x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                f.x_center(i),
                HEIGHT - MARGIN + 14.0,
                escape(l)
            );
        }
        f
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - v / self.top * (HEIGHT - 2.0 * MARGIN)
    }

    fn x_center(&self, i: usize) -> f64 {
        MARGIN + self.slot * (i as f64 + 0.5)
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Bar chart of `value` per `label` row.
pub fn bar_chart_svg(csv_text: &str, label: &str, value: &str, title: &str) -> Result<String> {
    let col = read_columns(csv_text, label, value)?;
    let mut f = Frame::new(title, &col);
    for (i, (l, v)) in col.labels.iter().zip(&col.values).enumerate() {
        let Some(v) = v else { continue };
        let w = f.slot * 0.7;
        let y = f.y(*v);
        let _ = writeln!(
            f.svg,
            r#"<rect class="bar" x="{}" y="{y}" width="{w}" height="{}" fill="steelblue" data-label="{}" data-value="{v}"/>"#,
            f.x_center(i) - w / 2.0,
            HEIGHT - MARGIN - y,
            escape(l)
        );
    }
    Ok(f.finish())
}

/// Line chart of `value` over rows in file order.
pub fn line_chart_svg(csv_text: &str, label: &str, value: &str, title: &str) -> Result<String> {
    let col = read_columns(csv_text, label, value)?;
    let mut f = Frame::new(title, &col);
    let mut points = Vec::new();
    for (i, (l, v)) in col.labels.iter().zip(&col.values).enumerate() {
        let Some(v) = v else { continue };
        let (x, y) = (f.x_center(i), f.y(*v));
        points.push(format!("{x},{y}"));
        let _ = writeln!(
            f.svg,
            r#"<circle class="point" cx="{x}" cy="{y}" r="3" fill="darkred" data-label="{}" data-value="{v}"/>"#,
            escape(l)
        );
    }
    let _ = writeln!(
        f.svg,
        r#"<polyline class="line" points="{}" fill="none" stroke="darkred"/>"#,
        points.join(" ")
    );
    Ok(f.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "relation,accuracy\n0,0.5\n3,\n5,1\n";

    #[test]
    fn bars_follow_rows() {
        let svg = bar_chart_svg(CSV, "relation", "accuracy", "acc").unwrap();
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
        assert_eq!(svg.matches("class=\"label\"").count(), 3);
        assert!(svg.contains(r#"data-label="5" data-value="1""#));
        // A value of 1 on a 0..1 axis reaches the top margin.
        assert!(svg.contains(r#"y="50" width"#));
    }

    #[test]
    fn line_skips_empty_cells() {
        let svg = line_chart_svg(CSV, "relation", "accuracy", "a < b").unwrap();
        assert_eq!(svg.matches("class=\"point\"").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(bar_chart_svg(CSV, "relation", "recall", "").is_err());
        assert!(bar_chart_svg("r,v\n1,abc\n", "r", "v", "").is_err());
    }
}
