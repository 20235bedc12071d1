//! Static HTML and SVG rendering of word importance and attention heads.
//!
//! Every renderer is a pure function of its view: numbers are printed with a
//! fixed precision and no timestamps or environment data are embedded, so
//! identical views give byte-identical documents on every platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::AttentionGrid;

const CELL: usize = 22;
const LABEL_MARGIN: usize = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceView {
    pub id: String,
    pub tokens: Vec<String>,
    /// Normalized scores in `[-1, 1]`.
    pub scores: Vec<f64>,
    pub true_label: Option<String>,
    pub predicted_label: String,
    pub predicted_probability: f64,
    /// Sum of the raw attributions.
    pub attribution_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapView {
    /// Row-major `n x n`.
    pub matrix: Vec<f64>,
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
    pub caption: String,
}

impl HeatmapView {
    /// View of one head, captioned `Head l-h` (1-based).
    pub fn from_grid(grid: &AttentionGrid, layer: usize, head: usize) -> Self {
        Self {
            matrix: grid.matrix(layer, head).to_vec(),
            x_labels: grid.tokens.clone(),
            y_labels: grid.tokens.clone(),
            caption: head_caption(layer, head),
        }
    }
}

/// `Head l-h` with 1-based indices.
pub fn head_caption(layer: usize, head: usize) -> String {
    format!("Head {}-{}", layer + 1, head + 1)
}

/// File name of the heatmap of a 0-based layer and head.
pub fn attention_file_name(layer: usize, head: usize) -> String {
    format!("attn_{}_{}.svg", layer + 1, head + 1)
}

/// File name of the importance page of example `id`.
pub fn importance_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("importance_{safe}.html")
}

pub const GRID_FILE_NAME: &str = "grid.html";

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// JSON safe to embed inside a `<script>` element.
fn json_island<T: Serialize>(value: &T) -> Result<String> {
    let s = serde_json::to_string(value)?;
    Ok(s.replace('&', "\\u0026").replace('<', "\\u003c").replace('>', "\\u003e"))
}

/// Background of a token cell: green for positive scores, red for negative,
/// opacity `|score|`.
pub fn score_color(score: f64) -> String {
    let alpha = score.abs().min(1.0);
    if score >= 0.0 {
        format!("rgba(0, 160, 60, {alpha:.3})")
    } else {
        format!("rgba(210, 30, 30, {alpha:.3})")
    }
}

const PAGE_STYLE: &str = "body { font-family: sans-serif; margin: 24px; }
.tokens { line-height: 2.2; }
.tok { padding: 3px 5px; margin: 1px; border-radius: 3px; border: 1px solid #ddd; }
.legend span { padding: 2px 8px; margin-right: 6px; }
table.meta td { padding: 2px 10px 2px 0; }
.panel { display: inline-block; vertical-align: top; margin: 8px; }
.row { white-space: nowrap; }";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>{}</title>\n<style>\n{}\n</style>\n</head>\n<body>\n{}</body>\n</html>\n",
        escape(title),
        PAGE_STYLE,
        body
    )
}

pub fn render_importance_html(view: &ImportanceView) -> Result<String> {
    if view.tokens.len() != view.scores.len() {
        return Err(Error::Render(format!(
            "{} tokens but {} scores",
            view.tokens.len(),
            view.scores.len()
        )));
    }
    if let Some(s) = view.scores.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
        return Err(Error::Render(format!("score {s} outside [-1, 1]")));
    }
    if !view.predicted_probability.is_finite() || !view.attribution_score.is_finite() {
        return Err(Error::Render("non-finite probability or attribution score".into()));
    }
    let mut b = String::new();
    b.push_str(&format!("<h1>Word importance: {}</h1>\n", escape(&view.id)));
    b.push_str("<table class=\"meta\">\n");
    let true_label = view.true_label.as_deref().unwrap_or("-");
    for (k, v) in [
        ("True Label", escape(true_label)),
        ("Predicted Label", escape(&view.predicted_label)),
        ("Predicted Probability", format!("{:.4}", view.predicted_probability)),
        ("Attribution Score", format!("{:.4}", view.attribution_score)),
    ] {
        b.push_str(&format!("<tr><td>{k}</td><td>{v}</td></tr>\n"));
    }
    b.push_str("</table>\n<p class=\"tokens\">\n");
    for (t, s) in view.tokens.iter().zip(&view.scores) {
        b.push_str(&format!(
            "<span class=\"tok\" style=\"background-color: {}\" title=\"{:.4}\">{}</span>\n",
            score_color(*s),
            s,
            escape(t)
        ));
    }
    b.push_str("</p>\n<p class=\"legend\">\n");
    b.push_str(&format!(
        "<span style=\"background-color: {}\">negative</span>\n<span style=\"background-color: {}\">neutral</span>\n<span style=\"background-color: {}\">positive</span>\n",
        score_color(-1.0),
        score_color(0.0),
        score_color(1.0)
    ));
    b.push_str("</p>\n");
    b.push_str(&format!(
        "<script type=\"application/json\" id=\"importance-data\">{}</script>\n",
        json_island(view)?
    ));
    Ok(page(&format!("Word importance {}", view.id), &b))
}

/// Gray level of a cell: `255 * value / max`, so brighter means more attention.
fn gray(value: f64, max: f64) -> u8 {
    if max <= 0.0 {
        return 0;
    }
    (255.0 * (value / max).clamp(0.0, 1.0)).round() as u8
}

fn svg_body(view: &HeatmapView) -> Result<String> {
    let n = view.x_labels.len();
    if view.y_labels.len() != n || view.matrix.len() != n * n {
        return Err(Error::Render(format!(
            "matrix of {} cells for {} x {} labels",
            view.matrix.len(),
            view.y_labels.len(),
            n
        )));
    }
    if let Some(v) = view.matrix.iter().find(|v| !v.is_finite()) {
        return Err(Error::Render(format!("non-finite attention value {v}")));
    }
    let max = view.matrix.iter().fold(0.0_f64, |m, &v| m.max(v));
    let side = LABEL_MARGIN + n * CELL + 10;
    let height = side + 24;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{height}\" viewBox=\"0 0 {side} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s.push_str(&format!("<title>{}</title>\n", escape(&view.caption)));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"16\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        side / 2,
        escape(&view.caption)
    ));
    let top = LABEL_MARGIN + 24;
    for (j, l) in view.x_labels.iter().enumerate() {
        let x = LABEL_MARGIN + j * CELL + CELL / 2;
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-60 {x} {})\">{}</text>\n",
            top - 4,
            top - 4,
            escape(l)
        ));
    }
    for (i, l) in view.y_labels.iter().enumerate() {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            LABEL_MARGIN - 4,
            top + i * CELL + CELL / 2 + 4,
            escape(l)
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let v = view.matrix[i * n + j];
            let g = gray(v, max);
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"#{g:02x}{g:02x}{g:02x}\"><title>{:.4}</title></rect>\n",
                LABEL_MARGIN + j * CELL,
                top + i * CELL,
                v
            ));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Standalone SVG heatmap; cell brightness is the value over the matrix max.
pub fn render_attention_svg(view: &HeatmapView) -> Result<String> {
    Ok(format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n{}", svg_body(view)?))
}

/// One model's attention grid with a display name.
pub struct NamedGrid<'a> {
    pub name: &'a str,
    pub grid: &'a AttentionGrid,
}

/// Heads to show, 0-based `(layer, head)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSelection {
    All,
    Heads(Vec<(usize, usize)>),
}

impl HeadSelection {
    /// Parses `all` or a comma list of 1-based `layer-head` pairs, e.g. `3-6,1-1`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        let heads = s
            .split(',')
            .map(|part| {
                let (l, h) = part
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("head {part:?} is not layer-head")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&x| x >= 1)
                        .ok_or_else(|| Error::Config(format!("bad head index {v:?}")))
                };
                Ok((parse(l)? - 1, parse(h)? - 1))
            })
            .collect::<Result<_>>()?;
        Ok(Self::Heads(heads))
    }
}

/// Page with one row per selected head and one captioned panel per model,
/// left to right in the given order.
pub fn render_head_grid(grids: &[NamedGrid<'_>], selection: &HeadSelection) -> Result<String> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Comparison("no attention grids to render".into()))?;
    for g in &grids[1..] {
        if g.grid.tokens != first.grid.tokens {
            return Err(Error::Comparison(format!(
                "{} and {} tokenize the input differently",
                first.name, g.name
            )));
        }
    }
    let heads: Vec<(usize, usize)> = match selection {
        HeadSelection::All => (0..first.grid.layers)
            .flat_map(|l| (0..first.grid.heads).map(move |h| (l, h)))
            .collect(),
        HeadSelection::Heads(v) => v.clone(),
    };
    let mut b = String::from("<h1>Attention heads</h1>\n");
    for &(l, h) in &heads {
        b.push_str("<div class=\"row\">\n");
        for g in grids {
            if l >= g.grid.layers || h >= g.grid.heads {
                return Err(Error::Comparison(format!(
                    "{} has no {}",
                    g.name,
                    head_caption(l, h)
                )));
            }
            let view = HeatmapView::from_grid(g.grid, l, h);
            b.push_str(&format!(
                "<div class=\"panel\">\n<p>{} ({})</p>\n{}</div>\n",
                escape(&view.caption),
                escape(g.name),
                svg_body(&view)?
            ));
        }
        b.push_str("</div>\n");
    }
    Ok(page("Attention heads", &b))
}
