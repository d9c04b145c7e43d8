//! Self-contained SVG output: scatter plots of 2-D embeddings and line
//! plots of kernel curves. No external rendering dependencies, diffable
//! in tests.

use crate::error::Error;
use crate::init::Embedding;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN_FRAC: f64 = 0.05;

/// Okabe-Ito inspired categorical palette, cycled by label rank.
const PALETTE: [&str; 12] = [
    "#e69f00", "#56b4e9", "#009e73", "#f0e442", "#0072b2", "#d55e00",
    "#cc79a7", "#999999", "#8c3fb0", "#2f4b7c", "#a05195", "#665191",
];

fn axis_range(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    (min - MARGIN_FRAC * span, max + MARGIN_FRAC * span)
}

/// Scatter plot of a 2-D embedding, one circle per point, colored by
/// label when labels are given.
pub fn scatter_svg(
    emb: &Embedding,
    labels: Option<&[i64]>,
    point_size: f64,
) -> Result<String, Error> {
    if emb.dim != 2 {
        return Err(Error::Config(format!(
            "scatter plot requires a 2-D embedding, got dim {}",
            emb.dim
        )));
    }
    if emb.n_points == 0 {
        return Err(Error::Config("empty embedding".to_string()));
    }
    if let Some(labels) = labels {
        if labels.len() != emb.n_points {
            return Err(Error::LengthMismatch {
                what: "labels",
                found: labels.len(),
                expected: emb.n_points,
            });
        }
    }

    let (x_lo, x_hi) = axis_range((0..emb.n_points).map(|i| emb.point(i)[0]));
    let (y_lo, y_hi) = axis_range((0..emb.n_points).map(|i| emb.point(i)[1]));

    // Stable label -> color mapping by sorted label value.
    let color_of: std::collections::HashMap<i64, &str> = match labels {
        Some(labels) => {
            let mut distinct: Vec<i64> = labels.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            distinct
                .into_iter()
                .enumerate()
                .map(|(rank, l)| (l, PALETTE[rank % PALETTE.len()]))
                .collect()
        }
        None => Default::default(),
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    for i in 0..emb.n_points {
        let p = emb.point(i);
        let cx = (p[0] - x_lo) / (x_hi - x_lo) * WIDTH;
        // SVG y grows downward.
        let cy = HEIGHT - (p[1] - y_lo) / (y_hi - y_lo) * HEIGHT;
        let color = labels
            .map(|l| color_of[&l[i]])
            .unwrap_or("#0072b2");
        svg.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{point_size}\" \
             fill=\"{color}\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Line plot of one or more (x, y) series sharing the x axis, with a
/// simple legend.
pub fn line_svg(series: &[(String, Vec<(f64, f64)>)]) -> Result<String, Error> {
    if series.is_empty() || series.iter().any(|(_, pts)| pts.is_empty()) {
        return Err(Error::Config("nothing to plot".to_string()));
    }
    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let (x_lo, x_hi) = axis_range(all.clone().map(|&(x, _)| x));
    let (y_lo, y_hi) = axis_range(all.map(|&(_, y)| y));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    for (s, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let px = (x - x_lo) / (x_hi - x_lo) * WIDTH;
                let py = HEIGHT - (y - y_lo) / (y_hi - y_lo) * HEIGHT;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        let ly = 20.0 + 18.0 * s as f64;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" font-size=\"14\">{name}</text>\n",
            WIDTH - 120.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
