//! Tiny static-SVG rendering for trajectories and heatmaps.

/// One named series for a line plot.
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !(ymax > ymin) {
        ymax = ymin + 1.0;
    }
    if !(xmax > xmin) {
        xmax = xmin + 1.0;
    }
    (xmin, xmax, ymin, ymax)
}

/// Render line series into a standalone SVG document.
pub fn line_plot(title: &str, series: &[Series]) -> String {
    let (w, h, pad) = (860.0, 420.0, 45.0);
    let (xmin, xmax, ymin, ymax) = bounds(series);
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        pad, title
    );
    out.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"#888\"/>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    ));
    out.push_str(&format!(
        "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{:.3} .. {:.3}</text>\n",
        h - pad + 28.0,
        xmin,
        xmax
    ));
    out.push_str(&format!(
        "<text x=\"2\" y=\"{pad}\" font-family=\"sans-serif\" font-size=\"11\">{ymax:.3}</text>\n\
         <text x=\"2\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{ymin:.3}</text>\n",
        h - pad
    ));
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.4\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            w - pad - 150.0,
            20.0 + 16.0 * i as f64,
            s.color,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Render a value grid (row-major) as a colored-cell heatmap.
pub fn heatmap_plot(
    title: &str,
    values: &[f64],
    nx: usize,
    ny: usize,
    x_label: &str,
    y_label: &str,
) -> String {
    let (w, h, pad) = (560.0, 560.0, 60.0);
    let vmax = values.iter().cloned().fold(f64::MIN, f64::max);
    let vmin = values.iter().cloned().fold(f64::MAX, f64::min);
    let cw = (w - 2.0 * pad) / nx as f64;
    let ch = (h - 2.0 * pad) / ny as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x_label} → (min {vmin:.4}, max {vmax:.4})</text>\n\
         <text x=\"8\" y=\"{pad}\" font-family=\"sans-serif\" font-size=\"11\">{y_label} ↑</text>\n",
        h - 14.0
    );
    for j in 0..ny {
        for i in 0..nx {
            let v = values[j * nx + i];
            let t = if vmax > vmin {
                ((v - vmin) / (vmax - vmin)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            // Dark blue (small) to yellow (large).
            let r = (t * 253.0) as u8;
            let g = (40.0 + t * 191.0) as u8;
            let b = (84.0 + (1.0 - t) * 100.0) as u8;
            let x = pad + i as f64 * cw;
            let y = h - pad - (j + 1) as f64 * ch;
            out.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"rgb({r},{g},{b})\"/>\n"
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
