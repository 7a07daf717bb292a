//! Standalone SVG rendering of a regularization path: one coefficient
//! trajectory per covariate against log10(lambda), with a dashed vertical
//! marker at the BIC-minimizing lambda.

use nalgebra::DVector;

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 52.0;

/// Trajectories of covariates active in the chosen model get these colors
/// (cycled); the rest stay gray so the selected paths stand out.
const PALETTE: [&str; 8] = [
    "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#bcbd22",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, log_lambda: f64) -> f64 {
        let t = (log_lambda - self.x_min) / (self.x_max - self.x_min);
        MARGIN_LEFT + t * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, value: f64) -> f64 {
        let t = (value - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - MARGIN_BOTTOM - t * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders the path plot. `betas` holds one full-length coefficient vector
/// per lambda, `chosen` indexes the BIC minimizer, and `chosen_active`
/// flags the covariates retained there.
pub fn path_svg(
    lambdas: &[f64],
    betas: &[DVector<f64>],
    names: &[String],
    chosen: usize,
    chosen_active: &[bool],
) -> String {
    assert_eq!(lambdas.len(), betas.len(), "one coefficient vector per lambda");
    assert!(!lambdas.is_empty(), "empty path");
    let p = names.len();

    let logs: Vec<f64> = lambdas.iter().map(|l| l.log10()).collect();
    let (x_min, x_max) = pad_range(
        logs.iter().cloned().fold(f64::INFINITY, f64::min),
        logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut value_min = f64::INFINITY;
    let mut value_max = f64::NEG_INFINITY;
    for beta in betas {
        for &b in beta.iter() {
            value_min = value_min.min(b);
            value_max = value_max.max(b);
        }
    }
    value_min = value_min.min(0.0);
    value_max = value_max.max(0.0);
    let (y_min, y_max) = pad_range(value_min, value_max);
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    axes(&mut svg, &frame, &logs);

    // Zero line for reference when the coefficients change sign.
    let y0 = frame.y(0.0);
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{y0:.2}\" x2=\"{:.2}\" y2=\"{y0:.2}\" \
         stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
        frame.x(frame.x_min),
        frame.x(frame.x_max),
    ));

    let mut color_cursor = 0usize;
    let mut legend: Vec<(String, &str)> = Vec::new();
    for j in 0..p {
        let active = chosen_active.get(j).copied().unwrap_or(false);
        let (color, width) = if active {
            let color = PALETTE[color_cursor % PALETTE.len()];
            color_cursor += 1;
            if legend.len() < 10 {
                legend.push((names[j].clone(), color));
            }
            (color, 1.8)
        } else {
            ("#9a9a9a", 0.9)
        };
        let points: Vec<String> = logs
            .iter()
            .zip(betas.iter())
            .map(|(&lx, beta)| format!("{:.2},{:.2}", frame.x(lx), frame.y(beta[j])))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
            points.join(" ")
        ));
    }

    // The BIC-minimum marker.
    let x_chosen = frame.x(logs[chosen]);
    svg.push_str(&format!(
        "<line id=\"bic-minimum\" x1=\"{x_chosen:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{x_chosen:.2}\" \
         y2=\"{:.2}\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#d62728\" \
         font-family=\"sans-serif\">BIC minimum</text>\n",
        x_chosen + 5.0,
        MARGIN_TOP + 12.0,
    ));

    legend_box(&mut svg, &legend);
    svg.push_str("</svg>\n");
    svg
}

fn axes(svg: &mut String, frame: &Frame, logs: &[f64]) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{MARGIN_TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));

    // X ticks at integer powers of ten inside the range, or the grid
    // endpoints when the range contains none.
    let mut ticks: Vec<f64> = (frame.x_min.ceil() as i64..=frame.x_max.floor() as i64)
        .map(|k| k as f64)
        .collect();
    if ticks.is_empty() {
        ticks = vec![logs[0], logs[logs.len() - 1]];
    }
    for &t in &ticks {
        let x = frame.x(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">1e{t:.0}</text>\n",
            y0 + 20.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">lambda (log scale)</text>\n",
        (x0 + x1) / 2.0,
        y0 + 40.0
    ));

    for i in 0..=4 {
        let value = frame.y_min + (frame.y_max - frame.y_min) * (i as f64) / 4.0;
        let y = frame.y(value);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" \
             font-family=\"sans-serif\">{value:.2}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {:.2})\">coefficient</text>\n",
        (MARGIN_TOP + y0) / 2.0,
        (MARGIN_TOP + y0) / 2.0
    ));
}

fn legend_box(svg: &mut String, legend: &[(String, &str)]) {
    let x = WIDTH - MARGIN_RIGHT + 14.0;
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            y - 4.0,
            x + 22.0,
            y - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"12\" font-family=\"sans-serif\">{name}</text>\n",
            x + 28.0
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_path() -> (Vec<f64>, Vec<DVector<f64>>, Vec<String>) {
        let lambdas = vec![100.0, 10.0, 1.0, 0.1];
        let betas = vec![
            DVector::from_vec(vec![0.01, 0.0, 0.0]),
            DVector::from_vec(vec![0.5, -0.1, 0.0]),
            DVector::from_vec(vec![1.2, -0.8, 0.02]),
            DVector::from_vec(vec![1.4, -1.0, 0.10]),
        ];
        let names = vec!["sex".to_string(), "age".to_string(), "noise".to_string()];
        (lambdas, betas, names)
    }

    #[test]
    fn plot_marks_the_bic_minimum_and_draws_every_trajectory() {
        let (lambdas, betas, names) = toy_path();
        let svg = path_svg(&lambdas, &betas, &names, 2, &[true, true, false]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("id=\"bic-minimum\""));
        assert!(svg.contains("stroke-dasharray"));
        // Active covariates are named in the legend.
        assert!(svg.contains(">sex</text>"));
        assert!(svg.contains(">age</text>"));
    }

    #[test]
    fn marker_sits_at_the_chosen_lambda() {
        let (lambdas, betas, names) = toy_path();
        let svg = path_svg(&lambdas, &betas, &names, 0, &[true, false, false]);
        let marker_line = svg
            .lines()
            .find(|l| l.contains("bic-minimum"))
            .expect("marker present");
        // lambda = 100 is the right edge of the unpadded range.
        let x: f64 = marker_line
            .split("x1=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let right_edge = WIDTH - MARGIN_RIGHT;
        assert!(x < right_edge, "marker inside the frame");
        assert!(x > right_edge - 40.0, "marker near the high-lambda edge");
    }

    #[test]
    fn single_point_path_still_renders() {
        let svg = path_svg(
            &[5.0],
            &[DVector::from_vec(vec![0.3])],
            &["x1".to_string()],
            0,
            &[true],
        );
        assert!(svg.contains("bic-minimum"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
