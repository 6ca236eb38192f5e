//! Write-only SVG heatmaps of snapshot fields. Figures are offline
//! artifacts: one deterministic vector file per call, no interactivity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// A snapshot CSV parsed back into its grid: one header row of x-node
/// coordinates, then one row of values per age cell, youngest first.
#[derive(Debug, Clone)]
pub struct SnapshotGrid {
    pub x_nodes: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl SnapshotGrid {
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.rows {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

/// Parse a snapshot CSV. `label` names the source in errors.
pub fn parse_snapshot(text: &str, label: &str) -> Result<SnapshotGrid> {
    let err = |line: usize, message: String| CliError::Config {
        path: label.to_string(),
        line,
        message,
    };
    let parse_row = |line_no: usize, line: &str| -> Result<Vec<f64>> {
        line.split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| err(line_no, format!("bad number '{}'", cell.trim())))
            })
            .collect()
    };

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty snapshot file".to_string()))?;
    let x_nodes = parse_row(header_no + 1, header)?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = parse_row(i + 1, line)?;
        if row.len() != x_nodes.len() {
            return Err(err(
                i + 1,
                format!("row has {} cells, header has {}", row.len(), x_nodes.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(header_no + 1, "snapshot has no age rows".to_string()));
    }
    Ok(SnapshotGrid { x_nodes, rows })
}

/// Read a snapshot CSV from disk and render it.
pub fn render_file(input: &Path, a_dagger: f64) -> Result<String> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let grid = parse_snapshot(&text, &input.display().to_string())?;
    Ok(heatmap_svg(&grid, a_dagger))
}

const COLOR_STOPS: [(u8, u8, u8); 5] = [
    (0x44, 0x01, 0x54),
    (0x3b, 0x52, 0x8b),
    (0x21, 0x91, 0x8c),
    (0x5e, 0xc9, 0x62),
    (0xfd, 0xe7, 0x25),
];

/// Map t ∈ [0, 1] onto the dark-violet-to-yellow ramp.
pub fn colormap(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let scaled = t * (COLOR_STOPS.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(COLOR_STOPS.len() - 2);
    let frac = scaled - i as f64;
    let mix = |a: u8, b: u8| (f64::from(a) + frac * (f64::from(b) - f64::from(a))).round() as u8;
    let (r0, g0, b0) = COLOR_STOPS[i];
    let (r1, g1, b1) = COLOR_STOPS[i + 1];
    format!("#{:02x}{:02x}{:02x}", mix(r0, r1), mix(g0, g1), mix(b0, b1))
}

const PLOT_W: f64 = 600.0;
const PLOT_H: f64 = 400.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 58.0;

/// Render the field as a cell heatmap. Age runs bottom-up from 0 to a†,
/// biting time left-right from 0 to 24. A flat field (zero included) maps
/// every cell to the low end of the ramp.
pub fn heatmap_svg(grid: &SnapshotGrid, a_dagger: f64) -> String {
    let n_x = grid.x_nodes.len();
    let n_a = grid.rows.len();
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    let normalize = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.0 };

    let width = MARGIN_LEFT + PLOT_W + MARGIN_RIGHT;
    let height = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;
    let cell_w = PLOT_W / n_x as f64;
    let cell_h = PLOT_H / n_a as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"24\" font-family=\"monospace\" font-size=\"13\">min {} max {}</text>",
        MARGIN_LEFT,
        format_label(lo),
        format_label(hi),
    );

    for (k, row) in grid.rows.iter().enumerate() {
        // Row k is the age cell centered at (k + 1/2)Δa; age grows upward.
        let y = MARGIN_TOP + PLOT_H - (k + 1) as f64 * cell_h;
        for (j, &v) in row.iter().enumerate() {
            let x = MARGIN_LEFT + j as f64 * cell_w;
            let _ = writeln!(
                svg,
                "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{c}\"/>",
                w = cell_w + 0.1,
                h = cell_h + 0.1,
                c = colormap(normalize(v)),
            );
        }
    }

    let _ = writeln!(
        svg,
        "  <rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"14\" \
         text-anchor=\"middle\">x \u{2208} [0, 24]</text>",
        MARGIN_LEFT + PLOT_W / 2.0,
        MARGIN_TOP + PLOT_H + 40.0,
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"monospace\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 {x:.2} {y:.2})\">a \u{2208} [0, {ad}]</text>",
        x = MARGIN_LEFT - 44.0,
        y = MARGIN_TOP + PLOT_H / 2.0,
        ad = a_dagger,
    );
    svg.push_str("</svg>\n");
    svg
}

fn format_label(v: f64) -> String {
    format!("{v:.6e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_by_four() -> SnapshotGrid {
        SnapshotGrid {
            x_nodes: vec![0.0, 6.0, 12.0, 18.0],
            rows: vec![
                vec![0.0, 1.0, 2.0, 3.0],
                vec![3.0, 2.0, 1.0, 0.0],
                vec![0.5, 0.5, 0.5, 0.5],
            ],
        }
    }

    #[test]
    fn colormap_hits_the_ramp_ends() {
        assert_eq!(colormap(0.0), "#440154");
        assert_eq!(colormap(1.0), "#fde725");
        assert_eq!(colormap(0.5), "#21918c");
        assert_eq!(colormap(-2.0), "#440154");
        assert_eq!(colormap(f64::NAN), "#440154");
    }

    #[test]
    fn snapshot_roundtrip_through_the_parser() {
        let text = "0,6,12,18\n0,1,2,3\n3,2,1,0\n0.5,0.5,0.5,0.5\n";
        let grid = parse_snapshot(text, "s.csv").unwrap();
        assert_eq!(grid.x_nodes, vec![0.0, 6.0, 12.0, 18.0]);
        assert_eq!(grid.rows.len(), 3);
        assert_eq!(grid.min_max(), (0.0, 3.0));
    }

    #[test]
    fn ragged_snapshot_is_rejected_with_its_line() {
        let err = parse_snapshot("0,6\n1,2\n1,2,3\n", "s.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s.csv:3"), "{msg}");
        assert!(msg.contains("3 cells"), "{msg}");
    }

    #[test]
    fn heatmap_is_a_complete_svg_with_axis_labels() {
        let svg = heatmap_svg(&three_by_four(), 10.0);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("x \u{2208} [0, 24]"));
        assert!(svg.contains("a \u{2208} [0, 10]"));
        assert!(svg.contains("min 0.000000e0"));
        assert!(svg.contains("max 3.000000e0"));
        assert_eq!(svg.matches("<rect").count(), 12 + 2);
    }

    #[test]
    fn flat_field_renders_in_a_single_color_without_error() {
        let grid = SnapshotGrid {
            x_nodes: vec![0.0, 12.0],
            rows: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let svg = heatmap_svg(&grid, 5.0);
        assert_eq!(svg.matches("#440154").count(), 4);
        assert!(!svg.contains("NaN"));
    }
}
