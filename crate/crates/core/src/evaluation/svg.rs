use std::fmt::Write as _;

use super::EvalReport;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart: one group per bin, one bar per gold level, heights as
/// the fraction of that level's scores falling in the bin.
pub fn render_svg(report: &EvalReport) -> String {
    let series = report.histograms.len().max(1);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let group_w = plot_w / report.bins as f64;
    let bar_w = group_w * 0.8 / series as f64;
    let frac = |count: usize, total: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };
    let peak = report
        .histograms
        .iter()
        .flat_map(|h| h.counts.iter().map(move |&c| frac(c, h.total)))
        .fold(0.0f64, f64::max)
        .max(1e-12);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(svg, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#);
    for (s, h) in report.histograms.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for (b, &count) in h.counts.iter().enumerate() {
            let height = frac(count, h.total) / peak * plot_h;
            let x = MARGIN + b as f64 * group_w + group_w * 0.1 + s as f64 * bar_w;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.3}" y="{:.3}" width="{bar_w:.3}" height="{height:.3}" fill="{color}"/>"#,
                base - height
            );
        }
        let ly = MARGIN + 16.0 * s as f64;
        let lx = WIDTH - MARGIN - 90.0;
        let _ = writeln!(svg, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" font-size="12">level {}</text>"#, lx + 14.0, h.level);
    }
    for tick in 0..=4 {
        let x = MARGIN + plot_w * tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            base + 16.0,
            tick as f64 / 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::LevelHistogram;

    #[test]
    fn one_rect_per_bin_and_level() {
        let report = EvalReport {
            pairwise_accuracy: 1.0,
            n_triplets: 1,
            tie_count: 0,
            bins: 5,
            histograms: vec![
                LevelHistogram { level: 0, counts: vec![1, 0, 0, 0, 0], total: 1, middle_mass: 0.0 },
                LevelHistogram { level: 1, counts: vec![0, 0, 0, 0, 1], total: 1, middle_mass: 0.0 },
            ],
        };
        let svg = render_svg(&report);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        // background + 10 bars + 2 legend swatches
        assert_eq!(svg.matches("<rect").count(), 13);
        assert!(svg.contains("level 1"));
    }
}
