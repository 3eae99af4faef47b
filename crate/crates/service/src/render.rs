//! PNG encoding for frames, masks and overlays, and SVG curve plots.

use std::fmt::Write as _;
use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use ivos_core::data_io::palette;
use ivos_core::LabelMap;

pub fn encode_rgb_png(img: &RgbImage) -> image::ImageResult<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_label_png(labels: &LabelMap) -> ivos_core::Result<Vec<u8>> {
    let mut out = Vec::new();
    ivos_core::data_io::encode_label_png(&mut out, labels)?;
    Ok(out)
}

/// Blends each object's palette color over the frame at `opacity`;
/// background pixels are left untouched.
pub fn overlay(frame: &RgbImage, labels: &LabelMap, opacity: f64) -> RgbImage {
    let colors = palette();
    let mut out = frame.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let label = labels.labels()[i];
        if label == 0 {
            continue;
        }
        for (c, v) in px.0.iter_mut().enumerate() {
            let mixed =
                (1.0 - opacity) * f64::from(*v) + opacity * f64::from(colors[label as usize][c]);
            *v = mixed.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// One line on a round-indexed plot.
pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub emphasis: bool,
}

const PLOT_COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Score-per-round line plot with a fixed [0, 1] y axis.
pub fn round_curve_svg(title: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let rounds = series
        .iter()
        .map(|s| s.values.len())
        .max()
        .unwrap_or(1)
        .max(1);
    let x = |r: usize| {
        if rounds == 1 {
            left + pw / 2.0
        } else {
            left + pw * r as f64 / (rounds - 1) as f64
        }
    };
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y0:.1}" y2="{y0:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            y0 = y(v),
        );
    }
    for r in 0..rounds {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(r),
            top + ph + 18.0,
            r + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">round</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (i, line) in series.iter().enumerate() {
        let color = if line.emphasis {
            "black"
        } else {
            PLOT_COLORS[i % PLOT_COLORS.len()]
        };
        let width = if line.emphasis { 2.5 } else { 1.2 };
        let points: Vec<String> = line
            .values
            .iter()
            .enumerate()
            .map(|(r, &v)| format!("{:.1},{:.1}", x(r), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="{width}"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0,
            escape(line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn overlay_leaves_background_alone() {
        let frame = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let labels = LabelMap::from_vec(1, 2, vec![0, 1]).unwrap();
        let out = overlay(&frame, &labels, 0.5);
        assert_eq!(out.get_pixel(0, 0), &Rgb([100, 100, 100]));
        // Label 1 is (128, 0, 0) in the VOC palette.
        assert_eq!(out.get_pixel(1, 0), &Rgb([114, 50, 50]));
        assert_eq!(overlay(&frame, &labels, 0.0), frame);
    }

    #[test]
    fn label_png_round_trips() {
        let labels = LabelMap::from_vec(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let bytes = encode_label_png(&labels).unwrap();
        assert_eq!(
            ivos_core::data_io::decode_label_png(Cursor::new(bytes)).unwrap(),
            labels
        );
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let svg = round_curve_svg(
            "J <per round>",
            &[
                Series {
                    label: "a",
                    values: &[0.1, 0.5, 0.9],
                    emphasis: false,
                },
                Series {
                    label: "mean",
                    values: &[0.2],
                    emphasis: true,
                },
            ],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("J &lt;per round&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
