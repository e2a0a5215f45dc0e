//! Minimal raster plotting: lines, bands, axes and a 3×5 bitmap font.

use blrp::viz::RgbImage;

pub const BLACK: [u8; 3] = [0, 0, 0];
pub const WHITE: [u8; 3] = [255, 255, 255];
pub const GRAY: [u8; 3] = [200, 200, 200];

/// Distinguishable line colors, cycled by series index.
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
];

fn glyph(c: char) -> [u8; 5] {
    // rows top to bottom, 3 bits each (MSB = left column)
    match c.to_ascii_lowercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'a' => [2, 5, 7, 5, 5],
        'b' => [6, 5, 6, 5, 6],
        'c' => [3, 4, 4, 4, 3],
        'd' => [6, 5, 5, 5, 6],
        'e' => [7, 4, 6, 4, 7],
        'f' => [7, 4, 6, 4, 4],
        'g' => [3, 4, 5, 5, 3],
        'h' => [5, 5, 7, 5, 5],
        'i' => [7, 2, 2, 2, 7],
        'j' => [1, 1, 1, 5, 2],
        'k' => [5, 5, 6, 5, 5],
        'l' => [4, 4, 4, 4, 7],
        'm' => [5, 7, 7, 5, 5],
        'n' => [6, 5, 5, 5, 5],
        'o' => [2, 5, 5, 5, 2],
        'p' => [6, 5, 6, 4, 4],
        'q' => [2, 5, 5, 6, 3],
        'r' => [6, 5, 6, 5, 5],
        's' => [3, 4, 2, 1, 6],
        't' => [7, 2, 2, 2, 2],
        'u' => [5, 5, 5, 5, 7],
        'v' => [5, 5, 5, 5, 2],
        'w' => [5, 5, 7, 7, 5],
        'x' => [5, 5, 2, 5, 5],
        'y' => [5, 5, 2, 2, 2],
        'z' => [7, 1, 2, 4, 7],
        '_' => [0, 0, 0, 0, 7],
        '.' => [0, 0, 0, 0, 2],
        ',' => [0, 0, 0, 2, 4],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '=' => [0, 7, 0, 7, 0],
        '%' => [5, 1, 2, 4, 5],
        '(' => [2, 4, 4, 4, 2],
        ')' => [2, 1, 1, 1, 2],
        ':' => [0, 2, 0, 2, 0],
        ' ' => [0; 5],
        _ => [7, 1, 2, 0, 2],
    }
}

/// Width in pixels of `text` at `scale`.
pub fn text_width(text: &str, scale: usize) -> usize {
    text.chars().count() * 4 * scale
}

pub fn draw_text(img: &mut RgbImage, x0: usize, y0: usize, text: &str, scale: usize, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    img.fill_rect(x0 + (4 * i + col) * scale, y0 + r * scale, scale, scale, color);
                }
            }
        }
    }
}

/// Bresenham line between integer points.
pub fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 {
            img.set(x as usize, y as usize, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn lighten(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| (v as u16 + 3 * 255).div_euclid(4) as u8)
}

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub mean: &'a [f64],
    pub stderr: &'a [f64],
}

/// What was drawn, for callers that need to check the raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotLayout {
    pub legend: Vec<String>,
    /// Plot area `(left, top, width, height)` in pixels.
    pub area: (usize, usize, usize, usize),
    pub y_range: (f64, f64),
}

pub const PLOT_WIDTH: usize = 720;
pub const PLOT_HEIGHT: usize = 440;

/// Mean curves with ±stderr bands, axes with end labels, and a legend.
pub fn plot_curves(series: &[Series], x_label: &str, y_label: &str) -> (RgbImage, PlotLayout) {
    let mut img = RgbImage::new(PLOT_WIDTH, PLOT_HEIGHT, WHITE);
    let (left, top, right, bottom) = (70usize, 20usize, 170usize, 50usize);
    let (w, h) = (PLOT_WIDTH - left - right, PLOT_HEIGHT - top - bottom);

    let xs = series.iter().flat_map(|s| s.x.iter().copied());
    let x_max = xs.fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for (m, e) in s.mean.iter().zip(s.stderr) {
            lo = lo.min(m - e);
            hi = hi.max(m + e);
        }
    }
    if !(hi > lo) {
        let pad = if lo.is_finite() { lo.abs().max(1.0) * 0.1 } else { 1.0 };
        (lo, hi) = if lo.is_finite() { (lo - pad, hi + pad) } else { (0.0, 1.0) };
    }
    let px = |x: f64| left as f64 + x / x_max * (w - 1) as f64;
    let py = |y: f64| top as f64 + (hi - y) / (hi - lo) * (h - 1) as f64;

    for (k, s) in series.iter().enumerate() {
        let band = lighten(PALETTE[k % PALETTE.len()]);
        for i in 0..s.x.len().saturating_sub(1) {
            let (xa, xb) = (px(s.x[i]).round() as usize, px(s.x[i + 1]).round() as usize);
            for xp in xa..=xb {
                let t = if xb > xa { (xp - xa) as f64 / (xb - xa) as f64 } else { 0.0 };
                let m = s.mean[i] + t * (s.mean[i + 1] - s.mean[i]);
                let e = s.stderr[i] + t * (s.stderr[i + 1] - s.stderr[i]);
                let (y0, y1) = (py(m + e).round() as usize, py(m - e).round() as usize);
                for yp in y0..=y1 {
                    if img.get(xp, yp) == WHITE {
                        img.set(xp, yp, band);
                    }
                }
            }
        }
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s
            .x
            .iter()
            .zip(s.mean)
            .map(|(&x, &y)| (px(x).round() as i64, py(y).round() as i64))
            .collect();
        if pts.len() == 1 {
            img.set(pts[0].0 as usize, pts[0].1 as usize, color);
        }
        for p in pts.windows(2) {
            draw_line(&mut img, p[0], p[1], color);
        }
    }

    // axes
    draw_line(&mut img, (left as i64 - 1, top as i64), (left as i64 - 1, (top + h) as i64), BLACK);
    draw_line(&mut img, (left as i64 - 1, (top + h) as i64), ((left + w) as i64, (top + h) as i64), BLACK);
    let fmt = |v: f64| format!("{v:.3}");
    draw_text(&mut img, 4, top, &fmt(hi), 2, BLACK);
    draw_text(&mut img, 4, top + h - 10, &fmt(lo), 2, BLACK);
    draw_text(&mut img, left, top + h + 6, "0", 2, BLACK);
    let xm = fmt(x_max);
    draw_text(&mut img, left + w - text_width(&xm, 2), top + h + 6, &xm, 2, BLACK);
    draw_text(&mut img, left + (w - text_width(x_label, 2)) / 2, top + h + 24, x_label, 2, BLACK);
    draw_text(&mut img, 4, top + h / 2, y_label, 2, BLACK);

    let mut legend = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let y = top + 10 + k * 22;
        let x = left + w + 12;
        img.fill_rect(x, y, 16, 10, PALETTE[k % PALETTE.len()]);
        draw_text(&mut img, x + 22, y, s.name, 2, BLACK);
        legend.push(s.name.to_string());
    }
    (
        img,
        PlotLayout {
            legend,
            area: (left, top, w, h),
            y_range: (lo, hi),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_is_drawn() {
        let mut img = RgbImage::new(40, 12, WHITE);
        draw_text(&mut img, 0, 0, "lrp", 2, BLACK);
        assert!(img.rgb.chunks(3).any(|p| p == BLACK));
        assert_eq!(text_width("lrp", 2), 24);
    }

    #[test]
    fn line_endpoints() {
        let mut img = RgbImage::new(10, 10, WHITE);
        draw_line(&mut img, (1, 8), (8, 2), BLACK);
        assert_eq!(img.get(1, 8), BLACK);
        assert_eq!(img.get(8, 2), BLACK);
    }
}
