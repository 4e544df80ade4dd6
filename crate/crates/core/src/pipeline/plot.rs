//! Minimal line plots rendered straight into an [`Image`].

use crate::image::Image;

const PALETTE: [[f64; 3]; 4] = [[0.85, 0.2, 0.15], [0.15, 0.35, 0.85], [0.2, 0.65, 0.25], [0.55, 0.3, 0.7]];

fn plot_pixel(img: &mut Image, x: i64, y: i64, color: [f64; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        for c in 0..3 {
            img.set(c, y as usize, x as usize, color[c]);
        }
    }
}

fn line(img: &mut Image, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [f64; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot_pixel(img, x, y, color);
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

/// Plots each series of `(x, y)` points as a polyline with square markers
/// on shared axes.
pub fn line_plot(series: &[Vec<(f64, f64)>], height: usize, width: usize) -> Image {
    let mut img = Image::filled(3, height, width, 1.0);
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let margin = 8i64;
    let (w, h) = (width as i64, height as i64);
    let axis = [0.2; 3];
    line(&mut img, (margin, h - margin), (w - margin, h - margin), axis);
    line(&mut img, (margin, margin), (margin, h - margin), axis);
    if !x0.is_finite() {
        return img;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let to_px = |(x, y): (f64, f64)| {
        let px = margin + ((x - x0) / (x1 - x0) * (w - 2 * margin - 1) as f64).round() as i64;
        let py = h - margin - ((y - y0) / (y1 - y0) * (h - 2 * margin - 1) as f64).round() as i64;
        (px, py)
    };
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let px: Vec<_> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&p| to_px(p)).collect();
        for pair in px.windows(2) {
            line(&mut img, pair[0], pair[1], color);
        }
        if px.len() <= 16 {
            for &(x, y) in &px {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        plot_pixel(&mut img, x + dx, y + dy, color);
                    }
                }
            }
        }
    }
    img
}

/// Moving average over `window` points, for noisy loss curves.
pub fn smooth(values: &[f64], window: usize) -> Vec<(f64, f64)> {
    let w = window.max(1);
    let mut out = Vec::new();
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        let n = (i + 1).min(w) as f64;
        out.push((i as f64, acc / n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_series_inside_the_canvas() {
        let img = line_plot(&[vec![(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)]], 60, 80);
        let red = (0..img.pixels()).filter(|&i| img.plane(0)[i] > 0.8 && img.plane(1)[i] < 0.3).count();
        assert!(red > 20);
        let empty = line_plot(&[], 20, 20);
        assert_eq!(empty.channels, 3);
    }

    #[test]
    fn moving_average() {
        let s = smooth(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(s.iter().map(|p| p.1).collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
