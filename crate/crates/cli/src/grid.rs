//! Side-by-side image grids for reports and matching overlays.

use uvrefine::RgbImage;

/// Bilinear resize to `side x side`.
pub fn fit(img: &RgbImage, side: usize) -> RgbImage {
    let sx = img.width() as f64 / side as f64;
    let sy = img.height() as f64 / side as f64;
    RgbImage::from_fn(side, side, |x, y| img.sample((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy))
}

/// Tiles laid out left to right, each resized to `tile` pixels square,
/// separated by a `gap`-pixel white border.
pub fn row(tiles: &[&RgbImage], tile: usize, gap: usize) -> RgbImage {
    let n = tiles.len();
    let mut out = RgbImage::filled(n * tile + (n + 1) * gap, tile + 2 * gap, [1.0; 3]);
    for (i, t) in tiles.iter().enumerate() {
        let fitted = fit(t, tile);
        let x0 = gap + i * (tile + gap);
        for y in 0..tile {
            for x in 0..tile {
                out.set(x0 + x, gap + y, fitted.get(x, y));
            }
        }
    }
    out
}

/// Hue-spread marker colors.
pub fn palette(i: usize) -> [f64; 3] {
    const COLORS: [[f64; 3]; 6] = [
        [1.0, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.3, 1.0],
        [1.0, 0.8, 0.0],
        [0.0, 0.9, 0.9],
        [1.0, 0.3, 0.8],
    ];
    COLORS[i % COLORS.len()]
}

/// Draws a hollow square of half-width `r` centred on `p`.
pub fn mark(img: &mut RgbImage, p: [f64; 2], r: isize, color: [f64; 3]) {
    let (cx, cy) = (p[0].floor() as isize, p[1].floor() as isize);
    for d in -r..=r {
        for (x, y) in [(cx + d, cy - r), (cx + d, cy + r), (cx - r, cy + d), (cx + r, cy + d)] {
            if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_layout_and_fit() {
        let a = RgbImage::filled(8, 4, [0.2; 3]);
        let b = RgbImage::filled(16, 16, [0.7; 3]);
        let g = row(&[&a, &b], 10, 2);
        assert_eq!((g.width(), g.height()), (26, 14));
        assert_eq!(g.get(0, 0), [1.0; 3]);
        assert!((g.get(3, 3)[0] - 0.2).abs() < 1e-12);
        assert!((g.get(15, 3)[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn marks_clip_at_borders() {
        let mut img = RgbImage::new(5, 5);
        mark(&mut img, [0.5, 0.5], 2, [1.0, 0.0, 0.0]);
        assert_eq!(img.get(2, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.get(1, 1), [0.0; 3]);
    }
}
