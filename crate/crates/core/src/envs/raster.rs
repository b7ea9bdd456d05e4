//! Deterministic software rasterizer over the unit-square arena.
//!
//! World `y` points up; row 0 is the top of the image. A pixel is covered
//! when its center lies inside the shape.

use ndarray::Array3;

use super::geometry::{point_in_convex, Vec2};

pub type Rgb = [u8; 3];

pub struct Canvas {
    size: usize,
    pixels: Array3<u8>,
}

impl Canvas {
    pub fn new(size: usize, background: Rgb) -> Self {
        let mut pixels = Array3::zeros((size, size, 3));
        for mut px in pixels.rows_mut() {
            px[0] = background[0];
            px[1] = background[1];
            px[2] = background[2];
        }
        Self { size, pixels }
    }

    fn center(&self, row: usize, col: usize) -> Vec2 {
        let s = self.size as f64;
        Vec2::new((col as f64 + 0.5) / s, 1.0 - (row as f64 + 0.5) / s)
    }

    /// Pixel index range covering world interval `[lo, hi]` along one axis.
    fn span(&self, lo: f64, hi: f64) -> (usize, usize) {
        let s = self.size as f64;
        let a = ((lo * s).floor() - 1.0).max(0.0) as usize;
        let b = ((hi * s).ceil() + 1.0).clamp(0.0, s) as usize;
        (a.min(self.size), b)
    }

    fn fill_where(&mut self, min: Vec2, max: Vec2, color: Rgb, inside: impl Fn(Vec2) -> bool) {
        let (c0, c1) = self.span(min.x, max.x);
        let (r0, r1) = self.span(1.0 - max.y, 1.0 - min.y);
        for row in r0..r1 {
            for col in c0..c1 {
                if inside(self.center(row, col)) {
                    self.pixels[[row, col, 0]] = color[0];
                    self.pixels[[row, col, 1]] = color[1];
                    self.pixels[[row, col, 2]] = color[2];
                }
            }
        }
    }

    pub fn fill_convex(&mut self, poly: &[Vec2], color: Rgb) {
        if poly.len() < 3 {
            return;
        }
        let (mut min, mut max) = (poly[0], poly[0]);
        for p in poly {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        self.fill_where(min, max, color, |p| point_in_convex(poly, p));
    }

    pub fn fill_circle(&mut self, center: Vec2, radius: f64, color: Rgb) {
        let r = Vec2::new(radius, radius);
        let r2 = radius * radius;
        self.fill_where(center - r, center + r, color, |p| (p - center).dot(p - center) <= r2);
    }

    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb) {
        self.fill_where(Vec2::new(x0, y0), Vec2::new(x1, y1), color, |p| {
            x0 <= p.x && p.x <= x1 && y0 <= p.y && p.y <= y1
        });
    }

    pub fn into_pixels(self) -> Array3<u8> {
        self.pixels
    }
}

/// Reads an RGB leaf value, falling back to black on malformed input.
pub fn rgb(value: Option<&crate::variation::Value>) -> Rgb {
    match value.and_then(|v| v.as_ints()) {
        Some([r, g, b]) => [*r as u8, *g as u8, *b as u8],
        _ => [0, 0, 0],
    }
}
