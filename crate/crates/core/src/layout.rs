//! Center-format bounding boxes and overlap measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box `(cx, cy, w, h)` in image-fraction coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bbox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for Bbox {
    fn from(v: [f64; 4]) -> Self {
        Bbox { cx: v[0], cy: v[1], w: v[2], h: v[3] }
    }
}

impl From<Bbox> for [f64; 4] {
    fn from(b: Bbox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

// States derive Eq/Hash; boxes compare bitwise.
impl Eq for Bbox {}

impl std::hash::Hash for Bbox {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        for v in [self.cx, self.cy, self.w, self.h] {
            v.to_bits().hash(state);
        }
    }
}

impl Bbox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Bbox { cx, cy, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        self.into()
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    pub fn in_unit_square(&self) -> bool {
        [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

fn intersection(a: &Bbox, b: &Bbox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - (hull - union) / hull`, in `(-1, 1]`.
pub fn giou(a: &Bbox, b: &Bbox) -> Result<f64> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::DegenerateBox);
    }
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    Ok(inter / union - (hull - union) / hull)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn giou_identity() {
        let a = Bbox::new(0.4, 0.6, 0.2, 0.3);
        assert!((giou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giou_diagonal_quarters() {
        let a = Bbox::new(0.25, 0.25, 0.5, 0.5);
        let b = Bbox::new(0.75, 0.75, 0.5, 0.5);
        assert_eq!(iou(&a, &b), 0.0);
        assert!((giou(&a, &b).unwrap() + 0.5).abs() < 1e-12);
    }

    /// Rasterizes both boxes on a fine grid and recomputes GIoU from cell counts.
    fn giou_by_grid(a: &Bbox, b: &Bbox, cells: usize) -> f64 {
        let inside = |bx: &Bbox, x: f64, y: f64| {
            let (x1, y1, x2, y2) = bx.corners();
            x >= x1 && x < x2 && y >= y1 && y < y2
        };
        let (ax1, ay1, ax2, ay2) = a.corners();
        let (bx1, by1, bx2, by2) = b.corners();
        let (hx1, hy1) = (ax1.min(bx1), ay1.min(by1));
        let (hx2, hy2) = (ax2.max(bx2), ay2.max(by2));
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..cells {
            for j in 0..cells {
                let x = hx1 + (i as f64 + 0.5) / cells as f64 * (hx2 - hx1);
                let y = hy1 + (j as f64 + 0.5) / cells as f64 * (hy2 - hy1);
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        let total = (cells * cells) as f64;
        inter as f64 / union as f64 - (total - union as f64) / total
    }

    #[test]
    fn touching_disjoint_boxes_have_negative_giou() {
        let a = Bbox::new(0.2, 0.2, 0.2, 0.2);
        let b = Bbox::new(0.4, 0.5, 0.2, 0.4);
        let g = giou(&a, &b).unwrap();
        assert!(g < 0.0);
        assert!((g - giou_by_grid(&a, &b, 800)).abs() < 5e-3);
    }

    #[test]
    fn giou_matches_grid_on_overlapping_boxes() {
        let a = Bbox::new(0.4, 0.45, 0.3, 0.5);
        let b = Bbox::new(0.5, 0.5, 0.4, 0.2);
        assert!((giou(&a, &b).unwrap() - giou_by_grid(&a, &b, 800)).abs() < 5e-3);
    }

    #[test]
    fn degenerate_box_rejected() {
        let a = Bbox::new(0.5, 0.5, 0.0, 0.2);
        assert!(matches!(giou(&a, &a), Err(Error::DegenerateBox)));
    }
}
