//! Axis-aligned box arithmetic shared by matching and evaluation.
//!
//! Boxes travel in two layouts: `cxcywh` (normalized center form, what the
//! detection heads emit) and `xyxy` (corner form, what annotation files and
//! the evaluator use). All functions are pure `f64`.

use crate::{Error, Result};

/// `[cx, cy, w, h]` -> `[x1, y1, x2, y2]`.
pub fn cxcywh_to_xyxy(b: [f64; 4]) -> [f64; 4] {
    let [cx, cy, w, h] = b;
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

/// `[x1, y1, x2, y2]` -> `[cx, cy, w, h]`.
pub fn xyxy_to_cxcywh(b: [f64; 4]) -> [f64; 4] {
    let [x1, y1, x2, y2] = b;
    [(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1]
}

fn area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

fn intersection(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    w.max(0.0) * h.max(0.0)
}

/// Intersection over union of two corner-form boxes. Degenerate unions
/// (both boxes empty) score 0.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU of two corner-form boxes:
/// `IoU - (area(enclosing) - area(union)) / area(enclosing)`, in (-1, 1].
pub fn giou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    let ew = a[2].max(b[2]) - a[0].min(b[0]);
    let eh = a[3].max(b[3]) - a[1].min(b[1]);
    let enclosing = ew.max(0.0) * eh.max(0.0);
    if enclosing <= 0.0 {
        iou
    } else {
        iou - (enclosing - union) / enclosing
    }
}

/// Generalized IoU of two center-form boxes. Errors on nonpositive extent.
pub fn giou(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
    for (name, bx) in [("a", a), ("b", b)] {
        if bx[2] <= 0.0 || bx[3] <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "box {name} has nonpositive extent: w={}, h={}",
                bx[2], bx[3]
            )));
        }
    }
    Ok(giou_xyxy(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)))
}

/// Sum of absolute coordinate differences between two boxes.
pub fn l1(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn giou_identical_boxes_is_one() {
        let b = [0.5, 0.5, 0.2, 0.4];
        assert_abs_diff_eq!(giou(b, b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn giou_disjoint_corner_boxes() {
        // xyxy [0,0,1,1] vs [2,0,3,1]: IoU 0, union 2, enclosure 3.
        let a = xyxy_to_cxcywh([0.0, 0.0, 1.0, 1.0]);
        let b = xyxy_to_cxcywh([2.0, 0.0, 3.0, 1.0]);
        assert_abs_diff_eq!(giou(a, b).unwrap(), -1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_overlapping_squares() {
        // xyxy [0,0,2,2] vs [1,1,3,3]: intersection 1, union 7.
        let a = [0.0, 0.0, 2.0, 2.0];
        let b = [1.0, 1.0, 3.0, 3.0];
        assert_abs_diff_eq!(iou_xyxy(a, b), 1.0 / 7.0, epsilon = 1e-12);
        // GIoU adds the enclosure term: C = 9, (C-U)/C = 2/9.
        assert_abs_diff_eq!(giou_xyxy(a, b), 1.0 / 7.0 - 2.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn giou_rejects_nonpositive_extent() {
        assert!(giou([0.5, 0.5, 0.0, 0.1], [0.5, 0.5, 0.1, 0.1]).is_err());
        assert!(giou([0.5, 0.5, 0.1, 0.1], [0.5, 0.5, 0.1, -0.2]).is_err());
    }

    #[test]
    fn giou_range() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let a = [next(), next(), 0.01 + next(), 0.01 + next()];
            let b = [next(), next(), 0.01 + next(), 0.01 + next()];
            let g = giou(a, b).unwrap();
            assert!(g > -1.0 && g <= 1.0 + 1e-12, "giou {g} out of range");
        }
    }
}
