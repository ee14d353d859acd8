//! Object recall of attention maps: the fraction of annotated objects whose
//! enclosed attention mass exceeds a threshold.

use crate::tensor::Tensor;
use crate::tubes::BBox;

/// Threshold grid `0.00, 0.01, …, 1.00`.
pub fn recall_thresholds() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

/// Mass of a `height × width` pixel map inside `bbox`, weighting each pixel
/// by its covered area.
pub fn box_mass(pixels: &Tensor, bbox: &BBox) -> f64 {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let x_lo = bbox.x1.max(0.0);
    let x_hi = bbox.x2.min(w as f64);
    let y_lo = bbox.y1.max(0.0);
    let y_hi = bbox.y2.min(h as f64);
    if x_hi <= x_lo || y_hi <= y_lo {
        return 0.0;
    }
    let mut total = 0.0;
    for y in (y_lo.floor() as usize)..(y_hi.ceil() as usize).min(h) {
        let cy = (y_hi.min(y as f64 + 1.0) - y_lo.max(y as f64)).max(0.0);
        for x in (x_lo.floor() as usize)..(x_hi.ceil() as usize).min(w) {
            let cx = (x_hi.min(x as f64 + 1.0) - x_lo.max(x as f64)).max(0.0);
            total += pixels.at(y, x) * cx * cy;
        }
    }
    total
}

/// Mass a uniform map would put inside `bbox` in a `width × height` frame.
pub fn uniform_box_mass(bbox: &BBox, width: u32, height: u32) -> f64 {
    let frame = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: width as f64,
        y2: height as f64,
    };
    bbox.intersection_area(&frame) / frame.area()
}

/// TP when the mass is strictly above `threshold`.
pub fn object_recall(masses: &[f64], threshold: f64) -> f64 {
    if masses.is_empty() {
        return 0.0;
    }
    masses.iter().filter(|&&m| m > threshold).count() as f64 / masses.len() as f64
}

pub fn recall_curve(masses: &[f64]) -> Vec<(f64, f64)> {
    recall_thresholds().into_iter().map(|t| (t, object_recall(masses, t))).collect()
}

/// One annotated object paired with the attention of its actor.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallInstance {
    pub video_id: String,
    pub class: usize,
    pub frame: u32,
    pub mass: f64,
    pub uniform_mass: f64,
}

/// Per-class curves: `class,threshold,recall,uniform_recall` rows, plus
/// `all` pooling every class. `label` fills a leading column when given.
pub fn recall_csv(instances: &[RecallInstance], num_classes: usize, label: Option<&str>) -> String {
    let mut out = String::new();
    if label.is_some() {
        out.push_str("setting,");
    }
    out.push_str("class,threshold,recall,uniform_recall,objects\n");
    let mut groups: Vec<(String, Vec<&RecallInstance>)> = (0..num_classes)
        .map(|c| (c.to_string(), instances.iter().filter(|i| i.class == c).collect::<Vec<_>>()))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    groups.push(("all".into(), instances.iter().collect()));
    for (name, group) in groups {
        let masses: Vec<f64> = group.iter().map(|i| i.mass).collect();
        let uniform: Vec<f64> = group.iter().map(|i| i.uniform_mass).collect();
        for t in recall_thresholds() {
            if let Some(l) = label {
                out.push_str(l);
                out.push(',');
            }
            out.push_str(&format!(
                "{name},{t:.2},{:.6},{:.6},{}\n",
                object_recall(&masses, t),
                object_recall(&uniform, t),
                group.len()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_map_mass_is_area_fraction() {
        let px = Tensor::full(&[40, 40], 1.0 / 1600.0);
        let quarter = BBox::new(0.0, 0.0, 20.0, 20.0).unwrap();
        assert!((box_mass(&px, &quarter) - 0.25).abs() < 1e-12);
        assert!(object_recall(&[box_mass(&px, &quarter)], 0.2) == 1.0);
        let frac = BBox::new(3.5, 2.25, 17.75, 30.0).unwrap();
        let expected = frac.area() / 1600.0;
        assert!((box_mass(&px, &frac) - expected).abs() < 1e-12);
        assert!((uniform_box_mass(&frac, 40, 40) - expected).abs() < 1e-15);
    }

    #[test]
    fn boundary_thresholds() {
        assert_eq!(object_recall(&[0.01, 0.3], 0.0), 1.0);
        assert_eq!(object_recall(&[0.99, 0.3], 1.0), 0.0);
        assert_eq!(object_recall(&[0.0], 0.0), 0.0);
        assert_eq!(recall_curve(&[0.5]).len(), 101);
    }

    #[test]
    fn box_outside_frame_has_no_mass() {
        let px = Tensor::full(&[10, 10], 0.01);
        let off = BBox::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(box_mass(&px, &off), 0.0);
    }

    proptest! {
        #[test]
        fn recall_non_increasing(masses in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let curve = recall_curve(&masses);
            prop_assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }
}
