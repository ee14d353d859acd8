use crate::error::{Error, Result};
use crate::features::{ClipGeometry, FeatureMap};
use crate::tensor::{concat_last, Tensor};
use crate::tubes::Tube;

/// Cell index `i` of an axis with `n` cells mapped to `[-1, 1]`.
pub fn normalized_coordinate(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// `(x, y)` of every context cell in [`FeatureMap::context_matrix`] row order.
pub fn context_coordinates(t: usize, h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * h * w * 2);
    for _ in 0..t {
        for y in 0..h {
            for x in 0..w {
                data.push(normalized_coordinate(x, w));
                data.push(normalized_coordinate(y, h));
            }
        }
    }
    Tensor::matrix(t * h * w, 2, data).expect("consistent dims")
}

/// Context rows of `fm`, with the cell coordinates appended when `use_location`.
pub fn embed_context_location(fm: &FeatureMap, use_location: bool) -> Tensor {
    let ctx = fm.context_matrix();
    if !use_location {
        return ctx;
    }
    let (_, t, h, w) = fm.dims();
    concat_last(&[&ctx, &context_coordinates(t, h, w)]).expect("row counts agree")
}

/// `(cx, cy, w, h)` of a tube averaged over its boxes in the clip starting at
/// `clip_start`, each mapped to `[-1, 1]` relative to the frame extent.
pub fn embed_actor_location(tube: &Tube, clip_start: u32, geom: &ClipGeometry) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    let mut n = 0usize;
    for (_, b) in tube.boxes_in(clip_start, clip_start + geom.frames) {
        let (cx, cy) = b.center();
        acc[0] += cx;
        acc[1] += cy;
        acc[2] += b.width();
        acc[3] += b.height();
        n += 1;
    }
    if n == 0 {
        return Err(Error::arg(format!(
            "tube {} has no box in clip starting at frame {clip_start}",
            tube.id
        )));
    }
    let (w, h) = (geom.width as f64, geom.height as f64);
    let extents = [w, h, w, h];
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = 2.0 * (acc[i] / n as f64) / extents[i] - 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tubes::BBox;

    fn static_tube(b: BBox) -> Tube {
        Tube::new("v", 0, (0..32).step_by(4).map(|f| (f, b)).collect()).unwrap()
    }

    #[test]
    fn context_coordinates_endpoints() {
        let c = context_coordinates(1, 14, 14);
        assert_eq!(c.row(0), &[-1.0, -1.0]);
        let center = c.row(7 * 14 + 7);
        let expected = 2.0 * 7.0 / 13.0 - 1.0;
        assert!((center[0] - expected).abs() < 1e-15 && (center[1] - expected).abs() < 1e-15);
        assert!((expected - 0.076_923_076_9).abs() < 1e-9);
        assert_eq!(c.row(14 * 14 - 1), &[1.0, 1.0]);
        assert_eq!(normalized_coordinate(0, 1), 0.0);
    }

    #[test]
    fn context_embedding_width() {
        let fm = FeatureMap::zeros(5, 2, 3, 3);
        assert_eq!(embed_context_location(&fm, false).shape(), &[18, 5]);
        assert_eq!(embed_context_location(&fm, true).shape(), &[18, 7]);
    }

    #[test]
    fn actor_location_examples() {
        let g = ClipGeometry::default();
        let full = embed_actor_location(&static_tube(BBox::new(0.0, 0.0, 224.0, 224.0).unwrap()), 0, &g).unwrap();
        assert_eq!(full, [0.0, 0.0, 1.0, 1.0]);
        let quarter = embed_actor_location(&static_tube(BBox::new(0.0, 0.0, 112.0, 112.0).unwrap()), 0, &g).unwrap();
        assert_eq!(quarter, [-0.5, -0.5, 0.0, 0.0]);
        let sym = Tube::new(
            "v",
            1,
            [(0, BBox::new(10.0, 20.0, 50.0, 60.0).unwrap()), (4, BBox::new(174.0, 164.0, 214.0, 204.0).unwrap())]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let loc = embed_actor_location(&sym, 0, &g).unwrap();
        assert!(loc[0].abs() < 1e-15 && loc[1].abs() < 1e-15);
        assert!(embed_actor_location(&sym, 64, &g).is_err());
    }
}
