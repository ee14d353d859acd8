//! Attention maps assembled from adjacency rows, and their pixel-space
//! interpolation.

use crate::error::{Error, Result};
use crate::features::ClipGeometry;
use crate::head::AdjacencyMatrix;
use crate::tensor::Tensor;

/// Per-actor attention over the context grid, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// `t × h × w`.
    pub values: Tensor,
    /// `(layer, graph)` of every adjacency that was summed.
    pub provenance: Vec<(usize, usize)>,
}

/// Sums `actor`'s rows over all adjacencies, reshapes to `grid`, renormalizes.
pub fn attention_assemble(adjacencies: &[AdjacencyMatrix], actor: usize, grid: (usize, usize, usize)) -> Result<AttentionMap> {
    let first = adjacencies.first().ok_or_else(|| Error::arg("no adjacency matrices to assemble"))?;
    let m = grid.0 * grid.1 * grid.2;
    let mut acc = vec![0.0; m];
    for adj in adjacencies {
        if adj.nodes() != m || adj.nodes() != first.nodes() {
            return Err(Error::dim("attention_assemble", &[m], adj.values.shape()));
        }
        if actor >= adj.actors() {
            return Err(Error::arg(format!("actor {actor} of {}", adj.actors())));
        }
        for (a, v) in acc.iter_mut().zip(adj.row(actor)) {
            *a += v;
        }
    }
    let total: f64 = acc.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Numeric(format!("attention mass {total} cannot be normalized")));
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(AttentionMap {
        values: Tensor::new(vec![grid.0, grid.1, grid.2], acc)?,
        provenance: adjacencies.iter().map(|a| (a.layer, a.graph)).collect(),
    })
}

/// Source coordinate and neighbor weights for output index `u` of `out`
/// samples over `n` input cells (half-pixel centers, edge clamped).
fn bilinear_taps(u: usize, out: usize, n: usize) -> (usize, usize, f64) {
    let src = ((u as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize of an `h × w` plane to `out_h × out_w`.
pub fn bilinear_resize(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let xs: Vec<_> = (0..out_w).map(|u| bilinear_taps(u, out_w, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for v in 0..out_h {
        let (y0, y1, fy) = bilinear_taps(v, out_h, h);
        for &(x0, x1, fx) in &xs {
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Pixel-space map (`height × width`, sums to one) for clip frame offset
/// `frame`.
pub fn attention_upsample(map: &AttentionMap, geom: &ClipGeometry, frame: u32) -> Result<Tensor> {
    if frame >= geom.frames {
        return Err(Error::arg(format!("frame {frame} outside a {}-frame clip", geom.frames)));
    }
    let (t, h, w) = match map.values.shape() {
        &[t, h, w] => (t, h, w),
        other => return Err(Error::dim("attention_upsample", other, &[])),
    };
    let slice = ((frame / geom.temporal_stride) as usize).min(t - 1);
    let plane = &map.values.data()[slice * h * w..(slice + 1) * h * w];
    let (oh, ow) = (geom.height as usize, geom.width as usize);
    let mut pixels = bilinear_resize(plane, h, w, oh, ow);
    let total: f64 = pixels.iter().sum();
    if total <= 0.0 {
        // a slice with no mass stays uniform
        pixels.fill(1.0 / (oh * ow) as f64);
    } else {
        for p in &mut pixels {
            *p /= total;
        }
    }
    Tensor::matrix(oh, ow, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adj(layer: usize, graph: usize, rows: Vec<Vec<f64>>) -> AdjacencyMatrix {
        AdjacencyMatrix {
            layer,
            graph,
            values: Tensor::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn uniform_adjacency_gives_uniform_map() {
        let a = adj(0, 0, vec![vec![0.25; 4]]);
        let m = attention_assemble(&[a], 0, (1, 2, 2)).unwrap();
        assert!(m.values.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(m.provenance, vec![(0, 0)]);
    }

    #[test]
    fn one_hot_rows_sum_then_normalize() {
        let a = adj(0, 0, vec![vec![0.0, 1.0, 0.0, 0.0]]);
        let b = adj(0, 1, vec![vec![0.0, 1.0, 0.0, 0.0]]);
        let same = attention_assemble(&[a.clone(), b], 0, (1, 2, 2)).unwrap();
        assert_eq!(same.values.data(), &[0.0, 1.0, 0.0, 0.0]);
        let c = adj(1, 0, vec![vec![0.0, 0.0, 0.0, 1.0]]);
        let split = attention_assemble(&[a, c], 0, (1, 2, 2)).unwrap();
        assert_eq!(split.values.data(), &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(split.provenance, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn assemble_rejects_mismatched_nodes() {
        let a = adj(0, 0, vec![vec![0.5, 0.5]]);
        assert!(attention_assemble(&[a], 0, (1, 2, 2)).is_err());
    }

    #[test]
    fn bilinear_two_by_two_to_four_by_four() {
        let (a, b, c, d) = (1.0, 2.0, 3.0, 5.0);
        let out = bilinear_resize(&[a, b, c, d], 2, 2, 4, 4);
        // per-axis weights on the two source cells: 1, 3/4, 1/4, 0
        let wts = [1.0, 0.75, 0.25, 0.0];
        for v in 0..4 {
            for u in 0..4 {
                let (wy, wx) = (wts[v], wts[u]);
                let expected = wy * (wx * a + (1.0 - wx) * b) + (1.0 - wy) * (wx * c + (1.0 - wx) * d);
                assert!((out[v * 4 + u] - expected).abs() < 1e-15, "({v},{u})");
            }
        }
    }

    #[test]
    fn upsampled_maps_conserve_mass() {
        let g = ClipGeometry::with_size(32, 32);
        let uniform = AttentionMap {
            values: Tensor::full(&[4, 2, 2], 1.0 / 16.0),
            provenance: vec![],
        };
        let px = attention_upsample(&uniform, &g, 5).unwrap();
        assert!(px.data().iter().all(|&v| (v - 1.0 / 1024.0).abs() < 1e-15));

        let mut hot = Tensor::zeros(&[4, 2, 2]);
        hot.data_mut()[4] = 1.0; // slice 1, cell (0, 0)
        let map = AttentionMap { values: hot, provenance: vec![] };
        let px = attention_upsample(&map, &g, 8).unwrap();
        assert!((px.sum() - 1.0).abs() < 1e-12);
        let inside: f64 = (0..16).flat_map(|y| (0..16).map(move |x| (y, x))).map(|(y, x)| px.at(y, x)).sum();
        assert!(inside > 0.5);
        assert!(attention_upsample(&map, &g, 32).is_err());
    }
}
