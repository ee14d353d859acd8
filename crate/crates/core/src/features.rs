//! Clip geometry, backbone feature maps, box projection, RoI pooling and
//! the stand-in for the backbone tail that turns pooled regions into actor
//! features.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, SeededRng, Tensor};
use crate::tubes::{BBox, Tube};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Side of the RoI pooling grid.
pub const ROI_BINS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipGeometry {
    /// Frames per clip.
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    /// Pixels per feature cell.
    pub spatial_stride: u32,
    /// Frames per feature slice.
    pub temporal_stride: u32,
    /// Frame spacing of tube boxes.
    pub box_stride: u32,
}

impl Default for ClipGeometry {
    fn default() -> Self {
        Self {
            frames: 32,
            height: 224,
            width: 224,
            spatial_stride: 16,
            temporal_stride: 8,
            box_stride: 4,
        }
    }
}

impl ClipGeometry {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let strides = [self.spatial_stride, self.temporal_stride, self.box_stride];
        if strides.contains(&0) || self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("non-positive geometry {self:?}")));
        }
        if self.frames % self.temporal_stride != 0
            || self.width % self.spatial_stride != 0
            || self.height % self.spatial_stride != 0
        {
            return Err(Error::Config(format!("geometry not divisible by its strides: {self:?}")));
        }
        Ok(())
    }

    /// Temporal slices per clip feature map.
    pub fn feat_t(&self) -> usize {
        (self.frames / self.temporal_stride) as usize
    }

    pub fn feat_h(&self) -> usize {
        (self.height / self.spatial_stride) as usize
    }

    pub fn feat_w(&self) -> usize {
        (self.width / self.spatial_stride) as usize
    }

    /// Context nodes per clip.
    pub fn cells(&self) -> usize {
        self.feat_t() * self.feat_h() * self.feat_w()
    }
}

/// Feature volume of shape `channels × t × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 4 {
            return Err(Error::arg(format!("feature map must be 4-D, got {:?}", values.shape())));
        }
        Ok(Self { values })
    }

    pub fn zeros(channels: usize, t: usize, h: usize, w: usize) -> Self {
        Self {
            values: Tensor::zeros(&[channels, t, h, w]),
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn channels(&self) -> usize {
        self.dims().0
    }

    fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        let (_, tt, h, w) = self.dims();
        ((c * tt + t) * h + y) * w + x
    }

    pub fn at(&self, c: usize, t: usize, y: usize, x: usize) -> f64 {
        self.values.data()[self.index(c, t, y, x)]
    }

    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, t, y, x);
        self.values.data_mut()[i] = v;
    }

    /// `len` consecutive slices starting at `first`, repeating edge slices
    /// past either end.
    pub fn temporal_window(&self, first: usize, len: usize) -> FeatureMap {
        let (c, t, h, w) = self.dims();
        let mut out = FeatureMap::zeros(c, len, h, w);
        for k in 0..c {
            for s in 0..len {
                let src = (first + s).min(t - 1);
                for y in 0..h {
                    for x in 0..w {
                        out.set(k, s, y, x, self.at(k, src, y, x));
                    }
                }
            }
        }
        out
    }

    /// Flattens to `M × channels`, row `(t·h + y)·w + x`.
    pub fn context_matrix(&self) -> Tensor {
        let (c, t, h, w) = self.dims();
        let cells = t * h * w;
        let mut data = vec![0.0; cells * c];
        for (k, plane) in self.values.data().chunks(cells).enumerate() {
            for (j, &v) in plane.iter().enumerate() {
                data[j * c + k] = v;
            }
        }
        Tensor::matrix(cells, c, data).expect("consistent dims")
    }
}

/// Inclusive rectangle of feature cells `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn union(&self, other: &CellRect) -> CellRect {
        CellRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectedBox {
    pub slice: usize,
    pub rect: CellRect,
}

/// Maps a pixel box at clip frame offset `frame` onto the feature grid.
pub fn project_box(bbox: &BBox, frame: u32, geom: &ClipGeometry) -> Result<ProjectedBox> {
    if frame >= geom.frames {
        return Err(Error::arg(format!("frame {frame} outside a {}-frame clip", geom.frames)));
    }
    let (w, h) = (geom.width as f64, geom.height as f64);
    if bbox.x2 <= bbox.x1 || bbox.y2 <= bbox.y1 || bbox.x1 >= w || bbox.y1 >= h || bbox.x2 <= 0.0 || bbox.y2 <= 0.0 {
        return Err(Error::DegenerateBox(format!("{bbox:?} projects to no cell in a {w}x{h} frame")));
    }
    let stride = geom.spatial_stride as f64;
    let clamp = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
    let (fw, fh) = (geom.feat_w(), geom.feat_h());
    let rect = CellRect {
        x0: clamp((bbox.x1 / stride).floor(), fw),
        y0: clamp((bbox.y1 / stride).floor(), fh),
        x1: clamp((bbox.x2 / stride).ceil() - 1.0, fw),
        y1: clamp((bbox.y2 / stride).ceil() - 1.0, fh),
    };
    let slice = ((frame / geom.temporal_stride) as usize).min(geom.feat_t() - 1);
    Ok(ProjectedBox { slice, rect })
}

/// Per-slice regions of a tube inside the clip starting at `clip_start`.
///
/// Boxes falling in the same slice are merged by their enclosing rectangle;
/// slices without a box borrow the nearest covered slice (earlier on ties).
pub fn tube_regions(tube: &Tube, clip_start: u32, geom: &ClipGeometry) -> Result<Vec<CellRect>> {
    let t = geom.feat_t();
    let mut regions: Vec<Option<CellRect>> = vec![None; t];
    for (frame, bbox) in tube.boxes_in(clip_start, clip_start + geom.frames) {
        let p = project_box(bbox, frame - clip_start, geom)?;
        regions[p.slice] = Some(match regions[p.slice] {
            Some(r) => r.union(&p.rect),
            None => p.rect,
        });
    }
    let covered: Vec<usize> = (0..t).filter(|&s| regions[s].is_some()).collect();
    if covered.is_empty() {
        return Err(Error::Coverage(format!(
            "tube {} has no box in clip starting at frame {clip_start}",
            tube.id
        )));
    }
    Ok((0..t)
        .map(|s| {
            let nearest = covered
                .iter()
                .min_by_key(|&&c| (c.abs_diff(s), c))
                .expect("non-empty");
            regions[*nearest].expect("covered")
        })
        .collect())
}

/// Bin boundaries along one axis of `extent` cells starting at `origin`:
/// `[start, end)` per bin, collapsed bins widened to their nearest cell.
fn bin_ranges(origin: usize, extent: usize) -> [(usize, usize); ROI_BINS] {
    let mut out = [(0, 0); ROI_BINS];
    let step = extent as f64 / ROI_BINS as f64;
    for (i, slot) in out.iter_mut().enumerate() {
        let start = (i as f64 * step).round() as usize;
        let end = ((i + 1) as f64 * step).round() as usize;
        *slot = if end > start {
            (origin + start, origin + end)
        } else {
            let cell = (((i as f64 + 0.5) * step).floor() as usize).min(extent - 1);
            (origin + cell, origin + cell + 1)
        };
    }
    out
}

/// Max-pools each slice's region into a `7 × 7` grid: output
/// `channels × t × 7 × 7`.
pub fn roi_pool(fm: &FeatureMap, regions: &[CellRect]) -> Result<Tensor> {
    let (c, t, h, w) = fm.dims();
    if regions.len() != t {
        return Err(Error::dim("roi_pool", &[t], &[regions.len()]));
    }
    for r in regions {
        if r.x0 > r.x1 || r.y0 > r.y1 || r.x1 >= w || r.y1 >= h {
            return Err(Error::DegenerateBox(format!("region {r:?} outside a {w}x{h} grid")));
        }
    }
    let mut out = vec![f64::NEG_INFINITY; c * t * ROI_BINS * ROI_BINS];
    for (s, r) in regions.iter().enumerate() {
        let xs = bin_ranges(r.x0, r.width());
        let ys = bin_ranges(r.y0, r.height());
        for k in 0..c {
            for (by, &(ya, yb)) in ys.iter().enumerate() {
                for (bx, &(xa, xb)) in xs.iter().enumerate() {
                    let slot = &mut out[((k * t + s) * ROI_BINS + by) * ROI_BINS + bx];
                    for y in ya..yb {
                        for x in xa..xb {
                            *slot = slot.max(fm.at(k, s, y, x));
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, t, ROI_BINS, ROI_BINS], out)
}

/// Average pool followed by a fixed affine map and ReLU, standing in for the
/// pretrained tail of the backbone. Its parameters are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct TailStub {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl TailStub {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::dim("tail_stub", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    /// He-normal weights, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("valid std");
        let w = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Self::new(Tensor::matrix(in_dim, out_dim, w).unwrap(), Tensor::zeros(&[out_dim])).unwrap()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// `pooled: channels × t × 7 × 7` to an actor feature vector.
    pub fn forward(&self, pooled: &Tensor) -> Result<Tensor> {
        let c = pooled.shape()[0];
        if c != self.in_dim() {
            return Err(Error::dim("tail_stub", pooled.shape(), self.weight.value.shape()));
        }
        let per = pooled.len() / c;
        let avg: Vec<f64> = pooled.data().chunks(per).map(|ch| ch.iter().sum::<f64>() / per as f64).collect();
        let (w, b) = (&self.weight.value, &self.bias.value);
        let out = (0..self.out_dim())
            .map(|j| {
                let z: f64 = avg.iter().enumerate().map(|(i, a)| a * w.at(i, j)).sum::<f64>() + b.data()[j];
                z.max(0.0)
            })
            .collect();
        Tensor::vector(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_map(c: usize, t: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = seeded_rng(seed, 0);
        let data = (0..c * t * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap::new(Tensor::new(vec![c, t, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn default_geometry_dims() {
        let g = ClipGeometry::default();
        g.validate().unwrap();
        assert_eq!((g.feat_t(), g.feat_h(), g.feat_w(), g.cells()), (4, 14, 14, 784));
        assert!(ClipGeometry { frames: 30, ..g }.validate().is_err());
    }

    #[test]
    fn project_box_examples() {
        let g = ClipGeometry::default();
        let full = project_box(&BBox::new(0.0, 0.0, 224.0, 224.0).unwrap(), 0, &g).unwrap();
        assert_eq!(full.rect, CellRect { x0: 0, y0: 0, x1: 13, y1: 13 });
        let cell = project_box(&BBox::new(0.0, 0.0, 16.0, 16.0).unwrap(), 0, &g).unwrap();
        assert_eq!(cell.rect, CellRect { x0: 0, y0: 0, x1: 0, y1: 0 });
        let last = project_box(&BBox::new(0.0, 0.0, 16.0, 16.0).unwrap(), 31, &g).unwrap();
        assert_eq!(last.slice, 3);
        assert!(project_box(&BBox::new(0.0, 0.0, 16.0, 16.0).unwrap(), 32, &g).is_err());
        let outside = BBox::new(300.0, 0.0, 320.0, 10.0).unwrap();
        assert!(matches!(project_box(&outside, 0, &g), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn roi_pool_constant_map() {
        let mut fm = FeatureMap::zeros(3, 2, 5, 5);
        for v in fm.values.data_mut() {
            *v = 1.25;
        }
        let r = CellRect { x0: 1, y0: 0, x1: 3, y1: 2 };
        let out = roi_pool(&fm, &[r, r]).unwrap();
        assert_eq!(out.shape(), &[3, 2, 7, 7]);
        assert!(out.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn roi_pool_seven_cells_is_identity() {
        let fm = random_map(2, 1, 9, 9, 4);
        let r = CellRect { x0: 1, y0: 2, x1: 7, y1: 8 };
        let out = roi_pool(&fm, &[r]).unwrap();
        for k in 0..2 {
            for by in 0..7 {
                for bx in 0..7 {
                    let v = out.data()[(k * 7 + by) * 7 + bx];
                    assert_eq!(v, fm.at(k, 0, 2 + by, 1 + bx));
                }
            }
        }
    }

    #[test]
    fn roi_pool_planted_max() {
        // 14-wide region: bin i covers cells [2i, 2i+2) on each axis.
        let mut fm = FeatureMap::zeros(1, 1, 14, 14);
        fm.set(0, 0, 5, 9, 8.0);
        let r = CellRect { x0: 0, y0: 0, x1: 13, y1: 13 };
        let out = roi_pool(&fm, &[r]).unwrap();
        for by in 0..7 {
            for bx in 0..7 {
                let expected = if by == 2 && bx == 4 { 8.0 } else { 0.0 };
                assert_eq!(out.data()[by * 7 + bx], expected, "bin ({by},{bx})");
            }
        }
    }

    #[test]
    fn roi_pool_small_region_replicates_cells() {
        let fm = random_map(1, 1, 4, 4, 2);
        let r = CellRect { x0: 2, y0: 2, x1: 2, y1: 2 };
        let out = roi_pool(&fm, &[r]).unwrap();
        assert!(out.data().iter().all(|&v| v == fm.at(0, 0, 2, 2)));
    }

    #[test]
    fn tail_stub_examples() {
        let tail = TailStub::new(Tensor::zeros(&[3, 4]), Tensor::vector(vec![-1.0, 0.5, 2.0, 0.0]).unwrap()).unwrap();
        let out = tail.forward(&Tensor::zeros(&[3, 1, 7, 7])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 2.0, 0.0]);

        let mut w = Tensor::zeros(&[3, 4]);
        for i in 0..3 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
        let ident = TailStub::new(w, Tensor::zeros(&[4])).unwrap();
        let out = ident.forward(&Tensor::full(&[3, 2, 7, 7], 0.7)).unwrap();
        assert!(out.max_abs_diff(&Tensor::vector(vec![0.7, 0.7, 0.7, 0.0]).unwrap()) < 1e-12);
        assert!(ident.forward(&Tensor::zeros(&[2, 1, 7, 7])).is_err());
    }

    #[test]
    fn tail_stub_matches_two_step_reference() {
        let mut rng = seeded_rng(5, 0);
        let tail = TailStub::random(4, 6, &mut rng);
        let pooled = {
            let data = (0..4 * 2 * 49).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![4, 2, 7, 7], data).unwrap()
        };
        // step 1: means per channel; step 2: affine + relu
        let mut means = [0.0; 4];
        for (i, v) in pooled.data().iter().enumerate() {
            means[i / 98] += v / 98.0;
        }
        let out = tail.forward(&pooled).unwrap();
        for j in 0..6 {
            let mut z = tail.bias.value.data()[j];
            for (i, m) in means.iter().enumerate() {
                z += m * tail.weight.value.data()[i * 6 + j];
            }
            assert!((out.data()[j] - z.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_window_repeats_edges() {
        let fm = random_map(2, 3, 2, 2, 6);
        let win = fm.temporal_window(1, 4);
        assert_eq!(win.dims(), (2, 4, 2, 2));
        assert_eq!(win.at(1, 0, 1, 1), fm.at(1, 1, 1, 1));
        assert_eq!(win.at(1, 3, 0, 1), fm.at(1, 2, 0, 1));
    }

    #[test]
    fn context_matrix_layout() {
        let fm = random_map(3, 2, 2, 3, 8);
        let ctx = fm.context_matrix();
        assert_eq!(ctx.shape(), &[12, 3]);
        assert_eq!(ctx.at((2 + 1) * 3 + 2, 1), fm.at(1, 1, 1, 2));
    }

    proptest! {
        #[test]
        fn roi_pool_ignores_outside_values(seed in 0u64..500, v in -10.0f64..10.0) {
            let fm = random_map(2, 1, 8, 8, seed);
            let r = CellRect { x0: 2, y0: 1, x1: 5, y1: 4 };
            let mut other = fm.clone();
            for y in 0..8 {
                for x in 0..8 {
                    if !r.contains(x, y) {
                        other.set(0, 0, y, x, v);
                        other.set(1, 0, y, x, v);
                    }
                }
            }
            prop_assert_eq!(roi_pool(&fm, &[r]).unwrap(), roi_pool(&other, &[r]).unwrap());
        }

        #[test]
        fn projection_is_monotone(x in 0.0f64..200.0, y in 0.0f64..200.0, w in 1.0f64..20.0, h in 1.0f64..20.0, grow in 0.0f64..30.0) {
            let g = ClipGeometry::default();
            let small = project_box(&BBox::new(x, y, x + w, y + h).unwrap(), 0, &g).unwrap().rect;
            let big_box = BBox::new((x - grow).max(0.0), (y - grow).max(0.0), x + w + grow, y + h + grow).unwrap();
            let big = project_box(&big_box, 0, &g).unwrap().rect;
            prop_assert!(big.x0 <= small.x0 && big.y0 <= small.y0 && big.x1 >= small.x1 && big.y1 >= small.y1);
        }
    }
}
