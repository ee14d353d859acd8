use super::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

fn require_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        other => Err(Error::dim(op, other, &[])),
    }
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul")?;
    let (k2, n) = require_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul_nt")?;
    let (n, k2) = require_matrix(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out[i * n + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_matrix(a, "matmul_tn")?;
    let (k2, n) = require_matrix(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Gradients of `z = a · b` given `dz`: returns `(dz · bᵀ, aᵀ · dz)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dz: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(dz, b)?, matmul_tn(a, dz)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let rows = out.rows();
    for i in 0..rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Vector-Jacobian product of the row softmax: `dx = y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::dim("softmax_rows_backward", y.shape(), dy.shape()));
    }
    let mut dx = dy.clone();
    for i in 0..y.rows() {
        let yr = y.row(i);
        let dot: f64 = yr.iter().zip(dy.row(i)).map(|(a, b)| a * b).sum();
        for (d, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
            *d = yv * (*d - dot);
        }
    }
    Ok(dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::dim("relu_backward", x.shape(), dy.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Concatenates along the last dimension.
pub fn concat_last(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::arg("concat of zero tensors"))?;
    let lead = &first.shape()[..first.shape().len() - 1];
    for x in xs {
        if &x.shape()[..x.shape().len() - 1] != lead {
            return Err(Error::dim("concat_last", first.shape(), x.shape()));
        }
    }
    let rows = first.rows();
    let width: usize = xs.iter().map(|x| x.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        for x in xs {
            data.extend_from_slice(x.row(i));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(width);
    Tensor::new(shape, data)
}

/// Splits a gradient of a [`concat_last`] output back into the original widths.
pub fn split_last(dy: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    if widths.iter().sum::<usize>() != dy.cols() {
        return Err(Error::dim("split_last", dy.shape(), widths));
    }
    let lead = &dy.shape()[..dy.shape().len() - 1];
    let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(w * dy.rows())).collect();
    for i in 0..dy.rows() {
        let mut offset = 0;
        let row = dy.row(i);
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&row[offset..offset + w]);
            offset += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &w)| {
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::new(shape, data)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Each element is kept or dropped independently.
    Elementwise,
    /// One decision per channel (last dimension), shared by every other position.
    Channelwise,
}

/// Multiplicative mask recorded by [`dropout`]; `None` in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Tensor>);

impl DropoutMask {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        match &self.0 {
            Some(mask) => dy.mul(mask),
            None => Ok(dy.clone()),
        }
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.0.as_ref()
    }
}

/// Inverted dropout. `rng = None` selects inference mode (identity).
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    mode: DropoutMode,
    rng: Option<&mut R>,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout probability {p} outside [0, 1)")));
    }
    let rng = match rng {
        Some(rng) if p > 0.0 => rng,
        _ => return Ok((x.clone(), DropoutMask::identity())),
    };
    let keep = 1.0 / (1.0 - p);
    let mask_data: Vec<f64> = match mode {
        DropoutMode::Elementwise => (0..x.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
        DropoutMode::Channelwise => {
            let channels: Vec<f64> = (0..x.cols())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            (0..x.rows()).flat_map(|_| channels.iter().copied()).collect()
        }
    };
    let mask = Tensor::new(x.shape().to_vec(), mask_data)?;
    Ok((x.mul(&mask)?, DropoutMask(Some(mask))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
        assert_eq!(matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap().data(), &[11.0]);
        let z = matmul(&Tensor::zeros(&[2, 3]), &m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]])).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = m(&[&[1.0, -2.0, 0.5], &[3.0, 0.0, 1.0]]);
        let b = m(&[&[2.0, 1.0, -1.0], &[0.0, 4.0, 2.0]]);
        let bt = b.transpose().unwrap();
        assert_eq!(matmul_nt(&a, &b).unwrap(), matmul(&a, &bt).unwrap());
        let at = a.transpose().unwrap();
        assert_eq!(matmul_tn(&a, &b).unwrap(), matmul(&at, &b).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&m(&[&[0.0, 0.0, 0.0]]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&m(&[&[2f64.ln(), 0.0]]));
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let shifted = softmax_rows(&m(&[&[7.5, 7.5, 7.5]]));
        assert!(shifted.max_abs_diff(&softmax_rows(&m(&[&[0.0, 0.0, 0.0]]))) < 1e-15);
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let s = softmax_rows(&m(&[&[1000.0, 0.0, -1000.0]]));
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor::vector(vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let neg = Tensor::vector(vec![-0.5, -3.0]).unwrap();
        assert_eq!(relu(&neg), Tensor::zeros(&[2]));
        assert_eq!(relu_backward(&neg, &Tensor::full(&[2], 5.0)).unwrap(), Tensor::zeros(&[2]));
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![3.0]).unwrap();
        assert_eq!(concat_last(&[&a, &b]).unwrap().data(), &[1.0, 2.0, 3.0]);
        let x = Tensor::zeros(&[2, 256]);
        assert_eq!(concat_last(&[&x, &x]).unwrap().shape(), &[2, 512]);
        assert_eq!(concat_last(&[&a]).unwrap(), a);
        assert!(concat_last(&[&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 3])]).is_err());
    }

    #[test]
    fn split_inverts_concat() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0], &[6.0]]);
        let c = concat_last(&[&a, &b]).unwrap();
        let parts = split_last(&c, &[2, 1]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::full(&[4, 3], 2.0);
        let mut rng = seeded_rng(1, 0);
        assert_eq!(dropout(&x, 0.0, DropoutMode::Elementwise, Some(&mut rng)).unwrap().0, x);
        let none: Option<&mut crate::tensor::SeededRng> = None;
        assert_eq!(dropout(&x, 0.9, DropoutMode::Elementwise, none).unwrap().0, x);
        assert!(dropout(&x, 1.0, DropoutMode::Elementwise, Some(&mut rng)).is_err());
        assert!(dropout(&x, -0.1, DropoutMode::Elementwise, Some(&mut rng)).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let x = Tensor::full(&[1_000_000], 1.0);
        let mut rng = seeded_rng(42, 0);
        let (y, _) = dropout(&x, 0.5, DropoutMode::Elementwise, Some(&mut rng)).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e6;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn channelwise_dropout_drops_whole_columns() {
        let x = Tensor::full(&[50, 40], 1.0);
        let mut rng = seeded_rng(3, 0);
        let (y, _) = dropout(&x, 0.5, DropoutMode::Channelwise, Some(&mut rng)).unwrap();
        for j in 0..40 {
            let col: Vec<f64> = (0..50).map(|i| y.at(i, j)).collect();
            assert!(col.iter().all(|&v| v == col[0]));
        }
    }

    #[test]
    fn dropout_is_reproducible() {
        let x = Tensor::full(&[100], 1.0);
        let a = dropout(&x, 0.5, DropoutMode::Elementwise, Some(&mut seeded_rng(9, 2))).unwrap();
        let b = dropout(&x, 0.5, DropoutMode::Elementwise, Some(&mut seeded_rng(9, 2))).unwrap();
        assert_eq!(a, b);
    }

    fn matrix_strategy(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(x in matrix_strategy(3, 6)) {
            let s = softmax_rows(&x);
            for i in 0..3 {
                let total: f64 = s.row(i).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn softmax_shift_invariant(x in matrix_strategy(2, 5), c in -50.0f64..50.0) {
            let shifted = x.map(|v| v + c);
            prop_assert!(softmax_rows(&x).max_abs_diff(&softmax_rows(&shifted)) < 1e-6);
        }

        #[test]
        fn matmul_associative(
            a in matrix_strategy(3, 4),
            b in matrix_strategy(4, 2),
            c in matrix_strategy(2, 5),
        ) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-8);
        }
    }
}
