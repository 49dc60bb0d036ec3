use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::par;

pub const ROPE_BASE: f64 = 10_000.0;
pub const RMS_EPS: f64 = 1e-6;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return Ok(out);
    }
    par::for_each_row(out.data_mut(), c, |_, row| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
    Ok(out)
}

/// Gradient of a row softmax given its output `p` and upstream `dp`.
pub fn softmax_rows_backward(p: &Tensor, dp: &Tensor) -> Tensor {
    let c = p.cols();
    let mut ds = dp.clone();
    if c == 0 {
        return ds;
    }
    par::for_each_row(ds.data_mut(), c, |i, row| {
        let pr = p.row(i);
        let dot: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
        for (d, &pv) in row.iter_mut().zip(pr) {
            *d = pv * (*d - dot);
        }
    });
    ds
}

/// Rotates channel pairs of the first `rotary_dims` channels. The rotated band
/// is split into three equal groups, one per coordinate axis; pair `j` of a
/// group turns by `coord · base^(−2j/g)` where `g` is the group width.
fn rope_apply(tokens: &Tensor, coords: &Tensor, rotary_dims: usize, sign: f64) -> Result<Tensor> {
    let w = tokens.cols();
    if rotary_dims % 6 != 0 || rotary_dims > w {
        return Err(Error::IncompatibleWidth(w));
    }
    if coords.cols() != 3 || coords.rows() != tokens.rows() || tokens.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "rope tokens {:?} vs coords {:?}",
            tokens.shape(),
            coords.shape()
        )));
    }
    if !coords.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let g = rotary_dims / 3;
    let freqs: Vec<f64> = (0..g / 2).map(|j| ROPE_BASE.powf(-2.0 * j as f64 / g as f64)).collect();
    let mut out = tokens.clone();
    if w == 0 {
        return Ok(out);
    }
    par::for_each_row(out.data_mut(), w, |i, row| {
        let c = coords.row(i);
        for axis in 0..3 {
            for (j, f) in freqs.iter().enumerate() {
                let (s, co) = (sign * c[axis] * f).sin_cos();
                let k = axis * g + 2 * j;
                let (a, b) = (row[k], row[k + 1]);
                row[k] = a * co - b * s;
                row[k + 1] = a * s + b * co;
            }
        }
    });
    Ok(out)
}

/// 3D rotary embedding over the full width (`width % 6 == 0`).
pub fn rope_3d(tokens: &Tensor, coords: &Tensor) -> Result<Tensor> {
    rope_apply(tokens, coords, tokens.cols(), 1.0)
}

/// 3D rotary embedding on the leading `rotary_dims` channels; the rest pass
/// through unchanged.
pub fn rope_3d_partial(tokens: &Tensor, coords: &Tensor, rotary_dims: usize) -> Result<Tensor> {
    rope_apply(tokens, coords, rotary_dims, 1.0)
}

/// Transpose of [`rope_3d_partial`], i.e. the rotation by the negated angles.
pub fn rope_3d_partial_backward(grad: &Tensor, coords: &Tensor, rotary_dims: usize) -> Result<Tensor> {
    rope_apply(grad, coords, rotary_dims, -1.0)
}

/// Scaled dot-product attention `softmax(q kᵀ / √d) v`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, d: usize) -> Result<Tensor> {
    Ok(attention_with_weights(q, k, v, d)?.0)
}

/// As [`attention`], also returning the row-stochastic weight matrix.
pub fn attention_with_weights(q: &Tensor, k: &Tensor, v: &Tensor, d: usize) -> Result<(Tensor, Tensor)> {
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} keys vs {} values",
            k.rows(),
            v.rows()
        )));
    }
    let weights = attention_weights(q, k, d)?;
    Ok((matmul(&weights, v)?, weights))
}

pub fn attention_weights(q: &Tensor, k: &Tensor, d: usize) -> Result<Tensor> {
    if d == 0 {
        return Err(Error::ShapeMismatch("attention scale dimension is zero".into()));
    }
    let s = matmul_nt(q, k)?.scale(1.0 / (d as f64).sqrt());
    softmax_rows(&s)
}

/// Gradients `(dq, dk)` of the logits path given weights `p` and `dp = ∂L/∂p`.
pub fn attention_weights_backward(
    q: &Tensor,
    k: &Tensor,
    p: &Tensor,
    dp: &Tensor,
    d: usize,
) -> Result<(Tensor, Tensor)> {
    let inv = 1.0 / (d as f64).sqrt();
    let ds = softmax_rows_backward(p, dp).scale(inv);
    Ok((matmul(&ds, k)?, matmul_tn(&ds, q)?))
}

/// Gradients `(dq, dk, dv)` of [`attention`].
pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    p: &Tensor,
    dout: &Tensor,
    d: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let dv = matmul_tn(p, dout)?;
    let dp = matmul_nt(dout, v)?;
    let (dq, dk) = attention_weights_backward(q, k, p, &dp, d)?;
    Ok((dq, dk, dv))
}

/// Row-wise RMS normalisation without gain.
pub fn rmsnorm(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    par::for_each_row(out.data_mut(), c, |_, row| {
        let r = (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + RMS_EPS).sqrt();
        for v in row.iter_mut() {
            *v /= r;
        }
    });
    out
}

/// Backward of [`rmsnorm`] from its input `x` and output `y`.
pub fn rmsnorm_backward(x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let c = x.cols();
    let mut dx = dy.clone();
    if c == 0 {
        return dx;
    }
    par::for_each_row(dx.data_mut(), c, |i, row| {
        let xr = x.row(i);
        let yr = y.row(i);
        let r = (xr.iter().map(|v| v * v).sum::<f64>() / c as f64 + RMS_EPS).sqrt();
        let m = row.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        for (d, &yv) in row.iter_mut().zip(yr) {
            *d = (*d - yv * m) / r;
        }
    });
    dx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(v);
        *d *= s * (1.0 + v * (1.0 - s));
    }
    dx
}

/// Dense layer `x w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Linear {
        Linear {
            w: Tensor::zeros(&[inputs, outputs]),
            b: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.w)?;
        y.add_row(self.b.data());
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Result<Tensor> {
        self.accumulate(x, dy, grad)?;
        matmul_nt(dy, &self.w)
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Result<()> {
        grad.w.add_assign(&matmul_tn(x, dy)?);
        for (g, s) in grad.b.data_mut().iter_mut().zip(dy.col_sums()) {
            *g += s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let want = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in p.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
        let big = softmax_rows(&Tensor::new(&[1, 2], vec![1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
        let bad = Tensor::new(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&bad), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn rope_zero_coords_is_identity() {
        let x = random(4, 12, 1);
        assert_eq!(rope_3d(&x, &Tensor::zeros(&[4, 3])).unwrap(), x);
    }

    #[test]
    fn rope_rejects_bad_width() {
        let x = random(2, 8, 1);
        assert_eq!(
            rope_3d(&x, &Tensor::zeros(&[2, 3])).unwrap_err(),
            Error::IncompatibleWidth(8)
        );
    }

    #[test]
    fn rope_first_pair_turns_by_coordinate() {
        let mut x = Tensor::zeros(&[1, 6]);
        x.data_mut()[0] = 1.0;
        let c = Tensor::new(&[1, 3], vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0]).unwrap();
        let y = rope_3d(&x, &c).unwrap();
        assert!(y.data()[0].abs() < 1e-12 && (y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_rope_leaves_tail() {
        let x = random(3, 64, 2);
        let c = random(3, 3, 3);
        let y = rope_3d_partial(&x, &c, 60).unwrap();
        for i in 0..3 {
            assert_eq!(&y.row(i)[60..], &x.row(i)[60..]);
        }
        let back = rope_3d_partial_backward(&y, &c, 60).unwrap();
        assert!(back.sub(&x).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn uniform_attention_averages_values() {
        let q = Tensor::zeros(&[2, 4]);
        let k = random(3, 4, 5);
        let v = Tensor::new(&[3, 1], vec![1.0, 2.0, 6.0]).unwrap();
        let out = attention(&q, &k, &v, 4).unwrap();
        assert!(out.data().iter().all(|o| (o - 3.0).abs() < 1e-12));
    }

    fn numeric_grad(f: &dyn Fn(&Tensor) -> f64, x: &Tensor) -> Tensor {
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = x.clone();
            m.data_mut()[i] -= 1e-6;
            g.data_mut()[i] = (f(&p) - f(&m)) / 2e-6;
        }
        g
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let (q, k, v) = (random(3, 6, 1), random(4, 6, 2), random(4, 5, 3));
        let w = random(3, 5, 4);
        let loss = |q: &Tensor, k: &Tensor, v: &Tensor| -> f64 {
            let o = attention(q, k, v, 6).unwrap();
            o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, p) = attention_with_weights(&q, &k, &v, 6).unwrap();
        let (dq, dk, dv) = attention_backward(&q, &k, &v, &p, &w, 6).unwrap();
        assert_close(&dq, &numeric_grad(&|x| loss(x, &k, &v), &q), 1e-6);
        assert_close(&dk, &numeric_grad(&|x| loss(&q, x, &v), &k), 1e-6);
        assert_close(&dv, &numeric_grad(&|x| loss(&q, &k, x), &v), 1e-6);
    }

    #[test]
    fn rmsnorm_and_silu_backward() {
        let x = random(3, 8, 7);
        let w = random(3, 8, 8);
        let dot = |t: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        let y = rmsnorm(&x);
        assert_close(
            &rmsnorm_backward(&x, &y, &w),
            &numeric_grad(&|t| dot(&rmsnorm(t)), &x),
            1e-6,
        );
        assert_close(&silu_backward(&x, &w), &numeric_grad(&|t| dot(&silu(t)), &x), 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
            let p = softmax_rows(&Tensor::new(&[3, 4], vals).unwrap()).unwrap();
            for i in 0..3 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(p.row(i).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn rope_preserves_norm(seed in any::<u64>()) {
            let x = random(5, 12, seed);
            let c = random(5, 3, seed ^ 1).scale(10.0);
            let y = rope_3d(&x, &c).unwrap();
            for i in 0..5 {
                let a: f64 = x.row(i).iter().map(|v| v * v).sum();
                let b: f64 = y.row(i).iter().map(|v| v * v).sum();
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
            }
        }

        #[test]
        fn rope_dot_depends_on_offset_only(seed in any::<u64>(), shift in prop::array::uniform3(-3.0f64..3.0)) {
            let q = random(1, 12, seed);
            let k = random(1, 12, seed ^ 7);
            let cq = random(1, 3, seed ^ 3);
            let ck = random(1, 3, seed ^ 5);
            let s = Tensor::new(&[1, 3], shift.to_vec()).unwrap();
            let dot = |cq: &Tensor, ck: &Tensor| {
                let a = rope_3d(&q, cq).unwrap();
                let b = rope_3d(&k, ck).unwrap();
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
            };
            let before = dot(&cq, &ck);
            let after = dot(&cq.add(&s).unwrap(), &ck.add(&s).unwrap());
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
