//! Reference attention whose weight matrix is computed once from the albedo
//! branch and reused verbatim by every other branch.

use crate::error::{Error, Result};
use crate::nn::{
    attention_weights, attention_weights_backward, matmul, matmul_nt, matmul_tn, AttentionParams, Channel, Tensor,
};

/// Instrumentation events emitted while the shared mask is built and used.
#[derive(Debug)]
pub enum MaskEvent<'a> {
    Computed(&'a Tensor),
    Applied(Channel, &'a Tensor),
}

#[derive(Debug, Clone)]
pub struct ReferenceCache {
    pub q: Tensor,
    pub k: Tensor,
    pub mask: Tensor,
    pub values: Vec<Tensor>,
    pub mixed: Vec<Tensor>,
}

/// Returns `z_b + (M · R w_v_b) w_out_b` for every branch `b`, where
/// `M = softmax(z_albedo w_q (R w_k)ᵀ / √width)`. `z[0]` must be the albedo
/// branch.
pub fn reference_forward(
    z: &[&Tensor],
    ref_tokens: &Tensor,
    params: &AttentionParams,
    mut observer: Option<&mut dyn FnMut(MaskEvent)>,
) -> Result<(Vec<Tensor>, ReferenceCache)> {
    if z.is_empty() || params.w_v.len() < z.len() || params.w_out.len() < z.len() {
        return Err(Error::ShapeMismatch("reference attention branch count".into()));
    }
    let q = matmul(z[0], &params.w_q)?;
    let k = matmul(ref_tokens, &params.w_k)?;
    let mask = attention_weights(&q, &k, params.width())?;
    if let Some(obs) = observer.as_mut() {
        obs(MaskEvent::Computed(&mask));
    }
    let mut out = Vec::with_capacity(z.len());
    let mut values = Vec::with_capacity(z.len());
    let mut mixed = Vec::with_capacity(z.len());
    for (b, zb) in z.iter().enumerate() {
        if let Some(obs) = observer.as_mut() {
            obs(MaskEvent::Applied(Channel::ALL[b], &mask));
        }
        let v = matmul(ref_tokens, &params.w_v[b])?;
        let mv = matmul(&mask, &v)?;
        out.push(zb.add(&matmul(&mv, &params.w_out[b])?)?);
        values.push(v);
        mixed.push(mv);
    }
    Ok((
        out,
        ReferenceCache {
            q,
            k,
            mask,
            values,
            mixed,
        },
    ))
}

/// Two-branch form: `(z_albedo', z_mr')`.
pub fn shared_mask_reference_attention(
    z_albedo: &Tensor,
    z_mr: &Tensor,
    ref_tokens: &Tensor,
    params: &AttentionParams,
) -> Result<(Tensor, Tensor)> {
    let (mut out, _) = reference_forward(&[z_albedo, z_mr], ref_tokens, params, None)?;
    let mr = out.pop().unwrap();
    Ok((out.pop().unwrap(), mr))
}

/// Backward of [`reference_forward`]. `dout[b]` is `∂L/∂z_b'`; returns
/// `(∂L/∂z_b, ∂L/∂ref_tokens)` and accumulates parameter gradients.
pub fn reference_backward(
    z_albedo: &Tensor,
    ref_tokens: &Tensor,
    params: &AttentionParams,
    cache: &ReferenceCache,
    dout: &[Tensor],
    grad: &mut AttentionParams,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut dz: Vec<Tensor> = dout.to_vec();
    let mut dmask = Tensor::zeros(cache.mask.shape());
    let mut dref = Tensor::zeros(ref_tokens.shape());
    for (b, d) in dout.iter().enumerate() {
        grad.w_out[b].add_assign(&matmul_tn(&cache.mixed[b], d)?);
        let dmv = matmul_nt(d, &params.w_out[b])?;
        dmask.add_assign(&matmul_nt(&dmv, &cache.values[b])?);
        let dv = matmul_tn(&cache.mask, &dmv)?;
        grad.w_v[b].add_assign(&matmul_tn(ref_tokens, &dv)?);
        dref.add_assign(&matmul_nt(&dv, &params.w_v[b])?);
    }
    let (dq, dk) = attention_weights_backward(&cache.q, &cache.k, &cache.mask, &dmask, params.width())?;
    grad.w_q.add_assign(&matmul_tn(z_albedo, &dq)?);
    grad.w_k.add_assign(&matmul_tn(ref_tokens, &dk)?);
    dz[0].add_assign(&matmul_nt(&dq, &params.w_q)?);
    dref.add_assign(&matmul_nt(&dk, &params.w_k)?);
    Ok((dz, dref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Tensor, Tensor, Tensor, AttentionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = AttentionParams::zeros(6, 2, true);
        for (_, t) in p.tensors_mut() {
            *t = randn(t.shape(), 0.5, &mut rng);
        }
        (
            randn(&[5, 6], 1.0, &mut rng),
            randn(&[5, 6], 1.0, &mut rng),
            randn(&[4, 6], 1.0, &mut rng),
            p,
        )
    }

    #[test]
    fn mr_input_does_not_move_the_mask() {
        let (za, zm, r, p) = setup(1);
        let mut masks = Vec::new();
        let mut rec = |e: MaskEvent| {
            if let MaskEvent::Computed(m) = e {
                masks.push(m.clone())
            }
        };
        reference_forward(&[&za, &zm], &r, &p, Some(&mut rec)).unwrap();
        let other = zm.scale(-3.0);
        reference_forward(&[&za, &other], &r, &p, Some(&mut rec)).unwrap();
        assert_eq!(masks[0], masks[1]);
    }

    #[test]
    fn every_branch_applies_the_computed_mask() {
        let (za, zm, r, p) = setup(2);
        let mut computed = None;
        let mut applied = Vec::new();
        let mut rec = |e: MaskEvent| match e {
            MaskEvent::Computed(m) => computed = Some(m.clone()),
            MaskEvent::Applied(c, m) => applied.push((c, m.clone())),
        };
        reference_forward(&[&za, &zm], &r, &p, Some(&mut rec)).unwrap();
        let computed = computed.unwrap();
        assert_eq!(applied.len(), 2);
        for (_, m) in &applied {
            assert_eq!(m.data(), computed.data());
        }
    }

    #[test]
    fn zero_reference_adds_nothing() {
        let (za, zm, _, p) = setup(3);
        let (a, m) = shared_mask_reference_attention(&za, &zm, &Tensor::zeros(&[4, 6]), &p).unwrap();
        assert_eq!((a, m), (za, zm));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (za, zm, r, p) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wa = randn(&[5, 6], 1.0, &mut rng);
        let wm = randn(&[5, 6], 1.0, &mut rng);
        let loss = |za: &Tensor, zm: &Tensor, r: &Tensor| {
            let (a, m) = shared_mask_reference_attention(za, zm, r, &p).unwrap();
            let dot = |x: &Tensor, w: &Tensor| x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
            dot(&a, &wa) + dot(&m, &wm)
        };
        let (_, cache) = reference_forward(&[&za, &zm], &r, &p, None).unwrap();
        let mut g = AttentionParams::zeros(6, 2, true);
        let (dz, dr) = reference_backward(&za, &r, &p, &cache, &[wa.clone(), wm.clone()], &mut g).unwrap();
        let fd = |f: &dyn Fn(&Tensor) -> f64, x: &Tensor, i: usize| {
            let mut a = x.clone();
            a.data_mut()[i] += 1e-6;
            let mut b = x.clone();
            b.data_mut()[i] -= 1e-6;
            (f(&a) - f(&b)) / 2e-6
        };
        for i in [0, 5, 13, 29] {
            assert!((fd(&|x| loss(x, &zm, &r), &za, i) - dz[0].data()[i]).abs() < 1e-6);
            assert!((fd(&|x| loss(&za, x, &r), &zm, i) - dz[1].data()[i]).abs() < 1e-6);
        }
        for i in [0, 7, 23] {
            assert!((fd(&|x| loss(&za, &zm, x), &r, i) - dr.data()[i]).abs() < 1e-6);
        }
    }
}
