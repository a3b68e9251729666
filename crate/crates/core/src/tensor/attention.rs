//! Multi-head self-attention over a token sequence `[B, N_T, d]`.
//!
//! Head `k` reads rows `k*d_k..(k+1)*d_k` of the query/key/value projections;
//! the heads are concatenated and mixed by the output projection, which is
//! the same as summing `W_O^(k)` applied to each head separately.

use super::gemm::{gemm, Trans};
use super::Tensor;
use crate::error::{Error, Result};

/// Activations saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    heads: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[B, heads, N, N]`.
    probs: Vec<f64>,
    /// Concatenated head outputs before the output projection, `[B, N, d]`.
    mixed: Vec<f64>,
}

impl AttentionCache {
    /// Attention weights `alpha_ij` for batch `b`, head `h`, as an `N x N` row-major slice.
    pub fn probs(&self, b: usize, h: usize, n_tokens: usize) -> &[f64] {
        let nn = n_tokens * n_tokens;
        let off = (b * self.heads + h) * nn;
        &self.probs[off..off + nn]
    }
}

fn check_shapes(x: &Tensor, weights: [&Tensor; 4], heads: usize) -> Result<[usize; 3]> {
    let [b, n, d] = x.dims3()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("attention: embed dim ({d}) not divisible by heads ({heads})")));
    }
    for (name, w) in ["W_Q", "W_K", "W_V", "W_O"].iter().zip(weights) {
        if w.shape() != [d, d] {
            return Err(Error::Shape(format!("attention: {name} has shape {:?}, expected [{d}, {d}]", w.shape())));
        }
    }
    Ok([b, n, d])
}

fn copy_head(src: &[f64], n: usize, d: usize, h: usize, dk: usize, dst: &mut [f64]) {
    for i in 0..n {
        dst[i * dk..(i + 1) * dk].copy_from_slice(&src[i * d + h * dk..i * d + (h + 1) * dk]);
    }
}

fn add_head(src: &[f64], n: usize, d: usize, h: usize, dk: usize, dst: &mut [f64]) {
    for i in 0..n {
        for j in 0..dk {
            dst[i * d + h * dk + j] += src[i * dk + j];
        }
    }
}

pub fn mhsa_forward(x: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor, wo: &Tensor, heads: usize) -> Result<(Tensor, AttentionCache)> {
    let [b, n, d] = check_shapes(x, [wq, wk, wv, wo], heads)?;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let nd = n * d;
    let mut q = vec![0.0; b * nd];
    let mut k = vec![0.0; b * nd];
    let mut v = vec![0.0; b * nd];
    let mut probs = vec![0.0; b * heads * n * n];
    let mut mixed = vec![0.0; b * nd];
    let mut out = vec![0.0; b * nd];
    let mut qh = vec![0.0; n * dk];
    let mut kh = vec![0.0; n * dk];
    let mut vh = vec![0.0; n * dk];
    let mut oh = vec![0.0; n * dk];
    for bi in 0..b {
        let xb = &x.data()[bi * nd..(bi + 1) * nd];
        let r = bi * nd..(bi + 1) * nd;
        gemm(n, d, d, 1.0, xb, Trans::No, wq.data(), Trans::Yes, 0.0, &mut q[r.clone()]);
        gemm(n, d, d, 1.0, xb, Trans::No, wk.data(), Trans::Yes, 0.0, &mut k[r.clone()]);
        gemm(n, d, d, 1.0, xb, Trans::No, wv.data(), Trans::Yes, 0.0, &mut v[r.clone()]);
        for h in 0..heads {
            copy_head(&q[r.clone()], n, d, h, dk, &mut qh);
            copy_head(&k[r.clone()], n, d, h, dk, &mut kh);
            copy_head(&v[r.clone()], n, d, h, dk, &mut vh);
            let p_off = (bi * heads + h) * n * n;
            let p = &mut probs[p_off..p_off + n * n];
            gemm(n, dk, n, scale, &qh, Trans::No, &kh, Trans::Yes, 0.0, p);
            for row in p.chunks_mut(n) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for e in row.iter_mut() {
                    *e = (*e - m).exp();
                    s += *e;
                }
                for e in row.iter_mut() {
                    *e /= s;
                }
            }
            gemm(n, n, dk, 1.0, p, Trans::No, &vh, Trans::No, 0.0, &mut oh);
            add_head(&oh, n, d, h, dk, &mut mixed[r.clone()]);
        }
        gemm(n, d, d, 1.0, &mixed[r.clone()], Trans::No, wo.data(), Trans::Yes, 0.0, &mut out[r]);
    }
    Ok((Tensor::new(vec![b, n, d], out)?, AttentionCache { heads, q, k, v, probs, mixed }))
}

/// Returns `(dx, [dWq, dWk, dWv, dWo])`.
pub(crate) fn mhsa_backward(x: &Tensor, weights: [&Tensor; 4], cache: &AttentionCache, dy: &Tensor) -> Result<(Tensor, [Tensor; 4])> {
    let [wq, wk, wv, wo] = weights;
    let heads = cache.heads;
    let [b, n, d] = check_shapes(x, weights, heads)?;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let nd = n * d;
    let mut dx = vec![0.0; b * nd];
    let mut dw: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d * d]);
    let mut dmixed = vec![0.0; nd];
    let mut dq = vec![0.0; nd];
    let mut dkk = vec![0.0; nd];
    let mut dv = vec![0.0; nd];
    let mut qh = vec![0.0; n * dk];
    let mut kh = vec![0.0; n * dk];
    let mut vh = vec![0.0; n * dk];
    let mut doh = vec![0.0; n * dk];
    let mut tmp = vec![0.0; n * dk];
    let mut dp = vec![0.0; n * n];
    for bi in 0..b {
        let r = bi * nd..(bi + 1) * nd;
        let xb = &x.data()[r.clone()];
        let dyb = &dy.data()[r.clone()];
        gemm(n, d, d, 1.0, dyb, Trans::No, wo.data(), Trans::No, 0.0, &mut dmixed);
        gemm(d, n, d, 1.0, dyb, Trans::Yes, &cache.mixed[r.clone()], Trans::No, 1.0, &mut dw[3]);
        dq.fill(0.0);
        dkk.fill(0.0);
        dv.fill(0.0);
        for h in 0..heads {
            copy_head(&cache.q[r.clone()], n, d, h, dk, &mut qh);
            copy_head(&cache.k[r.clone()], n, d, h, dk, &mut kh);
            copy_head(&cache.v[r.clone()], n, d, h, dk, &mut vh);
            copy_head(&dmixed, n, d, h, dk, &mut doh);
            let p_off = (bi * heads + h) * n * n;
            let p = &cache.probs[p_off..p_off + n * n];
            // dV_h = A^T dO_h
            gemm(n, n, dk, 1.0, p, Trans::Yes, &doh, Trans::No, 0.0, &mut tmp);
            add_head(&tmp, n, d, h, dk, &mut dv);
            // dA = dO_h V_h^T, then through the row softmax.
            gemm(n, dk, n, 1.0, &doh, Trans::No, &vh, Trans::Yes, 0.0, &mut dp);
            for (drow, prow) in dp.chunks_mut(n).zip(p.chunks(n)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (dv_, &pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot);
                }
            }
            gemm(n, n, dk, scale, &dp, Trans::No, &kh, Trans::No, 0.0, &mut tmp);
            add_head(&tmp, n, d, h, dk, &mut dq);
            gemm(n, n, dk, scale, &dp, Trans::Yes, &qh, Trans::No, 0.0, &mut tmp);
            add_head(&tmp, n, d, h, dk, &mut dkk);
        }
        let dxb = &mut dx[r];
        for (i, (g, w)) in [(&dq, wq), (&dkk, wk), (&dv, wv)].into_iter().enumerate() {
            gemm(d, n, d, 1.0, g, Trans::Yes, xb, Trans::No, 1.0, &mut dw[i]);
            gemm(n, d, d, 1.0, g, Trans::No, w.data(), Trans::No, 1.0, dxb);
        }
    }
    let [a, b_, c, e] = dw;
    Ok((
        Tensor::new(vec![b, n, d], dx)?,
        [Tensor::new(vec![d, d], a)?, Tensor::new(vec![d, d], b_)?, Tensor::new(vec![d, d], c)?, Tensor::new(vec![d, d], e)?],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Explicit per-head loops following the textbook formula.
    fn attention_oracle(x: &Tensor, w: [&Tensor; 4], heads: usize) -> Tensor {
        let [b, n, d] = x.dims3().unwrap();
        let dk = d / heads;
        let at = |t: &Tensor, i: usize, j: usize| t.data()[i * d + j];
        let xv = |bi: usize, i: usize, j: usize| x.data()[(bi * n + i) * d + j];
        let proj = |wm: &Tensor, bi: usize, i: usize, row: usize| -> f64 { (0..d).map(|c| at(wm, row, c) * xv(bi, i, c)).sum() };
        let mut out = Tensor::zeros(&[b, n, d]);
        for bi in 0..b {
            for i in 0..n {
                let mut head_cat = vec![0.0; d];
                for h in 0..heads {
                    let scores: Vec<f64> = (0..n)
                        .map(|j| {
                            (0..dk).map(|t| proj(w[0], bi, i, h * dk + t) * proj(w[1], bi, j, h * dk + t)).sum::<f64>() / (dk as f64).sqrt()
                        })
                        .collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                    for t in 0..dk {
                        head_cat[h * dk + t] = (0..n).map(|j| (scores[j] - m).exp() / z * proj(w[2], bi, j, h * dk + t)).sum();
                    }
                }
                for o in 0..d {
                    out.data_mut()[(bi * n + i) * d + o] = (0..d).map(|c| at(w[3], o, c) * head_cat[c]).sum();
                }
            }
        }
        out
    }

    fn random_weights(d: usize, rng: &mut ChaCha8Rng) -> [Tensor; 4] {
        std::array::from_fn(|_| Tensor::randn(&[d, d], 0.5, rng))
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[1, 3, 4], 1.0, &mut rng);
        let w = random_weights(4, &mut rng);
        let (y, _) = mhsa_forward(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        let want = attention_oracle(&x, [&w[0], &w[1], &w[2], &w[3]], 2);
        assert!(y.max_abs_diff(&want).unwrap() < 1e-10);
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn(&[1, 1, 4], 1.0, &mut rng);
        let w = random_weights(4, &mut rng);
        let (y, cache) = mhsa_forward(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        assert_eq!(cache.probs(0, 0, 1), &[1.0]);
        assert_eq!(cache.probs(0, 1, 1), &[1.0]);
        // y = Wo (Wv x)
        let mut want = vec![0.0; 4];
        for (o, slot) in want.iter_mut().enumerate() {
            for c in 0..4 {
                let vc: f64 = (0..4).map(|j| w[2].data()[c * 4 + j] * x.data()[j]).sum();
                *slot += w[3].data()[o * 4 + c] * vc;
            }
        }
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_get_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let token = Tensor::randn(&[4], 1.0, &mut rng);
        let x = Tensor::from_fn(&[1, 5, 4], |i| token.data()[i % 4]);
        let w = random_weights(4, &mut rng);
        let (_, cache) = mhsa_forward(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        for h in 0..2 {
            for &p in cache.probs(0, h, 5) {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[2, 6, 8], 2.0, &mut rng);
        let w = random_weights(8, &mut rng);
        let (_, cache) = mhsa_forward(&x, &w[0], &w[1], &w[2], &w[3], 4).unwrap();
        for b in 0..2 {
            for h in 0..4 {
                for row in cache.probs(b, h, 6).chunks(6) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d) = (5, 4);
        let x = Tensor::randn(&[1, n, d], 1.0, &mut rng);
        let w = random_weights(d, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let xp = Tensor::from_fn(&[1, n, d], |i| x.data()[perm[i / d] * d + i % d]);
        let (y, _) = mhsa_forward(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        let (yp, _) = mhsa_forward(&xp, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..d {
                assert!((yp.data()[i * d + c] - y.data()[p * d + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let x = Tensor::zeros(&[1, 2, 6]);
        let w = Tensor::zeros(&[6, 6]);
        assert!(mhsa_forward(&x, &w, &w, &w, &w, 4).is_err());
    }
}
