use super::Tensor;
use crate::error::{Error, Result};

/// Saved statistics shared by the two normalizations: the normalized values
/// and one inverse standard deviation per normalization group.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// GroupNorm over `[B,C,H,W]`: statistics per (batch, group of `C/groups`
/// channels), then a per-channel affine map.
pub fn group_norm_forward(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(group_norm_impl(x, groups, gamma, beta, eps)?.0)
}

pub(crate) fn group_norm_impl(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, NormCache)> {
    let [b, c, h, w] = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!("group_norm: channels ({c}) not divisible by groups ({groups})")));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "group_norm: affine parameters {:?}/{:?} do not match channels ({c})",
            gamma.shape(),
            beta.shape()
        )));
    }
    let plane = h * w;
    let per_group = c / groups * plane;
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; b * groups];
    let mut out = vec![0.0; x.numel()];
    for (gi, chunk) in x.data().chunks(per_group).enumerate() {
        let mean = chunk.iter().sum::<f64>() / per_group as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[gi] = is;
        let base = gi * per_group;
        let c0 = (gi % groups) * (c / groups);
        for (j, &v) in chunk.iter().enumerate() {
            let ch = c0 + j / plane;
            let xh = (v - mean) * is;
            xhat[base + j] = xh;
            out[base + j] = gamma.data()[ch] * xh + beta.data()[ch];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, NormCache { xhat, inv_std }))
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn group_norm_backward(
    shape: &[usize],
    groups: usize,
    gamma: &Tensor,
    cache: &NormCache,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let per_group = c / groups * plane;
    let mut dx = vec![0.0; dy.numel()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (gi, dyc) in dy.data().chunks(per_group).enumerate() {
        let base = gi * per_group;
        let c0 = (gi % groups) * (c / groups);
        let xh = &cache.xhat[base..base + per_group];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for (j, (&d, &x)) in dyc.iter().zip(xh).enumerate() {
            let ch = c0 + j / plane;
            dgamma[ch] += d * x;
            dbeta[ch] += d;
            let g = d * gamma.data()[ch];
            mean_g += g;
            mean_gx += g * x;
        }
        mean_g /= per_group as f64;
        mean_gx /= per_group as f64;
        let is = cache.inv_std[gi];
        for (j, (&d, &x)) in dyc.iter().zip(xh).enumerate() {
            let ch = c0 + j / plane;
            dx[base + j] = is * (d * gamma.data()[ch] - mean_g - x * mean_gx);
        }
    }
    Ok((Tensor::new(shape.to_vec(), dx)?, Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?))
}

/// LayerNorm over the trailing axis of any tensor.
pub fn layer_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_impl(x, gamma, beta, eps)?.0)
}

pub(crate) fn layer_norm_impl(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, NormCache)> {
    let d = *x.shape().last().expect("tensor rank >= 1");
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Shape(format!(
            "layer_norm: affine parameters {:?}/{:?} do not match feature dim ({d})",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / d;
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; x.numel()];
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for (j, &v) in row.iter().enumerate() {
            let xh = (v - mean) * is;
            xhat[r * d + j] = xh;
            out[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, NormCache { xhat, inv_std }))
}

pub(crate) fn layer_norm_backward(shape: &[usize], gamma: &Tensor, cache: &NormCache, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let d = *shape.last().expect("tensor rank >= 1");
    let mut dx = vec![0.0; dy.numel()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for (r, dyr) in dy.data().chunks(d).enumerate() {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            let g = dyr[j] * gamma.data()[j];
            mean_g += g;
            mean_gx += g * xh[j];
        }
        mean_g /= d as f64;
        mean_gx /= d as f64;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = is * (dyr[j] * gamma.data()[j] - mean_g - xh[j] * mean_gx);
        }
    }
    Ok((Tensor::new(shape.to_vec(), dx)?, Tensor::new(vec![d], dgamma)?, Tensor::new(vec![d], dbeta)?))
}
