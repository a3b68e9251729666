//! 2D cross-correlation and its adjoint, lowered to GEMM through im2col.

use super::gemm::{gemm, Trans};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dCfg {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding, ..Self::default() }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

/// Transposed convolution settings. `output_padding` extends the bottom/right
/// edge so a stride-`s` transpose can exactly invert a stride-`s` conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTranspose2dCfg {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2dCfg {
    pub fn new(stride: usize, padding: usize, output_padding: usize) -> Self {
        Self { stride, padding, output_padding }
    }
}

/// Sampling geometry of one group of a forward convolution.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_out_dim(len: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = len + 2 * pad;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

fn im2col(src: &[f64], g: &Geometry, cols: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.channels {
        let src_c = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki * g.dil) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dil) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add the columns back onto the image; the adjoint of [`im2col`].
fn col2im(cols: &[f64], g: &Geometry, dst: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.channels {
        let dst_c = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki * g.dil) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj * g.dil) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Output indices `o` in `0..out_len` with `o * stride + offset` inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi = if offset >= in_len as isize { 0 } else { (in_len as isize - offset + s - 1) / s };
    let hi = (hi.max(0) as usize).min(out_len);
    (lo as usize, hi.max(lo as usize))
}

/// Calls `f(tap, oy, iy, ox_lo, ox_hi, ix_of_ox_lo)` for every kernel tap `(ki, kj)`
/// and every output row that reads a valid input row.
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for ki in 0..g.kh {
        let off_y = (ki * g.dil) as isize - g.pad as isize;
        let (oy_lo, oy_hi) = valid_range(g.ho, g.h, g.stride, off_y);
        for kj in 0..g.kw {
            let off_x = (kj * g.dil) as isize - g.pad as isize;
            let (ox_lo, ox_hi) = valid_range(g.wo, g.w, g.stride, off_x);
            if ox_lo >= ox_hi {
                continue;
            }
            let ix0 = (ox_lo * g.stride) as isize + off_x;
            for oy in oy_lo..oy_hi {
                let iy = ((oy * g.stride) as isize + off_y) as usize;
                f(ki * g.kw + kj, oy, iy, ox_lo, ox_hi, ix0 as usize);
            }
        }
    }
}

fn depthwise_forward(src: &[f64], w: &[f64], g: &Geometry, dst: &mut [f64]) {
    for_each_tap(g, |tap, oy, iy, lo, hi, ix0| {
        let wv = w[tap];
        let out = &mut dst[oy * g.wo + lo..oy * g.wo + hi];
        let row = &src[iy * g.w..(iy + 1) * g.w];
        if g.stride == 1 {
            for (o, &x) in out.iter_mut().zip(&row[ix0..ix0 + (hi - lo)]) {
                *o += wv * x;
            }
        } else {
            for (k, o) in out.iter_mut().enumerate() {
                *o += wv * row[ix0 + k * g.stride];
            }
        }
    });
}

fn depthwise_backward(src: &[f64], w: &[f64], g: &Geometry, dy: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let mut dx = dx;
    for_each_tap(g, |tap, oy, iy, lo, hi, ix0| {
        let d = &dy[oy * g.wo + lo..oy * g.wo + hi];
        let row = &src[iy * g.w..(iy + 1) * g.w];
        let mut acc = 0.0;
        for (k, &dv) in d.iter().enumerate() {
            acc += dv * row[ix0 + k * g.stride];
        }
        dw[tap] += acc;
        if let Some(dx) = dx.as_deref_mut() {
            let wv = w[tap];
            let drow = &mut dx[iy * g.w..(iy + 1) * g.w];
            for (k, &dv) in d.iter().enumerate() {
                drow[ix0 + k * g.stride] += wv * dv;
            }
        }
    });
}

struct ConvPlan {
    batch: usize,
    cin: usize,
    cout: usize,
    cout_g: usize,
    groups: usize,
    geo: Geometry,
}

impl ConvPlan {
    fn depthwise(&self) -> bool {
        self.geo.channels == 1 && self.cout_g == 1
    }

    /// 1x1, stride 1, no padding: the column matrix is the input itself.
    fn pointwise(&self) -> bool {
        let g = &self.geo;
        g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0
    }
}

fn plan_conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &Conv2dCfg) -> Result<ConvPlan> {
    let [b, cin, h, wd] = x.dims4()?;
    let [cout, cin_g, kh, kw] = w.dims4()?;
    if cfg.stride == 0 || cfg.dilation == 0 || cfg.groups == 0 {
        return Err(Error::InvalidArgument("conv2d: stride, dilation and groups must be >= 1".into()));
    }
    if cin % cfg.groups != 0 {
        return Err(Error::Shape(format!("conv2d: input channels ({cin}) not divisible by groups ({})", cfg.groups)));
    }
    if cout % cfg.groups != 0 {
        return Err(Error::Shape(format!("conv2d: output channels ({cout}) not divisible by groups ({})", cfg.groups)));
    }
    if cin / cfg.groups != cin_g {
        return Err(Error::Shape(format!(
            "conv2d: weight in-channels per group ({cin_g}) does not match input channels ({cin}) / groups ({})",
            cfg.groups
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::Shape(format!("conv2d: bias shape {:?} does not match output channels ({cout})", bias.shape())));
        }
    }
    let ho = conv_out_dim(h, kh, cfg.stride, cfg.padding, cfg.dilation)
        .ok_or_else(|| Error::Shape(format!("conv2d: input height ({h}) smaller than the dilated kernel height")))?;
    let wo = conv_out_dim(wd, kw, cfg.stride, cfg.padding, cfg.dilation)
        .ok_or_else(|| Error::Shape(format!("conv2d: input width ({wd}) smaller than the dilated kernel width")))?;
    Ok(ConvPlan {
        batch: b,
        cin,
        cout,
        cout_g: cout / cfg.groups,
        groups: cfg.groups,
        geo: Geometry { channels: cin_g, h, w: wd, kh, kw, ho, wo, stride: cfg.stride, pad: cfg.padding, dil: cfg.dilation },
    })
}

/// `[B,Cin,H,W] * [Cout,Cin/groups,kh,kw] -> [B,Cout,H',W']`, no kernel flip.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &Conv2dCfg) -> Result<Tensor> {
    let p = plan_conv2d(x, w, bias, cfg)?;
    let g = p.geo;
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let krows = g.col_rows();
    let mut out = vec![0.0; p.batch * p.cout * out_plane];
    let mut cols = if p.depthwise() || p.pointwise() { Vec::new() } else { vec![0.0; krows * g.col_cols()] };
    for b in 0..p.batch {
        for grp in 0..p.groups {
            let x_off = (b * p.cin + grp * g.channels) * in_plane;
            if p.depthwise() {
                let o_off = (b * p.cout + grp) * out_plane;
                depthwise_forward(
                    &x.data()[x_off..x_off + in_plane],
                    &w.data()[grp * krows..(grp + 1) * krows],
                    &g,
                    &mut out[o_off..o_off + out_plane],
                );
                continue;
            }
            let x_g = &x.data()[x_off..x_off + g.channels * in_plane];
            let cols: &[f64] = if p.pointwise() {
                x_g
            } else {
                im2col(x_g, &g, &mut cols);
                &cols
            };
            let w_off = grp * p.cout_g * krows;
            let o_off = (b * p.cout + grp * p.cout_g) * out_plane;
            gemm(
                p.cout_g,
                krows,
                out_plane,
                1.0,
                &w.data()[w_off..w_off + p.cout_g * krows],
                Trans::No,
                cols,
                Trans::No,
                0.0,
                &mut out[o_off..o_off + p.cout_g * out_plane],
            );
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                let o_off = (b * p.cout + co) * out_plane;
                for v in &mut out[o_off..o_off + out_plane] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(vec![p.batch, p.cout, g.ho, g.wo], out)
}

/// Gradients of a conv2d with respect to input, weight and (summed) bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    cfg: &Conv2dCfg,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let p = plan_conv2d(x, w, None, cfg)?;
    let g = p.geo;
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let krows = g.col_rows();
    let mut dx = need_dx.then(|| vec![0.0; x.numel()]);
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; p.cout];
    let mut cols = if p.depthwise() || p.pointwise() { Vec::new() } else { vec![0.0; krows * out_plane] };
    for b in 0..p.batch {
        for grp in 0..p.groups {
            let x_off = (b * p.cin + grp * g.channels) * in_plane;
            let w_off = grp * p.cout_g * krows;
            let o_off = (b * p.cout + grp * p.cout_g) * out_plane;
            let dy_g = &dy.data()[o_off..o_off + p.cout_g * out_plane];
            if p.depthwise() {
                depthwise_backward(
                    &x.data()[x_off..x_off + in_plane],
                    &w.data()[w_off..w_off + krows],
                    &g,
                    dy_g,
                    &mut dw[w_off..w_off + krows],
                    dx.as_mut().map(|d| &mut d[x_off..x_off + in_plane]),
                );
                continue;
            }
            let x_g = &x.data()[x_off..x_off + g.channels * in_plane];
            if p.pointwise() {
                gemm(p.cout_g, out_plane, krows, 1.0, dy_g, Trans::No, x_g, Trans::Yes, 1.0, &mut dw[w_off..w_off + p.cout_g * krows]);
                if let Some(dx) = dx.as_mut() {
                    gemm(
                        krows,
                        p.cout_g,
                        out_plane,
                        1.0,
                        &w.data()[w_off..w_off + p.cout_g * krows],
                        Trans::Yes,
                        dy_g,
                        Trans::No,
                        1.0,
                        &mut dx[x_off..x_off + g.channels * in_plane],
                    );
                }
                continue;
            }
            im2col(x_g, &g, &mut cols);
            gemm(p.cout_g, out_plane, krows, 1.0, dy_g, Trans::No, &cols, Trans::Yes, 1.0, &mut dw[w_off..w_off + p.cout_g * krows]);
            if let Some(dx) = dx.as_mut() {
                gemm(
                    krows,
                    p.cout_g,
                    out_plane,
                    1.0,
                    &w.data()[w_off..w_off + p.cout_g * krows],
                    Trans::Yes,
                    dy_g,
                    Trans::No,
                    0.0,
                    &mut cols,
                );
                col2im(&cols, &g, &mut dx[x_off..x_off + g.channels * in_plane]);
            }
        }
        for (co, acc) in db.iter_mut().enumerate() {
            let o_off = (b * p.cout + co) * out_plane;
            *acc += dy.data()[o_off..o_off + out_plane].iter().sum::<f64>();
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    Ok((dx, Tensor::new(w.shape().to_vec(), dw)?, Tensor::new(vec![p.cout], db)?))
}

struct TransposePlan {
    batch: usize,
    cin: usize,
    cout: usize,
    /// Geometry of the forward conv whose adjoint this is: its "input" is our
    /// output and its "output" is our input.
    geo: Geometry,
}

fn plan_conv_transpose2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &ConvTranspose2dCfg) -> Result<TransposePlan> {
    let [b, cin, h, wd] = x.dims4()?;
    let [w_cin, cout, kh, kw] = w.dims4()?;
    if cfg.stride == 0 {
        return Err(Error::InvalidArgument("conv_transpose2d: stride must be >= 1".into()));
    }
    if cfg.output_padding >= cfg.stride {
        return Err(Error::InvalidArgument(format!(
            "conv_transpose2d: output_padding ({}) must be smaller than stride ({})",
            cfg.output_padding, cfg.stride
        )));
    }
    if w_cin != cin {
        return Err(Error::Shape(format!("conv_transpose2d: weight in-channels ({w_cin}) does not match input channels ({cin})")));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::Shape(format!("conv_transpose2d: bias shape {:?} does not match output channels ({cout})", bias.shape())));
        }
    }
    let out_dim = |len: usize, k: usize, name: &str| -> Result<usize> {
        let full = (len - 1) * cfg.stride + k + cfg.output_padding;
        full.checked_sub(2 * cfg.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Shape(format!("conv_transpose2d: padding too large for input {name} ({len})")))
    };
    let ho = out_dim(h, kh, "height")?;
    let wo = out_dim(wd, kw, "width")?;
    Ok(TransposePlan {
        batch: b,
        cin,
        cout,
        geo: Geometry { channels: cout, h: ho, w: wo, kh, kw, ho: h, wo: wd, stride: cfg.stride, pad: cfg.padding, dil: 1 },
    })
}

/// Adjoint of [`conv2d_forward`] (groups = 1). Weight layout `[Cin, Cout, kh, kw]`.
/// Output extent is `(H-1)*stride - 2*padding + k + output_padding`.
pub fn conv_transpose2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &ConvTranspose2dCfg) -> Result<Tensor> {
    let p = plan_conv_transpose2d(x, w, bias, cfg)?;
    let g = p.geo;
    let in_plane = g.ho * g.wo;
    let out_plane = g.h * g.w;
    let krows = g.col_rows();
    let mut out = vec![0.0; p.batch * p.cout * out_plane];
    let mut cols = vec![0.0; krows * in_plane];
    for b in 0..p.batch {
        let x_b = &x.data()[b * p.cin * in_plane..(b + 1) * p.cin * in_plane];
        gemm(krows, p.cin, in_plane, 1.0, w.data(), Trans::Yes, x_b, Trans::No, 0.0, &mut cols);
        let out_b = &mut out[b * p.cout * out_plane..(b + 1) * p.cout * out_plane];
        col2im(&cols, &g, out_b);
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut out_b[co * out_plane..(co + 1) * out_plane] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(vec![p.batch, p.cout, g.h, g.w], out)
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    cfg: &ConvTranspose2dCfg,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let p = plan_conv_transpose2d(x, w, None, cfg)?;
    let g = p.geo;
    let in_plane = g.ho * g.wo;
    let out_plane = g.h * g.w;
    let krows = g.col_rows();
    let mut dx = need_dx.then(|| vec![0.0; x.numel()]);
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; p.cout];
    let mut cols = vec![0.0; krows * in_plane];
    for b in 0..p.batch {
        let dy_b = &dy.data()[b * p.cout * out_plane..(b + 1) * p.cout * out_plane];
        im2col(dy_b, &g, &mut cols);
        let x_b = &x.data()[b * p.cin * in_plane..(b + 1) * p.cin * in_plane];
        gemm(p.cin, in_plane, krows, 1.0, x_b, Trans::No, &cols, Trans::Yes, 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(
                p.cin,
                krows,
                in_plane,
                1.0,
                w.data(),
                Trans::No,
                &cols,
                Trans::No,
                0.0,
                &mut dx[b * p.cin * in_plane..(b + 1) * p.cin * in_plane],
            );
        }
        for (co, acc) in db.iter_mut().enumerate() {
            *acc += dy_b[co * out_plane..(co + 1) * out_plane].iter().sum::<f64>();
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    Ok((dx, Tensor::new(w.shape().to_vec(), dw)?, Tensor::new(vec![p.cout], db)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(x: &Tensor, w: &Tensor, cfg: &Conv2dCfg) -> Tensor {
        let [b, cin, h, wd] = x.dims4().unwrap();
        let [cout, cin_g, kh, kw] = w.dims4().unwrap();
        let cout_g = cout / cfg.groups;
        let span = |k: usize| cfg.dilation * (k - 1) + 1;
        let ho = (h + 2 * cfg.padding - span(kh)) / cfg.stride + 1;
        let wo = (wd + 2 * cfg.padding - span(kw)) / cfg.stride + 1;
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for n in 0..b {
            for co in 0..cout {
                let grp = co / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            let c = grp * cin_g + ci;
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * cfg.stride + ki * cfg.dilation) as isize - cfg.padding as isize;
                                    let ix = (ox * cfg.stride + kj * cfg.dilation) as isize - cfg.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((n * cin + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin_g + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((n * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let w = Tensor::ones(&[1, 1, 1, 1]);
        let y = conv2d_forward(&x, &w, None, &Conv2dCfg::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_ones_kernel_matches_loop_oracle() {
        let x = Tensor::ones(&[1, 1, 4, 4]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let cfg = Conv2dCfg::new(2, 1);
        let y = conv2d_forward(&x, &w, None, &cfg).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y, conv_oracle(&x, &w, &cfg));
        assert_eq!(y.data(), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn grouped_dilated_strided_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [
            (Conv2dCfg::new(1, 1), [2, 4, 6, 5], [6, 4, 3, 3]),
            (Conv2dCfg::new(2, 1).groups(2), [1, 4, 7, 6], [6, 2, 3, 3]),
            (Conv2dCfg::new(1, 2).groups(4), [2, 4, 5, 5], [4, 1, 5, 5]),
            (Conv2dCfg::new(1, 2).groups(3).dilation(2), [1, 3, 6, 6], [3, 1, 3, 3]),
            (Conv2dCfg::new(3, 0), [1, 2, 9, 8], [2, 2, 2, 2]),
        ];
        for (cfg, xs, ws) in cases {
            let x = Tensor::randn(&xs, 1.0, &mut rng);
            let w = Tensor::randn(&ws, 1.0, &mut rng);
            let got = conv2d_forward(&x, &w, None, &cfg).unwrap();
            let want = conv_oracle(&x, &w, &cfg);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{cfg:?}");
        }
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::ones(&[2, 1, 1, 1]);
        let b = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let y = conv2d_forward(&x, &w, Some(&b), &Conv2dCfg::default()).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 1.5, 1.5, -2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let err = conv2d_forward(&x, &w, None, &Conv2dCfg::new(1, 1)).unwrap_err();
        assert!(err.to_string().contains("in-channels"), "{err}");
        let err = conv2d_forward(&x, &Tensor::zeros(&[2, 1, 3, 3]), None, &Conv2dCfg::new(1, 1).groups(2)).unwrap_err();
        assert!(err.to_string().contains("not divisible by groups"), "{err}");
    }

    #[test]
    fn transpose_shape_formula() {
        let x = Tensor::ones(&[1, 1, 2, 2]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv_transpose2d_forward(&x, &w, None, &ConvTranspose2dCfg::new(2, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, pad, hw) in [(2, 1, 5), (1, 1, 5), (2, 1, 6), (2, 0, 7), (3, 1, 8)] {
            let x = Tensor::randn(&[1, 2, hw, hw], 1.0, &mut rng);
            let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
            let cx = conv2d_forward(&x, &w, None, &Conv2dCfg::new(stride, pad)).unwrap();
            let y = Tensor::randn(cx.shape(), 1.0, &mut rng);
            // conv weight [Cout=3, Cin=2] is read as transpose weight [Cin'=3, Cout'=2].
            let op = (hw + 2 * pad - 3) % stride;
            let ty = conv_transpose2d_forward(&y, &w, None, &ConvTranspose2dCfg::new(stride, pad, op)).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride}: {lhs} vs {rhs}");
        }
    }
}
