//! Direct convolution kernels shared by `conv2d` and `deconv2d`.
//!
//! Three primitives cover both ops: the transposed convolution's forward pass
//! is the plain convolution's input-gradient pass under a mirrored geometry,
//! and vice versa.

/// Static geometry of one convolution: spatial sizes, kernel, stride, and
/// top/left padding. `out_*` is the convolution's output; every access is
/// `in = out*stride + k - pad`, clipped to the input bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// "valid" padding: out = floor((in - k)/s) + 1, no padding.
    pub fn valid(in_h: usize, in_w: usize, k: usize, stride: usize) -> Option<ConvGeom> {
        if in_h < k || in_w < k {
            return None;
        }
        Some(ConvGeom {
            in_h,
            in_w,
            out_h: (in_h - k) / stride + 1,
            out_w: (in_w - k) / stride + 1,
            k,
            stride,
            pad_h: 0,
            pad_w: 0,
        })
    }

    /// "same" padding: out = ceil(in/s); odd total padding puts the extra
    /// row/column at the bottom/right.
    pub fn same(in_h: usize, in_w: usize, k: usize, stride: usize) -> ConvGeom {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let total_h = ((out_h - 1) * stride + k).saturating_sub(in_h);
        let total_w = ((out_w - 1) * stride + k).saturating_sub(in_w);
        ConvGeom {
            in_h,
            in_w,
            out_h,
            out_w,
            k,
            stride,
            pad_h: total_h / 2,
            pad_w: total_w / 2,
        }
    }

    /// Geometry of the convolution mirrored by a transposed convolution whose
    /// input is `in_h x in_w`: the mirror's input is the deconv output.
    pub fn deconv(
        in_h: usize,
        in_w: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Option<ConvGeom> {
        let out_dim = |d: usize| ((d - 1) * stride + k + out_pad).checked_sub(2 * pad);
        let (dh, dw) = (out_dim(in_h)?, out_dim(in_w)?);
        if dh == 0 || dw == 0 {
            return None;
        }
        Some(ConvGeom {
            in_h: dh,
            in_w: dw,
            out_h: in_h,
            out_w: in_w,
            k,
            stride,
            pad_h: pad,
            pad_w: pad,
        })
    }

    /// Range of output positions whose access `o*stride + k_off - pad` lands
    /// inside `[0, in_size)`.
    fn out_range(&self, k_off: usize, pad: usize, in_size: usize, out_size: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo_num = pad as isize - k_off as isize;
        let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
        let hi_num = in_size as isize - 1 + pad as isize - k_off as isize;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_size as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// y[n,co,oh,ow] = bias[co] + sum_{ci,kh,kw} x[n,ci,oh*s+kh-ph,ow*s+kw-pw] * w[co,ci,kh,kw]
pub(crate) fn conv_forward(
    g: &ConvGeom,
    n: usize,
    ci: usize,
    co: usize,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    y: &mut [f64],
) {
    let (ih, iw, oh_n, ow_n, k, s) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k, g.stride);
    for b in 0..n {
        for c_out in 0..co {
            let y_plane = &mut y[(b * co + c_out) * oh_n * ow_n..][..oh_n * ow_n];
            let init = bias.map_or(0.0, |bv| bv[c_out]);
            y_plane.fill(init);
            for c_in in 0..ci {
                let x_plane = &x[(b * ci + c_in) * ih * iw..][..ih * iw];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = g.out_range(kh, g.pad_h, ih, oh_n);
                    for kw in 0..k {
                        let wv = w[((c_out * ci + c_in) * k + kh) * k + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = g.out_range(kw, g.pad_w, iw, ow_n);
                        for oh in oh_lo..oh_hi {
                            let x_row = (oh * s + kh - g.pad_h) * iw;
                            let y_row = oh * ow_n;
                            for ow in ow_lo..ow_hi {
                                y_plane[y_row + ow] += wv * x_plane[x_row + ow * s + kw - g.pad_w];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dx[n,ci,ih,iw] += sum_{co,kh,kw} dy[n,co,oh,ow] * w[co,ci,kh,kw]
/// where ih = oh*s + kh - pad.  `dx` is accumulated into, not overwritten.
pub(crate) fn conv_backward_input(
    g: &ConvGeom,
    n: usize,
    ci: usize,
    co: usize,
    dy: &[f64],
    w: &[f64],
    dx: &mut [f64],
) {
    let (ih, iw, oh_n, ow_n, k, s) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k, g.stride);
    for b in 0..n {
        for c_out in 0..co {
            let dy_plane = &dy[(b * co + c_out) * oh_n * ow_n..][..oh_n * ow_n];
            for c_in in 0..ci {
                let dx_plane = &mut dx[(b * ci + c_in) * ih * iw..][..ih * iw];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = g.out_range(kh, g.pad_h, ih, oh_n);
                    for kw in 0..k {
                        let wv = w[((c_out * ci + c_in) * k + kh) * k + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = g.out_range(kw, g.pad_w, iw, ow_n);
                        for oh in oh_lo..oh_hi {
                            let x_row = (oh * s + kh - g.pad_h) * iw;
                            let y_row = oh * ow_n;
                            for ow in ow_lo..ow_hi {
                                dx_plane[x_row + ow * s + kw - g.pad_w] += wv * dy_plane[y_row + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dw[co,ci,kh,kw] += sum_{n,oh,ow} dy[n,co,oh,ow] * x[n,ci,oh*s+kh-ph,ow*s+kw-pw]
pub(crate) fn conv_backward_weight(
    g: &ConvGeom,
    n: usize,
    ci: usize,
    co: usize,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
) {
    let (ih, iw, oh_n, ow_n, k, s) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k, g.stride);
    for b in 0..n {
        for c_out in 0..co {
            let dy_plane = &dy[(b * co + c_out) * oh_n * ow_n..][..oh_n * ow_n];
            for c_in in 0..ci {
                let x_plane = &x[(b * ci + c_in) * ih * iw..][..ih * iw];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = g.out_range(kh, g.pad_h, ih, oh_n);
                    for kw in 0..k {
                        let (ow_lo, ow_hi) = g.out_range(kw, g.pad_w, iw, ow_n);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let x_row = (oh * s + kh - g.pad_h) * iw;
                            let y_row = oh * ow_n;
                            for ow in ow_lo..ow_hi {
                                acc += dy_plane[y_row + ow] * x_plane[x_row + ow * s + kw - g.pad_w];
                            }
                        }
                        dw[((c_out * ci + c_in) * k + kh) * k + kw] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_halves_and_rounds_up() {
        let g = ConvGeom::same(48, 64, 3, 2);
        assert_eq!((g.out_h, g.out_w), (24, 32));
        assert_eq!((g.pad_h, g.pad_w), (0, 0));
        let g = ConvGeom::same(5, 5, 3, 1);
        assert_eq!((g.out_h, g.out_w), (5, 5));
        assert_eq!((g.pad_h, g.pad_w), (1, 1));
    }

    #[test]
    fn deconv_doubles_with_output_padding() {
        let g = ConvGeom::deconv(6, 8, 3, 2, 1, 1).unwrap();
        assert_eq!((g.in_h, g.in_w), (12, 16));
        assert_eq!((g.out_h, g.out_w), (6, 8));
    }

    #[test]
    fn forward_identity_kernel() {
        // 1x1 kernel with weight 1.0 reproduces the input.
        let g = ConvGeom::valid(3, 3, 1, 1).unwrap();
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut y = vec![0.0; 9];
        conv_forward(&g, 1, 1, 1, &x, &[1.0], None, &mut y);
        assert_eq!(x, y);
    }
}
