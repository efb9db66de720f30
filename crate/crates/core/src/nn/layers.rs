//! Forward and backward kernels for the reference backbones.
//!
//! Everything is plain single-threaded loops over row-major `f32` buffers;
//! the kernels are deterministic for a given input.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

fn conv_out(size: usize, k: usize, g: ConvGeometry) -> usize {
    (size + 2 * g.pad - k) / g.stride + 1
}

/// `x`: B x Cin x H x W, `w`: Cout x Cin x K x K, `b`: Cout.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: ConvGeometry) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::shape(format!("conv input {xs:?} vs weight {ws:?}")));
    }
    let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    if h + 2 * g.pad < k || wd + 2 * g.pad < k {
        return Err(Error::shape(format!("conv input {xs:?} smaller than kernel {k}")));
    }
    let (ho, wo) = (conv_out(h, k, g), conv_out(wd, k, g));
    let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let od = out.data_mut();
    for n in 0..bsz {
        for co in 0..cout {
            let obase = (n * cout + co) * ho * wo;
            od[obase..obase + ho * wo].fill(bd[co]);
            for ci in 0..cin {
                let xbase = (n * cin + ci) * h * wd;
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        for oy in 0..ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let orow = obase + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                od[orow + ox] += wv * xd[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns (grad_x, grad_w, grad_b).
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    g: ConvGeometry,
) -> (Tensor, Tensor, Tensor) {
    let (xs, ws, os) = (x.shape(), w.shape(), grad_out.shape());
    let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let (ho, wo) = (os[2], os[3]);
    let mut gx = Tensor::zeros(xs);
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(&[cout]);
    let (xd, wdat, god) = (x.data(), w.data(), grad_out.data());
    {
        let gbd = gb.data_mut();
        for n in 0..bsz {
            for co in 0..cout {
                let obase = (n * cout + co) * ho * wo;
                gbd[co] += god[obase..obase + ho * wo].iter().sum::<f32>();
            }
        }
    }
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    for n in 0..bsz {
        for co in 0..cout {
            let obase = (n * cout + co) * ho * wo;
            for ci in 0..cin {
                let xbase = (n * cin + ci) * h * wd;
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        let mut acc = 0.0f32;
                        for oy in 0..ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let orow = obase + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let go = god[orow + ox];
                                acc += go * xd[xrow + ix as usize];
                                gxd[xrow + ix as usize] += go * wv;
                            }
                        }
                        gwd[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `x`: B x In, `w`: Out x In, `b`: Out.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bsz, inp) = (x.rows(), x.row_len());
    let ws = w.shape();
    if ws.len() != 2 || ws[1] != inp {
        return Err(Error::shape(format!(
            "linear input {:?} vs weight {ws:?}",
            x.shape()
        )));
    }
    let out_dim = ws[0];
    let mut out = Tensor::zeros(&[bsz, out_dim]);
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let od = out.data_mut();
    for n in 0..bsz {
        let xr = &xd[n * inp..(n + 1) * inp];
        for o in 0..out_dim {
            let wr = &wdat[o * inp..(o + 1) * inp];
            let mut acc = bd[o];
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            od[n * out_dim + o] = acc;
        }
    }
    Ok(out)
}

/// Returns (grad_x, grad_w, grad_b); `grad_x` has the shape of `x`.
pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (bsz, inp) = (x.rows(), x.row_len());
    let out_dim = w.shape()[0];
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[out_dim]);
    let (xd, wdat, god) = (x.data(), w.data(), grad_out.data());
    let (gxd, gwd, gbd) = (gx.data_mut(), gw.data_mut(), gb.data_mut());
    for n in 0..bsz {
        let xr = &xd[n * inp..(n + 1) * inp];
        let gxr = &mut gxd[n * inp..(n + 1) * inp];
        for o in 0..out_dim {
            let go = god[n * out_dim + o];
            if go == 0.0 {
                continue;
            }
            gbd[o] += go;
            let wr = &wdat[o * inp..(o + 1) * inp];
            let gwr = &mut gwd[o * inp..(o + 1) * inp];
            for i in 0..inp {
                gwr[i] += go * xr[i];
                gxr[i] += go * wr[i];
            }
        }
    }
    (gx, gw, gb)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}
