//! Direct 2-D convolution kernels (forward and the three backward passes).
//!
//! Layout is BCHW for activations and [c_out, c_in, kh, kw] for kernels.
//! Small feature maps at desk scale; no im2col, just fixed-order loops.

pub fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn h_out(&self) -> usize {
        out_dim(self.h, self.kh, self.stride, self.pad)
    }
    pub fn w_out(&self) -> usize {
        out_dim(self.w, self.kw, self.stride, self.pad)
    }
}

pub fn conv2d_fwd(x: &[f64], k: &[f64], bias: &[f64], d: &ConvDims, out: &mut [f64]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    debug_assert_eq!(x.len(), d.batch * d.c_in * d.h * d.w);
    debug_assert_eq!(k.len(), d.c_out * d.c_in * d.kh * d.kw);
    debug_assert_eq!(out.len(), d.batch * d.c_out * ho * wo);
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let obase = (b * d.c_out + co) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..d.c_in {
                        let xbase = (b * d.c_in + ci) * d.h * d.w;
                        let kbase = (co * d.c_in + ci) * d.kh * d.kw;
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                acc += x[xbase + iy as usize * d.w + ix as usize]
                                    * k[kbase + ky * d.kw + kx];
                            }
                        }
                    }
                    out[obase + oy * wo + ox] = acc;
                }
            }
        }
    }
}

pub fn conv2d_bwd_bias(g: &[f64], d: &ConvDims, dbias: &mut [f64]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    for co in 0..d.c_out {
        let mut acc = 0.0;
        for b in 0..d.batch {
            let gbase = (b * d.c_out + co) * ho * wo;
            for v in &g[gbase..gbase + ho * wo] {
                acc += v;
            }
        }
        dbias[co] += acc;
    }
}

pub fn conv2d_bwd_kernel(x: &[f64], g: &[f64], d: &ConvDims, dk: &mut [f64]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    for co in 0..d.c_out {
        for ci in 0..d.c_in {
            let kbase = (co * d.c_in + ci) * d.kh * d.kw;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let mut acc = 0.0;
                    for b in 0..d.batch {
                        let xbase = (b * d.c_in + ci) * d.h * d.w;
                        let gbase = (b * d.c_out + co) * ho * wo;
                        for oy in 0..ho {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                acc += x[xbase + iy as usize * d.w + ix as usize]
                                    * g[gbase + oy * wo + ox];
                            }
                        }
                    }
                    dk[kbase + ky * d.kw + kx] += acc;
                }
            }
        }
    }
}

pub fn conv2d_bwd_input(k: &[f64], g: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let gbase = (b * d.c_out + co) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let gv = g[gbase + oy * wo + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..d.c_in {
                        let xbase = (b * d.c_in + ci) * d.h * d.w;
                        let kbase = (co * d.c_in + ci) * d.kh * d.kw;
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                dx[xbase + iy as usize * d.w + ix as usize] +=
                                    gv * k[kbase + ky * d.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}
