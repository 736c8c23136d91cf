//! Brute-force nested-loop convolution references (test-only oracles).

/// out[n][co][oy][ox] = b[co] + Σ x[n][ci][oy·s+ky−p][ox·s+kx−p] · w[co][ci][ky][kx]
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * cin + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// Scatter-accumulate transposed convolution, weight laid out C_in×C_out×k×k.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    output_padding: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h - 1) * stride + k + output_padding;
    let wo = (w - 1) * stride + k + output_padding;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[((b * cout + co) * ho + oy) * wo + ox] = bias[co];
                }
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * cin + ci) * h + iy) * w + ix];
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = iy * stride + ky;
                                let ox = ix * stride + kx;
                                let wi = ((ci * cout + co) * k + ky) * k + kx;
                                out[((b * cout + co) * ho + oy) * wo + ox] += v * wt[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, ho, wo)
}
