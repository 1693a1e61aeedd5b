//! Raw numeric kernels shared by the graph and the pure helpers.

use crate::array::Array;

/// `c = alpha * a * b + beta * c` with explicit row/column strides.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
    // SAFETY: the asserts above guarantee every strided access is in bounds,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major `a (m x k) * b (k x n)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a, (k, 1), b, (n, 1), 0.0, &mut c, (n, 1));
    c
}

/// Unfolds one `cin x h x w` sample into `(cin * 9) x (h * w)` patch columns
/// for a 3x3 kernel with padding 1.
pub(crate) fn im2col3(x: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates patch columns back into a sample.
pub(crate) fn col2im3(cols: &[f64], cin: usize, h: usize, w: usize, x: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    for (x, &g) in src.iter().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3, stride 1, padding 1 convolution through im2col + gemm.
pub(crate) fn conv3x3(x: &Array, weight: &Array, bias: &Array) -> Array {
    let (b, cin, h, w) = dims4(x);
    let cout = weight.shape()[0];
    let hw = h * w;
    let kdim = cin * 9;
    let mut out = vec![0.0; b * cout * hw];
    let mut cols = vec![0.0; kdim * hw];
    for s in 0..b {
        im2col3(&x.data()[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut cols);
        let o = &mut out[s * cout * hw..(s + 1) * cout * hw];
        for (co, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        gemm(
            cout,
            kdim,
            hw,
            1.0,
            weight.data(),
            (kdim, 1),
            &cols,
            (hw, 1),
            1.0,
            o,
            (hw, 1),
        );
    }
    Array::new(vec![b, cout, h, w], out).expect("conv output shape")
}

/// Gradients of [`conv3x3`] with respect to input, weight and bias.
pub(crate) fn conv3x3_backward(
    x: &Array,
    weight: &Array,
    grad_out: &Array,
    need_input: bool,
) -> (Option<Array>, Array, Array) {
    let (b, cin, h, w) = dims4(x);
    let cout = weight.shape()[0];
    let hw = h * w;
    let kdim = cin * 9;
    let mut gw = vec![0.0; cout * kdim];
    let mut gb = vec![0.0; cout];
    let mut gx = if need_input {
        Some(vec![0.0; x.len()])
    } else {
        None
    };
    let mut cols = vec![0.0; kdim * hw];
    let mut gcols = vec![0.0; kdim * hw];
    for s in 0..b {
        let gy = &grad_out.data()[s * cout * hw..(s + 1) * cout * hw];
        for (co, chunk) in gy.chunks(hw).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
        im2col3(&x.data()[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut cols);
        // gw += gy (cout x hw) * cols^T (hw x kdim)
        gemm(
            cout,
            hw,
            kdim,
            1.0,
            gy,
            (hw, 1),
            &cols,
            (1, hw),
            1.0,
            &mut gw,
            (kdim, 1),
        );
        if let Some(gx) = gx.as_mut() {
            // gcols = W^T (kdim x cout) * gy (cout x hw)
            gemm(
                kdim,
                cout,
                hw,
                1.0,
                weight.data(),
                (1, kdim),
                gy,
                (hw, 1),
                0.0,
                &mut gcols,
                (hw, 1),
            );
            col2im3(&gcols, cin, h, w, &mut gx[s * cin * hw..(s + 1) * cin * hw]);
        }
    }
    (
        gx.map(|d| Array::new(x.shape().to_vec(), d).expect("grad shape")),
        Array::new(weight.shape().to_vec(), gw).expect("grad shape"),
        Array::new(vec![cout], gb).expect("grad shape"),
    )
}

/// Reference convolution by explicit summation; the oracle for [`conv3x3`].
pub fn conv3x3_direct(x: &Array, weight: &Array, bias: &Array) -> Array {
    let (b, cin, h, w) = dims4(x);
    let cout = weight.shape()[0];
    let mut out = Array::zeros(&[b, cout, h, w]);
    for s in 0..b {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight.at(&[co, ci, ky, kx])
                                    * x.at(&[s, ci, sy as usize, sx as usize]);
                            }
                        }
                    }
                    out.set(&[s, co, y, xx], acc);
                }
            }
        }
    }
    out
}

/// 2x2 max-pool with stride 2 (odd trailing rows/columns dropped).
///
/// Returns the pooled map and, per output element, the flat input index of
/// the selected maximum. Ties go to the lowest flat index.
pub(crate) fn max_pool2(x: &Array) -> (Array, Vec<usize>) {
    let (b, c, h, w) = dims4(x);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let d = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + (2 * oy) * w + 2 * ox;
                let mut best = d[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if d[i] > best {
                        best = d[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (
        Array::new(vec![b, c, oh, ow], out).expect("pool shape"),
        arg,
    )
}

/// Per-(sample, channel) spatial mean and population variance of a
/// `b x c x h x w` map, each returned as `b * c` values.
pub(crate) fn channel_moments(x: &Array) -> (Vec<f64>, Vec<f64>) {
    let (b, c, h, w) = dims4(x);
    let hw = h * w;
    let n = hw as f64;
    let mut mean = Vec::with_capacity(b * c);
    let mut var = Vec::with_capacity(b * c);
    for plane in x.data().chunks(hw).take(b * c) {
        let m = plane.iter().sum::<f64>() / n;
        let v = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(m);
        var.push(v);
    }
    (mean, var)
}

pub(crate) fn dims4(x: &Array) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}
