//! Layer kernels. Volumes are laid out as `[C, T, I, J]`: channels, time,
//! grid rows, grid columns.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

/// Extent along (time, rows, cols).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims3 {
    pub time: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Dims3 {
    pub const fn new(time: usize, rows: usize, cols: usize) -> Self {
        Dims3 { time, rows, cols }
    }

    pub const fn ones() -> Self {
        Dims3::new(1, 1, 1)
    }

    pub fn volume(&self) -> usize {
        self.time * self.rows * self.cols
    }
}

fn volume_dims(x: &Tensor, what: &str) -> Result<(usize, Dims3)> {
    match *x.shape() {
        [c, t, i, j] => Ok((c, Dims3::new(t, i, j))),
        ref s => Err(Error::Shape(format!(
            "{what} expects a [C, T, I, J] volume, got {s:?}"
        ))),
    }
}

/// Output extent of a valid convolution, or a shape error.
pub(crate) fn conv_output_dims(input: Dims3, kernel: Dims3, stride: Dims3) -> Result<Dims3> {
    let ok = kernel.time >= 1
        && kernel.rows >= 1
        && kernel.cols >= 1
        && stride.time >= 1
        && stride.rows >= 1
        && stride.cols >= 1
        && kernel.time <= input.time
        && kernel.rows <= input.rows
        && kernel.cols <= input.cols;
    if !ok {
        return Err(Error::Shape(format!(
            "conv3d kernel {kernel:?} (stride {stride:?}) does not fit input {input:?}"
        )));
    }
    Ok(Dims3::new(
        (input.time - kernel.time) / stride.time + 1,
        (input.rows - kernel.rows) / stride.rows + 1,
        (input.cols - kernel.cols) / stride.cols + 1,
    ))
}

fn check_conv_params(
    in_channels: usize,
    out_channels: usize,
    kernel: Dims3,
    weight: &[f64],
    bias: &[f64],
) -> Result<()> {
    let want = out_channels * in_channels * kernel.volume();
    if weight.len() != want || bias.len() != out_channels {
        return Err(Error::Shape(format!(
            "conv3d weights [{out_channels}, {in_channels}, {kernel:?}] need {want} + {out_channels} values, got {} + {}",
            weight.len(),
            bias.len()
        )));
    }
    Ok(())
}

/// Valid 3D convolution. `weight` is `[O, C, kt, ki, kj]`.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: Dims3,
    stride: Dims3,
) -> Result<Tensor> {
    let (c_in, d) = volume_dims(input, "conv3d")?;
    check_conv_params(c_in, out_channels, kernel, weight, bias)?;
    let o = conv_output_dims(d, kernel, stride)?;
    let x = input.data();
    let plane_in = d.volume();
    let plane_out = o.volume();
    let mut out = vec![0.0; out_channels * plane_out];
    for oc in 0..out_channels {
        let dst = &mut out[oc * plane_out..(oc + 1) * plane_out];
        dst.fill(bias[oc]);
        for c in 0..c_in {
            let src = &x[c * plane_in..(c + 1) * plane_in];
            for kt in 0..kernel.time {
                for ki in 0..kernel.rows {
                    for kj in 0..kernel.cols {
                        let w = weight[(((oc * c_in + c) * kernel.time + kt) * kernel.rows + ki)
                            * kernel.cols
                            + kj];
                        for t in 0..o.time {
                            let ti = t * stride.time + kt;
                            for i in 0..o.rows {
                                let ii = i * stride.rows + ki;
                                let row_in = (ti * d.rows + ii) * d.cols + kj;
                                let row_out = (t * o.rows + i) * o.cols;
                                let out_row = &mut dst[row_out..row_out + o.cols];
                                if stride.cols == 1 {
                                    let in_row = &src[row_in..row_in + o.cols];
                                    for (y, &v) in out_row.iter_mut().zip(in_row) {
                                        *y += w * v;
                                    }
                                } else {
                                    for (j, y) in out_row.iter_mut().enumerate() {
                                        *y += w * src[row_in + j * stride.cols];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![out_channels, o.time, o.rows, o.cols], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv3d_forward`]. The input gradient is only computed
/// when `want_input` is set.
pub fn conv3d_backward(
    input: &Tensor,
    weight: &[f64],
    out_channels: usize,
    kernel: Dims3,
    stride: Dims3,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let (c_in, d) = volume_dims(input, "conv3d")?;
    let o = conv_output_dims(d, kernel, stride)?;
    if grad_out.shape() != [out_channels, o.time, o.rows, o.cols] {
        return Err(Error::Shape(format!(
            "conv3d output gradient {:?} does not match output [{out_channels}, {}, {}, {}]",
            grad_out.shape(),
            o.time,
            o.rows,
            o.cols
        )));
    }
    if weight.len() != out_channels * c_in * kernel.volume() {
        return Err(Error::Shape(format!(
            "conv3d weight length {} does not match [{out_channels}, {c_in}, {kernel:?}]",
            weight.len()
        )));
    }
    let x = input.data();
    let g = grad_out.data();
    let plane_in = d.volume();
    let plane_out = o.volume();
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; out_channels];
    let mut gx = if want_input {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    for oc in 0..out_channels {
        let gplane = &g[oc * plane_out..(oc + 1) * plane_out];
        gb[oc] = gplane.iter().sum();
        for c in 0..c_in {
            let src = &x[c * plane_in..(c + 1) * plane_in];
            for kt in 0..kernel.time {
                for ki in 0..kernel.rows {
                    for kj in 0..kernel.cols {
                        let widx = (((oc * c_in + c) * kernel.time + kt) * kernel.rows + ki)
                            * kernel.cols
                            + kj;
                        let w = weight[widx];
                        let mut acc = 0.0;
                        for t in 0..o.time {
                            let ti = t * stride.time + kt;
                            for i in 0..o.rows {
                                let ii = i * stride.rows + ki;
                                let row_in = (ti * d.rows + ii) * d.cols + kj;
                                let row_out = (t * o.rows + i) * o.cols;
                                let g_row = &gplane[row_out..row_out + o.cols];
                                if stride.cols == 1 {
                                    let in_row = &src[row_in..row_in + o.cols];
                                    acc +=
                                        g_row.iter().zip(in_row).map(|(a, b)| a * b).sum::<f64>();
                                    if want_input {
                                        let base = c * plane_in + row_in;
                                        let gx_row = &mut gx[base..base + o.cols];
                                        for (y, &v) in gx_row.iter_mut().zip(g_row) {
                                            *y += w * v;
                                        }
                                    }
                                } else {
                                    for (j, &gv) in g_row.iter().enumerate() {
                                        let at = row_in + j * stride.cols;
                                        acc += gv * src[at];
                                        if want_input {
                                            gx[c * plane_in + at] += w * gv;
                                        }
                                    }
                                }
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
    }
    let input_grad = if want_input {
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        weight: gw,
        bias: gb,
    })
}

/// Non-overlapping max pooling. Returns the pooled volume and, per output
/// element, the flat input index that won. Ties go to the first element in
/// row-major order.
pub fn maxpool3d_forward(input: &Tensor, window: Dims3) -> Result<(Tensor, Vec<usize>)> {
    let (c_in, d) = volume_dims(input, "maxpool3d")?;
    let fits = window.time >= 1
        && window.rows >= 1
        && window.cols >= 1
        && d.time % window.time == 0
        && d.rows % window.rows == 0
        && d.cols % window.cols == 0;
    if !fits {
        return Err(Error::Shape(format!(
            "maxpool3d window {window:?} does not divide input {:?}",
            input.shape()
        )));
    }
    let o = Dims3::new(
        d.time / window.time,
        d.rows / window.rows,
        d.cols / window.cols,
    );
    let x = input.data();
    let mut out = Vec::with_capacity(c_in * o.volume());
    let mut arg = Vec::with_capacity(c_in * o.volume());
    for c in 0..c_in {
        for t in 0..o.time {
            for i in 0..o.rows {
                for j in 0..o.cols {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for wt in 0..window.time {
                        for wi in 0..window.rows {
                            let row = ((c * d.time + t * window.time + wt) * d.rows
                                + i * window.rows
                                + wi)
                                * d.cols
                                + j * window.cols;
                            for wj in 0..window.cols {
                                let v = x[row + wj];
                                if best_at == usize::MAX || v > best {
                                    best = v;
                                    best_at = row + wj;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_at);
                }
            }
        }
    }
    Ok((Tensor::new(vec![c_in, o.time, o.rows, o.cols], out)?, arg))
}

/// Routes each output gradient to the input element recorded in `argmax`.
pub fn maxpool3d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "maxpool3d gradient has {} values for {} pooled outputs",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape.to_vec())?;
    let n = gx.len();
    let data = gx.data_mut();
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        if at >= n {
            return Err(Error::Shape(format!(
                "maxpool3d argmax {at} outside input of {n} values"
            )));
        }
        data[at] += g;
    }
    Ok(gx)
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through relu given the layer input `x`.
pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

fn check_dense(input: usize, weight: &[f64], bias: &[f64]) -> Result<usize> {
    let out = bias.len();
    if weight.len() != out * input {
        return Err(Error::Shape(format!(
            "dense weights ({} values) do not form a ({out}, {input}) matrix",
            weight.len()
        )));
    }
    Ok(out)
}

/// `weight` is row-major `(out, in)`.
pub fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let n_in = input.len();
    check_dense(n_in, weight, bias)?;
    Ok(bias
        .iter()
        .zip(weight.chunks_exact(n_in.max(1)))
        .map(|(b, row)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect())
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    want_input: bool,
) -> Result<DenseGrads> {
    let n_in = input.len();
    check_dense(n_in, weight, grad_out)?;
    let mut gw = vec![0.0; weight.len()];
    for (row, &g) in gw.chunks_exact_mut(n_in.max(1)).zip(grad_out) {
        for (w, &x) in row.iter_mut().zip(input) {
            *w = g * x;
        }
    }
    let gx = want_input.then(|| {
        let mut gx = vec![0.0; n_in];
        for (row, &g) in weight.chunks_exact(n_in.max(1)).zip(grad_out) {
            for (y, &w) in gx.iter_mut().zip(row) {
                *y += g * w;
            }
        }
        gx
    });
    Ok(DenseGrads {
        input: gx,
        weight: gw,
        bias: grad_out.to_vec(),
    })
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Jacobian-vector product of softmax: given probabilities `p` and dL/dp,
/// returns dL/dz.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(grad_p)
        .map(|(&pi, &gi)| pi * (gi - dot))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = crate::rng::rng_from(seed, &[]);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_conv(x: &Tensor, w: &[f64], b: &[f64], oc: usize, k: Dims3, s: Dims3) -> Vec<f64> {
        let [c_in, t, i, j] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let ot = (t - k.time) / s.time + 1;
        let oi = (i - k.rows) / s.rows + 1;
        let oj = (j - k.cols) / s.cols + 1;
        let at =
            |c: usize, a: usize, bb: usize, cc: usize| x.data()[((c * t + a) * i + bb) * j + cc];
        let mut out = Vec::new();
        for o in 0..oc {
            for a in 0..ot {
                for bb in 0..oi {
                    for cc in 0..oj {
                        let mut acc = b[o];
                        for c in 0..c_in {
                            for kt in 0..k.time {
                                for ki in 0..k.rows {
                                    for kj in 0..k.cols {
                                        let wv = w[(((o * c_in + c) * k.time + kt) * k.rows + ki)
                                            * k.cols
                                            + kj];
                                        acc += wv
                                            * at(
                                                c,
                                                a * s.time + kt,
                                                bb * s.rows + ki,
                                                cc * s.cols + kj,
                                            );
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = random(vec![1, 2, 3, 4], 1);
        let y = conv3d_forward(&x, &[1.0], &[0.0], 1, Dims3::ones(), Dims3::ones()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::new(vec![1, 2, 2, 2], vec![1.0; 8]).unwrap();
        let k = Dims3::new(2, 2, 2);
        let y = conv3d_forward(&x, &[1.0; 8], &[0.0], 1, k, Dims3::ones()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        // 4x6x6 input, 2x3x3 kernel
        let x = random(vec![1, 4, 6, 6], 2);
        let k = Dims3::new(2, 3, 3);
        let w = random(vec![3, 1, 2, 3, 3], 3).into_data();
        let b = vec![0.1, -0.2, 0.3];
        let y = conv3d_forward(&x, &w, &b, 3, k, Dims3::ones()).unwrap();
        let want = naive_conv(&x, &w, &b, 3, k, Dims3::ones());
        assert_eq!(y.len(), want.len());
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // strided, multi-channel
        let x = random(vec![2, 5, 7, 9], 4);
        let k = Dims3::new(2, 2, 3);
        let s = Dims3::new(1, 2, 2);
        let w = random(vec![2, 2, 2, 2, 3], 5).into_data();
        let y = conv3d_forward(&x, &w, &[0.0, 0.5], 2, k, s).unwrap();
        let want = naive_conv(&x, &w, &[0.0, 0.5], 2, k, s);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = random(vec![1, 2, 3, 3], 1);
        let err = conv3d_forward(
            &x,
            &[0.0; 27],
            &[0.0],
            1,
            Dims3::new(3, 3, 3),
            Dims3::ones(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("time: 3") && msg.contains("time: 2"), "{msg}");
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random(vec![2, 3, 4, 5], 6);
        let k = Dims3::new(2, 2, 3);
        let s = Dims3::new(1, 1, 2);
        let w = random(vec![2, 2, 2, 2, 3], 7).into_data();
        let b = vec![0.2, -0.1];
        let y = conv3d_forward(&x, &w, &b, 2, k, s).unwrap();
        let g = random(y.shape().to_vec(), 8);
        let loss = |x: &Tensor, w: &[f64], b: &[f64]| -> f64 {
            let y = conv3d_forward(x, w, b, 2, k, s).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let grads = conv3d_backward(&x, &w, 2, k, s, &g, true).unwrap();
        let h = 1e-6;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - grads.weight[idx]).abs() < 1e-7);
        }
        for o in 0..2 {
            let mut bp = b.clone();
            bp[o] += h;
            let mut bm = b.clone();
            bm[o] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - grads.bias[o]).abs() < 1e-7);
        }
        let gx = grads.input.unwrap();
        for idx in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - gx.data()[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn maxpool_constant_and_increasing() {
        let x = Tensor::new(vec![1, 2, 4, 4], vec![3.0; 32]).unwrap();
        let (y, arg) = maxpool3d_forward(&x, Dims3::new(1, 2, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        // ties go to the first element of each window
        assert_eq!(arg[0], 0);
        assert_eq!(arg[1], 2);

        let x = Tensor::new(vec![1, 2, 4, 4], (0..32).map(f64::from).collect()).unwrap();
        let w = Dims3::new(2, 2, 2);
        let (y, arg) = maxpool3d_forward(&x, w).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // last element of each window in row-major order
        assert_eq!(arg, vec![16 + 5, 16 + 7, 16 + 13, 16 + 15]);
        assert_eq!(y.data(), &[21.0, 23.0, 29.0, 31.0]);
    }

    #[test]
    fn maxpool_matches_naive_oracle() {
        let x = random(vec![3, 4, 6, 8], 9);
        let w = Dims3::new(2, 3, 2);
        let (y, _) = maxpool3d_forward(&x, w).unwrap();
        let mut want = Vec::new();
        for c in 0..3 {
            for t in 0..2 {
                for i in 0..2 {
                    for j in 0..4 {
                        let mut m = f64::NEG_INFINITY;
                        for a in 0..2 {
                            for b in 0..3 {
                                for cc in 0..2 {
                                    let idx =
                                        ((c * 4 + t * 2 + a) * 6 + i * 3 + b) * 8 + j * 2 + cc;
                                    m = m.max(x.data()[idx]);
                                }
                            }
                        }
                        want.push(m);
                    }
                }
            }
        }
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn maxpool_rejects_indivisible() {
        let x = random(vec![1, 3, 4, 4], 1);
        assert!(matches!(
            maxpool3d_forward(&x, Dims3::new(2, 2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 4.0, 1.0, 2.0]).unwrap();
        let (_, arg) = maxpool3d_forward(&x, Dims3::new(1, 2, 2)).unwrap();
        let g = Tensor::new(vec![1, 1, 1, 1], vec![1.5]).unwrap();
        let gx = maxpool3d_backward(x.shape(), &arg, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn dense_trivial_and_oracle() {
        let x = vec![1.0, -2.0, 3.0];
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(dense_forward(&x, &eye, &[0.0; 3]).unwrap(), x);
        assert_eq!(
            dense_forward(&x, &[0.0; 6], &[0.5, -0.5]).unwrap(),
            vec![0.5, -0.5]
        );
        let w = random(vec![4, 3], 10).into_data();
        let b = vec![0.1, 0.2, 0.3, 0.4];
        let y = dense_forward(&x, &w, &b).unwrap();
        for o in 0..4 {
            let mut acc = b[o];
            for i in 0..3 {
                acc += w[o * 3 + i] * x[i];
            }
            assert!((acc - y[o]).abs() < 1e-12);
        }
        assert!(matches!(
            dense_forward(&x, &w[..10], &b),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_backward_is_exact() {
        let x = vec![0.5, -1.0];
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = vec![1.0, 0.0, -1.0];
        let d = dense_backward(&x, &w, &g, true).unwrap();
        assert_eq!(d.weight, vec![0.5, -1.0, 0.0, 0.0, -0.5, 1.0]);
        assert_eq!(d.bias, g);
        assert_eq!(d.input.unwrap(), vec![1.0 - 5.0, 2.0 - 6.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0; 5]);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let a = softmax(&[0.3, -1.0, 2.0]);
        let b = softmax(&[100.3, 99.0, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 0.0, -1000.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_backward_matches_jacobian() {
        let z = [0.1, -0.4, 0.7];
        let p = softmax(&z);
        let g = [0.3, -1.2, 0.5];
        let got = softmax_backward(&p, &g);
        for k in 0..3 {
            let mut want = 0.0;
            for m in 0..3 {
                let jac = p[m] * (if m == k { 1.0 } else { 0.0 } - p[k]);
                want += g[m] * jac;
            }
            assert!((want - got[k]).abs() < 1e-14);
        }
    }
}
