//! 3D convolution (cross-correlation) by im2col and GEMM.

use crate::error::{NnError, NnResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const AXES: [&str; 3] = ["depth", "height", "width"];

/// Static shape information of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub in_dims: [usize; 3],
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvGeometry {
    pub fn new(c_in: usize, in_dims: [usize; 3], c_out: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> NnResult<Self> {
        let mut out_dims = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(NnError::Shape(format!("{} stride must be >= 1", AXES[a])));
            }
            if kernel[a] == 0 {
                return Err(NnError::Shape(format!("{} kernel size must be >= 1", AXES[a])));
            }
            let padded = in_dims[a] + 2 * padding[a];
            if padded < kernel[a] {
                return Err(NnError::Shape(format!(
                    "{} axis: input {} + 2*pad {} smaller than kernel {}",
                    AXES[a], in_dims[a], padding[a], kernel[a]
                )));
            }
            out_dims[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        Ok(Self {
            c_in,
            in_dims,
            c_out,
            kernel,
            stride,
            padding,
            out_dims,
        })
    }

    /// Rows of the column matrix (`c_in * kd * kh * kw`).
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.in_dims.iter().product::<usize>()
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.positions()
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.patch_len()
    }

    pub fn macs(&self) -> usize {
        self.output_len() * self.patch_len()
    }

    /// Per axis and kernel tap: the (output index, input index) pairs that stay inside the input.
    fn tap_table(&self) -> [Vec<Vec<(usize, usize)>>; 3] {
        std::array::from_fn(|axis| {
            let (s, p, n) = (self.stride[axis], self.padding[axis], self.in_dims[axis]);
            (0..self.kernel[axis])
                .map(|k| {
                    (0..self.out_dims[axis])
                        .filter_map(|o| {
                            let i = (o * s + k) as isize - p as isize;
                            (i >= 0 && (i as usize) < n).then_some((o, i as usize))
                        })
                        .collect()
                })
                .collect()
        })
    }
}

/// Unfolds `input` (C, D, H, W) into `col` (patch_len x positions); padded taps are zero.
pub fn im2col<S: Scalar>(g: &ConvGeometry, input: &[S], col: &mut [S]) {
    debug_assert_eq!(input.len(), g.input_len());
    let p = g.positions();
    debug_assert_eq!(col.len(), g.patch_len() * p);
    col.fill(S::zero());
    let [d, h, w] = g.in_dims;
    let [_, oh, ow] = g.out_dims;
    let [kd, kh, kw] = g.kernel;
    let taps = g.tap_table();
    let mut row = 0;
    for c in 0..g.c_in {
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let w_taps = &taps[2][e];
                    for &(o_d, i_d) in &taps[0][a] {
                        for &(o_h, i_h) in &taps[1][b] {
                            let src = ((c * d + i_d) * h + i_h) * w;
                            let out = (o_d * oh + o_h) * ow;
                            for &(o_w, i_w) in w_taps {
                                dst[out + o_w] = input[src + i_w];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `dinput`, accumulating.
pub fn col2im_add<S: Scalar>(g: &ConvGeometry, col: &[S], dinput: &mut [S]) {
    let p = g.positions();
    let [d, h, w] = g.in_dims;
    let [_, oh, ow] = g.out_dims;
    let [kd, kh, kw] = g.kernel;
    let taps = g.tap_table();
    let mut row = 0;
    for c in 0..g.c_in {
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src_row = &col[row * p..(row + 1) * p];
                    let w_taps = &taps[2][e];
                    for &(o_d, i_d) in &taps[0][a] {
                        for &(o_h, i_h) in &taps[1][b] {
                            let dst = ((c * d + i_d) * h + i_h) * w;
                            let src = (o_d * oh + o_h) * ow;
                            for &(o_w, i_w) in w_taps {
                                dinput[dst + i_w] += src_row[src + o_w];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `out (c_out x P) = W (c_out x K) * col (K x P) + bias`.
pub fn conv_from_col<S: Scalar>(g: &ConvGeometry, col: &[S], weight: &[S], bias: &[S], out: &mut [S]) {
    let (k, p) = (g.patch_len(), g.positions());
    for (o, b) in bias.iter().enumerate() {
        out[o * p..(o + 1) * p].fill(*b);
    }
    S::gemm(g.c_out, k, p, S::one(), weight, k, 1, col, p, 1, S::one(), out, p, 1);
}

/// Weight/bias gradients (accumulated) and, if requested, the column-space input gradient.
pub fn conv_backward_from_col<S: Scalar>(
    g: &ConvGeometry,
    col: &[S],
    weight: &[S],
    dout: &[S],
    dweight: &mut [S],
    dbias: &mut [S],
    dcol: Option<&mut [S]>,
) {
    let (k, p) = (g.patch_len(), g.positions());
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dout[o * p..(o + 1) * p].iter().copied().sum::<S>();
    }
    // dW += dout * col^T
    S::gemm(g.c_out, p, k, S::one(), dout, p, 1, col, 1, p, S::one(), dweight, k, 1);
    if let Some(dcol) = dcol {
        // dcol = W^T * dout
        S::gemm(k, g.c_out, p, S::one(), weight, 1, k, dout, p, 1, S::zero(), dcol, p, 1);
    }
}

fn geometry_for<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, stride: [usize; 3], padding: [usize; 3]) -> NnResult<ConvGeometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 4 {
        return Err(NnError::Shape(format!("input must be (C, D, H, W), got {is:?}")));
    }
    if ks.len() != 5 {
        return Err(NnError::Shape(format!("kernel must be (C_out, C_in, kD, kH, kW), got {ks:?}")));
    }
    if ks[1] != is[0] {
        return Err(NnError::Shape(format!("channel axis: kernel expects {} input channels, input has {}", ks[1], is[0])));
    }
    ConvGeometry::new(is[0], [is[1], is[2], is[3]], ks[0], [ks[2], ks[3], ks[4]], stride, padding)
}

/// Cross-correlation of `input` (C_in, D, H, W) with `kernel` (C_out, C_in, kD, kH, kW).
pub fn conv3d_forward<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, bias: &Tensor<S>, stride: [usize; 3], padding: [usize; 3]) -> NnResult<Tensor<S>> {
    let g = geometry_for(input, kernel, stride, padding)?;
    if bias.len() != g.c_out {
        return Err(NnError::Shape(format!("bias has {} entries for {} output channels", bias.len(), g.c_out)));
    }
    let mut col = vec![S::zero(); g.patch_len() * g.positions()];
    im2col(&g, input.data(), &mut col);
    let mut out = vec![S::zero(); g.output_len()];
    conv_from_col(&g, &col, kernel.data(), bias.data(), &mut out);
    let [d, h, w] = g.out_dims;
    Tensor::from_vec(&[g.c_out, d, h, w], out)
}

/// Gradients `(d input, d kernel, d bias)` of a convolution given the output gradient.
pub fn conv3d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    dout: &Tensor<S>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> NnResult<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let g = geometry_for(input, kernel, stride, padding)?;
    if dout.len() != g.output_len() {
        return Err(NnError::Shape(format!("output gradient has {} values, expected {}", dout.len(), g.output_len())));
    }
    let mut col = vec![S::zero(); g.patch_len() * g.positions()];
    im2col(&g, input.data(), &mut col);
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[g.c_out]);
    let mut dcol = vec![S::zero(); col.len()];
    conv_backward_from_col(&g, &col, kernel.data(), dout.data(), dk.data_mut(), db.data_mut(), Some(&mut dcol));
    let mut di = Tensor::zeros(input.shape());
    col2im_add(&g, &dcol, di.data_mut());
    Ok((di, dk, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct seven-loop evaluation of the cross-correlation.
    fn naive(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>, stride: [usize; 3], pad: [usize; 3]) -> Tensor<f64> {
        let is = input.shape();
        let ks = kernel.shape();
        let od = (is[1] + 2 * pad[0] - ks[2]) / stride[0] + 1;
        let oh = (is[2] + 2 * pad[1] - ks[3]) / stride[1] + 1;
        let ow = (is[3] + 2 * pad[2] - ks[4]) / stride[2] + 1;
        let at = |c: usize, z: isize, y: isize, x: isize| -> f64 {
            if z < 0 || y < 0 || x < 0 || z as usize >= is[1] || y as usize >= is[2] || x as usize >= is[3] {
                0.0
            } else {
                input.data()[((c * is[1] + z as usize) * is[2] + y as usize) * is[3] + x as usize]
            }
        };
        let mut out = vec![0.0; ks[0] * od * oh * ow];
        for o in 0..ks[0] {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut s = bias.data()[o];
                        for c in 0..ks[1] {
                            for a in 0..ks[2] {
                                for b in 0..ks[3] {
                                    for e in 0..ks[4] {
                                        let kv = kernel.data()[(((o * ks[1] + c) * ks[2] + a) * ks[3] + b) * ks[4] + e];
                                        let zi = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let yi = (y * stride[1] + b) as isize - pad[1] as isize;
                                        let xi = (x * stride[2] + e) as isize - pad[2] as isize;
                                        s += kv * at(c, zi, yi, xi);
                                    }
                                }
                            }
                        }
                        out[((o * od + z) * oh + y) * ow + x] = s;
                    }
                }
            }
        }
        Tensor::from_vec(&[ks[0], od, oh, ow], out).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 2, 3, 4], &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv3d_forward(&x, &k, &b, [1; 3], [0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn window_sum() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0; 8]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2, 2], vec![1.0; 8]).unwrap();
        let y = conv3d_forward(&x, &k, &Tensor::zeros(&[1]), [1; 3], [0; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 3, 5, 5], &mut rng);
        let k = random(&[4, 2, 2, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        for (stride, pad) in [([1, 1, 1], [0, 0, 0]), ([1, 2, 2], [1, 1, 0]), ([2, 1, 2], [0, 1, 1])] {
            let fast = conv3d_forward(&x, &k, &b, stride, pad).unwrap();
            let slow = naive(&x, &k, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), g> is linear in x and k, so its gradients are the backward outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let k = random(&[3, 2, 2, 3, 2], &mut rng);
        let b = Tensor::zeros(&[3]);
        let (stride, pad) = ([1, 2, 1], [1, 0, 1]);
        let y = conv3d_forward(&x, &k, &b, stride, pad).unwrap();
        let g = random(y.shape(), &mut rng);
        let (dx, dk, db) = conv3d_backward(&x, &k, &g, stride, pad).unwrap();
        let f = |x: &Tensor<f64>, k: &Tensor<f64>| {
            let y = conv3d_forward(x, k, &b, stride, pad).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in [0, 7, 29, x.len() - 1] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp, &k) - f(&xm, &k)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
        for i in [0, 11, k.len() - 1] {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let fd = (f(&x, &kp) - f(&x, &km)) / (2.0 * h);
            assert!((fd - dk.data()[i]).abs() < 1e-7);
        }
        let per_channel = g.len() / 3;
        assert!((db.data()[1] - g.data()[per_channel..2 * per_channel].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn kernel_larger_than_input_names_axis() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 1, 1]);
        let err = conv3d_forward(&x, &k, &Tensor::zeros(&[1]), [1; 3], [0; 3]).unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
    }
}
