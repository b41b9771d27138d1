//! Layer kinds, architecture description, and the forward/backward kernels.
//!
//! Kernels are plain nested loops over f64 slices. Accumulation order is
//! fixed by the loop structure, which keeps results bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input feature-map shape, channels first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// One layer in an architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

/// A whole network: input shape, layer stack, class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub input: InputSpec,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// Shape of the feature map after each layer (sample-wise, no batch axis).
    /// Errors describe the offending layer by index and kind.
    pub fn feature_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.input.channels == 0 || self.input.height == 0 || self.input.width == 0 {
            return Err(Error::Config(format!(
                "input shape has a zero extent: {:?}",
                self.input
            )));
        }
        let mut shape = vec![
            self.input.channels,
            self.input.height,
            self.input.width,
        ];
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    padding,
                } => {
                    if filters == 0 || kernel == 0 {
                        return Err(Error::Config(format!(
                            "layer {i} (conv): filters and kernel must be positive"
                        )));
                    }
                    let [c, h, w] = feature_3d(&shape, i, "conv")?;
                    let _ = c;
                    let oh = (h + 2 * padding).checked_sub(kernel - 1);
                    let ow = (w + 2 * padding).checked_sub(kernel - 1);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
                            vec![filters, oh, ow]
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "layer {i} (conv): kernel {kernel} with padding {padding} \
                                 does not fit a {h}x{w} input"
                            )))
                        }
                    }
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { size } => {
                    if size == 0 {
                        return Err(Error::Config(format!(
                            "layer {i} (max_pool): size must be positive"
                        )));
                    }
                    let [c, h, w] = feature_3d(&shape, i, "max_pool")?;
                    if h / size == 0 || w / size == 0 {
                        return Err(Error::Config(format!(
                            "layer {i} (max_pool): window {size} exceeds the {h}x{w} input"
                        )));
                    }
                    vec![c, h / size, w / size]
                }
                LayerSpec::Flatten => {
                    vec![shape.iter().product()]
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!(
                            "layer {i} (dense): units must be positive"
                        )));
                    }
                    if shape.len() != 1 {
                        return Err(Error::Config(format!(
                            "layer {i} (dense): input is {shape:?}; insert a flatten layer first"
                        )));
                    }
                    vec![units]
                }
            };
            shapes.push(shape.clone());
        }
        match shapes.last() {
            Some(last) if *last == vec![self.classes] => Ok(shapes),
            Some(last) => Err(Error::Config(format!(
                "network output is {last:?} but {} classes were requested",
                self.classes
            ))),
            None => Err(Error::Config("architecture has no layers".into())),
        }
    }
}

fn feature_3d(shape: &[usize], layer: usize, kind: &str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::Config(format!(
            "layer {layer} ({kind}): needs a [channels, height, width] input, got {other:?}"
        ))),
    }
}

// ======================================================================
// Runtime layers
// ======================================================================

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub weight: Tensor, // [filters, channels, k, k]
    pub bias: Tensor,   // [filters]
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseLayer {
    pub weight: Tensor, // [units, inputs]
    pub bias: Tensor,   // [units]
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool { size: usize },
    Flatten,
    Dense(DenseLayer),
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected rank-4 tensor, got {s:?}");
    [s[0], s[1], s[2], s[3]]
}

/// Cross-correlation with zero padding: out[n,f,oy,ox] =
/// bias[f] + sum over c,ky,kx of in[n,c,oy+ky-p,ox+kx-p] * w[f,c,ky,kx].
pub(crate) fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Tensor {
    let [n, c, h, w] = dims4(input);
    let [f, wc, k, _] = dims4(weight);
    assert_eq!(c, wc, "conv channel mismatch");
    let oh = h + 2 * padding - (k - 1);
    let ow = w + 2 * padding - (k - 1);
    let mut out = Tensor::zeros(vec![n, f, oh, ow]);

    let id = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let od = out.data_mut();
    for ni in 0..n {
        let in_n = &id[ni * c * h * w..(ni + 1) * c * h * w];
        for fi in 0..f {
            let w_f = &wd[fi * wc * k * k..(fi + 1) * wc * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy + ky).wrapping_sub(padding);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox + kx).wrapping_sub(padding);
                                if ix >= w {
                                    continue;
                                }
                                acc += in_n[ci * h * w + iy * w + ix]
                                    * w_f[ci * k * k + ky * k + kx];
                            }
                        }
                    }
                    od[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Gradients of conv w.r.t. weight, bias and input.
pub(crate) fn conv_backward(
    input: &Tensor,
    weight: &Tensor,
    padding: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = dims4(input);
    let [f, _, k, _] = dims4(weight);
    let [gn, gf, oh, ow] = dims4(grad_out);
    assert_eq!((gn, gf), (n, f), "conv grad_out mismatch");

    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![f]);
    let mut grad_in = Tensor::zeros(input.shape().to_vec());

    let id = input.data();
    let wd = weight.data();
    let gd = grad_out.data();
    // Split borrows: each gradient buffer is written in its own loop nest
    // below, so take raw mutable slices up front.
    {
        let gwd = grad_w.data_mut();
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gd[((ni * f + fi) * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = (oy + ky).wrapping_sub(padding);
                                if iy >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox + kx).wrapping_sub(padding);
                                    if ix >= w {
                                        continue;
                                    }
                                    gwd[((fi * c + ci) * k + ky) * k + kx] +=
                                        g * id[((ni * c + ci) * h + iy) * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    {
        let gbd = grad_b.data_mut();
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        gbd[fi] += gd[((ni * f + fi) * oh + oy) * ow + ox];
                    }
                }
            }
        }
    }
    {
        let gid = grad_in.data_mut();
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gd[((ni * f + fi) * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = (oy + ky).wrapping_sub(padding);
                                if iy >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox + kx).wrapping_sub(padding);
                                    if ix >= w {
                                        continue;
                                    }
                                    gid[((ni * c + ci) * h + iy) * w + ix] +=
                                        g * wd[((fi * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (grad_w, grad_b, grad_in)
}

pub(crate) fn relu_forward(input: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    (out, mask)
}

pub(crate) fn relu_backward(mask: &[bool], grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &m) in grad.data_mut().iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
    grad
}

/// Non-overlapping max pooling; trailing rows/cols that do not fill a
/// window are dropped. Returns the flat input index of each winner
/// (first occurrence wins ties).
pub(crate) fn maxpool_forward(input: &Tensor, size: usize) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = dims4(input);
    let oh = h / size;
    let ow = w / size;
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let id = input.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for py in 0..size {
                        for px in 0..size {
                            let iy = oy * size + py;
                            let ix = ox * size + px;
                            let idx = ((ni * c + ci) * h + iy) * w + ix;
                            if id[idx] > best {
                                best = id[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((ni * c + ci) * oh + oy) * ow + ox;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    let gid = grad_in.data_mut();
    for (o, &src) in argmax.iter().enumerate() {
        gid[src] += grad_out.data()[o];
    }
    grad_in
}

pub(crate) fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let n = input.shape()[0];
    let i = input.shape()[1];
    let o = weight.shape()[0];
    assert_eq!(weight.shape()[1], i, "dense input width mismatch");
    let mut out = Tensor::zeros(vec![n, o]);
    let id = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let od = out.data_mut();
    for ni in 0..n {
        for oi in 0..o {
            let mut acc = bd[oi];
            for ii in 0..i {
                acc += id[ni * i + ii] * wd[oi * i + ii];
            }
            od[ni * o + oi] = acc;
        }
    }
    out
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = input.shape()[0];
    let i = input.shape()[1];
    let o = weight.shape()[0];
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![o]);
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let id = input.data();
    let wd = weight.data();
    let gd = grad_out.data();
    {
        let gwd = grad_w.data_mut();
        let gbd = grad_b.data_mut();
        for ni in 0..n {
            for oi in 0..o {
                let g = gd[ni * o + oi];
                gbd[oi] += g;
                for ii in 0..i {
                    gwd[oi * i + ii] += g * id[ni * i + ii];
                }
            }
        }
    }
    {
        let gid = grad_in.data_mut();
        for ni in 0..n {
            for oi in 0..o {
                let g = gd[ni * o + oi];
                for ii in 0..i {
                    gid[ni * i + ii] += g * wd[oi * i + ii];
                }
            }
        }
    }
    (grad_w, grad_b, grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn feature_shapes_walk_a_typical_stack() {
        let arch = ArchitectureSpec {
            input: InputSpec {
                channels: 1,
                height: 12,
                width: 12,
            },
            classes: 4,
            layers: vec![
                LayerSpec::Conv {
                    filters: 8,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    filters: 8,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4 },
            ],
        };
        let shapes = arch.feature_shapes().unwrap();
        assert_eq!(shapes[0], vec![8, 12, 12]);
        assert_eq!(shapes[2], vec![8, 6, 6]);
        assert_eq!(shapes[5], vec![8, 3, 3]);
        assert_eq!(shapes[6], vec![72]);
        assert_eq!(shapes[7], vec![4]);
    }

    #[test]
    fn feature_shapes_reject_bad_stacks() {
        let base = |layers| ArchitectureSpec {
            input: InputSpec {
                channels: 1,
                height: 6,
                width: 6,
            },
            classes: 3,
            layers,
        };
        // dense straight on a 3d feature map
        assert!(base(vec![LayerSpec::Dense { units: 3 }])
            .feature_shapes()
            .is_err());
        // kernel larger than image
        assert!(base(vec![LayerSpec::Conv {
            filters: 1,
            kernel: 9,
            padding: 0
        }])
        .feature_shapes()
        .is_err());
        // output width differs from class count
        assert!(base(vec![LayerSpec::Flatten, LayerSpec::Dense { units: 5 }])
            .feature_shapes()
            .is_err());
        // pool window larger than the map
        assert!(base(vec![LayerSpec::MaxPool { size: 8 }])
            .feature_shapes()
            .is_err());
    }

    #[test]
    fn conv_with_unit_kernel_is_identity() {
        let input = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let weight = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        let out = conv_forward(&input, &weight, &bias, 0);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 3x3 input, 2x2 kernel of ones: each output is the window sum.
        let input = t(
            &[1, 1, 3, 3],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        );
        let weight = t(&[1, 1, 2, 2], &[1.0; 4]);
        let bias = t(&[1], &[0.5]);
        let out = conv_forward(&input, &weight, &bias, 0);
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12.5, 16.5, 24.5, 28.5]);
    }

    /// Oracle: materialize the zero-padded input, then correlate directly.
    fn conv_via_explicit_padding(input: &Tensor, weight: &Tensor, bias: &Tensor, p: usize) -> Tensor {
        let [n, c, h, w] = dims4(input);
        let ph = h + 2 * p;
        let pw = w + 2 * p;
        let mut padded = Tensor::zeros(vec![n, c, ph, pw]);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        padded.data_mut()[((ni * c + ci) * ph + y + p) * pw + x + p] =
                            input.data()[((ni * c + ci) * h + y) * w + x];
                    }
                }
            }
        }
        conv_forward(&padded, weight, bias, 0)
    }

    #[test]
    fn padded_conv_matches_explicit_padding_oracle() {
        let mut rng = crate::rng::rng_from(11);
        use rand::Rng;
        let input = Tensor::new(
            vec![2, 3, 5, 4],
            (0..2 * 3 * 5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let weight = Tensor::new(
            vec![2, 3, 3, 3],
            (0..2 * 3 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let bias = t(&[2], &[0.1, -0.2]);
        let fast = conv_forward(&input, &weight, &bias, 1);
        let oracle = conv_via_explicit_padding(&input, &weight, &bias, 1);
        assert_eq!(fast.shape(), oracle.shape());
        for (a, b) in fast.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = crate::rng::rng_from(5);
        use rand::Rng;
        let mut input = Tensor::new(
            vec![1, 2, 4, 4],
            (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut weight = Tensor::new(
            vec![2, 2, 3, 3],
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let bias = t(&[2], &[0.0, 0.0]);
        // Scalar objective: sum of all conv outputs. Upstream grad = ones.
        let out = conv_forward(&input, &weight, &bias, 1);
        let ones = Tensor::filled(out.shape().to_vec(), 1.0);
        let (gw, _gb, gi) = conv_backward(&input, &weight, 1, &ones);

        let eps = 1e-6;
        for idx in [0usize, 7, 20, 35] {
            let orig = weight.data()[idx];
            weight.data_mut()[idx] = orig + eps;
            let plus: f64 = conv_forward(&input, &weight, &bias, 1).data().iter().sum();
            weight.data_mut()[idx] = orig - eps;
            let minus: f64 = conv_forward(&input, &weight, &bias, 1).data().iter().sum();
            weight.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            assert!(
                (fd - gw.data()[idx]).abs() < 1e-6,
                "weight {idx}: fd {fd} vs analytic {}",
                gw.data()[idx]
            );
        }
        for idx in [0usize, 13, 31] {
            let orig = input.data()[idx];
            input.data_mut()[idx] = orig + eps;
            let plus: f64 = conv_forward(&input, &weight, &bias, 1).data().iter().sum();
            input.data_mut()[idx] = orig - eps;
            let minus: f64 = conv_forward(&input, &weight, &bias, 1).data().iter().sum();
            input.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            assert!(
                (fd - gi.data()[idx]).abs() < 1e-6,
                "input {idx}: fd {fd} vs analytic {}",
                gi.data()[idx]
            );
        }
    }

    #[test]
    fn relu_masks_negative_entries() {
        let input = t(&[1, 4], &[-1.0, 0.0, 2.0, -0.5]);
        let (out, mask) = relu_forward(&input);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(mask, vec![false, false, true, false]);
        let grad = relu_backward(&mask, &t(&[1, 4], &[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(grad.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_picks_window_maxima_first_tie_wins() {
        let input = t(
            &[1, 1, 4, 4],
            &[
                1.0, 2.0, 5.0, 5.0, //
                3.0, 4.0, 5.0, 5.0, //
                9.0, 9.0, 0.0, 1.0, //
                9.0, 9.0, 2.0, 3.0,
            ],
        );
        let (out, argmax) = maxpool_forward(&input, 2);
        assert_eq!(out.data(), &[4.0, 5.0, 9.0, 3.0]);
        // ties resolve to the first scan position (row-major)
        assert_eq!(argmax, vec![5, 2, 8, 15]);
        let grad = maxpool_backward(&[1, 1, 4, 4], &argmax, &t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mut expected = vec![0.0; 16];
        expected[5] = 1.0;
        expected[2] = 2.0;
        expected[8] = 3.0;
        expected[15] = 4.0;
        assert_eq!(grad.data(), &expected[..]);
    }

    #[test]
    fn maxpool_drops_trailing_remainder() {
        let input = t(&[1, 1, 3, 3], &[0.0, 1.0, 9.0, 2.0, 3.0, 9.0, 9.0, 9.0, 9.0]);
        let (out, _) = maxpool_forward(&input, 2);
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn dense_matches_hand_matrix_multiply() {
        let input = t(&[2, 3], &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let weight = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let bias = t(&[2], &[0.1, 0.2]);
        let out = dense_forward(&input, &weight, &bias);
        assert_eq!(out.shape(), &[2, 2]);
        let expect = [
            1.0 + 0.0 - 3.0 + 0.1,
            -1.0 + 0.0 - 1.0 + 0.2,
            0.5 + 1.0 + 1.5 + 0.1,
            -0.5 + 0.0 + 0.5 + 0.2,
        ];
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = crate::rng::rng_from(3);
        use rand::Rng;
        let input = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut weight = Tensor::new(vec![2, 4], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let bias = t(&[2], &[0.3, -0.3]);
        let out = dense_forward(&input, &weight, &bias);
        let ones = Tensor::filled(out.shape().to_vec(), 1.0);
        let (gw, gb, _gi) = dense_backward(&input, &weight, &ones);
        assert_eq!(gb.data(), &[3.0, 3.0]);
        let eps = 1e-6;
        for idx in 0..8 {
            let orig = weight.data()[idx];
            weight.data_mut()[idx] = orig + eps;
            let plus: f64 = dense_forward(&input, &weight, &bias).data().iter().sum();
            weight.data_mut()[idx] = orig - eps;
            let minus: f64 = dense_forward(&input, &weight, &bias).data().iter().sum();
            weight.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            assert!((fd - gw.data()[idx]).abs() < 1e-6);
        }
    }
}
