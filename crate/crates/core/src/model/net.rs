//! Shape-checked runtime network: forward, cached forward, and manual
//! backpropagation for the conv / relu / maxpool / dense layer set.
//! Activations are laid out like images: row-major, channel-last.

use super::{Arch, LayerSpec};
use crate::augment::Image;
use crate::error::{Error, Result};
use std::ops::Range;

#[derive(Clone, Debug)]
pub struct LayerRt {
    pub spec: LayerSpec,
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
    pub param_offset: usize,
    pub param_len: usize,
}

impl LayerRt {
    /// (weight range, bias range, fan_in) for parameterized layers.
    pub fn weight_layout(&self) -> Option<(Range<usize>, Range<usize>, usize)> {
        match self.spec {
            LayerSpec::Conv { out_ch, kernel } => {
                let fan_in = self.in_shape.2 * kernel * kernel;
                let w = out_ch * fan_in;
                Some((
                    self.param_offset..self.param_offset + w,
                    self.param_offset + w..self.param_offset + self.param_len,
                    fan_in,
                ))
            }
            LayerSpec::Dense { out } => {
                let fan_in = self.in_shape.0 * self.in_shape.1 * self.in_shape.2;
                let w = out * fan_in;
                Some((
                    self.param_offset..self.param_offset + w,
                    self.param_offset + w..self.param_offset + self.param_len,
                    fan_in,
                ))
            }
            _ => None,
        }
    }
}

pub struct Net {
    input: (usize, usize, usize),
    layers: Vec<LayerRt>,
    n_params: usize,
    n_out: usize,
}

fn flat(shape: (usize, usize, usize)) -> usize {
    shape.0 * shape.1 * shape.2
}

impl Net {
    pub fn new(arch: &Arch) -> Result<Net> {
        let mut shape = arch.input;
        if flat(shape) == 0 {
            return Err(Error::ShapeMismatch { expected: "nonzero input".into(), got: format!("{shape:?}") });
        }
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut offset = 0usize;
        for spec in &arch.layers {
            let (out_shape, param_len) = match *spec {
                LayerSpec::Conv { out_ch, kernel } => {
                    if kernel == 0 || kernel > shape.0 || kernel > shape.1 || out_ch == 0 {
                        return Err(Error::ShapeMismatch {
                            expected: format!("kernel <= {}x{}", shape.0, shape.1),
                            got: format!("conv {out_ch} {kernel}"),
                        });
                    }
                    (
                        (shape.0 - kernel + 1, shape.1 - kernel + 1, out_ch),
                        out_ch * shape.2 * kernel * kernel + out_ch,
                    )
                }
                LayerSpec::Relu => (shape, 0),
                LayerSpec::MaxPool { size } => {
                    if size == 0 || shape.0 / size == 0 || shape.1 / size == 0 {
                        return Err(Error::ShapeMismatch {
                            expected: format!("pool window <= {}x{}", shape.0, shape.1),
                            got: format!("maxpool {size}"),
                        });
                    }
                    ((shape.0 / size, shape.1 / size, shape.2), 0)
                }
                LayerSpec::Dense { out } => {
                    if out == 0 {
                        return Err(Error::ShapeMismatch { expected: "dense out > 0".into(), got: "0".into() });
                    }
                    ((1, 1, out), out * flat(shape) + out)
                }
            };
            layers.push(LayerRt { spec: *spec, in_shape: shape, out_shape, param_offset: offset, param_len });
            shape = out_shape;
            offset += param_len;
        }
        Ok(Net { input: arch.input, layers, n_params: offset, n_out: flat(shape) })
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn layers(&self) -> &[LayerRt] {
        &self.layers
    }

    /// Map an 8-bit image onto the network input range [-1, 1].
    pub fn image_to_input(&self, img: &Image) -> Result<Vec<f64>> {
        if (img.height, img.width, img.channels) != self.input {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.input),
                got: format!("({}, {}, {})", img.height, img.width, img.channels),
            });
        }
        Ok(img.pixels.iter().map(|&v| v as f64 / 127.5 - 1.0).collect())
    }

    fn apply_layer(&self, layer: &LayerRt, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        let (ih, iw, ic) = layer.in_shape;
        let (oh, ow, oc) = layer.out_shape;
        out.clear();
        match layer.spec {
            LayerSpec::Conv { out_ch, kernel } => {
                let w = &params[layer.param_offset..layer.param_offset + out_ch * ic * kernel * kernel];
                let b = &params[layer.param_offset + out_ch * ic * kernel * kernel
                    ..layer.param_offset + layer.param_len];
                out.resize(oh * ow * oc, 0.0);
                // weight layout: [oc][ic][ky][kx]
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..out_ch {
                            let mut acc = b[c];
                            let wbase = c * ic * kernel * kernel;
                            for ky in 0..kernel {
                                let row = ((oy + ky) * iw + ox) * ic;
                                for kx in 0..kernel {
                                    let ibase = row + kx * ic;
                                    for i in 0..ic {
                                        acc += w[wbase + i * kernel * kernel + ky * kernel + kx]
                                            * input[ibase + i];
                                    }
                                }
                            }
                            out[(oy * ow + ox) * oc + c] = acc;
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                out.extend(input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
            }
            LayerSpec::MaxPool { size } => {
                out.resize(oh * ow * oc, 0.0);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..oc {
                            let mut best = f64::NEG_INFINITY;
                            for dy in 0..size {
                                for dx in 0..size {
                                    let v = input[((oy * size + dy) * iw + ox * size + dx) * ic + c];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            out[(oy * ow + ox) * oc + c] = best;
                        }
                    }
                }
            }
            LayerSpec::Dense { out: n } => {
                let fan_in = ih * iw * ic;
                let w = &params[layer.param_offset..layer.param_offset + n * fan_in];
                let b = &params[layer.param_offset + n * fan_in..layer.param_offset + layer.param_len];
                out.resize(n, 0.0);
                for (o, slot) in out.iter_mut().enumerate() {
                    let mut acc = b[o];
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        acc += row[i] * input[i];
                    }
                    *slot = acc;
                }
            }
        }
    }

    /// Logits for one input vector.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), flat(self.input), "input size mismatch");
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            self.apply_layer(layer, params, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping every intermediate activation for backprop.
    /// `acts[0]` is the input; `acts[i + 1]` is the output of layer i.
    pub fn forward_cached(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(input.len(), flat(self.input), "input size mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            self.apply_layer(layer, params, acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Backpropagate `dout` (gradient at the logits) through the network,
    /// accumulating parameter gradients into `grad`.
    pub fn backward(&self, params: &[f64], acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_params);
        let mut dcur = dout.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let (ih, iw, ic) = layer.in_shape;
            let (oh, ow, oc) = layer.out_shape;
            let mut dprev = vec![0.0; flat(layer.in_shape)];
            match layer.spec {
                LayerSpec::Conv { out_ch, kernel } => {
                    let wlen = out_ch * ic * kernel * kernel;
                    let w = &params[layer.param_offset..layer.param_offset + wlen];
                    let (gw, gb) = grad[layer.param_offset..layer.param_offset + layer.param_len]
                        .split_at_mut(wlen);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for c in 0..out_ch {
                                let d = dcur[(oy * ow + ox) * oc + c];
                                if d == 0.0 {
                                    continue;
                                }
                                gb[c] += d;
                                let wbase = c * ic * kernel * kernel;
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let ibase = ((oy + ky) * iw + ox + kx) * ic;
                                        for i in 0..ic {
                                            let widx = wbase + i * kernel * kernel + ky * kernel + kx;
                                            gw[widx] += d * input[ibase + i];
                                            dprev[ibase + i] += d * w[widx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                LayerSpec::Relu => {
                    for i in 0..dprev.len() {
                        dprev[i] = if input[i] > 0.0 { dcur[i] } else { 0.0 };
                    }
                }
                LayerSpec::MaxPool { size } => {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for c in 0..oc {
                                // route gradient to the first maximum in scan order
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let idx = ((oy * size + dy) * iw + ox * size + dx) * ic + c;
                                        if input[idx] > best {
                                            best = input[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                dprev[best_idx] += dcur[(oy * ow + ox) * oc + c];
                            }
                        }
                    }
                }
                LayerSpec::Dense { out: n } => {
                    let fan_in = ih * iw * ic;
                    let w = &params[layer.param_offset..layer.param_offset + n * fan_in];
                    let (gw, gb) = grad[layer.param_offset..layer.param_offset + layer.param_len]
                        .split_at_mut(n * fan_in);
                    for o in 0..n {
                        let d = dcur[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                        let wrow = &w[o * fan_in..(o + 1) * fan_in];
                        for i in 0..fan_in {
                            grow[i] += d * input[i];
                            dprev[i] += d * wrow[i];
                        }
                    }
                }
            }
            dcur = dprev;
        }
    }
}

/// Numerically stable softmax cross-entropy.
/// Returns (loss, d loss / d logits).
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[label];
    let mut dlogits: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    dlogits[label] -= 1.0;
    (loss, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn zero_dense_net_gives_zero_logits() {
        let arch = Arch { input: (4, 4, 1), layers: vec![LayerSpec::Dense { out: 5 }] };
        let net = Net::new(&arch).unwrap();
        let logits = net.forward(&vec![0.0; net.param_count()], &vec![0.3; 16]);
        assert_eq!(logits, vec![0.0; 5]);
    }

    #[test]
    fn linear_model_matches_hand_computation() {
        let arch = Arch { input: (1, 1, 1), layers: vec![LayerSpec::Dense { out: 1 }] };
        let net = Net::new(&arch).unwrap();
        // params = [w, b]
        let logits = net.forward(&[2.5, -0.75], &[3.0]);
        assert!((logits[0] - (2.5 * 3.0 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = Arch::toy(8, 8, 3, 4);
        let net = Net::new(&arch).unwrap();
        let m = super::super::ModelState::init(arch, 42).unwrap();
        let mut rng = derive_rng(1, 1, 1);
        let input: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(net.forward(&m.params, &input), net.forward(&m.params, &input));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let arch = Arch { input: (4, 4, 1), layers: vec![LayerSpec::Conv { out_ch: 2, kernel: 5 }] };
        assert!(Net::new(&arch).is_err());
        let arch = Arch::toy(8, 8, 3, 4);
        let net = Net::new(&arch).unwrap();
        let img = crate::augment::Image::constant(9, 8, 3, 0);
        assert!(net.image_to_input(&img).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences_per_layer_type() {
        let cases = vec![
            Arch { input: (5, 5, 2), layers: vec![LayerSpec::Conv { out_ch: 3, kernel: 3 }, LayerSpec::Dense { out: 3 }] },
            Arch { input: (4, 4, 1), layers: vec![LayerSpec::Dense { out: 4 }, LayerSpec::Relu, LayerSpec::Dense { out: 3 }] },
            Arch {
                input: (6, 6, 2),
                layers: vec![
                    LayerSpec::Conv { out_ch: 4, kernel: 3 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool { size: 2 },
                    LayerSpec::Dense { out: 3 },
                ],
            },
        ];
        for (ci, arch) in cases.into_iter().enumerate() {
            let net = Net::new(&arch).unwrap();
            let m = super::super::ModelState::init(arch, 100 + ci as u64).unwrap();
            let mut rng = derive_rng(7, 70, ci as u64);
            let input: Vec<f64> =
                (0..flat(net.input_shape())).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = 1usize;

            let mut grad = vec![0.0; net.param_count()];
            let acts = net.forward_cached(&m.params, &input);
            let (_, dlogits) = softmax_cross_entropy(acts.last().unwrap(), label);
            net.backward(&m.params, &acts, &dlogits, &mut grad);

            let f = |p: &[f64]| {
                let logits = net.forward(p, &input);
                softmax_cross_entropy(&logits, label).0
            };
            let fd = finite_diff(f, &m.params, 1e-6).unwrap();
            for (j, (&a, &b)) in grad.iter().zip(&fd).enumerate() {
                let denom = b.abs().max(1e-6);
                assert!(
                    (a - b).abs() / denom < 1e-4,
                    "case {ci}, param {j}: analytic {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let (loss, d) = softmax_cross_entropy(&[1.0, -2.0, 0.3], 2);
        assert!(loss > 0.0);
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
    }
}
