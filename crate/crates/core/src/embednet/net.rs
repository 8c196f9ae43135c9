use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FrameNetConfig, NetError};
use crate::dsp::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub(super) struct ConvShape {
    pub in_c: usize,
    pub in_t: usize,
    pub in_f: usize,
    pub out_c: usize,
    pub kt: usize,
    pub kf: usize,
    pub pool: usize,
    pub conv_t: usize,
    pub conv_f: usize,
    pub out_f: usize,
    pub w: usize,
    pub b: usize,
}

impl ConvShape {
    fn in_len(&self) -> usize {
        self.in_c * self.in_t * self.in_f
    }
    fn act_len(&self) -> usize {
        self.out_c * self.conv_t * self.conv_f
    }
    fn out_len(&self) -> usize {
        self.out_c * self.conv_t * self.out_f
    }
}

/// Affine map `[out][offsets.len() * in]`; plain affine layers use offset 0.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct SpliceShape {
    pub offsets: Vec<i32>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: usize,
    pub b: usize,
}

impl SpliceShape {
    fn fan_in(&self) -> usize {
        self.offsets.len() * self.in_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Layout {
    pub conv: Vec<ConvShape>,
    /// Time-delay layers, then the feature layer, then the output layer.
    pub splice: Vec<SpliceShape>,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &FrameNetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let shapes = cfg.conv_shapes()?;
        let mut next = 0;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let mut conv = Vec::new();
        for (k, blk) in cfg.conv_blocks.iter().enumerate() {
            let (in_c, in_t, in_f) = shapes[k];
            let conv_t = in_t - blk.time_kernel + 1;
            let conv_f = in_f - blk.freq_kernel + 1;
            conv.push(ConvShape {
                in_c,
                in_t,
                in_f,
                out_c: blk.out_channels,
                kt: blk.time_kernel,
                kf: blk.freq_kernel,
                pool: blk.freq_pool,
                conv_t,
                conv_f,
                out_f: conv_f / blk.freq_pool,
                w: take(blk.out_channels * in_c * blk.time_kernel * blk.freq_kernel),
                b: take(blk.out_channels),
            });
        }
        let (c, t, f) = *shapes.last().unwrap();
        let mut in_dim = c * t * f;
        let mut splice = Vec::new();
        let dense = [(vec![0], cfg.feature_dim), (vec![0], cfg.n_speakers)];
        let layers = cfg.tdnn_layers.iter().map(|l| (l.offsets.clone(), l.units)).chain(dense);
        for (offsets, out_dim) in layers {
            let w = take(out_dim * offsets.len() * in_dim);
            let b = take(out_dim);
            splice.push(SpliceShape { offsets, in_dim, out_dim, w, b });
            in_dim = out_dim;
        }
        Ok(Self { conv, splice, total: next })
    }

    /// Layer names with their parameter ranges, in storage order.
    pub fn named_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (k, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{k}"), c.w..c.b + c.out_c));
        }
        let n = self.splice.len();
        for (k, s) in self.splice.iter().enumerate() {
            let name = match k {
                _ if k + 2 == n => "feature".to_string(),
                _ if k + 1 == n => "output".to_string(),
                _ => format!("tdnn{k}"),
            };
            out.push((name, s.w..s.b + s.out_dim));
        }
        out
    }
}

/// Network outputs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetForward {
    /// Feature-layer activations, frames x feature_dim.
    pub features: FeatureMatrix,
    /// Pre-softmax scores, frames x n_speakers.
    pub logits: FeatureMatrix,
}

/// Everything the backward pass needs from one forward pass.
pub(super) struct Trace {
    frames: usize,
    /// Per frame, per conv block: block input, post-ReLU map, pool winners.
    conv_in: Vec<Vec<Vec<f64>>>,
    conv_act: Vec<Vec<Vec<f64>>>,
    conv_arg: Vec<Vec<Vec<u32>>>,
    /// Sequence-level layer inputs (`seq[0]` is the flattened conv output)
    /// followed by the logits, each frames x dim row-major.
    seq: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.seq.last().unwrap()
    }

    /// Hash of every ReLU on/off state and pool winner; equal hashes mean the
    /// network is the same piecewise-linear function near the two points.
    pub fn pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for frame in &self.conv_act {
            for act in frame {
                for &v in act {
                    h.write_u8((v > 0.0) as u8);
                }
            }
        }
        for frame in &self.conv_arg {
            for arg in frame {
                for &i in arg {
                    h.write_u32(i);
                }
            }
        }
        let n = self.seq.len();
        for layer in &self.seq[1..n - 1] {
            for &v in layer {
                h.write_u8((v > 0.0) as u8);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameNet {
    cfg: FrameNetConfig,
    pub(super) layout: Layout,
    pub(super) params: Vec<f64>,
}

fn clamp_index(t: usize, offset: i32, len: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, len as i64 - 1) as usize
}

impl FrameNet {
    /// He-normal hidden weights, small output weights, zero biases.
    pub fn new(cfg: FrameNetConfig) -> Result<Self, NetError> {
        let layout = Layout::new(&cfg)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for c in &layout.conv {
            let fan_in = c.in_c * c.kt * c.kf;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for p in &mut params[c.w..c.b] {
                *p = normal.sample(&mut rng);
            }
        }
        let last = layout.splice.len() - 1;
        for (k, s) in layout.splice.iter().enumerate() {
            let scale = if k == last { 0.01 } else { 2.0 };
            let normal = Normal::new(0.0, (scale / s.fan_in() as f64).sqrt()).unwrap();
            for p in &mut params[s.w..s.b] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn from_parameters(cfg: FrameNetConfig, params: Vec<f64>) -> Result<Self, NetError> {
        let layout = Layout::new(&cfg)?;
        if params.len() != layout.total {
            return Err(NetError::ParameterCount { expected: layout.total, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &FrameNetConfig {
        &self.cfg
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn layer_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        self.layout.named_ranges()
    }

    pub(super) fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn forward(&self, frames: &FeatureMatrix) -> Result<NetForward, NetError> {
        let trace = self.trace(frames)?;
        let n = trace.seq.len();
        let t = trace.frames;
        let fd = self.cfg.feature_dim;
        Ok(NetForward {
            features: FeatureMatrix::new(t, fd, trace.seq[n - 2].clone(), "frame-features"),
            logits: FeatureMatrix::new(t, self.cfg.n_speakers, trace.seq[n - 1].clone(), "logits"),
        })
    }

    pub(super) fn trace(&self, frames: &FeatureMatrix) -> Result<Trace, NetError> {
        if frames.cols() != self.cfg.input_dim() {
            return Err(NetError::ShapeMismatch { expected: self.cfg.input_dim(), got: frames.cols() });
        }
        let t_len = frames.rows();
        if t_len == 0 {
            return Err(NetError::Empty);
        }
        let p = &self.params;
        let mut conv_in = Vec::with_capacity(t_len);
        let mut conv_act = Vec::with_capacity(t_len);
        let mut conv_arg = Vec::with_capacity(t_len);
        let flat_dim = self.layout.splice[0].in_dim;
        let mut flat = Vec::with_capacity(t_len * flat_dim);
        for row in frames.iter_rows() {
            let mut x = row.to_vec();
            let (mut ins, mut acts, mut args) = (Vec::new(), Vec::new(), Vec::new());
            for c in &self.layout.conv {
                let (act, pooled, arg) = conv_forward(c, p, &x);
                ins.push(std::mem::replace(&mut x, pooled));
                acts.push(act);
                args.push(arg);
            }
            flat.extend_from_slice(&x);
            conv_in.push(ins);
            conv_act.push(acts);
            conv_arg.push(args);
        }
        let mut seq = vec![flat];
        let last = self.layout.splice.len() - 1;
        for (k, s) in self.layout.splice.iter().enumerate() {
            let mut out = splice_forward(s, p, seq.last().unwrap(), t_len);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            seq.push(out);
        }
        Ok(Trace { frames: t_len, conv_in, conv_act, conv_arg, seq })
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
    pub(super) fn backward(&self, trace: &Trace, d_logits: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let t_len = trace.frames;
        let mut d_out = d_logits.to_vec();
        let last = self.layout.splice.len() - 1;
        for (k, s) in self.layout.splice.iter().enumerate().rev() {
            if k < last {
                for (d, &a) in d_out.iter_mut().zip(&trace.seq[k + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            d_out = splice_backward(s, p, &trace.seq[k], &d_out, t_len, grad);
        }
        let flat_dim = self.layout.splice[0].in_dim;
        for t in 0..t_len {
            let mut d = d_out[t * flat_dim..(t + 1) * flat_dim].to_vec();
            for (k, c) in self.layout.conv.iter().enumerate().rev() {
                d = conv_backward(
                    c,
                    p,
                    &trace.conv_in[t][k],
                    &trace.conv_act[t][k],
                    &trace.conv_arg[t][k],
                    &d,
                    k > 0,
                    grad,
                );
            }
        }
    }
}

/// Valid convolution, ReLU, then max-pool along frequency.
fn conv_forward(c: &ConvShape, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<u32>) {
    debug_assert_eq!(x.len(), c.in_len());
    let mut act = vec![0.0; c.act_len()];
    for o in 0..c.out_c {
        let plane = &mut act[o * c.conv_t * c.conv_f..(o + 1) * c.conv_t * c.conv_f];
        plane.iter_mut().for_each(|v| *v = p[c.b + o]);
        for i in 0..c.in_c {
            for a in 0..c.kt {
                for b in 0..c.kf {
                    let w = p[c.w + ((o * c.in_c + i) * c.kt + a) * c.kf + b];
                    for t in 0..c.conv_t {
                        let src = &x[(i * c.in_t + t + a) * c.in_f + b..][..c.conv_f];
                        let dst = &mut plane[t * c.conv_f..(t + 1) * c.conv_f];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
        plane.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut pooled = vec![0.0; c.out_len()];
    let mut arg = vec![0u32; c.out_len()];
    for o in 0..c.out_c {
        for t in 0..c.conv_t {
            let base = (o * c.conv_t + t) * c.conv_f;
            for g in 0..c.out_f {
                let mut best = g * c.pool;
                for f in best + 1..(g + 1) * c.pool {
                    if act[base + f] > act[base + best] {
                        best = f;
                    }
                }
                let at = (o * c.conv_t + t) * c.out_f + g;
                pooled[at] = act[base + best];
                arg[at] = best as u32;
            }
        }
    }
    (act, pooled, arg)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    c: &ConvShape,
    p: &[f64],
    x: &[f64],
    act: &[f64],
    arg: &[u32],
    d_pooled: &[f64],
    want_input_grad: bool,
    grad: &mut [f64],
) -> Vec<f64> {
    let mut d_pre = vec![0.0; c.act_len()];
    for o in 0..c.out_c {
        for t in 0..c.conv_t {
            for g in 0..c.out_f {
                let at = (o * c.conv_t + t) * c.out_f + g;
                let f = arg[at] as usize;
                let idx = (o * c.conv_t + t) * c.conv_f + f;
                if act[idx] > 0.0 {
                    d_pre[idx] += d_pooled[at];
                }
            }
        }
    }
    let mut dx = if want_input_grad { vec![0.0; c.in_len()] } else { Vec::new() };
    for o in 0..c.out_c {
        let plane = &d_pre[o * c.conv_t * c.conv_f..(o + 1) * c.conv_t * c.conv_f];
        grad[c.b + o] += plane.iter().sum::<f64>();
        for i in 0..c.in_c {
            for a in 0..c.kt {
                for b in 0..c.kf {
                    let wi = c.w + ((o * c.in_c + i) * c.kt + a) * c.kf + b;
                    let mut gw = 0.0;
                    for t in 0..c.conv_t {
                        let off = (i * c.in_t + t + a) * c.in_f + b;
                        let dp = &plane[t * c.conv_f..(t + 1) * c.conv_f];
                        gw += dp.iter().zip(&x[off..off + c.conv_f]).map(|(d, s)| d * s).sum::<f64>();
                        if want_input_grad {
                            let w = p[wi];
                            for (dst, d) in dx[off..off + c.conv_f].iter_mut().zip(dp) {
                                *dst += w * d;
                            }
                        }
                    }
                    grad[wi] += gw;
                }
            }
        }
    }
    dx
}

fn splice_forward(s: &SpliceShape, p: &[f64], input: &[f64], t_len: usize) -> Vec<f64> {
    let fan_in = s.fan_in();
    let mut out = vec![0.0; t_len * s.out_dim];
    for t in 0..t_len {
        let row = &mut out[t * s.out_dim..(t + 1) * s.out_dim];
        row.copy_from_slice(&p[s.b..s.b + s.out_dim]);
        for (k, &off) in s.offsets.iter().enumerate() {
            let src = clamp_index(t, off, t_len);
            let h = &input[src * s.in_dim..(src + 1) * s.in_dim];
            for (u, v) in row.iter_mut().enumerate() {
                let w = &p[s.w + u * fan_in + k * s.in_dim..][..s.in_dim];
                *v += w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    out
}

fn splice_backward(
    s: &SpliceShape,
    p: &[f64],
    input: &[f64],
    d_out: &[f64],
    t_len: usize,
    grad: &mut [f64],
) -> Vec<f64> {
    let fan_in = s.fan_in();
    let mut d_in = vec![0.0; t_len * s.in_dim];
    for t in 0..t_len {
        let dz = &d_out[t * s.out_dim..(t + 1) * s.out_dim];
        for (u, &d) in dz.iter().enumerate() {
            grad[s.b + u] += d;
        }
        for (k, &off) in s.offsets.iter().enumerate() {
            let src = clamp_index(t, off, t_len);
            let h = &input[src * s.in_dim..(src + 1) * s.in_dim];
            for (u, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let wi = s.w + u * fan_in + k * s.in_dim;
                for (g, &x) in grad[wi..wi + s.in_dim].iter_mut().zip(h) {
                    *g += d * x;
                }
                let dh = &mut d_in[src * s.in_dim..(src + 1) * s.in_dim];
                for (dst, &w) in dh.iter_mut().zip(&p[wi..wi + s.in_dim]) {
                    *dst += w * d;
                }
            }
        }
    }
    d_in
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &FeatureMatrix) -> FeatureMatrix {
    let k = logits.cols();
    let mut data = Vec::with_capacity(logits.rows() * k);
    for row in logits.iter_rows() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / z));
    }
    FeatureMatrix::new(logits.rows(), k, data, "posteriors")
}

#[cfg(test)]
mod tests {
    use super::super::{ConvBlock, TdnnLayer};
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> FrameNetConfig {
        FrameNetConfig {
            input_frames: 4,
            input_bins: 10,
            conv_blocks: vec![
                ConvBlock { out_channels: 2, time_kernel: 2, freq_kernel: 3, freq_pool: 2 },
                ConvBlock { out_channels: 3, time_kernel: 2, freq_kernel: 2, freq_pool: 1 },
            ],
            tdnn_layers: vec![TdnnLayer { offsets: vec![-1, 0, 2], units: 5 }],
            feature_dim: 4,
            n_speakers: 3,
            seed: 5,
            ..FrameNetConfig::default()
        }
    }

    fn input(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(), "x")
    }

    #[test]
    fn layout_counts_every_parameter_once() {
        let net = FrameNet::new(tiny_cfg()).unwrap();
        // conv0: 2*1*2*3+2, conv1: 3*2*2*2+3 on a 3x4 map -> 3x2x3 = 18,
        // tdnn: 5*3*18+5, feature: 4*5+4, output: 3*4+3
        assert_eq!(net.n_parameters(), 14 + 27 + 275 + 24 + 15);
        let ranges = net.layer_ranges();
        assert_eq!(ranges.first().unwrap().1.start, 0);
        for w in ranges.windows(2) {
            assert_eq!(w[0].1.end, w[1].1.start);
        }
        assert_eq!(ranges.last().unwrap().1.end, net.n_parameters());
    }

    #[test]
    fn default_net_size() {
        let net = FrameNet::new(FrameNetConfig::default()).unwrap();
        assert!(net.n_parameters() > 40_000 && net.n_parameters() < 60_000, "{}", net.n_parameters());
    }

    #[test]
    fn zero_network_gives_uniform_posteriors() {
        let cfg = tiny_cfg();
        let n = FrameNet::new(cfg.clone()).unwrap().n_parameters();
        let net = FrameNet::from_parameters(cfg, vec![0.0; n]).unwrap();
        let out = net.forward(&input(6, 40, 1)).unwrap();
        assert!(out.logits.as_slice().iter().all(|&v| v == 0.0));
        let post = softmax_rows(&out.logits);
        assert!(post.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_frame_in_single_row_out() {
        let net = FrameNet::new(tiny_cfg()).unwrap();
        let out = net.forward(&input(1, 40, 2)).unwrap();
        assert_eq!((out.features.rows(), out.features.cols()), (1, 4));
        assert_eq!((out.logits.rows(), out.logits.cols()), (1, 3));
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let a = FrameNet::new(tiny_cfg()).unwrap();
        let b = FrameNet::new(tiny_cfg()).unwrap();
        let x = input(9, 40, 3);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(
            a.forward(&input(2, 39, 3)).unwrap_err(),
            NetError::ShapeMismatch { expected: 40, got: 39 }
        );
    }

    #[test]
    fn features_are_post_relu() {
        let net = FrameNet::new(tiny_cfg()).unwrap();
        let out = net.forward(&input(20, 40, 4)).unwrap();
        assert!(out.features.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = FrameNet::new(FrameNetConfig::default()).unwrap();
        let post = softmax_rows(&net.forward(&input(12, 360, 5)).unwrap().logits);
        for row in post.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_is_checked() {
        assert_eq!(
            FrameNet::from_parameters(tiny_cfg(), vec![0.0; 3]).unwrap_err(),
            NetError::ParameterCount { expected: 355, got: 3 }
        );
    }

    #[test]
    fn conv_matches_direct_formula() {
        let cfg = tiny_cfg();
        let net = FrameNet::new(cfg).unwrap();
        let c = &net.layout.conv[0];
        let x = input(1, 40, 6);
        let (act, pooled, _) = conv_forward(c, &net.params, x.row(0));
        for o in 0..c.out_c {
            for t in 0..c.conv_t {
                for f in 0..c.conv_f {
                    let mut s = net.params[c.b + o];
                    for a in 0..c.kt {
                        for b in 0..c.kf {
                            s += net.params[c.w + (o * c.kt + a) * c.kf + b] * x.get(0, (t + a) * c.in_f + f + b);
                        }
                    }
                    assert!((act[(o * c.conv_t + t) * c.conv_f + f] - s.max(0.0)).abs() < 1e-14);
                }
                for g in 0..c.out_f {
                    let base = (o * c.conv_t + t) * c.conv_f + g * c.pool;
                    let m = act[base..base + c.pool].iter().cloned().fold(f64::MIN, f64::max);
                    assert_eq!(pooled[(o * c.conv_t + t) * c.out_f + g], m);
                }
            }
        }
    }
}
