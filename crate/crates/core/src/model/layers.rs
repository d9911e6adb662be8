//! Building blocks shared by the model families.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{param_path, record_linear, Activation, LinearLayer, Matrix, Parameterized, Tape, Var};
use crate::reparam::HrfChain;
use crate::reparam::chain_member_path;

pub(crate) type Visit<'f> = &'f mut dyn FnMut(&str, &Matrix);
pub(crate) type VisitMut<'f> = &'f mut dyn FnMut(&str, &mut Matrix);

const LAYER_NORM_EPS: f64 = 1e-5;

/// A dense sub-module slot: either a plain layer or, during training, an
/// expanded activation-free chain with the same outer shape.
#[derive(Clone, Debug, PartialEq)]
pub enum Dense {
    Linear(LinearLayer),
    Chain(HrfChain),
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Dense::Linear(LinearLayer::init_uniform(d_in, d_out, rng))
    }

    pub fn d_in(&self) -> usize {
        match self {
            Dense::Linear(l) => l.d_in(),
            Dense::Chain(c) => c.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Dense::Linear(l) => l.d_out(),
            Dense::Chain(c) => c.d_out(),
        }
    }

    pub fn is_expanded(&self) -> bool {
        matches!(self, Dense::Chain(_))
    }

    pub fn as_linear(&self) -> Option<&LinearLayer> {
        match self {
            Dense::Linear(l) => Some(l),
            Dense::Chain(_) => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Dense::Linear(l) => l.param_count(),
            Dense::Chain(c) => c.param_count(),
        }
    }

    pub fn flops(&self, frames: usize) -> u64 {
        match self {
            Dense::Linear(l) => l.flops(frames),
            Dense::Chain(c) => c.flops(frames),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Dense::Linear(l) => l.forward(x),
            Dense::Chain(c) => c.forward(x),
        }
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        match self {
            Dense::Linear(l) => record_linear(l, tape, prefix, x),
            Dense::Chain(c) => c.record(tape, prefix, x),
        }
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        match self {
            Dense::Linear(l) => visit_linear(l, prefix, f),
            Dense::Chain(c) => {
                for (k, l) in c.layers().iter().enumerate() {
                    visit_linear(l, &chain_member_path(prefix, k), f);
                }
            }
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        match self {
            Dense::Linear(l) => visit_linear_mut(l, prefix, f),
            Dense::Chain(c) => {
                for (k, l) in c.layers_mut().iter_mut().enumerate() {
                    visit_linear_mut(l, &chain_member_path(prefix, k), f);
                }
            }
        }
    }
}

pub(crate) fn visit_linear(l: &LinearLayer, prefix: &str, f: Visit<'_>) {
    l.visit_params(&mut |leaf, m| f(&param_path(prefix, leaf), m));
}

pub(crate) fn visit_linear_mut(l: &mut LinearLayer, prefix: &str, f: VisitMut<'_>) {
    l.visit_params_mut(&mut |leaf, m| f(&param_path(prefix, leaf), m));
}

/// Multi-head scaled dot-product self-attention over the columns of a
/// `d_model x T` input.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub n_heads: usize,
    /// `Some(h)` restricts each query to keys within `h` frames.
    pub radius: Option<usize>,
}

impl Attention {
    pub fn init<R: Rng + ?Sized>(d_model: usize, n_heads: usize, radius: Option<usize>, rng: &mut R) -> Self {
        Self {
            q: Dense::init(d_model, d_model, rng),
            k: Dense::init(d_model, d_model, rng),
            v: Dense::init(d_model, d_model, rng),
            o: Dense::init(d_model, d_model, rng),
            n_heads,
            radius,
        }
    }

    pub fn d_model(&self) -> usize {
        self.q.d_out()
    }

    fn record_parts<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        prefix: &str,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let d = self.d_model();
        if !d.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!("d_model {d} not divisible by {} heads", self.n_heads)));
        }
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.record(tape, &param_path(prefix, "q"), x)?;
        let k = self.k.record(tape, &param_path(prefix, "k"), x)?;
        let v = self.v.record(tape, &param_path(prefix, "v"), x)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_rows(q, h * dh, dh)?;
            let kh = tape.slice_rows(k, h * dh, dh)?;
            let vh = tape.slice_rows(v, h * dh, dh)?;
            // logits[i, j] = q_i . k_j / sqrt(dh)
            let qt = tape.transpose(qh);
            let logits = tape.matmul(qt, kh)?;
            let logits = tape.scale(logits, scale);
            let p = tape.softmax_rows(logits, self.radius);
            // context column i = sum_j p[i, j] v_j
            let pt = tape.transpose(p);
            heads.push(tape.matmul(vh, pt)?);
            probs.push(p);
        }
        let cat = tape.concat_rows(&heads)?;
        let out = self.o.record(tape, &param_path(prefix, "o"), cat)?;
        Ok((out, probs))
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        Ok(self.record_parts(tape, prefix, x)?.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let out = self.record(&mut tape, "", xv)?;
        Ok(tape.value(out).clone())
    }

    /// Per-head `T x T` attention distributions (row = query).
    pub fn attention_weights(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (_, probs) = self.record_parts(&mut tape, "", xv)?;
        Ok(probs.into_iter().map(|p| tape.value(p).clone()).collect())
    }

    /// Projections plus `2 T^2 d` for the scores and `2 T^2 d` for the
    /// context products.
    pub fn flops(&self, frames: usize) -> u64 {
        let d = self.d_model() as u64;
        let t = frames as u64;
        self.q.flops(frames) + self.k.flops(frames) + self.v.flops(frames) + self.o.flops(frames)
            + 4 * t * t * d
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        self.q.visit(&param_path(prefix, "q"), f);
        self.k.visit(&param_path(prefix, "k"), f);
        self.v.visit(&param_path(prefix, "v"), f);
        self.o.visit(&param_path(prefix, "o"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        self.q.visit_mut(&param_path(prefix, "q"), f);
        self.k.visit_mut(&param_path(prefix, "k"), f);
        self.v.visit_mut(&param_path(prefix, "v"), f);
        self.o.visit_mut(&param_path(prefix, "o"), f);
    }
}

/// Two dense layers with a pointwise activation between them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub fc1: Dense,
    pub fc2: Dense,
    pub activation: Activation,
}

impl FeedForward {
    pub fn init<R: Rng + ?Sized>(d_model: usize, d_ffn: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            fc1: Dense::init(d_model, d_ffn, rng),
            fc2: Dense::init(d_ffn, d_model, rng),
            activation,
        }
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.fc1.record(tape, &param_path(prefix, "fc1"), x)?;
        let h = tape.activate(h, self.activation);
        self.fc2.record(tape, &param_path(prefix, "fc2"), h)
    }

    /// `fc2(activation(fc1(x)))`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        ffn_forward(self, x)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        self.fc1.flops(frames) + self.fc2.flops(frames)
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        self.fc1.visit(&param_path(prefix, "fc1"), f);
        self.fc2.visit(&param_path(prefix, "fc2"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        self.fc1.visit_mut(&param_path(prefix, "fc1"), f);
        self.fc2.visit_mut(&param_path(prefix, "fc2"), f);
    }
}

pub fn ffn_forward(ffn: &FeedForward, x: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let out = ffn.record(&mut tape, "", xv)?;
    Ok(tape.value(out).clone())
}

/// Per-frame layer normalization with learned gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Matrix::filled(d, 1, 1.0),
            beta: Matrix::zeros(d, 1),
        }
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let n = tape.layer_norm_cols(x, LAYER_NORM_EPS);
        let g = tape.param(param_path(prefix, "gamma"), &self.gamma);
        let b = tape.param(param_path(prefix, "beta"), &self.beta);
        let y = tape.mul_column(n, g)?;
        tape.add_bias(y, b)
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        f(&param_path(prefix, "gamma"), &self.gamma);
        f(&param_path(prefix, "beta"), &self.beta);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        f(&param_path(prefix, "gamma"), &mut self.gamma);
        f(&param_path(prefix, "beta"), &mut self.beta);
    }
}

/// Temporal convolution over all input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    /// `c_out x (c_in * kernel)`, column `c * kernel + j` is tap `j` of
    /// input channel `c`.
    pub weight: Matrix,
    pub bias: Matrix,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Matrix::random_uniform(c_out, fan_in, bound, rng),
            bias: Matrix::random_uniform(c_out, 1, bound, rng),
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.cols() / self.kernel
    }

    pub fn c_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_frames(&self, frames: usize) -> usize {
        (frames + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let cols = tape.im2col(x, self.kernel, self.stride, self.pad)?;
        let w = tape.param(param_path(prefix, "weight"), &self.weight);
        let b = tape.param(param_path(prefix, "bias"), &self.bias);
        let y = tape.matmul(w, cols)?;
        tape.add_bias(y, b)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        2 * (self.weight.len() * self.out_frames(frames)) as u64
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        f(&param_path(prefix, "weight"), &self.weight);
        f(&param_path(prefix, "bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        f(&param_path(prefix, "weight"), &mut self.weight);
        f(&param_path(prefix, "bias"), &mut self.bias);
    }
}

/// Per-channel temporal convolution, stride 1, length-preserving.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl DepthwiseConv {
    pub fn init<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (kernel as f64).sqrt();
        Self {
            weight: Matrix::random_uniform(channels, kernel, bound, rng),
            bias: Matrix::random_uniform(channels, 1, bound, rng),
        }
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let w = tape.param(param_path(prefix, "weight"), &self.weight);
        let b = tape.param(param_path(prefix, "bias"), &self.bias);
        let y = tape.depthwise_conv(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        2 * (self.weight.len() * frames) as u64
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        f(&param_path(prefix, "weight"), &self.weight);
        f(&param_path(prefix, "bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        f(&param_path(prefix, "weight"), &mut self.weight);
        f(&param_path(prefix, "bias"), &mut self.bias);
    }
}

/// Post-norm Transformer encoder block:
/// `h = LN(x + MHA(x))`, `y = LN(h + FFN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn init<R: Rng + ?Sized>(
        d_model: usize,
        d_ffn: usize,
        n_heads: usize,
        activation: Activation,
        radius: Option<usize>,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: Attention::init(d_model, n_heads, radius, rng),
            ln1: LayerNorm::new(d_model),
            ffn: FeedForward::init(d_model, d_ffn, activation, rng),
            ln2: LayerNorm::new(d_model),
        }
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let a = self.attn.record(tape, &param_path(prefix, "attn"), x)?;
        let h = tape.add(x, a)?;
        let h = self.ln1.record(tape, &param_path(prefix, "ln1"), h)?;
        let f = self.ffn.record(tape, &param_path(prefix, "ffn"), h)?;
        let y = tape.add(h, f)?;
        self.ln2.record(tape, &param_path(prefix, "ln2"), y)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        self.attn.flops(frames) + self.ffn.flops(frames)
    }

    pub(crate) fn visit(&self, prefix: &str, f: Visit<'_>) {
        self.attn.visit(&param_path(prefix, "attn"), f);
        self.ln1.visit(&param_path(prefix, "ln1"), f);
        self.ffn.visit(&param_path(prefix, "ffn"), f);
        self.ln2.visit(&param_path(prefix, "ln2"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        self.attn.visit_mut(&param_path(prefix, "attn"), f);
        self.ln1.visit_mut(&param_path(prefix, "ln1"), f);
        self.ffn.visit_mut(&param_path(prefix, "ffn"), f);
        self.ln2.visit_mut(&param_path(prefix, "ln2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Plain-loop attention used as an independent reference.
    fn naive_attention(att: &Attention, x: &Matrix) -> Matrix {
        let lin = |d: &Dense| d.as_linear().unwrap().clone();
        let (wq, wk, wv, wo) = (lin(&att.q), lin(&att.k), lin(&att.v), lin(&att.o));
        let d = wq.d_out();
        let t = x.cols();
        let dh = d / att.n_heads;
        let proj = |l: &LinearLayer| {
            let mut out = vec![vec![0.0; t]; d];
            for i in 0..d {
                for c in 0..t {
                    let mut s = l.bias()[i];
                    for j in 0..l.d_in() {
                        s += l.weight().get(i, j) * x.get(j, c);
                    }
                    out[i][c] = s;
                }
            }
            out
        };
        let (q, k, v) = (proj(&wq), proj(&wk), proj(&wv));
        let mut ctx = vec![vec![0.0; t]; d];
        for h in 0..att.n_heads {
            for i in 0..t {
                let mut logits = vec![0.0; t];
                for (j, l) in logits.iter_mut().enumerate() {
                    for r in h * dh..(h + 1) * dh {
                        *l += q[r][i] * k[r][j];
                    }
                    *l /= (dh as f64).sqrt();
                }
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for r in h * dh..(h + 1) * dh {
                    ctx[r][i] = (0..t).map(|j| e[j] / z * v[r][j]).sum();
                }
            }
        }
        let mut out = Matrix::zeros(d, t);
        for i in 0..d {
            for c in 0..t {
                let mut s = wo.bias()[i];
                for j in 0..d {
                    s += wo.weight().get(i, j) * ctx[j][c];
                }
                out.set(i, c, s);
            }
        }
        out
    }

    #[test]
    fn attention_matches_naive_loop() {
        let mut r = rng(11);
        let att = Attention::init(16, 4, None, &mut r);
        let x = Matrix::random_normal(16, 5, &mut r);
        let diff = att.forward(&x).unwrap().max_abs_diff(&naive_attention(&att, &x)).unwrap();
        assert!(diff <= 1e-12, "{diff}");
    }

    #[test]
    fn single_frame_attends_to_itself() {
        let mut r = rng(12);
        let att = Attention::init(16, 4, None, &mut r);
        let x = Matrix::random_normal(16, 1, &mut r);
        for p in att.attention_weights(&x).unwrap() {
            assert_eq!(p.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn zero_query_and_key_give_uniform_attention() {
        let mut r = rng(13);
        let mut att = Attention::init(8, 2, None, &mut r);
        att.q = Dense::Linear(LinearLayer::zeros(8, 8));
        att.k = Dense::Linear(LinearLayer::zeros(8, 8));
        let x = Matrix::random_normal(8, 6, &mut r);
        for p in att.attention_weights(&x).unwrap() {
            for v in p.as_slice() {
                assert!((v - 1.0 / 6.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut r = rng(14);
        for radius in [None, Some(2)] {
            let att = Attention::init(16, 4, radius, &mut r);
            let x = Matrix::random_normal(16, 9, &mut r).scale(3.0);
            for p in att.attention_weights(&x).unwrap() {
                for i in 0..p.rows() {
                    assert!(p.row(i).iter().all(|&v| v >= 0.0));
                    assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn ffn_matches_explicit_composition() {
        let mut r = rng(15);
        let ffn = FeedForward::init(16, 4, Activation::GELU, &mut r);
        let x = Matrix::random_normal(16, 7, &mut r);
        let h = crate::numcore::activate(Activation::GELU, &ffn.fc1.forward(&x).unwrap());
        let expected = ffn.fc2.forward(&h).unwrap();
        assert_eq!(ffn.forward(&x).unwrap(), expected);
    }

    #[test]
    fn identity_ffn_is_affine_composition() {
        let mut r = rng(16);
        let slice_in = LinearLayer::new(
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
            vec![0.5, -0.5],
        )
        .unwrap();
        let slice_out = LinearLayer::new(
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap(),
            vec![0.0, 0.0, 1.0],
        )
        .unwrap();
        let ffn = FeedForward {
            fc1: Dense::Linear(slice_in.clone()),
            fc2: Dense::Linear(slice_out.clone()),
            activation: Activation::Identity,
        };
        let x = Matrix::random_normal(3, 4, &mut r);
        let composed = crate::reparam::merge_pair(&slice_out, &slice_in).unwrap();
        let diff = ffn.forward(&x).unwrap().max_abs_diff(&composed.forward(&x).unwrap()).unwrap();
        assert!(diff < 1e-15);
    }

    #[test]
    fn bottleneck_limits_rank() {
        // With d_ffn = 2 the FFN output is fc2.weight * (2-dim code) + bias,
        // so after removing the bias every output column lies in a 2-dim span.
        let mut r = rng(17);
        let ffn = FeedForward::init(16, 2, Activation::Swish, &mut r);
        let x = Matrix::random_normal(16, 12, &mut r);
        let y = ffn.forward(&x).unwrap();
        let b = ffn.fc2.as_linear().unwrap().bias().to_vec();
        let centered = y.add_column(&b.iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        assert!(numerical_rank(&centered, 1e-9) <= 2);
    }

    fn numerical_rank(m: &Matrix, tol: f64) -> usize {
        // Gaussian elimination with partial pivoting.
        let (rows, cols) = m.shape();
        let mut a: Vec<Vec<f64>> = (0..rows).map(|r| m.row(r).to_vec()).collect();
        let mut rank = 0;
        for c in 0..cols {
            let Some(p) = (rank..rows).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())) else {
                break;
            };
            if a[p][c].abs() <= tol {
                continue;
            }
            a.swap(rank, p);
            for r in rank + 1..rows {
                let f = a[r][c] / a[rank][c];
                for k in c..cols {
                    a[r][k] -= f * a[rank][k];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn conv_output_length() {
        let mut r = rng(18);
        let conv = Conv1d::init(3, 4, 3, 2, &mut r);
        assert_eq!(conv.out_frames(498), 249);
        assert_eq!(conv.out_frames(1), 1);
        assert_eq!(conv.out_frames(10), 5);
    }
}
