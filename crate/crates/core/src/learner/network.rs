use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Activation, Head, Label, LearnerError, LearnerSpec};

/// Probabilities are kept strictly inside (0, 1).
const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvLayout {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvLayout {
    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_ch * self.positions()
    }

    fn im2col(&self, input: &[f64]) -> Array2<f64> {
        let k = self.kernel;
        let mut col = Array2::<f64>::zeros((self.positions(), self.patch()));
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let mut row = col.row_mut(oy * self.out_w + ox);
                let mut j = 0;
                for c in 0..self.in_ch {
                    let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
                    for ky in 0..k {
                        let base = (oy * self.stride + ky) * self.in_w + ox * self.stride;
                        for kx in 0..k {
                            row[j] = plane[base + kx];
                            j += 1;
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im_add(&self, dcol: &Array2<f64>, dinput: &mut [f64]) {
        let k = self.kernel;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = dcol.row(oy * self.out_w + ox);
                let mut j = 0;
                for c in 0..self.in_ch {
                    let plane = c * self.in_h * self.in_w;
                    for ky in 0..k {
                        let base = plane + (oy * self.stride + ky) * self.in_w + ox * self.stride;
                        for kx in 0..k {
                            dinput[base + kx] += row[j];
                            j += 1;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseLayout {
    inputs: usize,
    outputs: usize,
    w_off: usize,
    b_off: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    conv: Vec<ConvLayout>,
    dense: Vec<DenseLayout>,
    pub(crate) len: usize,
}

impl Layout {
    pub(crate) fn new(spec: &LearnerSpec) -> Result<Self, LearnerError> {
        let invalid = |msg: String| Err(LearnerError::InvalidSpec(msg));
        let (rows, cols) = spec.input_shape;
        if rows == 0 || cols == 0 {
            return invalid(format!("input shape {rows}x{cols} is empty"));
        }
        match spec.head {
            Head::MultiClass if spec.n_outputs < 2 => {
                return invalid("multi-class head needs at least 2 outputs".into())
            }
            Head::MultiLabel if spec.n_outputs < 1 => {
                return invalid("multi-label head needs at least 1 output".into())
            }
            _ => {}
        }
        let mut offset = 0;
        let (mut ch, mut h, mut w) = (1, rows, cols);
        let mut conv = Vec::with_capacity(spec.conv_stem.len());
        for (i, c) in spec.conv_stem.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return invalid(format!("conv layer {i} has a zero dimension"));
            }
            if c.kernel > h || c.kernel > w {
                return invalid(format!("conv layer {i}: kernel {} exceeds input {h}x{w}", c.kernel));
            }
            let (out_h, out_w) = ((h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1);
            let w_len = c.channels * ch * c.kernel * c.kernel;
            conv.push(ConvLayout {
                in_ch: ch,
                out_ch: c.channels,
                kernel: c.kernel,
                stride: c.stride,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
                w_off: offset,
                b_off: offset + w_len,
            });
            offset += w_len + c.channels;
            (ch, h, w) = (c.channels, out_h, out_w);
        }
        let mut width = ch * h * w;
        let mut dense = Vec::with_capacity(spec.hidden_layers.len() + 1);
        for (i, &out) in spec
            .hidden_layers
            .iter()
            .chain(std::iter::once(&spec.n_outputs))
            .enumerate()
        {
            if out == 0 {
                return invalid(format!("dense layer {i} has zero width"));
            }
            dense.push(DenseLayout {
                inputs: width,
                outputs: out,
                w_off: offset,
                b_off: offset + width * out,
            });
            offset += width * out + out;
            width = out;
        }
        Ok(Self {
            conv,
            dense,
            len: offset,
        })
    }

    /// `(range, fan_in)` of every weight tensor; biases are the gaps between them.
    fn weight_blocks(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        let conv = self
            .conv
            .iter()
            .map(|c| (c.w_off..c.b_off, c.patch()));
        let dense = self
            .dense
            .iter()
            .map(|d| (d.w_off..d.b_off, d.inputs));
        conv.chain(dense).collect()
    }
}

fn activate(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
    }
}

fn activate_grad(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Flat gradient, laid out exactly like [`LearnerParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct ForwardCache {
    /// Per conv layer: per-sample im2col matrices and the pre-activations `(B, out_ch * P)`.
    conv_cols: Vec<Vec<Array2<f64>>>,
    conv_pre: Vec<Array2<f64>>,
    /// Input to every dense layer and its pre-activation output.
    dense_in: Vec<Array2<f64>>,
    dense_pre: Vec<Array2<f64>>,
}

/// Weights of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    spec: LearnerSpec,
    layout: Layout,
    values: Vec<f64>,
    step: u64,
}

impl LearnerParams {
    /// Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    pub fn init(spec: &LearnerSpec, seed: u64) -> Result<Self, LearnerError> {
        let mut params = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in) in params.layout.weight_blocks() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("fan-in scale is finite and positive");
            for v in &mut params.values[range] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn zeros(spec: &LearnerSpec) -> Result<Self, LearnerError> {
        let layout = Layout::new(spec)?;
        Ok(Self {
            spec: spec.clone(),
            values: vec![0.0; layout.len],
            layout,
            step: 0,
        })
    }

    pub fn from_values(spec: &LearnerSpec, values: Vec<f64>, step: u64) -> Result<Self, LearnerError> {
        let layout = Layout::new(spec)?;
        if values.len() != layout.len {
            return Err(LearnerError::Checkpoint(format!(
                "{} values for a spec with {} parameters",
                values.len(),
                layout.len
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            layout,
            values,
            step,
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of optimizer updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    /// Euclidean distance between two parameter vectors of the same spec.
    pub fn distance(&self, other: &LearnerParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Weight tensor of dense layer `index` (`inputs x outputs`).
    pub fn dense_weights(&self, index: usize) -> Option<ArrayView2<'_, f64>> {
        let d = self.layout.dense.get(index)?;
        ArrayView2::from_shape((d.inputs, d.outputs), &self.values[d.w_off..d.b_off]).ok()
    }

    /// Every bias entry, in layer order.
    pub fn biases(&self) -> Vec<f64> {
        let conv = self
            .layout
            .conv
            .iter()
            .flat_map(|c| self.values[c.b_off..c.b_off + c.out_ch].iter().copied());
        let dense = self
            .layout
            .dense
            .iter()
            .flat_map(|d| self.values[d.b_off..d.b_off + d.outputs].iter().copied());
        conv.chain(dense).collect()
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<Array2<f64>, LearnerError> {
        let dim = self.spec.input_dim();
        let mut x = Array2::<f64>::zeros((inputs.len(), dim));
        for (index, (row, input)) in x.rows_mut().into_iter().zip(inputs).enumerate() {
            if input.len() != dim {
                return Err(LearnerError::InputShape {
                    index,
                    expected: dim,
                    found: input.len(),
                });
            }
            row.into_slice()
                .expect("fresh array rows are contiguous")
                .copy_from_slice(input);
        }
        Ok(x)
    }

    fn check_targets(&self, n_inputs: usize, targets: &[Label]) -> Result<(), LearnerError> {
        if targets.len() != n_inputs {
            return Err(LearnerError::LengthMismatch {
                inputs: n_inputs,
                targets: targets.len(),
            });
        }
        if let Some(index) = targets
            .iter()
            .position(|t| !t.fits(self.spec.head, self.spec.n_outputs))
        {
            return Err(LearnerError::Target {
                index,
                head: self.spec.head,
                n_outputs: self.spec.n_outputs,
            });
        }
        Ok(())
    }

    fn run(&self, x: Array2<f64>, cache: Option<&mut ForwardCache>) -> Array2<f64> {
        let act = self.spec.activation;
        let batch = x.nrows();
        let mut cache = cache;
        let mut a = x;
        for layer in &self.layout.conv {
            let w = ArrayView2::from_shape(
                (layer.out_ch, layer.patch()),
                &self.values[layer.w_off..layer.b_off],
            )
            .expect("layout matches parameter vector");
            let bias = &self.values[layer.b_off..layer.b_off + layer.out_ch];
            let p = layer.positions();
            let mut pre = Array2::<f64>::zeros((batch, layer.out_len()));
            let mut cols = Vec::with_capacity(if cache.is_some() { batch } else { 0 });
            for (input, mut out) in a.rows().into_iter().zip(pre.rows_mut()) {
                let input = input.to_slice().expect("activation rows are contiguous");
                let col = layer.im2col(input);
                // (out_ch x patch) . (patch x P) -> channel-major output
                let z = w.dot(&col.t());
                for (o, zr) in z.rows().into_iter().enumerate() {
                    for (dst, &v) in out.slice_mut(s![o * p..(o + 1) * p]).iter_mut().zip(zr) {
                        *dst = v + bias[o];
                    }
                }
                if cache.is_some() {
                    cols.push(col);
                }
            }
            a = pre.mapv(|z| activate(act, z));
            if let Some(c) = cache.as_deref_mut() {
                c.conv_cols.push(cols);
                c.conv_pre.push(pre);
            }
        }
        let last = self.layout.dense.len() - 1;
        for (i, layer) in self.layout.dense.iter().enumerate() {
            let w = ArrayView2::from_shape(
                (layer.inputs, layer.outputs),
                &self.values[layer.w_off..layer.b_off],
            )
            .expect("layout matches parameter vector");
            let bias = Array1::from(self.values[layer.b_off..layer.b_off + layer.outputs].to_vec());
            let pre = a.dot(&w) + &bias;
            let next = if i == last {
                pre.clone()
            } else {
                pre.mapv(|z| activate(act, z))
            };
            if let Some(c) = cache.as_deref_mut() {
                c.dense_in.push(std::mem::replace(&mut a, next));
                c.dense_pre.push(pre);
            } else {
                a = next;
            }
        }
        a
    }

    /// Raw head inputs (`batch x n_outputs`).
    pub fn logits(&self, inputs: &[&[f64]]) -> Result<Array2<f64>, LearnerError> {
        let x = self.check_inputs(inputs)?;
        Ok(self.run(x, None))
    }

    /// Class probabilities for a batch.
    pub fn forward(&self, inputs: &[&[f64]]) -> Result<Array2<f64>, LearnerError> {
        let mut logits = self.logits(inputs)?;
        match self.spec.head {
            Head::MultiClass => {
                for mut row in logits.rows_mut() {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|z| (z - m).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|e| (e / sum).clamp(PROB_EPS, 1.0 - PROB_EPS));
                }
            }
            Head::MultiLabel => {
                logits.mapv_inplace(|z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS));
            }
        }
        Ok(logits)
    }

    /// Inference over any number of inputs, in fixed-size chunks.
    pub fn predict_proba(&self, inputs: &[&[f64]]) -> Result<Array2<f64>, LearnerError> {
        const CHUNK: usize = 256;
        let mut out = Array2::<f64>::zeros((inputs.len(), self.spec.n_outputs));
        for (i, chunk) in inputs.chunks(CHUNK).enumerate() {
            let probs = self.forward(chunk)?;
            out.slice_mut(s![i * CHUNK..i * CHUNK + chunk.len(), ..])
                .assign(&probs);
        }
        Ok(out)
    }

    fn loss_from_logits(&self, logits: &Array2<f64>, targets: &[Label]) -> (f64, Array2<f64>) {
        let batch = logits.nrows() as f64;
        let mut dlogits = Array2::<f64>::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for ((row, mut grad), target) in logits.rows().into_iter().zip(dlogits.rows_mut()).zip(targets) {
            match target {
                Label::Class(y) => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|z| (z - m).exp()).sum();
                    let log_sum = m + sum.ln();
                    loss += log_sum - row[*y];
                    for (k, (g, z)) in grad.iter_mut().zip(row).enumerate() {
                        let p = (z - log_sum).exp();
                        *g = (p - if k == *y { 1.0 } else { 0.0 }) / batch;
                    }
                }
                Label::Multi(bits) => {
                    for ((g, &z), &on) in grad.iter_mut().zip(row).zip(bits) {
                        let y = if on { 1.0 } else { 0.0 };
                        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                        *g = (sigmoid(z) - y) / batch;
                    }
                }
            }
        }
        (loss / batch, dlogits)
    }

    /// Mean cross-entropy (multi-class) or mean per-sample summed binary cross-entropy (multi-label).
    pub fn loss(&self, inputs: &[&[f64]], targets: &[Label]) -> Result<f64, LearnerError> {
        self.check_targets(inputs.len(), targets)?;
        let logits = self.logits(inputs)?;
        Ok(self.loss_from_logits(&logits, targets).0)
    }

    pub fn loss_and_grad(
        &self,
        inputs: &[&[f64]],
        targets: &[Label],
    ) -> Result<(f64, Gradients), LearnerError> {
        self.check_targets(inputs.len(), targets)?;
        if inputs.is_empty() {
            return Err(LearnerError::EmptyDataset);
        }
        let x = self.check_inputs(inputs)?;
        let mut cache = ForwardCache {
            conv_cols: Vec::new(),
            conv_pre: Vec::new(),
            dense_in: Vec::new(),
            dense_pre: Vec::new(),
        };
        let logits = self.run(x, Some(&mut cache));
        let (loss, dlogits) = self.loss_from_logits(&logits, targets);

        let act = self.spec.activation;
        let mut grad = vec![0.0; self.values.len()];
        let mut delta = dlogits;
        for (i, layer) in self.layout.dense.iter().enumerate().rev() {
            let a_in = &cache.dense_in[i];
            let dw = a_in.t().dot(&delta);
            grad[layer.w_off..layer.b_off]
                .copy_from_slice(dw.as_standard_layout().as_slice().expect("standard layout"));
            for (g, d) in grad[layer.b_off..layer.b_off + layer.outputs]
                .iter_mut()
                .zip(delta.sum_axis(Axis(0)))
            {
                *g = d;
            }
            let w = ArrayView2::from_shape(
                (layer.inputs, layer.outputs),
                &self.values[layer.w_off..layer.b_off],
            )
            .expect("layout matches parameter vector");
            let mut da = delta.dot(&w.t());
            let below_pre = if i > 0 {
                Some(&cache.dense_pre[i - 1])
            } else {
                cache.conv_pre.last()
            };
            match below_pre {
                Some(pre) => {
                    da.zip_mut_with(pre, |d, &z| *d *= activate_grad(act, z));
                    delta = da;
                }
                None => {
                    delta = da;
                    break;
                }
            }
        }
        // delta is now dL/dz of the last conv layer (if any)
        for (li, layer) in self.layout.conv.iter().enumerate().rev() {
            let w = ArrayView2::from_shape(
                (layer.out_ch, layer.patch()),
                &self.values[layer.w_off..layer.b_off],
            )
            .expect("layout matches parameter vector");
            let p = layer.positions();
            let mut dw = Array2::<f64>::zeros((layer.out_ch, layer.patch()));
            let mut db = vec![0.0; layer.out_ch];
            let need_input_grad = li > 0;
            let mut dinput = if need_input_grad {
                Array2::<f64>::zeros((delta.nrows(), layer.in_ch * layer.in_h * layer.in_w))
            } else {
                Array2::zeros((0, 0))
            };
            for (b, dz_row) in delta.rows().into_iter().enumerate() {
                let dz = dz_row
                    .into_shape_with_order((layer.out_ch, p))
                    .expect("channel-major layout");
                let col = &cache.conv_cols[li][b];
                dw += &dz.dot(col);
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc += dz.row(o).sum();
                }
                if need_input_grad {
                    let dcol = dz.t().dot(&w);
                    let mut row = dinput.row_mut(b);
                    layer.col2im_add(&dcol, row.as_slice_mut().expect("contiguous row"));
                }
            }
            grad[layer.w_off..layer.b_off]
                .copy_from_slice(dw.as_slice().expect("standard layout"));
            grad[layer.b_off..layer.b_off + layer.out_ch].copy_from_slice(&db);
            if need_input_grad {
                dinput.zip_mut_with(&cache.conv_pre[li - 1], |d, &z| *d *= activate_grad(act, z));
                delta = dinput;
            }
        }
        Ok((loss, Gradients::from_values(grad)))
    }
}
