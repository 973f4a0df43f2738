//! Network descriptions, quantization parameters, the quantized-ReLU
//! reference semantics, and input spike encoding.
//!
//! All activation-domain quantities are exact integers: weights are signed
//! integer levels and the firing threshold `v_thr` is an integer number of
//! the same least-significant units, so membrane arithmetic never drifts.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::noc::units::{slayernorm_int, ssoftmax_int};

/// Per-layer quantization parameters shared by every neuron of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantParams {
    /// Firing threshold in integer activation units (> 0).
    pub v_thr: i64,
    /// Spike-tracer lower bound (<= 0).
    pub s_min: i32,
    /// Spike-tracer upper bound (>= 0).
    pub s_max: i32,
    /// Synaptic weight bitwidth, informational for memory sizing.
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u8,
}

fn default_weight_bits() -> u8 {
    4
}

impl QuantParams {
    pub fn validate(&self, layer: usize) -> Result<()> {
        if self.v_thr <= 0 {
            return Err(SimError::Validation {
                layer,
                field: "v_thr",
                msg: format!("must be positive, got {}", self.v_thr),
            });
        }
        if self.s_min > 0 || self.s_max < 0 || self.s_max - self.s_min < 1 {
            return Err(SimError::Validation {
                layer,
                field: "s_min/s_max",
                msg: format!("need s_min <= 0 <= s_max, span >= 1, got [{}, {}]", self.s_min, self.s_max),
            });
        }
        if !(1..=8).contains(&self.weight_bits) {
            return Err(SimError::Validation {
                layer,
                field: "weight_bits",
                msg: format!("must be in 1..=8, got {}", self.weight_bits),
            });
        }
        Ok(())
    }

    /// Scale used by the integer softmax before requantization.
    pub fn ssoftmax_scale(&self) -> i64 {
        self.v_thr * self.s_max as i64
    }

    /// Gain used by the integer layernorm before requantization.
    pub fn slayernorm_gain(&self) -> i64 {
        2 * self.v_thr
    }
}

/// Convolution geometry. `channels` is the input channel count; output
/// channels come from the weight matrix width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvGeom {
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub stride: u32,
    pub padding: u32,
    pub input_h: u32,
    pub input_w: u32,
    pub channels: u32,
}

impl ConvGeom {
    /// Output spatial dims; errors if the stride does not divide evenly.
    pub fn output_dims(&self, layer: usize) -> Result<(u32, u32)> {
        let span_h = self.input_h + 2 * self.padding;
        let span_w = self.input_w + 2 * self.padding;
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(SimError::Validation {
                layer,
                field: "conv_geom",
                msg: "kernel dims and stride must be >= 1".into(),
            });
        }
        if span_h < self.kernel_h || span_w < self.kernel_w {
            return Err(SimError::Validation {
                layer,
                field: "conv_geom",
                msg: "kernel larger than padded input".into(),
            });
        }
        let rem_h = (span_h - self.kernel_h) % self.stride;
        let rem_w = (span_w - self.kernel_w) % self.stride;
        if rem_h != 0 || rem_w != 0 {
            return Err(SimError::Validation {
                layer,
                field: "conv_geom",
                msg: format!(
                    "(input + 2*padding - kernel) not divisible by stride (remainders {rem_h},{rem_w})"
                ),
            });
        }
        Ok((
            (span_h - self.kernel_h) / self.stride + 1,
            (span_w - self.kernel_w) / self.stride + 1,
        ))
    }

    pub fn unrolled_rows(&self) -> usize {
        (self.kernel_h * self.kernel_w * self.channels) as usize
    }
}

/// Token-stream geometry for linear/attention layers. `dim` is the input
/// feature width per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenGeom {
    pub tokens: u32,
    pub dim: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Linear,
    Attention,
    Residual,
    Ssoftmax,
    Slayernorm,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Linear => "linear",
            LayerKind::Attention => "attention",
            LayerKind::Residual => "residual",
            LayerKind::Ssoftmax => "ssoftmax",
            LayerKind::Slayernorm => "slayernorm",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub quant: QuantParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_geom: Option<ConvGeom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_geom: Option<TokenGeom>,
    /// Quantized signed weights, row-major. Rows index input positions
    /// (unrolled kernel for conv), columns index output neurons. Empty for
    /// residual/ssoftmax/slayernorm layers.
    #[serde(default)]
    pub weights: Vec<Vec<i32>>,
}

impl LayerSpec {
    pub fn weight_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_cols(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub time_steps: u32,
    pub layers: Vec<LayerSpec>,
    /// Directed connections (from, to); enables residual skip paths.
    pub edges: Vec<(usize, usize)>,
}

/// One spike event in a ternary stream. Zeros are represented by absence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub t: u32,
    pub layer: usize,
    pub row: u32,
    pub position: u32,
    pub sign: i8,
}

/// Input event before layer/row attribution (the injector maps flat
/// positions onto the input layer's spines or tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputEvent {
    pub t: u32,
    pub position: u32,
    pub sign: i8,
}

/// Shape of a layer's output grid: `rows` spines/tokens of `cols` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

/// Topology and shape information derived from a validated `NetworkSpec`.
#[derive(Debug, Clone)]
pub struct NetworkInfo {
    pub topo_order: Vec<usize>,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    pub shapes: Vec<LayerShape>,
    /// Shape each layer expects from its input side (rows, positions).
    pub input_shapes: Vec<LayerShape>,
    pub input_layer: usize,
    pub output_layer: usize,
}

impl NetworkInfo {
    pub fn input_len(&self) -> usize {
        let s = self.input_shapes[self.input_layer];
        s.rows * s.cols
    }
}

/// Quantized-ReLU reference: `clamp(floor(x / v_thr), s_min, s_max)`.
///
/// `x` is in integer activation units. This is the stable-state value the
/// spiking dynamics converge to; the neuron module cross-checks it.
pub fn quantized_relu(x: i64, q: &QuantParams) -> i32 {
    let level = x.div_euclid(q.v_thr);
    level.clamp(q.s_min as i64, q.s_max as i64) as i32
}

/// Unary-over-time encoding: value `v` at position `p` becomes `|v|` events
/// of sign `sgn(v)` at time-steps `1..=|v|`. Summing signs per position
/// reconstructs the tensor exactly.
pub fn encode_input(values: &[i64], time_steps: u32) -> Result<Vec<InputEvent>> {
    for &v in values {
        if v.unsigned_abs() > time_steps as u64 {
            return Err(SimError::MagnitudeExceedsTimeSteps {
                value: v,
                time_steps,
            });
        }
    }
    let mut events = Vec::new();
    for t in 1..=time_steps {
        for (p, &v) in values.iter().enumerate() {
            if v.unsigned_abs() as u32 >= t {
                events.push(InputEvent {
                    t,
                    position: p as u32,
                    sign: if v > 0 { 1 } else { -1 },
                });
            }
        }
    }
    Ok(events)
}

impl NetworkSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: NetworkSpec =
            serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SimError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Validates every invariant and derives topology/shape info.
    pub fn compile(&self) -> Result<NetworkInfo> {
        let n = self.layers.len();
        if n == 0 {
            return Err(SimError::Parse("network has no layers".into()));
        }
        if self.time_steps < 1 {
            return Err(SimError::Validation {
                layer: 0,
                field: "time_steps",
                msg: "must be >= 1".into(),
            });
        }
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(SimError::Validation {
                    layer: a.min(n - 1),
                    field: "edges",
                    msg: format!("edge ({a},{b}) references a missing layer"),
                });
            }
            preds[b].push(a);
            succs[a].push(b);
        }
        for p in preds.iter_mut().chain(succs.iter_mut()) {
            p.sort_unstable();
        }

        // Kahn toposort; rejects cycles.
        let mut indeg: Vec<usize> = preds.iter().map(|p| p.len()).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut topo_order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            topo_order.push(i);
            for &s in &succs[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if topo_order.len() != n {
            return Err(SimError::Validation {
                layer: 0,
                field: "edges",
                msg: "layer graph contains a cycle".into(),
            });
        }

        let sources: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
        if sources.len() != 1 {
            return Err(SimError::Validation {
                layer: *sources.first().unwrap_or(&0),
                field: "edges",
                msg: format!("expected exactly one input layer, found {}", sources.len()),
            });
        }
        let sinks: Vec<usize> = (0..n).filter(|&i| succs[i].is_empty()).collect();
        if sinks.len() != 1 {
            return Err(SimError::Validation {
                layer: *sinks.first().unwrap_or(&0),
                field: "edges",
                msg: format!("expected exactly one output layer, found {}", sinks.len()),
            });
        }

        let mut shapes = vec![LayerShape { rows: 0, cols: 0 }; n];
        let mut input_shapes = vec![LayerShape { rows: 0, cols: 0 }; n];
        for &i in &topo_order {
            let layer = &self.layers[i];
            layer.quant.validate(i)?;
            let pred_shape = |idx: usize| -> Option<LayerShape> {
                preds[i].get(idx).map(|&p| shapes[p])
            };
            let (in_shape, out_shape) = derive_shapes(i, layer, &preds[i], pred_shape)?;
            if let Some(p0) = preds[i].first() {
                if shapes[*p0] != in_shape && layer.kind != LayerKind::Linear {
                    return Err(SimError::Validation {
                        layer: i,
                        field: "shape",
                        msg: format!(
                            "predecessor produces {:?}, layer consumes {:?}",
                            shapes[*p0], in_shape
                        ),
                    });
                }
            }
            // Keep st_id / position inside their 12-bit wire fields.
            if out_shape.rows > 4096 || out_shape.cols > 4096 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "shape",
                    msg: "rows/cols must fit 12-bit spine and position ids".into(),
                });
            }
            shapes[i] = out_shape;
            input_shapes[i] = in_shape;
        }

        Ok(NetworkInfo {
            topo_order,
            preds,
            succs,
            shapes,
            input_shapes,
            input_layer: sources[0],
            output_layer: sinks[0],
        })
    }
}

fn derive_shapes(
    i: usize,
    layer: &LayerSpec,
    preds: &[usize],
    pred_shape: impl Fn(usize) -> Option<LayerShape>,
) -> Result<(LayerShape, LayerShape)> {
    let need_weights = |rows: usize| -> Result<usize> {
        if layer.weight_rows() != rows {
            return Err(SimError::Validation {
                layer: i,
                field: "weights",
                msg: format!("expected {rows} weight rows, got {}", layer.weight_rows()),
            });
        }
        let cols = layer.weight_cols();
        if cols == 0 || layer.weights.iter().any(|r| r.len() != cols) {
            return Err(SimError::Validation {
                layer: i,
                field: "weights",
                msg: "weight matrix must be rectangular and non-empty".into(),
            });
        }
        Ok(cols)
    };
    match layer.kind {
        LayerKind::Conv => {
            let geom = layer.conv_geom.ok_or(SimError::Validation {
                layer: i,
                field: "conv_geom",
                msg: "required for conv layers".into(),
            })?;
            if preds.len() > 1 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: "conv takes at most one predecessor".into(),
                });
            }
            let (oh, ow) = geom.output_dims(i)?;
            let cols = need_weights(geom.unrolled_rows())?;
            let in_shape = LayerShape {
                rows: (geom.input_h * geom.input_w) as usize,
                cols: geom.channels as usize,
            };
            Ok((
                in_shape,
                LayerShape {
                    rows: (oh * ow) as usize,
                    cols,
                },
            ))
        }
        LayerKind::Linear => {
            let geom = layer.token_geom.ok_or(SimError::Validation {
                layer: i,
                field: "token_geom",
                msg: "required for linear layers".into(),
            })?;
            if preds.len() > 1 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: "linear takes at most one predecessor".into(),
                });
            }
            let cols = need_weights(geom.dim as usize)?;
            let in_shape = LayerShape {
                rows: geom.tokens as usize,
                cols: geom.dim as usize,
            };
            if let Some(ps) = pred_shape(0) {
                let token_mode = ps.rows == in_shape.rows && ps.cols == in_shape.cols;
                let flatten_mode = geom.tokens == 1 && ps.rows * ps.cols == geom.dim as usize;
                if !token_mode && !flatten_mode {
                    return Err(SimError::Validation {
                        layer: i,
                        field: "token_geom",
                        msg: format!(
                            "predecessor shape {:?} matches neither token nor flatten mode for {:?}",
                            ps, in_shape
                        ),
                    });
                }
            }
            Ok((
                in_shape,
                LayerShape {
                    rows: geom.tokens as usize,
                    cols,
                },
            ))
        }
        LayerKind::Attention => {
            let geom = layer.token_geom.ok_or(SimError::Validation {
                layer: i,
                field: "token_geom",
                msg: "required for attention layers".into(),
            })?;
            if preds.len() != 1 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: "attention takes exactly one predecessor".into(),
                });
            }
            let cols = need_weights(geom.dim as usize)?;
            if cols % 3 != 0 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "weights",
                    msg: "attention weight columns must be 3 * head dim (Q|K|V packed)".into(),
                });
            }
            let in_shape = LayerShape {
                rows: geom.tokens as usize,
                cols: geom.dim as usize,
            };
            Ok((
                in_shape,
                LayerShape {
                    rows: geom.tokens as usize,
                    cols: cols / 3,
                },
            ))
        }
        LayerKind::Residual => {
            if preds.len() != 2 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: format!("residual takes exactly two predecessors, got {}", preds.len()),
                });
            }
            let a = pred_shape(0).unwrap();
            let b = pred_shape(1).unwrap();
            if a != b {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: format!("residual operands differ in shape ({a:?} vs {b:?})"),
                });
            }
            Ok((a, a))
        }
        LayerKind::Ssoftmax | LayerKind::Slayernorm => {
            if preds.len() != 1 {
                return Err(SimError::Validation {
                    layer: i,
                    field: "edges",
                    msg: "unit layers take exactly one predecessor".into(),
                });
            }
            let s = pred_shape(0).unwrap();
            Ok((s, s))
        }
    }
}

/// Whether a linear layer consumes its predecessor as one flattened row.
pub fn linear_flattens(layer: &LayerSpec, pred_shape: LayerShape) -> bool {
    match layer.token_geom {
        Some(g) => {
            g.tokens == 1
                && !(pred_shape.rows == 1 && pred_shape.cols == g.dim as usize)
                && pred_shape.rows * pred_shape.cols == g.dim as usize
        }
        None => false,
    }
}

/// Stable-state reference forward pass: evaluates every layer on integer
/// levels with quantized-ReLU semantics. Returns per-layer output levels
/// (row-major `rows x cols`).
pub fn qann_forward(net: &NetworkSpec, info: &NetworkInfo, input: &[i64]) -> Result<Vec<Vec<i64>>> {
    let n = net.layers.len();
    let mut outputs: Vec<Vec<i64>> = vec![Vec::new(); n];
    for &i in &info.topo_order {
        let layer = &net.layers[i];
        let in_levels: Vec<i64> = if info.preds[i].is_empty() {
            let expect = info.input_shapes[i].rows * info.input_shapes[i].cols;
            if input.len() != expect {
                return Err(SimError::Validation {
                    layer: i,
                    field: "input",
                    msg: format!("expected {} input values, got {}", expect, input.len()),
                });
            }
            input.to_vec()
        } else {
            outputs[info.preds[i][0]].clone()
        };
        let q = &layer.quant;
        let out = match layer.kind {
            LayerKind::Conv => {
                let geom = layer.conv_geom.unwrap();
                let (oh, ow) = geom.output_dims(i)?;
                let (c_in, c_out) = (geom.channels as usize, layer.weight_cols());
                let mut out = vec![0i64; (oh * ow) as usize * c_out];
                for r in 0..oh {
                    for c in 0..ow {
                        for oc in 0..c_out {
                            let mut acc = 0i64;
                            for kh in 0..geom.kernel_h {
                                for kw in 0..geom.kernel_w {
                                    let ih = (r * geom.stride + kh) as i64 - geom.padding as i64;
                                    let iw = (c * geom.stride + kw) as i64 - geom.padding as i64;
                                    if ih < 0
                                        || iw < 0
                                        || ih >= geom.input_h as i64
                                        || iw >= geom.input_w as i64
                                    {
                                        continue; // zero padding
                                    }
                                    let spine = (ih as u32 * geom.input_w + iw as u32) as usize;
                                    for ic in 0..c_in {
                                        let w = layer.weights
                                            [((kh * geom.kernel_w + kw) as usize * c_in) + ic][oc];
                                        acc += w as i64 * in_levels[spine * c_in + ic];
                                    }
                                }
                            }
                            out[(r * ow + c) as usize * c_out + oc] =
                                quantized_relu(acc, q) as i64;
                        }
                    }
                }
                out
            }
            LayerKind::Linear => {
                let shape = info.shapes[i];
                let d_in = layer.weight_rows();
                let mut out = vec![0i64; shape.rows * shape.cols];
                for t in 0..shape.rows {
                    for o in 0..shape.cols {
                        let mut acc = 0i64;
                        for d in 0..d_in {
                            acc += layer.weights[d][o] as i64 * in_levels[t * d_in + d];
                        }
                        out[t * shape.cols + o] = quantized_relu(acc, q) as i64;
                    }
                }
                out
            }
            LayerKind::Attention => {
                attention_forward(layer, info.input_shapes[i], &in_levels)
            }
            LayerKind::Residual => {
                let b_levels = &outputs[info.preds[i][1]];
                in_levels
                    .iter()
                    .zip(b_levels.iter())
                    .map(|(&a, &b)| (a + b).clamp(q.s_min as i64, q.s_max as i64))
                    .collect()
            }
            LayerKind::Ssoftmax => {
                let shape = info.shapes[i];
                let mut out = Vec::with_capacity(in_levels.len());
                for row in in_levels.chunks(shape.cols) {
                    let target = ssoftmax_int(row, q.ssoftmax_scale());
                    out.extend(target.iter().map(|&x| quantized_relu(x, q) as i64));
                }
                out
            }
            LayerKind::Slayernorm => {
                let shape = info.shapes[i];
                let mut out = Vec::with_capacity(in_levels.len());
                for row in in_levels.chunks(shape.cols) {
                    let target = slayernorm_int(row, q.slayernorm_gain());
                    out.extend(target.iter().map(|&x| quantized_relu(x, q) as i64));
                }
                out
            }
        };
        outputs[i] = out;
    }
    Ok(outputs)
}

/// Reference attention block: Q/K/V projections, score product, integer
/// softmax, value mixing, each requantized exactly as the spiking path does.
fn attention_forward(layer: &LayerSpec, in_shape: LayerShape, x: &[i64]) -> Vec<i64> {
    let q = &layer.quant;
    let n_tok = in_shape.rows;
    let d_in = in_shape.cols;
    let head = layer.weight_cols() / 3;
    let proj = |part: usize| -> Vec<i64> {
        let mut out = vec![0i64; n_tok * head];
        for t in 0..n_tok {
            for h in 0..head {
                let mut acc = 0i64;
                for d in 0..d_in {
                    acc += layer.weights[d][part * head + h] as i64 * x[t * d_in + d];
                }
                out[t * head + h] = quantized_relu(acc, q) as i64;
            }
        }
        out
    };
    let (qm, km, vm) = (proj(0), proj(1), proj(2));
    // Scores: Q . K^T on the converged levels.
    let mut scores = vec![0i64; n_tok * n_tok];
    for a in 0..n_tok {
        for b in 0..n_tok {
            let mut acc = 0i64;
            for h in 0..head {
                acc += qm[a * head + h] * km[b * head + h];
            }
            scores[a * n_tok + b] = acc;
        }
    }
    let mut probs = vec![0i64; n_tok * n_tok];
    for a in 0..n_tok {
        let target = ssoftmax_int(&scores[a * n_tok..(a + 1) * n_tok], q.ssoftmax_scale());
        for (b, &v) in target.iter().enumerate() {
            probs[a * n_tok + b] = quantized_relu(v, q) as i64;
        }
    }
    let mut out = vec![0i64; n_tok * head];
    for a in 0..n_tok {
        for h in 0..head {
            let mut acc = 0i64;
            for b in 0..n_tok {
                acc += probs[a * n_tok + b] * vm[b * head + h];
            }
            out[a * head + h] = quantized_relu(acc, q) as i64;
        }
    }
    out
}

/// Class scores from cumulative output levels: positions pooled over rows.
pub fn class_scores(levels: &[i64], shape: LayerShape) -> Vec<i64> {
    let mut scores = vec![0i64; shape.cols];
    for row in levels.chunks(shape.cols) {
        for (s, &v) in scores.iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    scores
}

pub fn argmax(scores: &[i64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}
