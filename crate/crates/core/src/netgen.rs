//! Random desk-scale network generation.
//!
//! Thresholds are calibrated per layer by probing the partially built
//! network with the stable-state forward pass (real-valued scales fold into
//! `v_thr`), and candidates are rejection-sampled until the spiking
//! execution settles comfortably inside the time-step budget with a
//! non-degenerate output.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{run_inference, ProductMode, SimConfig};
use crate::error::{Result, SimError};
use crate::mapping::{build_mapping, CoreCapacity};
use crate::model::{
    qann_forward, ConvGeom, LayerKind, LayerSpec, NetworkSpec, QuantParams, TokenGeom,
};
use crate::noc::MeshConfig;
use crate::schedule::PipelineMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Cnn,
    Mlp,
    Transformer,
}

impl GenKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenKind::Cnn => "cnn",
            GenKind::Mlp => "mlp",
            GenKind::Transformer => "transformer",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub kind: GenKind,
    /// Matrix layers (conv/linear) in the stack, classifier head excluded.
    pub layers: u32,
    /// Channels (cnn) or feature width (mlp/transformer).
    pub width: u32,
    pub classes: u32,
    pub time_steps: u32,
    pub seed: u64,
    /// Nonzero weight fraction.
    pub density: f64,
    pub with_residual: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            kind: GenKind::Cnn,
            layers: 3,
            width: 3,
            classes: 4,
            time_steps: 32,
            seed: 1,
            density: 0.6,
            with_residual: false,
        }
    }
}

/// Labeled synthetic classification inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<i64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| SimError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

const S_MAX: i32 = 15;

fn random_weights(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    density: f64,
    amplitude: i32,
) -> Vec<Vec<i32>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if rng.gen_bool(density) {
                        let mut w = 0;
                        while w == 0 {
                            w = rng.gen_range(-amplitude..=amplitude);
                        }
                        w
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect()
}

/// Threshold from probe pre-activations: aim the 90th-percentile magnitude
/// at roughly half the tracer range.
fn calibrate_v_thr(preacts: &[i64]) -> i64 {
    let mut mags: Vec<i64> = preacts.iter().map(|p| p.abs()).filter(|&p| p > 0).collect();
    if mags.is_empty() {
        return 1;
    }
    mags.sort_unstable();
    let p90 = mags[(mags.len() * 9 / 10).min(mags.len() - 1)];
    (p90 / (S_MAX as i64 / 2).max(1)).max(1)
}

/// Incrementally built candidate; input levels of the next layer come from
/// a stable-state probe of the partial network.
struct Builder {
    layers: Vec<LayerSpec>,
    edges: Vec<(usize, usize)>,
    time_steps: u32,
    probe_input: Vec<i64>,
}

impl Builder {
    fn partial_net(&self) -> NetworkSpec {
        NetworkSpec {
            time_steps: self.time_steps,
            layers: self.layers.clone(),
            edges: self.edges.clone(),
        }
    }

    /// Output levels of layer `idx` (or the raw probe input when empty).
    fn levels_of(&self, idx: usize) -> Result<Vec<i64>> {
        if self.layers.is_empty() {
            return Ok(self.probe_input.clone());
        }
        let net = self.partial_net();
        let info = net.compile()?;
        Ok(qann_forward(&net, &info, &self.probe_input)?[idx].clone())
    }

    fn last(&self) -> usize {
        self.layers.len() - 1
    }

    fn push(&mut self, layer: LayerSpec, preds: &[usize]) -> usize {
        let idx = self.layers.len();
        for &p in preds {
            self.edges.push((p, idx));
        }
        self.layers.push(layer);
        idx
    }
}

fn raw_conv_preacts(geom: &ConvGeom, weights: &[Vec<i32>], input: &[i64]) -> Vec<i64> {
    let (oh, ow) = geom.output_dims(0).unwrap();
    let c_in = geom.channels as usize;
    let c_out = weights.first().map_or(0, |r| r.len());
    let mut out = vec![0i64; (oh * ow) as usize * c_out];
    for r in 0..oh {
        for c in 0..ow {
            for oc in 0..c_out {
                let mut acc = 0i64;
                for kh in 0..geom.kernel_h {
                    for kw in 0..geom.kernel_w {
                        let ih = (r * geom.stride + kh) as i64 - geom.padding as i64;
                        let iw = (c * geom.stride + kw) as i64 - geom.padding as i64;
                        if ih < 0 || iw < 0 || ih >= geom.input_h as i64 || iw >= geom.input_w as i64
                        {
                            continue;
                        }
                        let spine = (ih as u32 * geom.input_w + iw as u32) as usize;
                        for ic in 0..c_in {
                            acc += weights[((kh * geom.kernel_w + kw) as usize * c_in) + ic][oc]
                                as i64
                                * input[spine * c_in + ic];
                        }
                    }
                }
                out[(r * ow + c) as usize * c_out + oc] = acc;
            }
        }
    }
    out
}

fn raw_token_preacts(input: &[i64], tokens: usize, weights: &[Vec<i32>]) -> Vec<i64> {
    let d_in = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    let mut out = Vec::with_capacity(tokens * cols);
    for t in 0..tokens {
        for c in 0..cols {
            out.push(
                (0..d_in)
                    .map(|d| input[t * d_in + d] * weights[d][c] as i64)
                    .sum::<i64>(),
            );
        }
    }
    out
}

fn relu_quant(v_thr: i64) -> QuantParams {
    QuantParams {
        v_thr,
        s_min: 0,
        s_max: S_MAX,
        weight_bits: 4,
    }
}

/// Builds a random network of the requested kind.
pub fn generate_network(params: &GenParams) -> Result<NetworkSpec> {
    for attempt in 0..64 {
        let candidate = match build_candidate(params, params.seed.wrapping_add(attempt * 0x9e37))
        {
            Ok(c) => c,
            Err(_) => continue,
        };
        if workload_settles(&candidate, params) {
            return Ok(candidate);
        }
    }
    Err(SimError::Parse(
        "could not generate a converging workload; relax the parameters".into(),
    ))
}

/// Exposed for diagnostics: one unvalidated candidate draw.
pub fn build_candidate_at(params: &GenParams, seed: u64) -> Result<NetworkSpec> {
    build_candidate(params, seed)
}

fn build_candidate(params: &GenParams, seed: u64) -> Result<NetworkSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match params.kind {
        GenKind::Cnn => build_cnn(params, &mut rng),
        GenKind::Mlp => build_mlp(params, &mut rng),
        GenKind::Transformer => build_transformer(params, &mut rng),
    }
}

fn build_cnn(params: &GenParams, rng: &mut ChaCha8Rng) -> Result<NetworkSpec> {
    let channels = params.width.clamp(1, 8);
    let side = rng.gen_range(4..=5u32);
    let probe_input: Vec<i64> = (0..(side * side * channels) as usize)
        .map(|_| rng.gen_range(0..=4i64))
        .collect();
    let mut b = Builder {
        layers: Vec::new(),
        edges: Vec::new(),
        time_steps: params.time_steps,
        probe_input,
    };
    let (mut h, mut w, mut c_in) = (side, side, channels);
    for d in 0..params.layers.max(1) {
        let in_levels = if b.layers.is_empty() {
            b.probe_input.clone()
        } else {
            b.levels_of(b.last())?
        };
        let preserve = params.with_residual && d == 0;
        let (kh, kw, pad): (u32, u32, u32) = if preserve {
            (3.min(h), 3.min(w), 1)
        } else {
            *[(3, 3, 0), (3, 3, 1), (1, 1, 0), (2, 2, 0)]
                .choose(rng)
                .unwrap()
        };
        let (kh, kw) = (kh.min(h), kw.min(w));
        let c_out = rng.gen_range(2..=channels.max(2));
        let geom = ConvGeom {
            kernel_h: kh,
            kernel_w: kw,
            stride: 1,
            padding: pad,
            input_h: h,
            input_w: w,
            channels: c_in,
        };
        let (oh, ow) = geom.output_dims(b.layers.len())?;
        let weights = random_weights(rng, geom.unrolled_rows(), c_out as usize, params.density, 2);
        let pre = raw_conv_preacts(&geom, &weights, &in_levels);
        let quant = relu_quant(calibrate_v_thr(&pre));
        let preds: Vec<usize> = if b.layers.is_empty() { vec![] } else { vec![b.last()] };
        let conv_idx = b.push(
            LayerSpec {
                kind: LayerKind::Conv,
                quant,
                conv_geom: Some(geom),
                token_geom: None,
                weights,
            },
            &preds,
        );
        h = oh;
        w = ow;
        c_in = c_out;

        if preserve && oh == geom.input_h && ow == geom.input_w {
            // Shape-preserving branch conv plus the saturating merge.
            let branch_in = b.levels_of(conv_idx)?;
            let geom2 = ConvGeom {
                kernel_h: 3.min(h),
                kernel_w: 3.min(w),
                stride: 1,
                padding: 1,
                input_h: h,
                input_w: w,
                channels: c_in,
            };
            if geom2.output_dims(0).map(|d2| d2 == (h, w)).unwrap_or(false) {
                let weights2 =
                    random_weights(rng, geom2.unrolled_rows(), c_in as usize, params.density, 2);
                let pre2 = raw_conv_preacts(&geom2, &weights2, &branch_in);
                let quant2 = relu_quant(calibrate_v_thr(&pre2));
                let conv2 = b.push(
                    LayerSpec {
                        kind: LayerKind::Conv,
                        quant: quant2,
                        conv_geom: Some(geom2),
                        token_geom: None,
                        weights: weights2,
                    },
                    &[conv_idx],
                );
                b.push(
                    LayerSpec {
                        kind: LayerKind::Residual,
                        quant: relu_quant(1),
                        conv_geom: None,
                        token_geom: None,
                        weights: vec![],
                    },
                    &[conv_idx, conv2],
                );
            }
        }
    }
    push_classifier_head(&mut b, params, rng)?;
    let net = b.partial_net();
    net.compile()?;
    Ok(net)
}

fn build_mlp(params: &GenParams, rng: &mut ChaCha8Rng) -> Result<NetworkSpec> {
    let tokens = rng.gen_range(2..=4u32);
    let dim = params.width.clamp(2, 32);
    let probe_input: Vec<i64> = (0..(tokens * dim) as usize)
        .map(|_| rng.gen_range(0..=4i64))
        .collect();
    let mut b = Builder {
        layers: Vec::new(),
        edges: Vec::new(),
        time_steps: params.time_steps,
        probe_input,
    };
    let mut d_in = dim;
    for _ in 0..params.layers.max(1) {
        let in_levels = if b.layers.is_empty() {
            b.probe_input.clone()
        } else {
            b.levels_of(b.last())?
        };
        let d_out = rng.gen_range((params.width.div_ceil(2)).max(2)..=params.width.max(2));
        let weights = random_weights(rng, d_in as usize, d_out as usize, params.density, 2);
        let pre = raw_token_preacts(&in_levels, tokens as usize, &weights);
        let quant = relu_quant(calibrate_v_thr(&pre));
        let preds: Vec<usize> = if b.layers.is_empty() { vec![] } else { vec![b.last()] };
        b.push(
            LayerSpec {
                kind: LayerKind::Linear,
                quant,
                conv_geom: None,
                token_geom: Some(TokenGeom { tokens, dim: d_in }),
                weights,
            },
            &preds,
        );
        d_in = d_out;
    }
    if params.with_residual {
        // A normalization stage exercises the row-wise unit path.
        let last = b.last();
        b.push(
            LayerSpec {
                kind: LayerKind::Slayernorm,
                quant: QuantParams {
                    v_thr: 1,
                    s_min: -S_MAX,
                    s_max: S_MAX,
                    weight_bits: 4,
                },
                conv_geom: None,
                token_geom: None,
                weights: vec![],
            },
            &[last],
        );
    }
    push_classifier_head(&mut b, params, rng)?;
    let net = b.partial_net();
    net.compile()?;
    Ok(net)
}

fn build_transformer(params: &GenParams, rng: &mut ChaCha8Rng) -> Result<NetworkSpec> {
    let tokens = rng.gen_range(2..=4u32);
    let dim = params.width.clamp(2, 8);
    let probe_input: Vec<i64> = (0..(tokens * dim) as usize)
        .map(|_| rng.gen_range(0..=4i64))
        .collect();
    let mut b = Builder {
        layers: Vec::new(),
        edges: Vec::new(),
        time_steps: params.time_steps,
        probe_input,
    };
    // Stem projection.
    let weights = random_weights(rng, dim as usize, dim as usize, params.density.max(0.5), 2);
    let pre = raw_token_preacts(&b.probe_input.clone(), tokens as usize, &weights);
    let stem = b.push(
        LayerSpec {
            kind: LayerKind::Linear,
            quant: relu_quant(calibrate_v_thr(&pre)),
            conv_geom: None,
            token_geom: Some(TokenGeom { tokens, dim }),
            weights,
        },
        &[],
    );
    // Attention with head dim == feature dim so the residual shapes match.
    let stem_levels = b.levels_of(stem)?;
    let att_weights = random_weights(rng, dim as usize, 3 * dim as usize, params.density.max(0.5), 2);
    let att_pre = raw_token_preacts(&stem_levels, tokens as usize, &att_weights);
    let att = b.push(
        LayerSpec {
            kind: LayerKind::Attention,
            quant: relu_quant(calibrate_v_thr(&att_pre)),
            conv_geom: None,
            token_geom: Some(TokenGeom { tokens, dim }),
            weights: att_weights,
        },
        &[stem],
    );
    let mut trunk = att;
    if params.with_residual {
        trunk = b.push(
            LayerSpec {
                kind: LayerKind::Residual,
                quant: relu_quant(1),
                conv_geom: None,
                token_geom: None,
                weights: vec![],
            },
            &[stem, att],
        );
    }
    b.push(
        LayerSpec {
            kind: LayerKind::Slayernorm,
            quant: QuantParams {
                v_thr: 1,
                s_min: -S_MAX,
                s_max: S_MAX,
                weight_bits: 4,
            },
            conv_geom: None,
            token_geom: None,
            weights: vec![],
        },
        &[trunk],
    );
    push_classifier_head(&mut b, params, rng)?;
    let net = b.partial_net();
    net.compile()?;
    Ok(net)
}

/// Flattened linear classifier calibrated on the probe levels of the
/// current sink.
fn push_classifier_head(b: &mut Builder, params: &GenParams, rng: &mut ChaCha8Rng) -> Result<()> {
    let last = b.last();
    let levels = b.levels_of(last)?;
    let flat = levels.len();
    let weights = random_weights(rng, flat, params.classes as usize, 0.8, 2);
    let pre = raw_token_preacts(&levels, 1, &weights);
    b.push(
        LayerSpec {
            kind: LayerKind::Linear,
            quant: relu_quant(calibrate_v_thr(&pre)),
            conv_geom: None,
            token_geom: Some(TokenGeom {
                tokens: 1,
                dim: flat as u32,
            }),
            weights,
        },
        &[last],
    );
    Ok(())
}

/// Random input levels for the network's input layer, small enough to
/// encode within a fraction of the time-step budget.
pub fn generate_input(net: &NetworkSpec, seed: u64) -> Vec<i64> {
    let info = net.compile().expect("validated network");
    let len = info.input_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1357_9bdf);
    let cap = (net.time_steps as i64 / 4).clamp(1, 5);
    (0..len).map(|_| rng.gen_range(0..=cap)).collect()
}

/// Prototype-based labeled dataset: class k's samples are noisy copies of a
/// fixed prototype; the label is the stable-state prediction on the clean
/// prototype, making the task separable yet nontrivial at early steps.
pub fn generate_dataset(net: &NetworkSpec, n: usize, seed: u64) -> Result<Dataset> {
    let info = net.compile()?;
    let len = info.input_len();
    let classes = info.shapes[info.output_layer].cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2468_ace0);
    let cap = (net.time_steps as i64 / 4).clamp(1, 5);
    let prototypes: Vec<Vec<i64>> = (0..classes)
        .map(|_| (0..len).map(|_| rng.gen_range(0..=cap)).collect())
        .collect();
    let mut labels_of_protos = Vec::with_capacity(classes);
    for proto in &prototypes {
        let outs = qann_forward(net, &info, proto)?;
        let scores =
            crate::model::class_scores(&outs[info.output_layer], info.shapes[info.output_layer]);
        labels_of_protos.push(crate::model::argmax(&scores));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let mut sample = prototypes[k].clone();
        for v in sample.iter_mut() {
            if rng.gen_bool(0.15) {
                *v = (*v + rng.gen_range(-1..=1)).clamp(0, cap);
            }
        }
        labels.push(labels_of_protos[k]);
        inputs.push(sample);
    }
    Ok(Dataset { inputs, labels })
}

/// Accepts a candidate only if the spiking execution settles well inside
/// the time-step budget and produces a non-degenerate output.
fn workload_settles(net: &NetworkSpec, params: &GenParams) -> bool {
    let Ok(info) = net.compile() else { return false };
    let mesh = MeshConfig {
        rows: 2,
        cols: 2,
        ..MeshConfig::default()
    };
    let Ok(mapping) = build_mapping(net, &info, &mesh, &CoreCapacity::default(), 0.2, params.seed)
    else {
        return false;
    };
    let input = generate_input(net, params.seed);
    let Ok(oracle) = qann_forward(net, &info, &input) else {
        return false;
    };
    let out = &oracle[info.output_layer];
    if out.iter().all(|&v| v == 0) {
        return false;
    }
    // Slow- and fast-draining dataflows must both settle with margin.
    for (product, pipeline) in [
        (ProductMode::Inner, PipelineMode::None),
        (ProductMode::Gustavson, PipelineMode::SpineTokenWise),
    ] {
        let cfg = SimConfig {
            mesh,
            product,
            pipeline,
            seed: params.seed,
            ..SimConfig::default()
        };
        match run_inference(net, &info, &mapping, &input, &cfg) {
            Ok(trace) => {
                if !trace.converged
                    || trace.executed_steps + 6 > net.time_steps
                    || trace.final_tracers != *out
                {
                    return false;
                }
            }
            Err(_) => return false,
        }
    }
    true
}
