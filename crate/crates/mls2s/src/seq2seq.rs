//! The multilevel sequence-to-sequence network.
//!
//! L parallel encoders read the same input window; level `l` is a stack of
//! `l` GC-GRU layers and only its top layer's final hidden state survives.
//! Those L states initialize the L layers of the decoder, which rolls the
//! forecast out autoregressively: layer 1 consumes the previous emitted
//! prediction (or, during training, the ground truth with the teacher
//! forcing probability), higher layers consume the lower layer's current
//! hidden output, and the top hidden state maps through a shared linear
//! projection to one speed value per node.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::cell::{gcgru_step, BoundGCGRU, GCGRUParams};
use crate::error::{Error, Result};
use crate::graph::PropagationMatrix;
use crate::numeric::{Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLS2SConfig {
    /// Number of encoder levels == decoder layers.
    pub levels: usize,
    pub hidden_dim: usize,
    /// Features per node per input step.
    pub input_dim: usize,
    /// Future steps predicted jointly.
    pub horizon: usize,
    /// Past steps fed to every encoder.
    pub history: usize,
    /// Probability of feeding ground truth instead of the previous
    /// prediction during training. Always treated as 0 at evaluation.
    pub teacher_forcing_prob: f64,
    /// Propagation hops per graph convolution.
    pub gconv_hops: usize,
}

impl Default for MLS2SConfig {
    fn default() -> Self {
        MLS2SConfig {
            levels: 2,
            hidden_dim: 64,
            input_dim: 1,
            horizon: 4,
            history: 12,
            teacher_forcing_prob: 0.5,
            gconv_hops: 1,
        }
    }
}

impl MLS2SConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1
            || self.hidden_dim < 1
            || self.input_dim < 1
            || self.horizon < 1
            || self.history < 1
            || self.gconv_hops < 1
        {
            return Err(Error::Config(format!(
                "all architecture dimensions must be >= 1: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_prob) {
            return Err(Error::Config(format!(
                "teacher_forcing_prob must lie in [0, 1], got {}",
                self.teacher_forcing_prob
            )));
        }
        Ok(())
    }
}

/// All trainable tensors: `encoder[l]` holds the `l + 1` layers of level
/// `l + 1`, `decoder` holds L layers, and the output projection is shared
/// across nodes and time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MLS2SParams {
    pub encoder: Vec<Vec<GCGRUParams>>,
    pub decoder: Vec<GCGRUParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl MLS2SParams {
    pub fn init<R: Rng>(cfg: &MLS2SConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let encoder = (1..=cfg.levels)
            .map(|level| {
                (1..=level)
                    .map(|layer| {
                        let d_in = if layer == 1 { cfg.input_dim } else { h };
                        GCGRUParams::init(d_in, h, rng)
                    })
                    .collect()
            })
            .collect();
        let decoder = (1..=cfg.levels)
            .map(|layer| {
                let d_in = if layer == 1 { 1 } else { h };
                GCGRUParams::init(d_in, h, rng)
            })
            .collect();
        let bound = (1.0 / h as f64).sqrt();
        Ok(MLS2SParams {
            encoder,
            decoder,
            out_w: Tensor::uniform(h, 1, bound, rng).with_grad(),
            out_b: Tensor::zeros(1, 1).with_grad(),
        })
    }

    pub fn zeros(cfg: &MLS2SConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let encoder = (1..=cfg.levels)
            .map(|level| {
                (1..=level)
                    .map(|layer| {
                        let d_in = if layer == 1 { cfg.input_dim } else { h };
                        GCGRUParams::zeros(d_in, h)
                    })
                    .collect()
            })
            .collect();
        let decoder = (1..=cfg.levels)
            .map(|layer| {
                let d_in = if layer == 1 { 1 } else { h };
                GCGRUParams::zeros(d_in, h)
            })
            .collect();
        Ok(MLS2SParams {
            encoder,
            decoder,
            out_w: Tensor::zeros(h, 1).with_grad(),
            out_b: Tensor::zeros(1, 1).with_grad(),
        })
    }

    pub fn levels(&self) -> usize {
        self.decoder.len()
    }

    /// Visit every tensor with its canonical path name, e.g.
    /// `encoder.level2.layer1.reset.W`.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor)) {
        for (l, level) in self.encoder.iter().enumerate() {
            for (k, cell) in level.iter().enumerate() {
                let base = format!("encoder.level{}.layer{}", l + 1, k + 1);
                f(format!("{base}.reset.W"), &cell.reset.w);
                f(format!("{base}.reset.b"), &cell.reset.b);
                f(format!("{base}.update.W"), &cell.update.w);
                f(format!("{base}.update.b"), &cell.update.b);
                f(format!("{base}.candidate.W"), &cell.candidate.w);
                f(format!("{base}.candidate.b"), &cell.candidate.b);
            }
        }
        for (k, cell) in self.decoder.iter().enumerate() {
            let base = format!("decoder.layer{}", k + 1);
            f(format!("{base}.reset.W"), &cell.reset.w);
            f(format!("{base}.reset.b"), &cell.reset.b);
            f(format!("{base}.update.W"), &cell.update.w);
            f(format!("{base}.update.b"), &cell.update.b);
            f(format!("{base}.candidate.W"), &cell.candidate.w);
            f(format!("{base}.candidate.b"), &cell.candidate.b);
        }
        f("output.W".to_string(), &self.out_w);
        f("output.b".to_string(), &self.out_b);
    }

    /// `(name, tensor)` pairs in canonical order, for the optimizer.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (l, level) in self.encoder.iter_mut().enumerate() {
            for (k, cell) in level.iter_mut().enumerate() {
                let base = format!("encoder.level{}.layer{}", l + 1, k + 1);
                out.push((format!("{base}.reset.W"), &mut cell.reset.w));
                out.push((format!("{base}.reset.b"), &mut cell.reset.b));
                out.push((format!("{base}.update.W"), &mut cell.update.w));
                out.push((format!("{base}.update.b"), &mut cell.update.b));
                out.push((format!("{base}.candidate.W"), &mut cell.candidate.w));
                out.push((format!("{base}.candidate.b"), &mut cell.candidate.b));
            }
        }
        for (k, cell) in self.decoder.iter_mut().enumerate() {
            let base = format!("decoder.layer{}", k + 1);
            out.push((format!("{base}.reset.W"), &mut cell.reset.w));
            out.push((format!("{base}.reset.b"), &mut cell.reset.b));
            out.push((format!("{base}.update.W"), &mut cell.update.w));
            out.push((format!("{base}.update.b"), &mut cell.update.b));
            out.push((format!("{base}.candidate.W"), &mut cell.candidate.w));
            out.push((format!("{base}.candidate.b"), &mut cell.candidate.b));
        }
        out.push(("output.W".to_string(), &mut self.out_w));
        out.push(("output.b".to_string(), &mut self.out_b));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_mut() {
            t.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }
}

/// Tape handles for the whole network, bound once per forward pass.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<Vec<BoundGCGRU>>,
    pub decoder: Vec<BoundGCGRU>,
    pub out_w: Var,
    pub out_b: Var,
}

impl BoundModel {
    pub fn bind(tape: &mut Tape, params: &MLS2SParams) -> Self {
        BoundModel {
            encoder: params
                .encoder
                .iter()
                .map(|level| level.iter().map(|c| BoundGCGRU::bind(tape, c)).collect())
                .collect(),
            decoder: params
                .decoder
                .iter()
                .map(|c| BoundGCGRU::bind(tape, c))
                .collect(),
            out_w: tape.param(&params.out_w),
            out_b: tape.param(&params.out_b),
        }
    }

    /// Pull gradients off the tape into the parameter grad buffers.
    pub fn accumulate_grads(&self, tape: &Tape, params: &mut MLS2SParams) {
        for (bl, pl) in self.encoder.iter().zip(params.encoder.iter_mut()) {
            for (bc, pc) in bl.iter().zip(pl.iter_mut()) {
                bc.accumulate_grads(tape, pc);
            }
        }
        for (bc, pc) in self.decoder.iter().zip(params.decoder.iter_mut()) {
            bc.accumulate_grads(tape, pc);
        }
        params.out_w.accumulate_grad(tape.grad(self.out_w));
        params.out_b.accumulate_grad(tape.grad(self.out_b));
    }
}

/// Run one encoder stack over the input sequence from zero initial states
/// and return the top layer's final hidden state.
pub fn encode_level(
    tape: &mut Tape,
    p: Var,
    inputs: &[Var],
    layers: &[BoundGCGRU],
    n: usize,
    hidden_dim: usize,
    hops: usize,
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Contract("encode_level: empty input sequence".into()));
    }
    if layers.is_empty() {
        return Err(Error::Contract("encode_level: no layers".into()));
    }
    let mut states: Vec<Var> = (0..layers.len())
        .map(|_| tape.constant(Tensor::zeros(n, hidden_dim)))
        .collect();
    for &x_t in inputs {
        let mut signal = x_t;
        for (k, layer) in layers.iter().enumerate() {
            states[k] = gcgru_step(tape, p, signal, states[k], layer, hops)?;
            signal = states[k];
        }
    }
    Ok(*states.last().expect("non-empty layers"))
}

/// Encode the same input sequence through every level; element `l` of the
/// result initializes decoder layer `l + 1`.
pub fn multilevel_encode(
    tape: &mut Tape,
    p: Var,
    inputs: &[Var],
    bound: &BoundModel,
    n: usize,
    hidden_dim: usize,
    hops: usize,
) -> Result<Vec<Var>> {
    bound
        .encoder
        .iter()
        .map(|layers| encode_level(tape, p, inputs, layers, n, hidden_dim, hops))
        .collect()
}

/// Roll the decoder out for `steps` predictions. When `targets` are
/// supplied, each step after the first feeds the ground truth with
/// probability `tf_prob` (one Bernoulli draw per step, so the RNG stream
/// is the same length regardless of the outcomes).
#[allow(clippy::too_many_arguments)]
pub fn decode<R: Rng>(
    tape: &mut Tape,
    p: Var,
    init_states: &[Var],
    first_input: Var,
    bound: &BoundModel,
    steps: usize,
    targets: Option<&[Var]>,
    tf_prob: f64,
    hops: usize,
    rng: &mut R,
) -> Result<Vec<Var>> {
    if init_states.len() != bound.decoder.len() {
        return Err(Error::Contract(format!(
            "decode: {} init states for {} decoder layers",
            init_states.len(),
            bound.decoder.len()
        )));
    }
    if steps == 0 {
        return Err(Error::Contract("decode: steps must be >= 1".into()));
    }
    if let Some(t) = targets {
        if t.len() < steps {
            return Err(Error::Contract(format!(
                "decode: {} targets supplied for {steps} steps",
                t.len()
            )));
        }
    }
    let mut states = init_states.to_vec();
    let mut input = first_input;
    let mut outputs = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut signal = input;
        for (k, layer) in bound.decoder.iter().enumerate() {
            states[k] = gcgru_step(tape, p, signal, states[k], layer, hops)?;
            signal = states[k];
        }
        let projected = tape.matmul(signal, bound.out_w)?;
        let y = tape.add_bias(projected, bound.out_b)?;
        outputs.push(y);
        if step + 1 < steps {
            input = match targets {
                Some(t) => {
                    if rng.gen_bool(tf_prob) {
                        t[step]
                    } else {
                        y
                    }
                }
                None => y,
            };
        }
    }
    Ok(outputs)
}

/// Full forward pass on an existing tape: encode the history window,
/// decode `horizon` steps seeded with the last observed column. Returns
/// the per-step prediction handles.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<R: Rng>(
    tape: &mut Tape,
    p: Var,
    x: &Tensor,
    bound: &BoundModel,
    cfg: &MLS2SConfig,
    targets: Option<&Tensor>,
    tf_prob: f64,
    rng: &mut R,
) -> Result<Vec<Var>> {
    if x.cols() != cfg.history * cfg.input_dim {
        return Err(Error::Shape {
            op: "forward",
            lhs: vec![x.rows(), cfg.history * cfg.input_dim],
            rhs: x.shape().to_vec(),
        });
    }
    let n = x.rows();
    let inputs: Vec<Var> = (0..cfg.history)
        .map(|t| tape.constant(x.columns(t * cfg.input_dim, (t + 1) * cfg.input_dim)))
        .collect();
    let first_input = tape.constant(x.column(x.cols() - 1));
    let target_vars: Option<Vec<Var>> =
        targets.map(|y| (0..y.cols()).map(|c| tape.constant(y.column(c))).collect());

    let init = multilevel_encode(tape, p, &inputs, bound, n, cfg.hidden_dim, cfg.gconv_hops)?;
    decode(
        tape,
        p,
        &init,
        first_input,
        bound,
        cfg.horizon,
        target_vars.as_deref(),
        tf_prob,
        cfg.gconv_hops,
        rng,
    )
}

/// Inference: predictions for the next `horizon` steps as an `n x horizon`
/// tensor. Teacher forcing is off.
pub fn forward(
    prop: &PropagationMatrix,
    x: &Tensor,
    params: &MLS2SParams,
    cfg: &MLS2SConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = tape.constant(prop.matrix().clone());
    let bound = BoundModel::bind(&mut tape, params);
    // Without targets the RNG is never consulted.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let steps = forward_on_tape(&mut tape, p, x, &bound, cfg, None, 0.0, &mut rng)?;
    let cols: Vec<Tensor> = steps.iter().map(|&v| tape.value(v).clone()).collect();
    Tensor::from_columns(&cols)
}

// ---- checkpoint format --------------------------------------------------
//
// One structured JSON document holding the architecture config, optional
// normalization statistics, and every parameter tensor keyed by its path
// name. Values round-trip bit-exactly because floats are printed in
// shortest-exact form.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Normalization statistics carried alongside the weights so evaluation
/// applies exactly the transform the model was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavedNormalization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    pub config: MLS2SConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalization: Option<SavedNormalization>,
    params: BTreeMap<String, SavedTensor>,
}

impl Checkpoint {
    pub fn from_params(
        params: &MLS2SParams,
        cfg: &MLS2SConfig,
        normalization: Option<SavedNormalization>,
    ) -> Self {
        let mut map = BTreeMap::new();
        params.visit(|name, t| {
            map.insert(
                name,
                SavedTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            );
        });
        Checkpoint {
            model: "mls2s".to_string(),
            config: cfg.clone(),
            normalization,
            params: map,
        }
    }

    /// Rebuild structured parameters; every expected path must be present
    /// with the right shape, and no unknown paths may remain.
    pub fn into_params(&self) -> Result<MLS2SParams> {
        let mut expected = std::collections::BTreeSet::new();
        {
            let probe = MLS2SParams::zeros(&self.config)?;
            probe.visit(|name, _| {
                expected.insert(name);
            });
        }
        for key in self.params.keys() {
            if !expected.contains(key) {
                return Err(Error::Input(format!(
                    "checkpoint has unknown parameter {key}"
                )));
            }
        }

        let mut params = MLS2SParams::zeros(&self.config)?;
        for (name, tensor) in params.named_mut() {
            let saved = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint missing parameter {name}")))?;
            if saved.shape != tensor.shape() {
                return Err(Error::Input(format!(
                    "checkpoint mismatch at {name}: shape {:?}, expected {:?}",
                    saved.shape,
                    tensor.shape()
                )));
            }
            if saved.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "checkpoint parameter {name} contains non-finite values"
                )));
            }
            tensor.data_mut().copy_from_slice(&saved.data);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| Error::Input(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::gcgru_step_eval;
    use crate::graph::{normalize_propagation, RoadGraph};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    fn small_cfg(levels: usize, hidden: usize, history: usize, horizon: usize) -> MLS2SConfig {
        MLS2SConfig {
            levels,
            hidden_dim: hidden,
            input_dim: 1,
            horizon,
            history,
            teacher_forcing_prob: 0.0,
            gconv_hops: 1,
        }
    }

    #[test]
    fn zero_params_zero_inputs_encode_to_zero() {
        let cfg = small_cfg(1, 3, 1, 1);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(2);
        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let x = tape.constant(Tensor::zeros(2, 1));
        let out = encode_level(&mut tape, p, &[x], &bound.encoder[0], 2, 3, 1).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_single_layer_equals_one_cell_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small_cfg(1, 4, 1, 1);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let g = RoadGraph::path(ids(3));
        let prop = normalize_propagation(&g);
        let x = Tensor::uniform(3, 1, 2.0, &mut rng);

        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let xv = tape.constant(x.clone());
        let out = encode_level(&mut tape, p, &[xv], &bound.encoder[0], 3, 4, 1).unwrap();

        let direct =
            gcgru_step_eval(&prop, &x, &Tensor::zeros(3, 4), &params.encoder[0][0]).unwrap();
        assert!(tape.value(out).max_abs_diff(&direct) <= 1e-15);
    }

    #[test]
    fn two_layer_encoder_matches_hand_unrolled_cells() {
        // 2 layers over 3 steps on a 3-node path graph: six explicit
        // gcgru_step_eval calls must reproduce the stacked recurrence.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = RoadGraph::path(ids(3));
        let prop = normalize_propagation(&g);
        let cfg = small_cfg(2, 3, 3, 1);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let layers = &params.encoder[1]; // level 2 has 2 layers
        let steps: Vec<Tensor> = (0..3)
            .map(|_| Tensor::uniform(3, 1, 2.0, &mut rng))
            .collect();

        let mut h1 = Tensor::zeros(3, 3);
        let mut h2 = Tensor::zeros(3, 3);
        for x in &steps {
            h1 = gcgru_step_eval(&prop, x, &h1, &layers[0]).unwrap();
            h2 = gcgru_step_eval(&prop, &h1, &h2, &layers[1]).unwrap();
        }

        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let xs: Vec<Var> = steps.iter().map(|x| tape.constant(x.clone())).collect();
        let out = encode_level(&mut tape, p, &xs, &bound.encoder[1], 3, 3, 1).unwrap();
        assert!(tape.value(out).max_abs_diff(&h2) <= 1e-14);
    }

    #[test]
    fn multilevel_encode_levels_are_independent() {
        // Element 0 must equal a freshly run one-layer encoder using the
        // level-1 weights, untouched by level 2.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = RoadGraph::ring(ids(4));
        let prop = normalize_propagation(&g);
        let cfg = small_cfg(2, 3, 4, 1);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let steps: Vec<Tensor> = (0..4)
            .map(|_| Tensor::uniform(4, 1, 2.0, &mut rng))
            .collect();

        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let xs: Vec<Var> = steps.iter().map(|x| tape.constant(x.clone())).collect();
        let all = multilevel_encode(&mut tape, p, &xs, &bound, 4, 3, 1).unwrap();
        assert_eq!(all.len(), 2);

        let mut solo = Tape::new();
        let p2 = solo.constant(prop.matrix().clone());
        let level1 = vec![BoundGCGRU::bind(&mut solo, &params.encoder[0][0])];
        let xs2: Vec<Var> = steps.iter().map(|x| solo.constant(x.clone())).collect();
        let lone = encode_level(&mut solo, p2, &xs2, &level1, 4, 3, 1).unwrap();
        assert!(tape.value(all[0]).max_abs_diff(solo.value(lone)) <= 1e-15);
    }

    #[test]
    fn multilevel_encode_zero_params_gives_zero_states() {
        let cfg = small_cfg(3, 2, 2, 1);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(2);
        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let xs: Vec<Var> = (0..2).map(|_| tape.constant(Tensor::zeros(2, 1))).collect();
        let all = multilevel_encode(&mut tape, p, &xs, &bound, 2, 2, 1).unwrap();
        for v in all {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn decode_zero_params_emits_projection_bias() {
        let cfg = small_cfg(2, 3, 2, 3);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(2);
        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let init: Vec<Var> = (0..2).map(|_| tape.constant(Tensor::zeros(2, 3))).collect();
        let first = tape.constant(Tensor::zeros(2, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = decode(&mut tape, p, &init, first, &bound, 3, None, 0.0, 1, &mut rng).unwrap();
        for y in out {
            assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn teacher_forcing_does_not_affect_a_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = MLS2SConfig {
            horizon: 1,
            ..small_cfg(2, 4, 3, 1)
        };
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let g = RoadGraph::ring(ids(4));
        let prop = normalize_propagation(&g);
        let x = Tensor::uniform(4, 3, 2.0, &mut rng);
        let y = Tensor::uniform(4, 1, 2.0, &mut rng);

        let run = |tf: f64| -> Tensor {
            let mut tape = Tape::new();
            let p = tape.constant(prop.matrix().clone());
            let bound = BoundModel::bind(&mut tape, &params);
            let mut step_rng = ChaCha8Rng::seed_from_u64(77);
            let steps =
                forward_on_tape(&mut tape, p, &x, &bound, &cfg, Some(&y), tf, &mut step_rng)
                    .unwrap();
            tape.value(steps[0]).clone()
        };
        let a = run(0.0);
        let b = run(1.0);
        assert!(a.max_abs_diff(&b) == 0.0);
    }

    #[test]
    fn two_level_decode_matches_hand_unrolled_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = small_cfg(2, 3, 2, 2);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let g = RoadGraph::path(ids(3));
        let prop = normalize_propagation(&g);
        let init1 = Tensor::uniform(3, 3, 1.0, &mut rng);
        let init2 = Tensor::uniform(3, 3, 1.0, &mut rng);
        let first = Tensor::uniform(3, 1, 2.0, &mut rng);

        // Hand unroll: 2 steps x 2 layers of cell evals + 2 projections.
        let project = |h: &Tensor| -> Tensor {
            let mut out = Tensor::zeros(3, 1);
            for r in 0..3 {
                let mut s = params.out_b.data()[0];
                for k in 0..3 {
                    s += h.get(r, k) * params.out_w.data()[k];
                }
                out.set(r, 0, s);
            }
            out
        };
        let mut h1 = init1.clone();
        let mut h2 = init2.clone();
        let mut input = first.clone();
        let mut want = Vec::new();
        for _ in 0..2 {
            h1 = gcgru_step_eval(&prop, &input, &h1, &params.decoder[0]).unwrap();
            h2 = gcgru_step_eval(&prop, &h1, &h2, &params.decoder[1]).unwrap();
            let y = project(&h2);
            want.push(y.clone());
            input = y;
        }

        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let init = vec![tape.constant(init1.clone()), tape.constant(init2.clone())];
        let first_v = tape.constant(first.clone());
        let mut step_rng = ChaCha8Rng::seed_from_u64(0);
        let got = decode(
            &mut tape, p, &init, first_v, &bound, 2, None, 0.0, 1, &mut step_rng,
        )
        .unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!(tape.value(*g).max_abs_diff(w) <= 1e-13);
        }
    }

    #[test]
    fn decode_rejects_short_targets() {
        let cfg = small_cfg(1, 2, 2, 3);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(2);
        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let init = vec![tape.constant(Tensor::zeros(2, 2))];
        let first = tape.constant(Tensor::zeros(2, 1));
        let targets = vec![tape.constant(Tensor::zeros(2, 1))];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = decode(
            &mut tape,
            p,
            &init,
            first,
            &bound,
            3,
            Some(&targets),
            0.5,
            1,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn forward_zero_params_predicts_zero() {
        let cfg = small_cfg(2, 3, 4, 2);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(1);
        let x = Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = forward(&prop, &x, &params, &cfg).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_output_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for (n, d, h, levels) in [(2usize, 3usize, 1usize, 1usize), (5, 6, 4, 3)] {
            let cfg = small_cfg(levels, 4, d, h);
            let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
            let g = RoadGraph::ring(ids(n));
            let prop = normalize_propagation(&g);
            let x = Tensor::uniform(n, d, 2.0, &mut rng);
            let y = forward(&prop, &x, &params, &cfg).unwrap();
            assert_eq!(y.shape(), &[n, h]);
        }
    }

    #[test]
    fn forward_wrong_history_is_shape_error() {
        let cfg = small_cfg(1, 2, 5, 1);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let prop = PropagationMatrix::identity(2);
        let x = Tensor::zeros(2, 4);
        assert!(matches!(
            forward(&prop, &x, &params, &cfg),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let g = RoadGraph::path(ids(5));
        let perm = [2usize, 4, 1, 0, 3];
        let gp = g.permute(&perm).unwrap();
        let cfg = small_cfg(2, 4, 3, 2);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let x = Tensor::uniform(5, 3, 2.0, &mut rng);

        let base = forward(&normalize_propagation(&g), &x, &params, &cfg).unwrap();

        let permute_rows = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = perm
                .iter()
                .map(|&i| (0..t.cols()).map(|c| t.get(i, c)).collect())
                .collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let got = forward(
            &normalize_propagation(&gp),
            &permute_rows(&x),
            &params,
            &cfg,
        )
        .unwrap();
        assert!(got.max_abs_diff(&permute_rows(&base)) <= 1e-12);
    }

    #[test]
    fn level_weights_do_not_leak_across_init_states() {
        // Gradient of sum(init_states[0]) w.r.t. level-2 weights is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let cfg = small_cfg(2, 3, 3, 1);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let g = RoadGraph::ring(ids(4));
        let prop = normalize_propagation(&g);

        let mut tape = Tape::new();
        let p = tape.constant(prop.matrix().clone());
        let bound = BoundModel::bind(&mut tape, &params);
        let xs: Vec<Var> = (0..3)
            .map(|_| tape.constant(Tensor::uniform(4, 1, 2.0, &mut rng)))
            .collect();
        let states = multilevel_encode(&mut tape, p, &xs, &bound, 4, 3, 1).unwrap();
        let loss = tape.sum(states[0]);
        tape.backward(loss).unwrap();

        for cell in &bound.encoder[1] {
            for var in [
                cell.reset.w,
                cell.reset.b,
                cell.update.w,
                cell.update.b,
                cell.candidate.w,
                cell.candidate.b,
            ] {
                assert!(tape.grad(var).iter().all(|&g| g == 0.0));
            }
        }
        // ... while level-1 weights do receive gradient.
        let got_any = tape
            .grad(bound.encoder[0][0].update.w)
            .iter()
            .any(|&g| g != 0.0);
        assert!(got_any);
    }

    #[test]
    fn parameter_names_are_stable_and_complete() {
        let cfg = small_cfg(2, 3, 2, 2);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let mut names = Vec::new();
        params.visit(|name, _| names.push(name));
        assert!(names.contains(&"encoder.level2.layer1.reset.W".to_string()));
        assert!(names.contains(&"decoder.layer2.candidate.b".to_string()));
        assert!(names.contains(&"output.W".to_string()));
        // 3 encoder cells + 2 decoder cells, 6 tensors each, + projection.
        assert_eq!(names.len(), 5 * 6 + 2);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let cfg = small_cfg(2, 4, 3, 2);
        let params = MLS2SParams::init(&cfg, &mut rng).unwrap();
        let ckpt = Checkpoint::from_params(
            &params,
            &cfg,
            Some(SavedNormalization {
                mean: 48.1234567890123,
                std: 9.87654321098765,
            }),
        );
        let json = ckpt.to_json();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);

        let reloaded = back.into_params().unwrap();
        let mut flat_a = Vec::new();
        params.visit(|_, t| flat_a.extend_from_slice(t.data()));
        let mut flat_b = Vec::new();
        reloaded.visit(|_, t| flat_b.extend_from_slice(t.data()));
        assert_eq!(flat_a.len(), flat_b.len());
        assert!(flat_a
            .iter()
            .zip(&flat_b)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_rejects_wrong_architecture() {
        let cfg = small_cfg(2, 4, 3, 2);
        let params = MLS2SParams::zeros(&cfg).unwrap();
        let mut ckpt = Checkpoint::from_params(&params, &cfg, None);
        ckpt.config.hidden_dim = 8;
        assert!(ckpt.into_params().is_err());
    }
}
