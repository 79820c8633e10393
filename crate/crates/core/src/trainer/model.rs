//! The model-variant registry and the composed forward graph of each
//! variant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Hyperparameters;
use crate::dataio::WindowRef;
use crate::error::{dim_err, Error, Result};
use crate::fusion::{join_features, one_hot_records, one_hot_spatial};
use crate::ndcore::{grad_check, GradCheckReport, ParamId, ParamSet, Tape, Tensor, Var};
use crate::prior::{concept_percent_correct, record_embedding, record_fuse, record_hrp};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::spatial::{record_conv_stack, ConvLayerVars};
use crate::temporal::{record_encoder, record_predictions, LstmVars, PredictionSet};

/// The seven architectures compared by the laboratory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VariantId {
    /// Prior → spatial → fusion → BiLSTM.
    DktStdrl,
    /// One-hot records → LSTM.
    Dkt,
    /// Prior → spatial → per-skill head.
    Ckt,
    /// No convolution: binarized direct projection of the prior features.
    DktTdrl,
    /// Full pipeline with a forward-only LSTM.
    DktSdrl1,
    /// Embedding only, without HRP/CPC.
    DktStdrrp,
    /// Spatial one-hot only, without the record one-hot.
    DktStdrrj,
}

impl VariantId {
    pub const ALL: [VariantId; 7] = [
        VariantId::DktStdrl,
        VariantId::DktTdrl,
        VariantId::Ckt,
        VariantId::DktSdrl1,
        VariantId::Dkt,
        VariantId::DktStdrrp,
        VariantId::DktStdrrj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::DktStdrl => "dkt-stdrl",
            VariantId::Dkt => "dkt",
            VariantId::Ckt => "ckt",
            VariantId::DktTdrl => "dkt-tdrl",
            VariantId::DktSdrl1 => "dkt-sdrl1",
            VariantId::DktStdrrp => "dkt-stdrrp",
            VariantId::DktStdrrj => "dkt-stdrrj",
        }
    }

    fn structure(self) -> Structure {
        use LstmInput::*;
        let (prior, spatial, temporal) = match self {
            VariantId::DktStdrl => (Prior::Full, Spatial::Conv, Some((Joint, true))),
            VariantId::Dkt => (Prior::None, Spatial::None, Some((Records, false))),
            VariantId::Ckt => (Prior::Full, Spatial::Conv, None),
            VariantId::DktTdrl => (Prior::Full, Spatial::Direct, Some((Joint, true))),
            VariantId::DktSdrl1 => (Prior::Full, Spatial::Conv, Some((Joint, false))),
            VariantId::DktStdrrp => (Prior::EmbeddingOnly, Spatial::Conv, Some((Joint, true))),
            VariantId::DktStdrrj => (Prior::Full, Spatial::Conv, Some((SpatialOnly, true))),
        };
        Structure {
            prior,
            spatial,
            temporal,
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantId::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

impl TryFrom<String> for VariantId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<VariantId> for String {
    fn from(v: VariantId) -> String {
        v.name().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Prior {
    None,
    Full,
    EmbeddingOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Spatial {
    None,
    Conv,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LstmInput {
    Joint,
    SpatialOnly,
    Records,
}

#[derive(Clone, Copy, Debug)]
struct Structure {
    prior: Prior,
    spatial: Spatial,
    /// LSTM input and whether it is bidirectional.
    temporal: Option<(LstmInput, bool)>,
}

#[derive(Clone, Copy, Debug)]
struct AffineIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct GluIds {
    value: AffineIds,
    gate: AffineIds,
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    value_kernels: ParamId,
    value_bias: ParamId,
    gate_kernels: ParamId,
    gate_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    input: ParamId,
    hidden: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, Default)]
struct Layout {
    embedding: Option<ParamId>,
    prior: Option<GluIds>,
    conv: Vec<ConvIds>,
    /// Per-skill spatial head (on `F_KS`, or directly on `F_ILA`).
    head: Option<AffineIds>,
    forward: Option<LstmIds>,
    backward: Option<LstmIds>,
    output: Option<AffineIds>,
}

/// One forward pass over a window: the tape (for backpropagation), the
/// training loss, and the variant's next-step predictions.
pub struct WindowPass<'a, T: Scalar> {
    pub tape: Tape<'a, T>,
    /// `None` when the window has fewer than two steps.
    pub loss: Option<Var>,
    pub predictions: PredictionSet<T>,
    /// Per-skill spatial-head scores (`k × M`), when the variant has them.
    pub spatial_scores: Option<Var>,
}

impl<T: Scalar> WindowPass<'_, T> {
    pub fn loss_value(&self) -> T {
        self.loss
            .map_or(T::zero(), |l| self.tape.value(l).data()[0])
    }
}

/// A variant's parameters together with the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct Model<T> {
    variant: VariantId,
    hp: Hyperparameters,
    skill_count: usize,
    params: ParamSet<T>,
    layout: Layout,
}

struct Init<'a, T> {
    params: ParamSet<T>,
    rng: StreamRng,
    scale: f64,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl<T: Scalar> Init<'_, T> {
    fn weight(&mut self, name: String, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        let s = self.scale;
        let data = (0..n)
            .map(|_| T::lit(self.rng.random_range(-s..=s)))
            .collect();
        self.params
            .add(name, Tensor::from_vec(shape, data).expect("shape"))
    }

    fn bias(&mut self, name: String, len: usize) -> ParamId {
        self.params.add(name, Tensor::zeros(&[len]))
    }

    fn affine(&mut self, prefix: &str, rows: usize, cols: usize) -> AffineIds {
        AffineIds {
            w: self.weight(format!("{prefix}.w"), &[rows, cols]),
            b: self.bias(format!("{prefix}.b"), cols),
        }
    }

    fn lstm(&mut self, prefix: &str, input: usize, g: usize) -> LstmIds {
        LstmIds {
            input: self.weight(format!("{prefix}.input"), &[input, 4 * g]),
            hidden: self.weight(format!("{prefix}.hidden"), &[g, 4 * g]),
            bias: self.bias(format!("{prefix}.bias"), 4 * g),
        }
    }
}

/// Builds a freshly initialized model: weights uniform in
/// `±init_scale` from the `init` stream of `hp.seed`, biases zero.
pub fn build_variant<T: Scalar>(
    variant: VariantId,
    hp: &Hyperparameters,
    skill_count: usize,
) -> Result<Model<T>> {
    hp.validate()?;
    if skill_count == 0 {
        return Err(Error::Config("skill count M must be positive".into()));
    }
    let m = skill_count;
    let n = hp.embedding_width;
    let g = hp.lstm_units;
    let st = variant.structure();
    let mut init = Init::<T> {
        params: ParamSet::new(),
        rng: rng::stream(hp.seed, "init", &[]),
        scale: hp.init_scale,
        _marker: std::marker::PhantomData,
    };
    let mut layout = Layout::default();

    let prior_width = match st.prior {
        Prior::None => 0,
        Prior::Full => 4 * n + m,
        Prior::EmbeddingOnly => 2 * n,
    };
    if st.prior != Prior::None {
        layout.embedding = Some(init.weight("embedding".into(), &[m, n]));
        layout.prior = Some(GluIds {
            value: init.affine("prior.value", prior_width, prior_width),
            gate: init.affine("prior.gate", prior_width, prior_width),
        });
    }
    match st.spatial {
        Spatial::None => {}
        Spatial::Conv => {
            let mut c_in = prior_width;
            for (i, &c_out) in hp.conv_channels.iter().enumerate() {
                let shape = [hp.kernel_width, c_in, c_out];
                layout.conv.push(ConvIds {
                    value_kernels: init.weight(format!("conv{i}.value.kernels"), &shape),
                    value_bias: init.bias(format!("conv{i}.value.bias"), c_out),
                    gate_kernels: init.weight(format!("conv{i}.gate.kernels"), &shape),
                    gate_bias: init.bias(format!("conv{i}.gate.bias"), c_out),
                });
                c_in = c_out;
            }
            layout.head = Some(init.affine("spatial.head", c_in, m));
        }
        Spatial::Direct => layout.head = Some(init.affine("prior.head", prior_width, m)),
    }
    if let Some((input, bidirectional)) = st.temporal {
        let width = match input {
            LstmInput::Joint => 4 * m,
            LstmInput::SpatialOnly | LstmInput::Records => 2 * m,
        };
        layout.forward = Some(init.lstm("lstm.forward", width, g));
        if bidirectional {
            layout.backward = Some(init.lstm("lstm.backward", width, g));
        }
        let hidden = if bidirectional { 2 * g } else { g };
        layout.output = Some(init.affine("output", hidden, m));
    }
    Ok(Model {
        variant,
        hp: hp.clone(),
        skill_count,
        params: init.params,
        layout,
    })
}

impl<T: Scalar> Model<T> {
    pub fn variant(&self) -> VariantId {
        self.variant
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn skill_count(&self) -> usize {
        self.skill_count
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn has_convolution(&self) -> bool {
        !self.layout.conv.is_empty()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.layout.backward.is_some()
    }

    /// Width of the LSTM input, if the variant has one.
    pub fn lstm_input_width(&self) -> Option<usize> {
        self.layout
            .forward
            .map(|f| self.params.value(f.input).rows())
    }

    /// Width of the encoder output fed to the knowledge-state projection.
    pub fn hidden_width(&self) -> Option<usize> {
        self.layout.output.map(|o| self.params.value(o.w).rows())
    }

    /// Overwrites parameter values by name; names and shapes must match.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, tensor) in values {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let p = self.params.get_mut(id);
            if p.value.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, checkpoint holds {:?}",
                    p.value.shape(),
                    tensor.shape()
                )));
            }
            p.value = tensor;
        }
        Ok(())
    }

    /// Runs the variant on one window with the model's own parameters.
    ///
    /// `dropout` supplies the training-mode dropout stream; `None` means
    /// evaluation mode. `strict_causal` zeroes the backward LSTM half.
    pub fn forward<'a>(
        &'a self,
        window: WindowRef<'_>,
        dropout: Option<&mut StreamRng>,
        strict_causal: bool,
    ) -> Result<WindowPass<'a, T>> {
        self.forward_with(&self.params, window, dropout, strict_causal)
    }

    /// Like [`Model::forward`] but reading parameter values from `params`
    /// (which must share this model's layout).
    pub fn forward_with<'a>(
        &self,
        params: &'a ParamSet<T>,
        window: WindowRef<'_>,
        mut dropout: Option<&mut StreamRng>,
        strict_causal: bool,
    ) -> Result<WindowPass<'a, T>> {
        let m = self.skill_count;
        let length = window.length;
        if length > window.width() {
            return Err(dim_err(
                "forward",
                format!("length {length} of width {}", window.width()),
            ));
        }
        if let Some(&s) = window.skills[..length].iter().find(|&&s| s >= m) {
            return Err(Error::IndexOutOfRange {
                what: "skill",
                index: s,
                bound: m,
            });
        }
        let st = self.variant.structure();
        let mut tape = Tape::new();
        let leaf = |tape: &mut Tape<'a, T>, id: ParamId| tape.param(id, params.value(id));

        let mut main: Option<(Var, PredictionSet<T>)> = None;
        let mut aux: Option<(Var, PredictionSet<T>)> = None;
        let mut spatial_one_hot: Option<Tensor<T>> = None;
        let mut spatial_scores = None;

        if let (Some(e_id), Some(glu)) = (self.layout.embedding, self.layout.prior) {
            let table = if self.hp.train_embedding {
                leaf(&mut tape, e_id)
            } else {
                tape.frozen(params.value(e_id))
            };
            let (skills, lis) = record_embedding(&mut tape, table, window)?;
            let parts = match st.prior {
                Prior::Full => {
                    let hrp = record_hrp(&mut tape, lis, skills, length)?;
                    let cpc = tape.constant(concept_percent_correct(window, m)?);
                    vec![lis, hrp, cpc]
                }
                _ => vec![lis],
            };
            let ids =
                [glu.value.w, glu.value.b, glu.gate.w, glu.gate.b].map(|id| leaf(&mut tape, id));
            let (_, ila) = record_fuse(&mut tape, &parts, ids[0], ids[1], ids[2], ids[3])?;

            let features = if self.layout.conv.is_empty() {
                ila
            } else {
                let layers: Vec<ConvLayerVars> = self
                    .layout
                    .conv
                    .iter()
                    .map(|c| ConvLayerVars {
                        value_kernels: leaf(&mut tape, c.value_kernels),
                        value_bias: leaf(&mut tape, c.value_bias),
                        gate_kernels: leaf(&mut tape, c.gate_kernels),
                        gate_bias: leaf(&mut tape, c.gate_bias),
                    })
                    .collect();
                let keep = self.hp.effective_conv_keep();
                record_conv_stack(&mut tape, ila, &layers, keep, dropout.as_deref_mut())?
            };
            let head = self.layout.head.expect("spatial variants have a head");
            let (hw, hb) = (leaf(&mut tape, head.w), leaf(&mut tape, head.b));
            let scores = tape.affine(features, hw, hb)?;
            spatial_scores = Some(scores);
            let head_predictions = record_predictions(&mut tape, scores, window)?;
            if st.temporal.is_none() {
                main = head_predictions;
            } else {
                aux = head_predictions;
                let values = tape.value(scores);
                let bits: Vec<u8> = (0..length)
                    .map(|t| u8::from(values.get(t, window.skills[t]).sigmoid() > T::lit(0.5)))
                    .collect();
                spatial_one_hot = Some(one_hot_spatial(&bits, window.skills, m, length)?);
            }
        }

        if let (Some((input, _)), Some(fw), Some(out)) =
            (st.temporal, self.layout.forward, self.layout.output)
        {
            let x = match input {
                LstmInput::Records => one_hot_records(window, m)?,
                LstmInput::SpatialOnly => spatial_one_hot.take().expect("spatial one-hot"),
                LstmInput::Joint => join_features(
                    &spatial_one_hot.take().expect("spatial one-hot"),
                    &one_hot_records(window, m)?,
                )?,
            };
            let x = tape.constant(x);
            let lstm_vars = |tape: &mut Tape<'a, T>, ids: LstmIds| LstmVars {
                input: leaf(tape, ids.input),
                hidden: leaf(tape, ids.hidden),
                bias: leaf(tape, ids.bias),
            };
            let forward = lstm_vars(&mut tape, fw);
            let backward = self.layout.backward.map(|b| lstm_vars(&mut tape, b));
            let keep = self.hp.effective_lstm_keep();
            let h = record_encoder(
                &mut tape,
                x,
                forward,
                backward,
                length,
                keep,
                dropout,
                strict_causal,
            )?;
            let (ow, ob) = (leaf(&mut tape, out.w), leaf(&mut tape, out.b));
            let state = tape.affine(h, ow, ob)?;
            main = record_predictions(&mut tape, state, window)?;
        }

        let floor = T::lit(self.hp.prob_floor);
        let mut loss = None;
        let mut predictions = PredictionSet::default();
        if let Some((probs, set)) = main {
            let targets = set.targets.iter().map(|&r| T::lit(f64::from(r))).collect();
            loss = Some(tape.bce_sum(probs, targets, floor)?);
            predictions = set;
        }
        if let (Some(main_loss), Some((probs, set))) = (loss, aux) {
            if self.hp.aux_loss_weight > 0.0 {
                let targets = set.targets.iter().map(|&r| T::lit(f64::from(r))).collect();
                let mut aux_loss = tape.bce_sum(probs, targets, floor)?;
                if self.hp.aux_loss_weight != 1.0 {
                    aux_loss = tape.mul_const(
                        aux_loss,
                        Tensor::full(&[1, 1], T::lit(self.hp.aux_loss_weight)),
                    )?;
                }
                loss = Some(tape.add(main_loss, aux_loss)?);
            }
        }
        Ok(WindowPass {
            tape,
            loss,
            predictions,
            spatial_scores,
        })
    }

    /// Evaluation-mode predictions for one window.
    pub fn predict(&self, window: WindowRef<'_>, strict_causal: bool) -> Result<PredictionSet<T>> {
        Ok(self.forward(window, None, strict_causal)?.predictions)
    }

    /// Summed loss over `windows` in evaluation mode, with `params` in place
    /// of the model's own values.
    pub fn total_loss_with(&self, params: &ParamSet<T>, windows: &[WindowRef<'_>]) -> Result<T> {
        let mut total = T::zero();
        for &w in windows {
            total += self.forward_with(params, w, None, false)?.loss_value();
        }
        Ok(total)
    }

    /// Accumulates `∂loss/∂θ` of one pass into `grads` (indexed like the
    /// parameter set).
    pub fn accumulate_gradients(pass: &WindowPass<'_, T>, grads: &mut [Tensor<T>]) {
        if let Some(loss) = pass.loss {
            let g = pass.tape.backward(loss);
            for (id, t) in g.params() {
                grads[id.0].add_assign(t);
            }
        }
    }

    /// Smallest `|score(t, s_t)|` of the spatial head over `windows`: how far
    /// the nearest binarization decision is from flipping. `None` for
    /// variants without a thresholded spatial path.
    pub fn threshold_margin(&self, windows: &[WindowRef<'_>]) -> Result<Option<f64>> {
        let st = self.variant.structure();
        if st.prior == Prior::None || st.temporal.is_none() {
            return Ok(None);
        }
        let mut margin = f64::INFINITY;
        for &w in windows {
            let pass = self.forward(w, None, false)?;
            let scores = pass.tape.value(self.spatial_scores_var(&pass)?);
            for t in 0..w.length {
                margin = margin.min(scores.get(t, w.skills[t]).as_f64().abs());
            }
        }
        Ok(Some(margin))
    }

    fn spatial_scores_var(&self, pass: &WindowPass<'_, T>) -> Result<Var> {
        pass.spatial_scores
            .ok_or_else(|| Error::Config(format!("{} has no spatial head", self.variant)))
    }

    /// Redraws every parameter (biases included) uniformly in `±scale`.
    pub fn randomize(&mut self, scale: f64, rng: &mut StreamRng) {
        for p in self.params.iter_mut() {
            for v in p.value.data_mut() {
                *v = T::lit(rng.random_range(-scale..=scale));
            }
        }
    }

    /// Compares reverse-mode gradients of the summed evaluation-mode loss
    /// over `windows` against central differences with step `h`.
    pub fn gradient_check(&self, windows: &[WindowRef<'_>], h: f64) -> Result<GradCheckReport> {
        let mut params = self.params.clone();
        params.zero_grads();
        let mut grads: Vec<Tensor<T>> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        for &w in windows {
            let pass = self.forward_with(&self.params, w, None, false)?;
            Self::accumulate_gradients(&pass, &mut grads);
        }
        for (i, g) in grads.iter().enumerate() {
            params.accumulate_grad(ParamId(i), g);
        }
        grad_check(&mut params, h, |ps| self.total_loss_with(ps, windows))
    }
}

/// Outcome of [`tiny_gradient_check`].
#[derive(Clone, Debug)]
pub struct TinyGradCheck {
    pub report: GradCheckReport,
    /// Distance of the nearest binarization decision from its threshold.
    pub threshold_margin: Option<f64>,
    pub parameter_count: usize,
}

const TINY_SKILLS: usize = 7;
const POINT_SCALE: f64 = 1.0;
const MIN_MARGIN: f64 = 1e-2;

/// Full-model gradient check on the tiny configuration (M=7, n=4, k=9,
/// g=5, channels (2,3,3), w=2) with central differences of step `h`.
///
/// The loss is only piecewise smooth because of the hard threshold on the
/// spatial scores, so the check is taken at a seeded random parameter
/// point (uniform `±1`, biases included) whose threshold decisions all
/// lie at least `1e-2` from flipping.
pub fn tiny_gradient_check(variant: VariantId, seed: u64, h: f64) -> Result<TinyGradCheck> {
    let hp = Hyperparameters {
        seed,
        ..Hyperparameters::tiny()
    };
    let k = hp.max_length;
    let ds = crate::dataio::generate_synthetic(3, TINY_SKILLS, k, seed)?;
    let batch = crate::dataio::PaddedBatch::from_windows(&crate::dataio::split_windows(&ds, k), k);
    let windows: Vec<WindowRef<'_>> = (0..batch.rows()).map(|r| batch.row(r)).collect();
    let mut model = build_variant::<f64>(variant, &hp, TINY_SKILLS)?;
    let mut margin = None;
    for attempt in 0..64 {
        model.randomize(POINT_SCALE, &mut rng::stream(seed, "gradcheck", &[attempt]));
        margin = model.threshold_margin(&windows)?;
        if margin.is_none_or(|m| m >= MIN_MARGIN) {
            break;
        }
    }
    if margin.is_some_and(|m| m < MIN_MARGIN) {
        return Err(Error::Config(
            "no parameter point away from the threshold found".into(),
        ));
    }
    Ok(TinyGradCheck {
        report: model.gradient_check(&windows, h)?,
        threshold_margin: margin,
        parameter_count: model.params().scalar_count(),
    })
}
