//! The forecasting model: a monadic net driven by the avatar's own streams,
//! a dyadic net that also watches the human side, and a residual attention
//! gate that mixes their per-dimension predictions.
//!
//! Ablation variants reuse the same step interface so training, rollout, and
//! evaluation never branch on what is inside the model.

use crate::backbone::{Backbone, BackboneHyper};
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{NodeId, ParamLeases, ParamSet, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Avatar audio only.
    AvatarAudioOnly,
    /// Avatar audio + avatar pose feedback.
    AvatarMonadicOnly,
    /// Human audio only.
    HumanAudioOnly,
    /// Human audio + human pose.
    HumanMonadicOnly,
    /// All four streams concatenated into one net.
    EarlyFusion,
    /// Both nets, dyadic output used directly (no gate).
    DramNoAttention,
    /// Full model with the residual attention gate.
    Dram,
}

pub const ALL_VARIANTS: [Variant; 7] = [
    Variant::AvatarAudioOnly,
    Variant::AvatarMonadicOnly,
    Variant::HumanAudioOnly,
    Variant::HumanMonadicOnly,
    Variant::EarlyFusion,
    Variant::DramNoAttention,
    Variant::Dram,
];

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::AvatarAudioOnly => "avatar_audio_only",
            Variant::AvatarMonadicOnly => "avatar_monadic_only",
            Variant::HumanAudioOnly => "human_audio_only",
            Variant::HumanMonadicOnly => "human_monadic_only",
            Variant::EarlyFusion => "early_fusion",
            Variant::DramNoAttention => "dram_no_attention",
            Variant::Dram => "dram",
        }
    }

    pub fn parse(text: &str) -> Result<Variant> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.label() == text)
            .ok_or_else(|| Error::Config(format!("unknown model variant {text:?}")))
    }

    /// Stable one-byte tag used in checkpoint headers.
    pub fn code(self) -> u8 {
        match self {
            Variant::AvatarAudioOnly => 0,
            Variant::AvatarMonadicOnly => 1,
            Variant::HumanAudioOnly => 2,
            Variant::HumanMonadicOnly => 3,
            Variant::EarlyFusion => 4,
            Variant::DramNoAttention => 5,
            Variant::Dram => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Variant> {
        ALL_VARIANTS.iter().copied().find(|v| v.code() == code)
    }

    /// Whether the variant runs the two-net (monadic + dyadic) pipeline.
    pub fn is_two_net(self) -> bool {
        matches!(self, Variant::DramNoAttention | Variant::Dram)
    }

    /// Whether the avatar's own predicted pose feeds back into the input.
    pub fn uses_pose_feedback(self) -> bool {
        matches!(
            self,
            Variant::AvatarMonadicOnly
                | Variant::EarlyFusion
                | Variant::DramNoAttention
                | Variant::Dram
        )
    }

    /// Whether any human-side stream is read at all.
    pub fn uses_human_streams(self) -> bool {
        !matches!(self, Variant::AvatarAudioOnly | Variant::AvatarMonadicOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneHyper,
    /// Rows in each audio feature window.
    pub audio_dim: usize,
    /// Rows in each pose window (4 per joint).
    pub pose_dim: usize,
    /// History window length in frames.
    pub k: usize,
    /// Let the dyadic net see the current-frame monadic prediction (last
    /// window column) rather than only strictly-prior ones.
    pub include_current_monadic: bool,
    /// Stop gradients from flowing through the attention gate itself.
    pub detach_attention: bool,
    /// Parameter init seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Dram,
            backbone: BackboneHyper::Tcn(Default::default()),
            audio_dim: 23,
            pose_dim: 48,
            k: 32,
            include_current_monadic: true,
            detach_attention: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.audio_dim == 0 || self.pose_dim == 0 {
            return Err(Error::Config("audio_dim and pose_dim must be >= 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("history window k must be >= 2".into()));
        }
        Ok(())
    }

    /// Input rows of the single net (ablations) or the monadic net.
    pub fn primary_input_dim(&self) -> usize {
        let (a, p) = (self.audio_dim, self.pose_dim);
        match self.variant {
            Variant::AvatarAudioOnly | Variant::HumanAudioOnly => a,
            Variant::AvatarMonadicOnly | Variant::HumanMonadicOnly => a + p,
            Variant::EarlyFusion => 2 * (a + p),
            Variant::DramNoAttention | Variant::Dram => a + p,
        }
    }

    /// Input rows of the dyadic net, when the variant has one.
    pub fn dyadic_input_dim(&self) -> Option<usize> {
        self.variant.is_two_net().then(|| self.audio_dim + 2 * self.pose_dim)
    }
}

/// Per-dimension gate in [0, 1): tanh of the absolute monadic/dyadic
/// disagreement, clamped strictly below 1 so the interval stays half-open
/// even where tanh saturates in floating point. With `detach` the gate is
/// computed from value snapshots, so no gradient flows through the gate
/// itself.
pub fn residual_attention(
    tape: &mut Tape,
    monadic: NodeId,
    dyadic: NodeId,
    detach: bool,
) -> Result<NodeId> {
    let (zm, zd) = if detach {
        let zm_val = tape.value(monadic).clone();
        let zd_val = tape.value(dyadic).clone();
        (tape.leaf(zm_val), tape.leaf(zd_val))
    } else {
        (monadic, dyadic)
    };
    let diff = tape.sub(zd, zm)?;
    let mag = tape.abs(diff);
    Ok(tape.tanh_open(mag))
}

/// Gate-weighted mix: (1 - delta) * monadic + delta * dyadic, elementwise.
pub fn dram_combine(
    tape: &mut Tape,
    monadic: NodeId,
    dyadic: NodeId,
    delta: NodeId,
) -> Result<NodeId> {
    tape.blend(monadic, dyadic, delta)
}

/// History windows for one prediction step, already on the tape. Each is
/// [rows, k] with the newest frame in the last column.
#[derive(Debug, Clone, Copy)]
pub struct StepWindows {
    pub avatar_audio: NodeId,
    pub avatar_pose: NodeId,
    pub human_audio: NodeId,
    pub human_pose: NodeId,
    /// Prior monadic predictions; [pose_dim, k-1] when the current
    /// prediction is appended in-step, else [pose_dim, k]. Only read by
    /// two-net variants.
    pub monadic_history: Option<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Final pose prediction, [pose_dim].
    pub prediction: NodeId,
    pub monadic: Option<NodeId>,
    pub dyadic: Option<NodeId>,
    /// Attention gate values, [pose_dim]; only for the full model.
    pub delta: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    primary: Backbone,
    dyadic: Option<Backbone>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut params = ParamSet::new();
        let p = config.pose_dim;
        let primary_prefix = if config.variant.is_two_net() { "monadic" } else { "net" };
        let primary = Backbone::build(
            config.primary_input_dim(),
            p,
            config.k,
            &config.backbone,
            &mut params,
            primary_prefix,
            rng::derive_seed(config.seed, 1),
        )?;
        let dyadic = match config.dyadic_input_dim() {
            Some(d_in) => Some(Backbone::build(
                d_in,
                p,
                config.k,
                &config.backbone,
                &mut params,
                "dyadic",
                rng::derive_seed(config.seed, 2),
            )?),
            None => None,
        };
        Ok(Model { config, params, primary, dyadic })
    }

    pub fn param_count(&self) -> usize {
        self.params.value_count()
    }

    fn check_window(&self, tape: &Tape, node: NodeId, rows: usize, what: &str) -> Result<()> {
        let shape = tape.value(node).shape();
        if shape != [rows, self.config.k] {
            return Err(Error::shape(
                "model_step",
                format!("{what} window must be [{rows}, {}], got {shape:?}", self.config.k),
            ));
        }
        Ok(())
    }

    /// Assemble the [pose_dim, k] monadic-prediction window the dyadic net
    /// consumes, appending the in-step prediction when configured to.
    fn monadic_window(
        &self,
        tape: &mut Tape,
        history: Option<NodeId>,
        current: NodeId,
    ) -> Result<NodeId> {
        let (p, k) = (self.config.pose_dim, self.config.k);
        let history = history.ok_or_else(|| {
            Error::shape("model_step", "two-net variant needs a monadic history window")
        })?;
        if self.config.include_current_monadic {
            self.check_window_cols(tape, history, p, k - 1)?;
            let mut cols = Vec::with_capacity(k);
            for t in 0..k - 1 {
                cols.push(tape.column(history, t)?);
            }
            cols.push(current);
            tape.stack_cols(&cols)
        } else {
            self.check_window_cols(tape, history, p, k)?;
            Ok(history)
        }
    }

    fn check_window_cols(
        &self,
        tape: &Tape,
        node: NodeId,
        rows: usize,
        cols: usize,
    ) -> Result<()> {
        let shape = tape.value(node).shape();
        if shape != [rows, cols] {
            return Err(Error::shape(
                "model_step",
                format!("monadic history must be [{rows}, {cols}], got {shape:?}"),
            ));
        }
        Ok(())
    }

    /// Monadic-net-only forward on the avatar windows. Two-net variants use
    /// this to fill the prediction-history buffer over a rollout's seed
    /// region with what the monadic net would actually have predicted.
    pub fn monadic_forward(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        avatar_audio: NodeId,
        avatar_pose: NodeId,
    ) -> Result<NodeId> {
        if !self.config.variant.is_two_net() {
            return Err(Error::shape("monadic_forward", "variant has no separate monadic net"));
        }
        self.check_window(tape, avatar_audio, self.config.audio_dim, "avatar audio")?;
        self.check_window(tape, avatar_pose, self.config.pose_dim, "avatar pose")?;
        let input = tape.concat_rows(&[avatar_audio, avatar_pose])?;
        self.primary.forward(tape, leases, input)
    }

    /// One prediction step on the tape. Window columns must already be
    /// ordered oldest to newest.
    pub fn step(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        windows: &StepWindows,
    ) -> Result<StepOutput> {
        let (a, p) = (self.config.audio_dim, self.config.pose_dim);
        match self.config.variant {
            Variant::AvatarAudioOnly => {
                self.check_window(tape, windows.avatar_audio, a, "avatar audio")?;
                let out = self.primary.forward(tape, leases, windows.avatar_audio)?;
                Ok(StepOutput { prediction: out, monadic: None, dyadic: None, delta: None })
            }
            Variant::HumanAudioOnly => {
                self.check_window(tape, windows.human_audio, a, "human audio")?;
                let out = self.primary.forward(tape, leases, windows.human_audio)?;
                Ok(StepOutput { prediction: out, monadic: None, dyadic: None, delta: None })
            }
            Variant::AvatarMonadicOnly => {
                self.check_window(tape, windows.avatar_audio, a, "avatar audio")?;
                self.check_window(tape, windows.avatar_pose, p, "avatar pose")?;
                let input = tape.concat_rows(&[windows.avatar_audio, windows.avatar_pose])?;
                let out = self.primary.forward(tape, leases, input)?;
                Ok(StepOutput { prediction: out, monadic: None, dyadic: None, delta: None })
            }
            Variant::HumanMonadicOnly => {
                self.check_window(tape, windows.human_audio, a, "human audio")?;
                self.check_window(tape, windows.human_pose, p, "human pose")?;
                let input = tape.concat_rows(&[windows.human_audio, windows.human_pose])?;
                let out = self.primary.forward(tape, leases, input)?;
                Ok(StepOutput { prediction: out, monadic: None, dyadic: None, delta: None })
            }
            Variant::EarlyFusion => {
                self.check_window(tape, windows.human_audio, a, "human audio")?;
                self.check_window(tape, windows.human_pose, p, "human pose")?;
                self.check_window(tape, windows.avatar_audio, a, "avatar audio")?;
                self.check_window(tape, windows.avatar_pose, p, "avatar pose")?;
                let input = tape.concat_rows(&[
                    windows.human_audio,
                    windows.human_pose,
                    windows.avatar_audio,
                    windows.avatar_pose,
                ])?;
                let out = self.primary.forward(tape, leases, input)?;
                Ok(StepOutput { prediction: out, monadic: None, dyadic: None, delta: None })
            }
            Variant::DramNoAttention | Variant::Dram => {
                self.check_window(tape, windows.avatar_audio, a, "avatar audio")?;
                self.check_window(tape, windows.avatar_pose, p, "avatar pose")?;
                self.check_window(tape, windows.human_audio, a, "human audio")?;
                self.check_window(tape, windows.human_pose, p, "human pose")?;
                let m_in = tape.concat_rows(&[windows.avatar_audio, windows.avatar_pose])?;
                let zm = self.primary.forward(tape, leases, m_in)?;
                let zm_window = self.monadic_window(tape, windows.monadic_history, zm)?;
                let d_in = tape.concat_rows(&[
                    windows.human_audio,
                    windows.human_pose,
                    zm_window,
                ])?;
                let dyadic = self.dyadic.as_ref().expect("two-net variant has a dyadic net");
                let zd = dyadic.forward(tape, leases, d_in)?;
                if self.config.variant == Variant::Dram {
                    let delta = residual_attention(tape, zm, zd, self.config.detach_attention)?;
                    let out = dram_combine(tape, zm, zd, delta)?;
                    Ok(StepOutput {
                        prediction: out,
                        monadic: Some(zm),
                        dyadic: Some(zd),
                        delta: Some(delta),
                    })
                } else {
                    Ok(StepOutput {
                        prediction: zd,
                        monadic: Some(zm),
                        dyadic: Some(zd),
                        delta: None,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{LstmHyper, Tcn, TcnHyper};
    use crate::tensor::{max_abs_diff, Tensor};

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            backbone: BackboneHyper::Tcn(TcnHyper {
                hidden: 6,
                kernel: 2,
                dilations: vec![1, 2],
                residual: true,
            }),
            audio_dim: 3,
            pose_dim: 8,
            k: 8,
            seed: 11,
            ..Default::default()
        }
    }

    fn window(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng::chacha(seed);
        let data = (0..rows * cols).map(|_| rng::normal(&mut rng) * 0.3).collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    fn run_step(model: &Model, seed: u64) -> (Tape, StepOutput) {
        let cfg = &model.config;
        let mut tape = Tape::new();
        let leases = tape.register_params(&model.params);
        let avatar_audio = tape.leaf(window(cfg.audio_dim, cfg.k, seed));
        let avatar_pose = tape.leaf(window(cfg.pose_dim, cfg.k, seed + 1));
        let human_audio = tape.leaf(window(cfg.audio_dim, cfg.k, seed + 2));
        let human_pose = tape.leaf(window(cfg.pose_dim, cfg.k, seed + 3));
        let hist_cols = if cfg.include_current_monadic { cfg.k - 1 } else { cfg.k };
        let monadic_history = Some(tape.leaf(window(cfg.pose_dim, hist_cols, seed + 4)));
        let out = model
            .step(
                &mut tape,
                &leases,
                &StepWindows { avatar_audio, avatar_pose, human_audio, human_pose, monadic_history },
            )
            .unwrap();
        (tape, out)
    }

    #[test]
    fn every_variant_steps_on_both_backbones() {
        for variant in ALL_VARIANTS {
            for backbone in [
                BackboneHyper::Tcn(TcnHyper { hidden: 5, kernel: 2, dilations: vec![1, 2], residual: true }),
                BackboneHyper::Lstm(LstmHyper { hidden: 5, layers: 1 }),
            ] {
                let model =
                    Model::new(ModelConfig { backbone, ..tiny_config(variant) }).unwrap();
                let (tape, out) = run_step(&model, 5);
                let pred = tape.value(out.prediction);
                assert_eq!(pred.shape(), &[8]);
                assert!(pred.all_finite());
                assert_eq!(out.delta.is_some(), variant == Variant::Dram);
                assert_eq!(out.monadic.is_some(), variant.is_two_net());
            }
        }
    }

    #[test]
    fn gate_stays_in_unit_interval() {
        let model = Model::new(tiny_config(Variant::Dram)).unwrap();
        for seed in 0..30 {
            let (tape, out) = run_step(&model, seed);
            for &d in tape.value(out.delta.unwrap()).data() {
                assert!((0.0..1.0).contains(&d), "gate value {d} out of range");
            }
        }
    }

    #[test]
    fn unit_disagreement_gates_at_known_tanh_value() {
        let mut tape = Tape::new();
        let zm = tape.leaf(Tensor::from_vec(&[3], vec![0.5, -2.0, 1.0]).unwrap());
        let zd = tape.leaf(Tensor::from_vec(&[3], vec![1.5, -3.0, 0.0]).unwrap());
        let delta = residual_attention(&mut tape, zm, zd, false).unwrap();
        for i in 0..3 {
            assert!(
                (tape.value(delta).at(i) - 0.7615941559557649).abs() < 1e-15,
                "component {i}"
            );
        }
    }

    #[test]
    fn agreement_passes_monadic_bits_through() {
        let mut tape = Tape::new();
        let vals = vec![0.25, -0.0, 1.5e-300, 7.125];
        let zm = tape.leaf(Tensor::from_vec(&[4], vals.clone()).unwrap());
        let zd = tape.leaf(Tensor::from_vec(&[4], vals.clone()).unwrap());
        let delta = residual_attention(&mut tape, zm, zd, false).unwrap();
        let out = dram_combine(&mut tape, zm, zd, delta).unwrap();
        for i in 0..4 {
            assert_eq!(tape.value(delta).at(i), 0.0);
            assert_eq!(tape.value(out).at(i).to_bits(), vals[i].to_bits());
        }
    }

    #[test]
    fn combine_matches_hand_mix() {
        let mut tape = Tape::new();
        let zm = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -4.0]).unwrap());
        let zd = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 2.0]).unwrap());
        let delta = residual_attention(&mut tape, zm, zd, false).unwrap();
        let out = dram_combine(&mut tape, zm, zd, delta).unwrap();
        for i in 0..2 {
            let (m, d) = (tape.value(zm).at(i), tape.value(zd).at(i));
            let g = ((d - m).abs()).tanh();
            let want = (1.0 - g) * m + g * d;
            assert!((tape.value(out).at(i) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_bound_holds_across_wide_value_pairs() {
        let mut rng = rng::chacha(40);
        let n = 10_000;
        let ms: Vec<f64> = (0..n).map(|_| rng::uniform_range(&mut rng, -10.0, 10.0)).collect();
        let ds: Vec<f64> = (0..n).map(|_| rng::uniform_range(&mut rng, -10.0, 10.0)).collect();
        let mut tape = Tape::new();
        let zm = tape.leaf(Tensor::from_vec(&[n], ms.clone()).unwrap());
        let zd = tape.leaf(Tensor::from_vec(&[n], ds).unwrap());
        let delta = residual_attention(&mut tape, zm, zd, false).unwrap();
        let out = dram_combine(&mut tape, zm, zd, delta).unwrap();
        for i in 0..n {
            let g = tape.value(delta).at(i);
            assert!((0.0..1.0).contains(&g), "pair {i}: gate {g}");
        }
        // equal inputs must reproduce the monadic side bit for bit
        let zd_eq = tape.leaf(Tensor::from_vec(&[n], ms.clone()).unwrap());
        let delta_eq = residual_attention(&mut tape, zm, zd_eq, false).unwrap();
        let out_eq = dram_combine(&mut tape, zm, zd_eq, delta_eq).unwrap();
        for i in 0..n {
            assert_eq!(tape.value(out_eq).at(i).to_bits(), ms[i].to_bits(), "pair {i}");
        }
        drop(out);
    }

    #[test]
    fn pull_toward_dyadic_grows_with_disagreement() {
        // |mix - monadic| = tanh(|d|) * |d| where d is the disagreement, so
        // the correction must be monotone in the disagreement magnitude
        let mut prev = -1.0;
        for i in 0..100 {
            let d = 5.0 * i as f64 / 99.0;
            let mut tape = Tape::new();
            let zm = tape.leaf(Tensor::from_vec(&[1], vec![0.25]).unwrap());
            let zd = tape.leaf(Tensor::from_vec(&[1], vec![0.25 + d]).unwrap());
            let delta = residual_attention(&mut tape, zm, zd, false).unwrap();
            let out = dram_combine(&mut tape, zm, zd, delta).unwrap();
            let pull = (tape.value(out).at(0) - 0.25).abs();
            assert!(
                pull >= prev,
                "correction shrank from {prev} to {pull} as disagreement grew to {d}"
            );
            prev = pull;
        }
    }

    #[test]
    fn dram_parameter_count_is_sum_of_both_nets() {
        let cfg = tiny_config(Variant::Dram);
        let model = Model::new(cfg.clone()).unwrap();
        let hyper = match &cfg.backbone {
            BackboneHyper::Tcn(h) => h.clone(),
            _ => unreachable!(),
        };
        let monadic = Tcn::analytic_param_count(cfg.audio_dim + cfg.pose_dim, cfg.pose_dim, &hyper);
        let dyadic =
            Tcn::analytic_param_count(cfg.audio_dim + 2 * cfg.pose_dim, cfg.pose_dim, &hyper);
        assert_eq!(model.param_count(), monadic + dyadic);
    }

    #[test]
    fn same_seed_same_prediction_bits() {
        let m1 = Model::new(tiny_config(Variant::Dram)).unwrap();
        let m2 = Model::new(tiny_config(Variant::Dram)).unwrap();
        let (t1, o1) = run_step(&m1, 77);
        let (t2, o2) = run_step(&m2, 77);
        for i in 0..8 {
            assert_eq!(
                t1.value(o1.prediction).at(i).to_bits(),
                t2.value(o2.prediction).at(i).to_bits()
            );
        }
    }

    #[test]
    fn strictly_prior_monadic_history_is_supported() {
        let cfg = ModelConfig { include_current_monadic: false, ..tiny_config(Variant::Dram) };
        let model = Model::new(cfg).unwrap();
        let (tape, out) = run_step(&model, 13);
        assert!(tape.value(out.prediction).all_finite());
    }

    #[test]
    fn detached_gate_keeps_identical_values() {
        let attached = Model::new(tiny_config(Variant::Dram)).unwrap();
        let detached =
            Model::new(ModelConfig { detach_attention: true, ..tiny_config(Variant::Dram) })
                .unwrap();
        let (ta, oa) = run_step(&attached, 21);
        let (td, od) = run_step(&detached, 21);
        assert_eq!(max_abs_diff(ta.value(oa.prediction), td.value(od.prediction)), 0.0);
    }

    #[test]
    fn gradients_reach_both_nets_through_shared_step() {
        let model = Model::new(tiny_config(Variant::Dram)).unwrap();
        let cfg = &model.config;
        let mut tape = Tape::new();
        let leases = tape.register_params(&model.params);
        let avatar_audio = tape.leaf(window(cfg.audio_dim, cfg.k, 1));
        let avatar_pose = tape.leaf(window(cfg.pose_dim, cfg.k, 2));
        let human_audio = tape.leaf(window(cfg.audio_dim, cfg.k, 3));
        let human_pose = tape.leaf(window(cfg.pose_dim, cfg.k, 4));
        let monadic_history = Some(tape.leaf(window(cfg.pose_dim, cfg.k - 1, 5)));
        let out = model
            .step(
                &mut tape,
                &leases,
                &StepWindows { avatar_audio, avatar_pose, human_audio, human_pose, monadic_history },
            )
            .unwrap();
        let target_vals = window(cfg.pose_dim, 1, 6).into_data();
        let target = tape.leaf(Tensor::from_vec(&[cfg.pose_dim], target_vals).unwrap());
        let loss = tape.mse_loss(out.prediction, target).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut model = model;
        tape.accumulate_param_grads(&grads, &leases, &mut model.params, 1.0);
        let monadic_nonzero = model
            .params
            .iter()
            .filter(|p| p.name.starts_with("monadic"))
            .any(|p| p.grad.data().iter().any(|&g| g != 0.0));
        let dyadic_nonzero = model
            .params
            .iter()
            .filter(|p| p.name.starts_with("dyadic"))
            .any(|p| p.grad.data().iter().any(|&g| g != 0.0));
        assert!(monadic_nonzero, "no gradient reached the monadic net");
        assert!(dyadic_nonzero, "no gradient reached the dyadic net");
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in ALL_VARIANTS {
            assert_eq!(Variant::parse(v.label()).unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
        assert!(Variant::parse("resnet").is_err());
        assert!(Variant::from_code(99).is_none());
    }
}
