//! Windowed scheduled-sampling training. Each sampled window runs the model
//! autoregressively for a fixed number of steps; at every step a coin
//! decides whether the pose history receives the ground-truth frame or the
//! model's own prediction node, so gradients flow through fed-back
//! predictions. The monadic-prediction history consumed by the dyadic net is
//! always the model's own (detached) output, primed honestly over the frames
//! before the window.

use crate::dataset::{DatasetSplit, DyadicDataset};
use crate::error::{Error, Result};
use crate::metrics::evaluate_poses;
use crate::model::{Model, StepWindows};
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::rng;
use crate::rollout::rollout;
use crate::skeleton::SkeletonTopology;
use crate::tape::{NodeId, ParamLeases, Tape};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

/// Linear teacher-forcing decay: `start` at epoch 0 falling to `end` at
/// `decay_epochs`, constant afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TfSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_epochs: usize,
}

impl TfSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        if self.decay_epochs == 0 || epoch >= self.decay_epochs {
            return self.end;
        }
        self.start + (self.end - self.start) * epoch as f64 / self.decay_epochs as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tf start", self.start), ("tf end", self.end)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Windows accumulated into one optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub tf: TfSchedule,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Autoregressive steps per training window.
    pub window_len: usize,
    pub windows_per_epoch: usize,
    /// Frame cap for per-epoch validation rollouts.
    pub val_horizon: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let epochs = 8;
        TrainerConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 8,
            epochs,
            tf: TfSchedule { start: 1.0, end: 0.0, decay_epochs: epochs / 2 },
            clip_norm: 5.0,
            window_len: 24,
            windows_per_epoch: 192,
            val_horizon: 1080,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 || self.windows_per_epoch < self.batch_size {
            return Err(Error::Config(format!(
                "need windows_per_epoch >= batch_size >= 1, got {} and {}",
                self.windows_per_epoch, self.batch_size
            )));
        }
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be >= 1".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be finite and >= 0, got {}",
                self.clip_norm
            )));
        }
        if self.val_horizon == 0 {
            return Err(Error::Config("val_horizon must be >= 1".into()));
        }
        self.tf.validate()?;
        // the learning-rate domain check lives with the optimizer
        Optimizer::new(self.optimizer, self.lr).map(|_| ())
    }
}

/// One training window: predict `len` consecutive frames starting at
/// `start`, feeding back ground truth or the prediction node per the coin.
pub struct WindowSpec<'a> {
    pub avatar_audio: &'a Tensor,
    pub avatar_pose: &'a Tensor,
    pub human_audio: &'a Tensor,
    pub human_pose: &'a Tensor,
    /// First predicted frame; must leave k frames of history before it.
    pub start: usize,
    pub len: usize,
    pub tf_rate: f64,
    /// Pose column standing in for frames before the sequence begins.
    pub prehistory_pose: &'a [f64],
}

/// History window of `stream` covering frames [end-k, end), with columns
/// before frame 0 replaced by `pad`.
fn padded_window(stream: &Tensor, end: usize, k: usize, pad: &[f64]) -> Tensor {
    let mut w = Tensor::zeros(&[stream.rows(), k]);
    for c in 0..k {
        let f = end as i64 - k as i64 + c as i64;
        if f < 0 {
            w.set_col(c, pad);
        } else {
            w.set_col(c, &stream.col(f as usize));
        }
    }
    w
}

/// Build one window's loss subgraph on the tape and return the loss node:
/// squared error summed over pose dimensions, averaged over the window's
/// frames. The caller owns marks, backward, and truncation.
pub fn run_window(
    model: &Model,
    tape: &mut Tape,
    leases: &ParamLeases,
    spec: &WindowSpec,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let cfg = &model.config;
    let (a, p, k) = (cfg.audio_dim, cfg.pose_dim, cfg.k);
    let frames = spec.avatar_pose.cols();
    if spec.start < k {
        return Err(Error::Data(format!(
            "window start {} leaves less than k = {k} frames of history",
            spec.start
        )));
    }
    if spec.len == 0 || spec.start + spec.len > frames {
        return Err(Error::Data(format!(
            "window [{}, {}) does not fit {frames} frames",
            spec.start,
            spec.start + spec.len
        )));
    }
    if spec.prehistory_pose.len() != p {
        return Err(Error::shape(
            "run_window",
            format!("prehistory pose has {} entries, want {p}", spec.prehistory_pose.len()),
        ));
    }
    for (name, stream, rows) in [
        ("avatar audio", spec.avatar_audio, a),
        ("avatar pose", spec.avatar_pose, p),
        ("human audio", spec.human_audio, a),
        ("human pose", spec.human_pose, p),
    ] {
        if stream.rows() != rows || stream.cols() != frames {
            return Err(Error::shape(
                "run_window",
                format!("{name} must be [{rows}, {frames}], got {:?}", stream.shape()),
            ));
        }
    }

    let two_net = cfg.variant.is_two_net();
    let audio_pad = vec![0.0; a];

    // pose history enters as per-column nodes so predictions can replace
    // ground truth; the deque slides one column per step
    let mut pose_cols: VecDeque<NodeId> = (0..k)
        .map(|c| {
            let f = spec.start - k + c;
            tape.leaf(Tensor::from_vec(&[p], spec.avatar_pose.col(f)).expect("column"))
        })
        .collect();

    // honest monadic history: what the monadic net itself would have
    // predicted for each pre-window frame, detached
    let zm_len = if cfg.include_current_monadic { k - 1 } else { k };
    let mut zm_cols: VecDeque<NodeId> = VecDeque::new();
    if two_net {
        for i in 0..zm_len {
            // frame this entry predicts, oldest first
            let s = spec.start as i64 - zm_len as i64 + i as i64;
            let value = if s <= 0 {
                Tensor::from_vec(&[p], spec.prehistory_pose.to_vec())?
            } else {
                let s = s as usize;
                let snap = tape.mark();
                let xa = tape.leaf(padded_window(spec.avatar_audio, s, k, &audio_pad));
                let yp =
                    tape.leaf(padded_window(spec.avatar_pose, s, k, spec.prehistory_pose));
                let node = model.monadic_forward(tape, leases, xa, yp)?;
                let v = tape.value(node).clone();
                tape.truncate(snap);
                v
            };
            zm_cols.push_back(tape.leaf(value));
        }
    }

    let mut preds = Vec::with_capacity(spec.len);
    for i in 0..spec.len {
        let t = spec.start + i;
        let pose_ids: Vec<NodeId> = pose_cols.iter().copied().collect();
        let windows = StepWindows {
            avatar_audio: tape.leaf(padded_window(spec.avatar_audio, t, k, &audio_pad)),
            avatar_pose: tape.stack_cols(&pose_ids)?,
            human_audio: tape.leaf(padded_window(spec.human_audio, t, k, &audio_pad)),
            human_pose: tape.leaf(padded_window(spec.human_pose, t, k, spec.prehistory_pose)),
            monadic_history: if two_net {
                let ids: Vec<NodeId> = zm_cols.iter().copied().collect();
                Some(tape.stack_cols(&ids)?)
            } else {
                None
            },
        };
        let out = model.step(tape, leases, &windows)?;
        preds.push(out.prediction);

        // the coin: ground truth below the rate, else the prediction node,
        // through which gradients keep flowing
        let feedback = if rng::uniform(rng) < spec.tf_rate {
            tape.leaf(Tensor::from_vec(&[p], spec.avatar_pose.col(t))?)
        } else {
            out.prediction
        };
        pose_cols.pop_front();
        pose_cols.push_back(feedback);

        if two_net {
            let zm = out.monadic.expect("two-net step yields a monadic output");
            let detached = tape.value(zm).clone();
            let node = tape.leaf(detached);
            zm_cols.pop_front();
            zm_cols.push_back(node);
        }
    }

    let pred_mat = tape.stack_cols(&preds)?;
    let target = tape.leaf(spec.avatar_pose.cols_slice(spec.start, spec.len));
    tape.mse_loss(pred_mat, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub tf_rate: f64,
    /// Mean window loss over the epoch.
    pub train_loss: f64,
    /// Mean validation score: position error when a topology is given,
    /// otherwise per-frame squared error on raw outputs.
    pub val_score: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The model with its best-validation parameters restored.
    pub model: Model,
    pub curves: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng::uniform(rng) * n as f64) as usize).min(n - 1)
}

/// Mean closed-loop validation score over the given sequences: each rollout
/// seeds with the first k ground-truth frames and predicts up to
/// `val_horizon` frames.
pub fn validation_score(
    model: &Model,
    dataset: &DyadicDataset,
    indices: &[usize],
    val_horizon: usize,
    topo: Option<&SkeletonTopology>,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data("validation needs at least one sequence".into()));
    }
    let k = model.config.k;
    let quat_joints = topo.map(|t| t.joint_count());
    let mut total = 0.0;
    for &idx in indices {
        let seq = dataset.sequences.get(idx).ok_or_else(|| {
            Error::Data(format!("sequence index {idx} out of range"))
        })?;
        let frames = seq.frames();
        if frames <= k {
            return Err(Error::Data(format!(
                "sequence {idx} has {frames} frames, need more than k = {k}"
            )));
        }
        let horizon = (frames - k).min(val_horizon);
        let seed = seq.avatar_pose.cols_slice(0, k);
        let out = rollout(
            model,
            &seq.avatar_audio,
            &seq.human_audio,
            &seq.human_pose,
            &seed,
            horizon,
            quat_joints,
            false,
        )?;
        let truth = seq.avatar_pose.cols_slice(k, horizon);
        total += match topo {
            Some(topo) => evaluate_poses(&out.poses, &truth, topo)?.ape_avg,
            None => {
                let sq: f64 = out
                    .raw
                    .data()
                    .iter()
                    .zip(truth.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sq / horizon as f64
            }
        };
    }
    Ok(total / indices.len() as f64)
}

/// Train on the split's training sequences, score each epoch on its
/// validation sequences, and return the model restored to its best epoch.
pub fn train(
    mut model: Model,
    dataset: &DyadicDataset,
    split: &DatasetSplit,
    trainer: &TrainerConfig,
    topo: Option<&SkeletonTopology>,
) -> Result<TrainOutcome> {
    trainer.validate()?;
    dataset.validate()?;
    let cfg = model.config.clone();
    let (k, l_win) = (cfg.k, trainer.window_len);
    if dataset.audio_dim != cfg.audio_dim || dataset.pose_dim != cfg.pose_dim {
        return Err(Error::Config(format!(
            "dataset is {}/{} dimensional, model wants {}/{}",
            dataset.audio_dim, dataset.pose_dim, cfg.audio_dim, cfg.pose_dim
        )));
    }
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    for &idx in split.train.iter().chain(&split.validation) {
        let seq = dataset
            .sequences
            .get(idx)
            .ok_or_else(|| Error::Data(format!("sequence index {idx} out of range")))?;
        if seq.frames() < k + l_win {
            return Err(Error::Data(format!(
                "sequence {idx} has {} frames; windows need at least {}",
                seq.frames(),
                k + l_win
            )));
        }
    }
    if let Some(topo) = topo {
        if topo.pose_dim() != cfg.pose_dim {
            return Err(Error::Config(format!(
                "topology pose dimension {} does not match the model's {}",
                topo.pose_dim(),
                cfg.pose_dim
            )));
        }
    }

    let prehistory: Vec<f64> = match topo {
        Some(topo) => {
            let mut col = vec![0.0; cfg.pose_dim];
            for j in 0..topo.joint_count() {
                col[4 * j] = 1.0;
            }
            col
        }
        None => vec![0.0; cfg.pose_dim],
    };

    let mut optimizer = Optimizer::new(trainer.optimizer, trainer.lr)?;
    let mut rng = rng::chacha(rng::derive_seed(trainer.seed, 0x7121));
    let steps_per_epoch = trainer.windows_per_epoch / trainer.batch_size;
    let scale = 1.0 / trainer.batch_size as f64;

    let mut curves = Vec::with_capacity(trainer.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..trainer.epochs {
        let tf_rate = trainer.tf.rate(epoch);
        let mut loss_sum = 0.0;
        for step in 0..steps_per_epoch {
            // parameters moved last step, so leases must be re-registered on
            // a fresh tape
            let mut tape = Tape::new();
            let leases = tape.register_params(&model.params);
            let base = tape.mark();
            model.params.zero_grads();
            for _ in 0..trainer.batch_size {
                let seq = &dataset.sequences[split.train[pick(&mut rng, split.train.len())]];
                let latest = seq.frames() - l_win;
                let start = k + pick(&mut rng, latest - k + 1);
                let spec = WindowSpec {
                    avatar_audio: &seq.avatar_audio,
                    avatar_pose: &seq.avatar_pose,
                    human_audio: &seq.human_audio,
                    human_pose: &seq.human_pose,
                    start,
                    len: l_win,
                    tf_rate,
                    prehistory_pose: &prehistory,
                };
                let loss = run_window(&model, &mut tape, &leases, &spec, &mut rng)?;
                let loss_value = tape.value(loss).data()[0];
                if !loss_value.is_finite() {
                    return Err(Error::Diverged { epoch, step });
                }
                loss_sum += loss_value;
                let grads = tape.backward(loss)?;
                tape.accumulate_param_grads(&grads, &leases, &mut model.params, scale);
                tape.truncate(base);
            }
            clip_global_norm(&mut model.params, trainer.clip_norm);
            optimizer.step(&mut model.params)?;
        }
        let train_loss = loss_sum / (steps_per_epoch * trainer.batch_size) as f64;

        let val_score = if split.validation.is_empty() {
            train_loss
        } else {
            validation_score(&model, dataset, &split.validation, trainer.val_horizon, topo)?
        };
        if !val_score.is_finite() {
            return Err(Error::Diverged { epoch, step: steps_per_epoch });
        }
        curves.push(EpochStats { epoch, tf_rate, train_loss, val_score });
        if best.as_ref().is_none_or(|(_, b, _)| val_score < *b) {
            best = Some((epoch, val_score, model.params.snapshot()));
        }
    }

    let (best_epoch, best_val, snapshot) = best.expect("at least one epoch ran");
    model.params.restore(&snapshot);
    Ok(TrainOutcome { model, curves, best_epoch, best_val })
}
