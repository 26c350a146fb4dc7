//! Closed-loop autoregressive inference. A sliding window of the last k
//! frames is kept per stream; the avatar's own pose entries switch from
//! ground truth to fed-back predictions the moment the state is sealed, and
//! stay that way — the state enforces that ground truth can never leak into
//! the pose buffer after sealing.

use crate::error::{Error, Result};
use crate::metrics::AttentionTrace;
use crate::model::{Model, StepWindows};
use crate::pose::PoseVector;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Sliding history buffers for one rollout. Columns are ordered oldest to
/// newest; before any frame is pushed they hold pre-history (identity poses
/// and silent audio).
#[derive(Debug, Clone)]
pub struct RolloutState {
    k: usize,
    avatar_audio: Tensor,
    avatar_pose: Tensor,
    human_audio: Tensor,
    human_pose: Tensor,
    /// Detached monadic predictions, aligned frame-for-frame with the pose
    /// buffer.
    monadic: Tensor,
    prehistory_pose: Vec<f64>,
    frames_pushed: usize,
    sealed: bool,
}

fn shift_push(buf: &mut Tensor, col: &[f64]) {
    let (rows, k) = (buf.rows(), buf.cols());
    debug_assert_eq!(col.len(), rows);
    let data = buf.data_mut();
    for r in 0..rows {
        let row = &mut data[r * k..(r + 1) * k];
        row.copy_within(1.., 0);
        row[k - 1] = col[r];
    }
}

impl RolloutState {
    /// `quat_joints: Some(j)` fills pose pre-history with identity
    /// quaternions for `j` joints; `None` uses zeros.
    pub fn new(
        audio_dim: usize,
        pose_dim: usize,
        k: usize,
        quat_joints: Option<usize>,
    ) -> Result<RolloutState> {
        if audio_dim == 0 || pose_dim == 0 || k == 0 {
            return Err(Error::Config("rollout buffers need positive dimensions".into()));
        }
        let prehistory_pose = match quat_joints {
            Some(j) => {
                if 4 * j != pose_dim {
                    return Err(Error::Config(format!(
                        "{j} quaternion joints need pose_dim {}, got {pose_dim}",
                        4 * j
                    )));
                }
                let mut col = vec![0.0; pose_dim];
                for q in 0..j {
                    col[4 * q] = 1.0;
                }
                col
            }
            None => vec![0.0; pose_dim],
        };
        let mut pose_buf = Tensor::zeros(&[pose_dim, k]);
        for t in 0..k {
            pose_buf.set_col(t, &prehistory_pose);
        }
        Ok(RolloutState {
            k,
            avatar_audio: Tensor::zeros(&[audio_dim, k]),
            avatar_pose: pose_buf.clone(),
            human_audio: Tensor::zeros(&[audio_dim, k]),
            human_pose: pose_buf.clone(),
            monadic: pose_buf,
            prehistory_pose,
            frames_pushed: 0,
        sealed: false,
        })
    }

    pub fn frames_pushed(&self) -> usize {
        self.frames_pushed
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Push one observed frame during the seed region. `monadic` carries the
    /// primed (detached) monadic prediction for this frame; `None` keeps the
    /// pre-history column, which is what the very first frame gets.
    pub fn push_seed(
        &mut self,
        avatar_audio: &[f64],
        avatar_pose_gt: &[f64],
        human_audio: &[f64],
        human_pose: &[f64],
        monadic: Option<&[f64]>,
    ) -> Result<()> {
        if self.sealed {
            return Err(Error::Data(
                "state is sealed: ground-truth avatar poses cannot enter the buffer".into(),
            ));
        }
        self.check_cols(avatar_audio, avatar_pose_gt, human_audio, human_pose, monadic)?;
        shift_push(&mut self.avatar_audio, avatar_audio);
        shift_push(&mut self.avatar_pose, avatar_pose_gt);
        shift_push(&mut self.human_audio, human_audio);
        shift_push(&mut self.human_pose, human_pose);
        let pre = self.prehistory_pose.clone();
        shift_push(&mut self.monadic, monadic.unwrap_or(&pre));
        self.frames_pushed += 1;
        Ok(())
    }

    /// After sealing only predictions may enter the avatar pose buffer.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Push one predicted frame; the human streams and the avatar's audio
    /// stay observed.
    pub fn push_predicted(
        &mut self,
        avatar_audio: &[f64],
        predicted_pose: &[f64],
        human_audio: &[f64],
        human_pose: &[f64],
        monadic: Option<&[f64]>,
    ) -> Result<()> {
        if !self.sealed {
            return Err(Error::Data("seal the state before pushing predictions".into()));
        }
        self.check_cols(avatar_audio, predicted_pose, human_audio, human_pose, monadic)?;
        shift_push(&mut self.avatar_audio, avatar_audio);
        shift_push(&mut self.avatar_pose, predicted_pose);
        shift_push(&mut self.human_audio, human_audio);
        shift_push(&mut self.human_pose, human_pose);
        let fallback = predicted_pose.to_vec();
        shift_push(&mut self.monadic, monadic.unwrap_or(&fallback));
        self.frames_pushed += 1;
        Ok(())
    }

    fn check_cols(
        &self,
        x: &[f64],
        y: &[f64],
        xh: &[f64],
        yh: &[f64],
        zm: Option<&[f64]>,
    ) -> Result<()> {
        let (a, p) = (self.avatar_audio.rows(), self.avatar_pose.rows());
        if x.len() != a || xh.len() != a || y.len() != p || yh.len() != p {
            return Err(Error::shape(
                "rollout_push",
                format!(
                    "expected audio columns of {a} and pose columns of {p}, got {}/{}/{}/{}",
                    x.len(),
                    xh.len(),
                    y.len(),
                    yh.len()
                ),
            ));
        }
        if let Some(zm) = zm {
            if zm.len() != p {
                return Err(Error::shape(
                    "rollout_push",
                    format!("monadic column must have {p} entries, got {}", zm.len()),
                ));
            }
        }
        Ok(())
    }

    /// Avatar-side windows as tape leaves, for priming the monadic buffer.
    pub fn avatar_windows(&self, tape: &mut Tape) -> (NodeId, NodeId) {
        (tape.leaf(self.avatar_audio.clone()), tape.leaf(self.avatar_pose.clone()))
    }

    /// All step windows as tape leaves. The monadic-history window drops the
    /// oldest column when the model appends its in-step prediction.
    pub fn windows(
        &self,
        tape: &mut Tape,
        include_current_monadic: bool,
        two_net: bool,
    ) -> Result<StepWindows> {
        let monadic_history = if two_net {
            let t = if include_current_monadic {
                self.monadic.cols_slice(1, self.k - 1)
            } else {
                self.monadic.clone()
            };
            Some(tape.leaf(t))
        } else {
            None
        };
        Ok(StepWindows {
            avatar_audio: tape.leaf(self.avatar_audio.clone()),
            avatar_pose: tape.leaf(self.avatar_pose.clone()),
            human_audio: tape.leaf(self.human_audio.clone()),
            human_pose: tape.leaf(self.human_pose.clone()),
            monadic_history,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// Predictions, [pose_dim, horizon]; per-joint renormalized when the
    /// stream is quaternions.
    pub poses: Tensor,
    /// The raw network outputs before renormalization.
    pub raw: Tensor,
    /// Per-frame attention gate values, when requested and the model has a
    /// gate.
    pub trace: Option<AttentionTrace>,
}

/// Run the model closed-loop. The first `seed` columns of the observed
/// streams are pushed with ground-truth avatar poses; the remaining
/// `horizon` frames feed predictions back. The observed streams must cover
/// `seed_pose.cols() + horizon` frames.
pub fn rollout(
    model: &Model,
    avatar_audio: &Tensor,
    human_audio: &Tensor,
    human_pose: &Tensor,
    seed_pose: &Tensor,
    horizon: usize,
    quat_joints: Option<usize>,
    want_trace: bool,
) -> Result<RolloutOutput> {
    let cfg = &model.config;
    let (a, p, k) = (cfg.audio_dim, cfg.pose_dim, cfg.k);
    let seed = seed_pose.cols();
    let total = seed + horizon;
    if seed_pose.rows() != p {
        return Err(Error::shape(
            "rollout",
            format!("seed pose has {} rows, model wants {p}", seed_pose.rows()),
        ));
    }
    if seed == 0 {
        return Err(Error::Data("rollout needs at least one seed frame".into()));
    }
    for (name, stream, rows) in [
        ("avatar audio", avatar_audio, a),
        ("human audio", human_audio, a),
        ("human pose", human_pose, p),
    ] {
        if stream.rows() != rows {
            return Err(Error::shape(
                "rollout",
                format!("{name} has {} rows, model wants {rows}", stream.rows()),
            ));
        }
        if stream.cols() < total {
            return Err(Error::Data(format!(
                "{name} covers {} frames but the rollout needs {total}",
                stream.cols()
            )));
        }
    }

    let mut state = RolloutState::new(a, p, k, quat_joints)?;
    let mut tape = Tape::new();
    let leases = tape.register_params(&model.params);
    let base = tape.mark();
    let two_net = cfg.variant.is_two_net();

    for t in 0..seed {
        let zm = if two_net && t >= 1 {
            let (xa, yp) = state.avatar_windows(&mut tape);
            let node = model.monadic_forward(&mut tape, &leases, xa, yp)?;
            let v = tape.value(node).data().to_vec();
            tape.truncate(base);
            Some(v)
        } else {
            None
        };
        state.push_seed(
            &avatar_audio.col(t),
            &seed_pose.col(t),
            &human_audio.col(t),
            &human_pose.col(t),
            zm.as_deref(),
        )?;
    }
    state.seal();

    let mut poses = Tensor::zeros(&[p, horizon]);
    let mut raw = Tensor::zeros(&[p, horizon]);
    let mut trace = want_trace.then(AttentionTrace::default);
    for i in 0..horizon {
        let t = seed + i;
        let windows = state.windows(&mut tape, cfg.include_current_monadic, two_net)?;
        let out = model.step(&mut tape, &leases, &windows)?;
        let pred_raw = tape.value(out.prediction).data().to_vec();
        let zm = out.monadic.map(|id| tape.value(id).data().to_vec());
        let delta = out.delta.map(|id| tape.value(id).data().to_vec());
        tape.truncate(base);

        if !pred_raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "rollout produced a non-finite prediction at frame {t}"
            )));
        }
        let pose_col = match quat_joints {
            Some(_) => PoseVector::from_flat(&pred_raw)?.renormalized()?.to_flat(),
            None => pred_raw.clone(),
        };
        raw.set_col(i, &pred_raw);
        poses.set_col(i, &pose_col);
        if let (Some(trace), Some(delta)) = (trace.as_mut(), delta) {
            trace.push(t, delta);
        }
        state.push_predicted(
            &avatar_audio.col(t),
            &pose_col,
            &human_audio.col(t),
            &human_pose.col(t),
            zm.as_deref(),
        )?;
    }
    Ok(RolloutOutput { poses, raw, trace })
}
