//! TOML run-configuration schema. Every field is optional in the file;
//! `resolve` applies defaults and produces both the core-crate configs and a
//! fully-populated snapshot whose serialization round-trips, so a manifest
//! embedding the snapshot can re-drive the same run.

use dram_core::backbone::{BackboneHyper, LstmHyper, TcnHyper};
use dram_core::dataset::EventKind;
use dram_core::metrics::PCK_SIGMAS;
use dram_core::model::{ModelConfig, Variant};
use dram_core::optim::OptimizerKind;
use dram_core::skeleton::SkeletonTopology;
use dram_core::synth::SynthConfig;
use dram_core::train::{TfSchedule, TrainerConfig};
use dram_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: Option<DatasetSection>,
    pub model: Option<ModelSection>,
    pub trainer: Option<TrainerSection>,
    pub eval: Option<EvalSection>,
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset file; mutually exclusive with inline synthesis.
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSection>,
    /// Skeleton definition file; the built-in upper body when absent.
    pub topology: Option<PathBuf>,
    pub split: Option<SplitSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub sequences: Option<usize>,
    pub duration: Option<usize>,
    pub audio_dim: Option<usize>,
    pub g_intra: Option<f64>,
    pub g_inter: Option<f64>,
    pub event_rate: Option<f64>,
    pub event_kinds: Option<Vec<String>>,
    pub reaction_lag: Option<usize>,
    pub noise_scale: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: Option<[f64; 3]>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Option<String>,
    /// "tcn" or "lstm".
    pub backbone: Option<String>,
    pub audio_dim: Option<usize>,
    pub pose_dim: Option<usize>,
    pub k: Option<usize>,
    pub include_current_monadic: Option<bool>,
    pub detach_attention: Option<bool>,
    pub seed: Option<u64>,
    pub tcn: Option<TcnSection>,
    pub lstm: Option<LstmSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcnSection {
    pub hidden: Option<usize>,
    pub kernel: Option<usize>,
    pub dilations: Option<Vec<usize>>,
    pub residual: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmSection {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub optimizer: Option<String>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub clip_norm: Option<f64>,
    pub window_len: Option<usize>,
    pub windows_per_epoch: Option<usize>,
    pub val_horizon: Option<usize>,
    pub seed: Option<u64>,
    pub tf: Option<TfSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfSection {
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub decay_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Model checkpoint to evaluate (required by the eval command).
    pub checkpoint: Option<PathBuf>,
    pub sigmas: Option<Vec<f64>>,
    /// Rollout length cap per sequence.
    pub horizon: Option<usize>,
    /// Which split part to evaluate: "train", "validation", or "test".
    pub split: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub variants: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
}

/// Where a command's dataset comes from.
#[derive(Debug, Clone)]
pub enum DatasetPlan {
    Load(PathBuf),
    Synth { cfg: SynthConfig, sequences: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl SplitPart {
    fn parse(s: &str) -> Result<SplitPart> {
        match s {
            "train" => Ok(SplitPart::Train),
            "validation" => Ok(SplitPart::Validation),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Config(format!(
                "eval split must be train, validation, or test, got {other:?}"
            ))),
        }
    }
}

/// Everything a command needs, after defaults: core configs plus the
/// fully-populated snapshot.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub snapshot: RunConfig,
    pub dataset: Option<DatasetPlan>,
    pub topology: SkeletonTopology,
    pub topology_path: Option<PathBuf>,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub model: Option<ModelConfig>,
    pub trainer: Option<TrainerConfig>,
    pub eval_checkpoint: Option<PathBuf>,
    pub eval_sigmas: Vec<f64>,
    pub eval_horizon: usize,
    pub eval_part: SplitPart,
    pub exp_variants: Vec<Variant>,
    pub exp_seeds: Vec<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// Apply defaults and cross-validate. `seed_override` is the --seed flag,
    /// which wins over the file's global seed.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Resolved> {
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let mut snap = self.clone();
        snap.seed = Some(seed);

        // dataset
        let ds_in = self.dataset.clone().unwrap_or_default();
        let topology = match &ds_in.topology {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read topology {}: {e}", p.display()))
                })?;
                SkeletonTopology::parse(&text)?
            }
            None => SkeletonTopology::default_upper_body(),
        };
        let split_in = ds_in.split.clone().unwrap_or_default();
        let split_ratios = split_in.ratios.unwrap_or([0.8, 0.1, 0.1]);
        let split_seed = split_in.seed.unwrap_or(seed);

        let dataset = match (&ds_in.path, &ds_in.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "dataset gives both a path and an inline synth section; pick one".into(),
                ))
            }
            (Some(p), None) => {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "dataset path {} does not exist",
                        p.display()
                    )));
                }
                Some(DatasetPlan::Load(p.clone()))
            }
            (None, Some(s)) => {
                let kinds = match &s.event_kinds {
                    Some(names) => names
                        .iter()
                        .map(|n| EventKind::parse(n))
                        .collect::<Result<Vec<_>>>()?,
                    None => dram_core::dataset::ALL_EVENT_KINDS.to_vec(),
                };
                let defaults = SynthConfig::default();
                let cfg = SynthConfig {
                    duration: s.duration.unwrap_or(defaults.duration),
                    audio_dim: s.audio_dim.unwrap_or(defaults.audio_dim),
                    topology: topology.clone(),
                    g_intra: s.g_intra.unwrap_or(defaults.g_intra),
                    g_inter: s.g_inter.unwrap_or(defaults.g_inter),
                    event_rate: s.event_rate.unwrap_or(defaults.event_rate),
                    event_kinds: kinds,
                    reaction_lag: s.reaction_lag.unwrap_or(defaults.reaction_lag),
                    noise_scale: s.noise_scale.unwrap_or(defaults.noise_scale),
                    seed: s.seed.unwrap_or(seed),
                };
                cfg.validate()?;
                let sequences = s.sequences.unwrap_or(30);
                if sequences == 0 {
                    return Err(Error::Config("synth needs at least one sequence".into()));
                }
                Some(DatasetPlan::Synth { cfg, sequences })
            }
            (None, None) => None,
        };
        if let Some(DatasetPlan::Synth { cfg, sequences }) = &dataset {
            let s = snap.dataset.get_or_insert_with(Default::default);
            let sy = s.synth.get_or_insert_with(Default::default);
            sy.sequences = Some(*sequences);
            sy.duration = Some(cfg.duration);
            sy.audio_dim = Some(cfg.audio_dim);
            sy.g_intra = Some(cfg.g_intra);
            sy.g_inter = Some(cfg.g_inter);
            sy.event_rate = Some(cfg.event_rate);
            sy.event_kinds =
                Some(cfg.event_kinds.iter().map(|k| k.label().to_string()).collect());
            sy.reaction_lag = Some(cfg.reaction_lag);
            sy.noise_scale = Some(cfg.noise_scale);
            sy.seed = Some(cfg.seed);
        }
        if dataset.is_some() {
            let s = snap.dataset.get_or_insert_with(Default::default);
            let sp = s.split.get_or_insert_with(Default::default);
            sp.ratios = Some(split_ratios);
            sp.seed = Some(split_seed);
        }

        // model
        let model = match &self.model {
            Some(m) => {
                let defaults = ModelConfig::default();
                let variant = match &m.variant {
                    Some(v) => Variant::parse(v)?,
                    None => defaults.variant,
                };
                let kind = m.backbone.as_deref().unwrap_or("tcn");
                let backbone = match kind {
                    "tcn" => {
                        let t = m.tcn.clone().unwrap_or_default();
                        let d = TcnHyper::default();
                        BackboneHyper::Tcn(TcnHyper {
                            hidden: t.hidden.unwrap_or(d.hidden),
                            kernel: t.kernel.unwrap_or(d.kernel),
                            dilations: t.dilations.unwrap_or(d.dilations),
                            residual: t.residual.unwrap_or(d.residual),
                        })
                    }
                    "lstm" => {
                        let l = m.lstm.clone().unwrap_or_default();
                        let d = LstmHyper::default();
                        BackboneHyper::Lstm(LstmHyper {
                            hidden: l.hidden.unwrap_or(d.hidden),
                            layers: l.layers.unwrap_or(d.layers),
                        })
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "backbone must be tcn or lstm, got {other:?}"
                        )))
                    }
                };
                let cfg = ModelConfig {
                    variant,
                    backbone,
                    audio_dim: m.audio_dim.unwrap_or(defaults.audio_dim),
                    pose_dim: m.pose_dim.unwrap_or(defaults.pose_dim),
                    k: m.k.unwrap_or(defaults.k),
                    include_current_monadic: m
                        .include_current_monadic
                        .unwrap_or(defaults.include_current_monadic),
                    detach_attention: m.detach_attention.unwrap_or(defaults.detach_attention),
                    seed: m.seed.unwrap_or(seed),
                };
                cfg.validate()?;
                Some(cfg)
            }
            None => None,
        };
        if let Some(cfg) = &model {
            let m = snap.model.get_or_insert_with(Default::default);
            m.variant = Some(cfg.variant.label().to_string());
            m.backbone = Some(cfg.backbone.kind_label().to_string());
            m.audio_dim = Some(cfg.audio_dim);
            m.pose_dim = Some(cfg.pose_dim);
            m.k = Some(cfg.k);
            m.include_current_monadic = Some(cfg.include_current_monadic);
            m.detach_attention = Some(cfg.detach_attention);
            m.seed = Some(cfg.seed);
            match &cfg.backbone {
                BackboneHyper::Tcn(t) => {
                    m.tcn = Some(TcnSection {
                        hidden: Some(t.hidden),
                        kernel: Some(t.kernel),
                        dilations: Some(t.dilations.clone()),
                        residual: Some(t.residual),
                    });
                    m.lstm = None;
                }
                BackboneHyper::Lstm(l) => {
                    m.lstm =
                        Some(LstmSection { hidden: Some(l.hidden), layers: Some(l.layers) });
                    m.tcn = None;
                }
            }
        }

        // trainer
        let trainer = match &self.trainer {
            Some(t) => {
                let d = TrainerConfig::default();
                let epochs = t.epochs.unwrap_or(d.epochs);
                let tf_in = t.tf.clone().unwrap_or_default();
                let cfg = TrainerConfig {
                    optimizer: match &t.optimizer {
                        Some(o) => OptimizerKind::parse(o)?,
                        None => d.optimizer,
                    },
                    lr: t.lr.unwrap_or(d.lr),
                    batch_size: t.batch_size.unwrap_or(d.batch_size),
                    epochs,
                    tf: TfSchedule {
                        start: tf_in.start.unwrap_or(1.0),
                        end: tf_in.end.unwrap_or(0.0),
                        decay_epochs: tf_in.decay_epochs.unwrap_or(epochs / 2),
                    },
                    clip_norm: t.clip_norm.unwrap_or(d.clip_norm),
                    window_len: t.window_len.unwrap_or(d.window_len),
                    windows_per_epoch: t.windows_per_epoch.unwrap_or(d.windows_per_epoch),
                    val_horizon: t.val_horizon.unwrap_or(d.val_horizon),
                    seed: t.seed.unwrap_or(seed),
                };
                cfg.validate()?;
                Some(cfg)
            }
            None => None,
        };
        if let Some(cfg) = &trainer {
            let t = snap.trainer.get_or_insert_with(Default::default);
            t.optimizer = Some(cfg.optimizer.label().to_string());
            t.lr = Some(cfg.lr);
            t.batch_size = Some(cfg.batch_size);
            t.epochs = Some(cfg.epochs);
            t.clip_norm = Some(cfg.clip_norm);
            t.window_len = Some(cfg.window_len);
            t.windows_per_epoch = Some(cfg.windows_per_epoch);
            t.val_horizon = Some(cfg.val_horizon);
            t.seed = Some(cfg.seed);
            t.tf = Some(TfSection {
                start: Some(cfg.tf.start),
                end: Some(cfg.tf.end),
                decay_epochs: Some(cfg.tf.decay_epochs),
            });
        }

        // eval
        let eval_in = self.eval.clone().unwrap_or_default();
        let eval_sigmas = eval_in.sigmas.clone().unwrap_or_else(|| PCK_SIGMAS.to_vec());
        for &s in &eval_sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("pck sigma must be finite >= 0, got {s}")));
            }
        }
        let eval_horizon = eval_in.horizon.unwrap_or(1080);
        if eval_horizon == 0 {
            return Err(Error::Config("eval horizon must be >= 1".into()));
        }
        let eval_part = SplitPart::parse(eval_in.split.as_deref().unwrap_or("test"))?;
        if self.eval.is_some() {
            let e = snap.eval.get_or_insert_with(Default::default);
            e.sigmas = Some(eval_sigmas.clone());
            e.horizon = Some(eval_horizon);
            e.split = Some(
                match eval_part {
                    SplitPart::Train => "train",
                    SplitPart::Validation => "validation",
                    SplitPart::Test => "test",
                }
                .to_string(),
            );
        }

        // experiment
        let exp_in = self.experiment.clone().unwrap_or_default();
        let exp_variants = match &exp_in.variants {
            Some(names) => {
                if names.is_empty() {
                    return Err(Error::Config("experiment variant list is empty".into()));
                }
                names.iter().map(|n| Variant::parse(n)).collect::<Result<Vec<_>>>()?
            }
            None => dram_core::model::ALL_VARIANTS.to_vec(),
        };
        let exp_seeds = exp_in.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]);
        if exp_seeds.is_empty() {
            return Err(Error::Config("experiment seed list is empty".into()));
        }
        if self.experiment.is_some() {
            let e = snap.experiment.get_or_insert_with(Default::default);
            e.variants =
                Some(exp_variants.iter().map(|v| v.label().to_string()).collect());
            e.seeds = Some(exp_seeds.clone());
        }

        // cross-section consistency, checkable before any output exists
        if let (Some(DatasetPlan::Synth { cfg: s, .. }), Some(m)) = (&dataset, &model) {
            if s.audio_dim != m.audio_dim {
                return Err(Error::Config(format!(
                    "synth audio_dim {} does not match model audio_dim {}",
                    s.audio_dim, m.audio_dim
                )));
            }
            if s.pose_dim() != m.pose_dim {
                return Err(Error::Config(format!(
                    "topology pose dimension {} does not match model pose_dim {}",
                    s.pose_dim(),
                    m.pose_dim
                )));
            }
        }

        Ok(Resolved {
            seed,
            snapshot: snap,
            dataset,
            topology,
            topology_path: ds_in.topology.clone(),
            split_ratios,
            split_seed,
            model,
            trainer,
            eval_checkpoint: eval_in.checkpoint.clone(),
            eval_sigmas,
            eval_horizon,
            eval_part,
            exp_variants,
            exp_seeds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 7\n[dataset.synth]\nsequences = 2\nduration = 90\n[model]\n[trainer]\n",
        )
        .unwrap();
        let r = cfg.resolve(None).unwrap();
        assert_eq!(r.seed, 7);
        let Some(DatasetPlan::Synth { cfg: s, sequences }) = &r.dataset else {
            panic!("expected synth plan")
        };
        assert_eq!(*sequences, 2);
        assert_eq!(s.seed, 7);
        assert_eq!(r.model.as_ref().unwrap().seed, 7);
        assert_eq!(r.trainer.as_ref().unwrap().seed, 7);
        assert_eq!(r.trainer.as_ref().unwrap().tf.decay_epochs, 4);
    }

    #[test]
    fn seed_flag_overrides_file_seed() {
        let cfg: RunConfig = toml::from_str("seed = 7").unwrap();
        assert_eq!(cfg.resolve(Some(99)).unwrap().seed, 99);
    }

    #[test]
    fn unknown_field_is_named_in_the_error() {
        let err = toml::from_str::<RunConfig>("[model]\nvariannt = \"dram\"\n").unwrap_err();
        assert!(err.to_string().contains("variannt"), "{err}");
    }

    #[test]
    fn unknown_variant_is_a_validation_error() {
        let cfg: RunConfig =
            toml::from_str("[model]\nvariant = \"mystery\"").unwrap();
        let err = cfg.resolve(None).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn path_and_synth_together_are_rejected() {
        let cfg: RunConfig = toml::from_str(
            "[dataset]\npath = \"x.dyadset\"\n[dataset.synth]\nsequences = 1\n",
        )
        .unwrap();
        assert!(cfg.resolve(None).unwrap_err().is_validation());
    }

    #[test]
    fn snapshot_reresolves_to_the_same_plan() {
        let cfg: RunConfig = toml::from_str(
            "[dataset.synth]\nsequences = 3\nduration = 120\n[model]\nbackbone = \"lstm\"\n[trainer]\nepochs = 2\n",
        )
        .unwrap();
        let r1 = cfg.resolve(Some(5)).unwrap();
        let text = toml::to_string(&r1.snapshot).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        let r2 = back.resolve(None).unwrap();
        assert_eq!(r1.seed, r2.seed);
        assert_eq!(r1.model, r2.model);
        assert_eq!(r1.trainer, r2.trainer);
        let (Some(DatasetPlan::Synth { cfg: a, .. }), Some(DatasetPlan::Synth { cfg: b, .. })) =
            (&r1.dataset, &r2.dataset)
        else {
            panic!("expected synth plans")
        };
        assert_eq!(a, b);
    }

    #[test]
    fn dim_mismatch_between_synth_and_model_is_caught() {
        let cfg: RunConfig = toml::from_str(
            "[dataset.synth]\nsequences = 1\naudio_dim = 5\n[model]\naudio_dim = 23\n",
        )
        .unwrap();
        let err = cfg.resolve(None).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("audio_dim"));
    }
}
