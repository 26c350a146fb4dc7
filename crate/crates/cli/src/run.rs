//! The five subcommands. Every run validates its configuration fully before
//! touching the output directory, computes, then writes artifacts and a
//! manifest last.

use crate::config::{DatasetPlan, Resolved, RunConfig, SplitPart};
use crate::manifest::{sha256_file, stamp, FileStamp, Manifest};
use dram_core::checkpoint::{load_model_file, save_model_file};
use dram_core::dataset::{load_dataset, make_split, save_dataset, DyadicDataset};
use dram_core::gradcheck;
use dram_core::metrics::{evaluate_poses_at, AttentionTrace, MetricsReport};
use dram_core::model::{Model, ModelConfig};
use dram_core::rollout::rollout;
use dram_core::skeleton::SkeletonTopology;
use dram_core::synth::generate_dataset;
use dram_core::tensor::Tensor;
use dram_core::train::{train, EpochStats};
use dram_core::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// 0 = quiet, 1 = normal, 2 = debug; from DRAM_LOG (verbosity only).
pub fn verbosity() -> u8 {
    match std::env::var("DRAM_LOG").as_deref() {
        Ok("quiet") | Ok("0") => 0,
        Ok("debug") | Ok("2") => 2,
        _ => 1,
    }
}

fn info(msg: &str) {
    if verbosity() >= 1 {
        println!("{msg}");
    }
}

pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

fn load_resolved(args: &RunArgs) -> Result<Resolved> {
    RunConfig::load(&args.config)?.resolve(args.seed)
}

fn dataset_plan<'a>(r: &'a Resolved, cmd: &str) -> Result<&'a DatasetPlan> {
    r.dataset.as_ref().ok_or_else(|| {
        Error::Config(format!("{cmd} needs a [dataset] section (path or inline synth)"))
    })
}

fn obtain_dataset(plan: &DatasetPlan) -> Result<DyadicDataset> {
    match plan {
        DatasetPlan::Load(path) => load_dataset(path),
        DatasetPlan::Synth { cfg, sequences } => generate_dataset(cfg, *sequences),
    }
}

/// Write the resolved-config artifact; returns its stamp.
fn write_resolved_config(out: &Path, r: &Resolved) -> Result<FileStamp> {
    let text = toml::to_string_pretty(&r.snapshot)
        .map_err(|e| Error::Data(format!("config serialization: {e}")))?;
    fs::write(out.join("resolved_config.toml"), text)?;
    stamp(Some(out), Path::new("resolved_config.toml"))
}

fn base_inputs(args: &RunArgs, r: &Resolved) -> Result<Vec<FileStamp>> {
    let mut inputs = vec![stamp(None, &args.config)?];
    if let Some(t) = &r.topology_path {
        inputs.push(stamp(None, t)?);
    }
    if let Some(DatasetPlan::Load(p)) = &r.dataset {
        inputs.push(stamp(None, p)?);
    }
    Ok(inputs)
}

pub fn cmd_synth(args: &RunArgs) -> Result<()> {
    let r = load_resolved(args)?;
    let Some(plan @ DatasetPlan::Synth { .. }) = &r.dataset else {
        return Err(Error::Config(
            "synth needs an inline [dataset.synth] section to generate from".into(),
        ));
    };
    let ds = obtain_dataset(plan)?;
    let labels: usize = ds.sequences.iter().map(|s| s.labels.len()).sum();

    fs::create_dir_all(&args.out)?;
    save_dataset(&ds, &args.out.join("dataset.dyadset"))?;
    let mut outputs = vec![stamp(Some(&args.out), Path::new("dataset.dyadset"))?];
    outputs.push(write_resolved_config(&args.out, &r)?);
    Manifest {
        tool: tool_id(),
        command: "synth".into(),
        seed: r.seed,
        inputs: base_inputs(args, &r)?,
        outputs,
        config: r.snapshot.clone(),
    }
    .write(&args.out)?;

    println!(
        "wrote dataset.dyadset: {} sequences x {} frames, {} event labels",
        ds.sequences.len(),
        ds.sequences.first().map_or(0, |s| s.frames()),
        labels
    );
    Ok(())
}

fn write_curves(path: &Path, curves: &[EpochStats]) -> Result<()> {
    let mut text = String::from("# epoch tf train_loss val_score\n");
    for c in curves {
        writeln!(text, "{} {:.17e} {:.17e} {:.17e}", c.epoch, c.tf_rate, c.train_loss, c.val_score)
            .expect("string write");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Check a loaded/constructed model against the dataset it will run on.
fn check_dims(model_cfg: &ModelConfig, ds: &DyadicDataset) -> Result<()> {
    if model_cfg.audio_dim != ds.audio_dim || model_cfg.pose_dim != ds.pose_dim {
        return Err(Error::Config(format!(
            "model expects audio/pose dims {}/{}, dataset has {}/{}",
            model_cfg.audio_dim, model_cfg.pose_dim, ds.audio_dim, ds.pose_dim
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let r = load_resolved(args)?;
    let plan = dataset_plan(&r, "train")?;
    let model_cfg = r
        .model
        .clone()
        .ok_or_else(|| Error::Config("train needs a [model] section".into()))?;
    let trainer = r
        .trainer
        .clone()
        .ok_or_else(|| Error::Config("train needs a [trainer] section".into()))?;

    let ds = obtain_dataset(plan)?;
    check_dims(&model_cfg, &ds)?;
    let split = make_split(ds.sequences.len(), r.split_ratios, r.split_seed)?;
    let topo = (r.topology.pose_dim() == ds.pose_dim).then_some(&r.topology);

    let model = Model::new(model_cfg)?;
    let started = Instant::now();
    let outcome = train(model, &ds, &split, &trainer, topo)?;
    for c in &outcome.curves {
        info(&format!(
            "epoch {}: tf {:.2} train {:.6} val {:.6}",
            c.epoch, c.tf_rate, c.train_loss, c.val_score
        ));
    }
    info(&format!(
        "best epoch {} (val {:.6}) in {:.1} s",
        outcome.best_epoch,
        outcome.best_val,
        started.elapsed().as_secs_f64()
    ));

    fs::create_dir_all(&args.out)?;
    save_model_file(&outcome.model, &args.out.join("model.dramckpt"))?;
    write_curves(&args.out.join("curves.txt"), &outcome.curves)?;
    let mut outputs = vec![
        stamp(Some(&args.out), Path::new("model.dramckpt"))?,
        stamp(Some(&args.out), Path::new("curves.txt"))?,
    ];
    outputs.push(write_resolved_config(&args.out, &r)?);
    Manifest {
        tool: tool_id(),
        command: "train".into(),
        seed: r.seed,
        inputs: base_inputs(args, &r)?,
        outputs,
        config: r.snapshot.clone(),
    }
    .write(&args.out)?;
    println!("wrote model.dramckpt (best epoch {})", outcome.best_epoch);
    Ok(())
}

fn split_indices(part: SplitPart, split: &dram_core::dataset::DatasetSplit) -> Vec<usize> {
    match part {
        SplitPart::Train => split.train.clone(),
        SplitPart::Validation => split.validation.clone(),
        SplitPart::Test => split.test.clone(),
    }
}

fn concat_cols(parts: &[Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(&[rows, total]);
    let mut at = 0;
    for p in parts {
        for c in 0..p.cols() {
            out.set_col(at, &p.col(c));
            at += 1;
        }
    }
    out
}

pub struct EvalRun {
    pub report: MetricsReport,
    /// Gate traces per evaluated sequence index; empty for gate-free models.
    pub traces: Vec<(usize, AttentionTrace)>,
}

/// Closed-loop evaluation: roll each sequence out from its first k frames
/// and pool every predicted frame into one report.
pub fn eval_model(
    model: &Model,
    ds: &DyadicDataset,
    indices: &[usize],
    topo: &SkeletonTopology,
    sigmas: &[f64],
    horizon: usize,
) -> Result<EvalRun> {
    if indices.is_empty() {
        return Err(Error::Data("no sequences selected for evaluation".into()));
    }
    let k = model.config.k;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut traces = Vec::new();
    for &idx in indices {
        let seq = ds
            .sequences
            .get(idx)
            .ok_or_else(|| Error::Data(format!("sequence index {idx} out of range")))?;
        if seq.frames() <= k {
            return Err(Error::Data(format!(
                "sequence {idx} has {} frames, need more than k = {k}",
                seq.frames()
            )));
        }
        let h = (seq.frames() - k).min(horizon);
        let out = rollout(
            model,
            &seq.avatar_audio,
            &seq.human_audio,
            &seq.human_pose,
            &seq.avatar_pose.cols_slice(0, k),
            h,
            Some(topo.joint_count()),
            true,
        )?;
        preds.push(out.poses);
        truths.push(seq.avatar_pose.cols_slice(k, h));
        if let Some(trace) = out.trace {
            if !trace.rows.is_empty() {
                traces.push((idx, trace));
            }
        }
    }
    let report = evaluate_poses_at(&concat_cols(&preds), &concat_cols(&truths), topo, sigmas)?;
    Ok(EvalRun { report, traces })
}

pub struct DeltaStats {
    pub in_mean: f64,
    pub out_mean: f64,
    pub overall: f64,
    pub in_frames: usize,
    pub out_frames: usize,
}

/// Mean gate activation inside vs outside labeled event windows. A frame is
/// in-window from the event's start through the end of the avatar's
/// response (onset plus the event's own length).
pub fn delta_stats(ds: &DyadicDataset, traces: &[(usize, AttentionTrace)]) -> Option<DeltaStats> {
    let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);
    for (idx, trace) in traces {
        let labels = &ds.sequences[*idx].labels;
        for row in &trace.rows {
            let inside = labels
                .iter()
                .any(|l| row.frame >= l.start && row.frame < l.response_onset + (l.end - l.start));
            if inside {
                in_sum += row.mean;
                in_n += 1;
            } else {
                out_sum += row.mean;
                out_n += 1;
            }
        }
    }
    if in_n == 0 || out_n == 0 {
        return None;
    }
    Some(DeltaStats {
        in_mean: in_sum / in_n as f64,
        out_mean: out_sum / out_n as f64,
        overall: (in_sum + out_sum) / (in_n + out_n) as f64,
        in_frames: in_n,
        out_frames: out_n,
    })
}

fn write_traces(path: &Path, traces: &[(usize, AttentionTrace)]) -> Result<()> {
    let mut text = String::new();
    for (idx, trace) in traces {
        writeln!(text, "# sequence {idx}").expect("string write");
        text.push_str(&trace.to_text());
    }
    fs::write(path, text)?;
    Ok(())
}

/// One table row per (label, group values) pair, under the standard header.
fn grid_text(rows: &[(String, Vec<f64>)]) -> String {
    let mut text = format!("{:<24}", "variant");
    for label in MetricsReport::group_labels() {
        write!(text, "{label:>9}").expect("string write");
    }
    text.push('\n');
    for (name, values) in rows {
        write!(text, "{name:<24}").expect("string write");
        for v in values {
            write!(text, "{v:>9.3}").expect("string write");
        }
        text.push('\n');
    }
    text
}

fn pck_line(name: &str, pck: &[(f64, f64)]) -> String {
    let mut line = format!("pck {name}:");
    for (s, v) in pck {
        write!(line, " {s}:{v:.4}").expect("string write");
    }
    line
}

pub fn cmd_eval(args: &RunArgs) -> Result<()> {
    let r = load_resolved(args)?;
    let plan = dataset_plan(&r, "eval")?;
    let ckpt = r.eval_checkpoint.clone().ok_or_else(|| {
        Error::Config("eval needs [eval] checkpoint = \"path/to/model.dramckpt\"".into())
    })?;
    if !ckpt.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", ckpt.display())));
    }
    let model = load_model_file(&ckpt)?;
    let ds = obtain_dataset(plan)?;
    check_dims(&model.config, &ds)?;
    if r.topology.pose_dim() != ds.pose_dim {
        return Err(Error::Config(format!(
            "topology pose dimension {} does not match dataset pose dimension {}",
            r.topology.pose_dim(),
            ds.pose_dim
        )));
    }
    let split = make_split(ds.sequences.len(), r.split_ratios, r.split_seed)?;
    let indices = split_indices(r.eval_part, &split);
    let run = eval_model(&model, &ds, &indices, &r.topology, &r.eval_sigmas, r.eval_horizon)?;

    let variant = model.config.variant.label().to_string();
    let grid = grid_text(&[(variant.clone(), run.report.group_row())]);
    print!("{grid}");
    println!("{}", pck_line(&variant, &run.report.pck));
    if let Some(d) = delta_stats(&ds, &run.traces) {
        println!(
            "delta {variant}: in {:.4} out {:.4} margin {:+.4} overall {:.4}",
            d.in_mean,
            d.out_mean,
            d.in_mean - d.out_mean,
            d.overall
        );
    }

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("metrics.txt"), run.report.to_text())?;
    let mut outputs = vec![stamp(Some(&args.out), Path::new("metrics.txt"))?];
    if !run.traces.is_empty() {
        write_traces(&args.out.join("trace.txt"), &run.traces)?;
        outputs.push(stamp(Some(&args.out), Path::new("trace.txt"))?);
    }
    outputs.push(write_resolved_config(&args.out, &r)?);
    let mut inputs = base_inputs(args, &r)?;
    inputs.push(stamp(None, &ckpt)?);
    Manifest {
        tool: tool_id(),
        command: "eval".into(),
        seed: r.seed,
        inputs,
        outputs,
        config: r.snapshot.clone(),
    }
    .write(&args.out)?;
    Ok(())
}

pub struct GradcheckArgs {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Exit-code-bearing: true means every case passed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let (seed, snapshot, config_stamp) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let r = cfg.resolve(args.seed)?;
            (r.seed, r.snapshot, Some(stamp(None, path)?))
        }
        None => {
            let seed = args.seed.unwrap_or(0);
            (seed, RunConfig { seed: Some(seed), ..Default::default() }, None)
        }
    };
    let summary = gradcheck::run_all(seed, 20, 1e-5, 1e-4)?;
    let mut text = format!("{:<44} {:>12}  {}\n", "case", "max_rel_err", "status");
    for rep in &summary.reports {
        let status = match (rep.pass, rep.expect_fail) {
            (true, false) => "PASS",
            (true, true) => "PASS (fails as designed)",
            (false, _) => "FAIL",
        };
        writeln!(text, "{:<44} {:>12.3e}  {status}", rep.name, rep.max_rel_err)
            .expect("string write");
    }
    writeln!(
        text,
        "{} cases, {} seeds each, tolerance {:.0e}: {}",
        summary.reports.len(),
        summary.seeds,
        summary.tol,
        if summary.all_ok { "ALL PASS" } else { "FAILURES" }
    )
    .expect("string write");
    print!("{text}");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("gradcheck.txt"), &text)?;
        let outputs = vec![stamp(Some(out), Path::new("gradcheck.txt"))?];
        Manifest {
            tool: tool_id(),
            command: "gradcheck".into(),
            seed,
            inputs: config_stamp.into_iter().collect(),
            outputs,
            config: snapshot,
        }
        .write(out)?;
    }
    Ok(summary.all_ok)
}

pub fn cmd_experiment(args: &RunArgs) -> Result<()> {
    let r = load_resolved(args)?;
    let plan = dataset_plan(&r, "experiment")?;
    let base_model = r.model.clone().ok_or_else(|| {
        Error::Config("experiment needs a [model] section as the shared base".into())
    })?;
    let trainer = r
        .trainer
        .clone()
        .ok_or_else(|| Error::Config("experiment needs a [trainer] section".into()))?;

    let ds = obtain_dataset(plan)?;
    check_dims(&base_model, &ds)?;
    if r.topology.pose_dim() != ds.pose_dim {
        return Err(Error::Config(format!(
            "topology pose dimension {} does not match dataset pose dimension {}",
            r.topology.pose_dim(),
            ds.pose_dim
        )));
    }
    // one split for every run: comparisons must share their test set
    let split = make_split(ds.sequences.len(), r.split_ratios, r.split_seed)?;
    let test = split_indices(SplitPart::Test, &split);
    if test.is_empty() {
        return Err(Error::Data("experiment needs a non-empty test part".into()));
    }

    fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    let mut grid_rows = Vec::new();
    let mut pck_lines = Vec::new();
    let mut delta_lines = Vec::new();
    let started = Instant::now();
    for variant in &r.exp_variants {
        let mut group_acc: Option<Vec<f64>> = None;
        let mut pck_acc: Option<Vec<(f64, f64)>> = None;
        let mut delta_acc: Vec<DeltaStats> = Vec::new();
        for &run_seed in &r.exp_seeds {
            let run_started = Instant::now();
            let model_cfg = ModelConfig {
                variant: *variant,
                seed: run_seed,
                ..base_model.clone()
            };
            let run_trainer =
                dram_core::train::TrainerConfig { seed: run_seed, ..trainer.clone() };
            let model = Model::new(model_cfg)?;
            let outcome = train(model, &ds, &split, &run_trainer, Some(&r.topology))?;
            let run = eval_model(
                &outcome.model,
                &ds,
                &test,
                &r.topology,
                &r.eval_sigmas,
                r.eval_horizon,
            )?;

            let dir_rel = PathBuf::from("runs")
                .join(format!("{}_seed{run_seed}", variant.label()));
            let dir = args.out.join(&dir_rel);
            fs::create_dir_all(&dir)?;
            save_model_file(&outcome.model, &dir.join("model.dramckpt"))?;
            write_curves(&dir.join("curves.txt"), &outcome.curves)?;
            fs::write(dir.join("metrics.txt"), run.report.to_text())?;
            for name in ["model.dramckpt", "curves.txt", "metrics.txt"] {
                outputs.push(stamp(Some(&args.out), &dir_rel.join(name))?);
            }
            if !run.traces.is_empty() {
                write_traces(&dir.join("trace.txt"), &run.traces)?;
                outputs.push(stamp(Some(&args.out), &dir_rel.join("trace.txt"))?);
            }

            info(&format!(
                "run {} seed {run_seed}: best val {:.4}, test ape {:.4} ({:.1} s)",
                variant.label(),
                outcome.best_val,
                run.report.ape_avg,
                run_started.elapsed().as_secs_f64()
            ));

            let row = run.report.group_row();
            match &mut group_acc {
                Some(acc) => acc.iter_mut().zip(&row).for_each(|(a, v)| *a += v),
                None => group_acc = Some(row),
            }
            match &mut pck_acc {
                Some(acc) => {
                    acc.iter_mut().zip(&run.report.pck).for_each(|((_, a), (_, v))| *a += v)
                }
                None => pck_acc = Some(run.report.pck.clone()),
            }
            if let Some(d) = delta_stats(&ds, &run.traces) {
                delta_acc.push(d);
            }
        }

        let n = r.exp_seeds.len() as f64;
        let mut row = group_acc.expect("at least one seed ran");
        row.iter_mut().for_each(|v| *v /= n);
        grid_rows.push((variant.label().to_string(), row));
        let mut pck = pck_acc.expect("at least one seed ran");
        pck.iter_mut().for_each(|(_, v)| *v /= n);
        pck_lines.push(pck_line(variant.label(), &pck));
        if delta_acc.len() == r.exp_seeds.len() {
            let m = delta_acc.len() as f64;
            let in_mean = delta_acc.iter().map(|d| d.in_mean).sum::<f64>() / m;
            let out_mean = delta_acc.iter().map(|d| d.out_mean).sum::<f64>() / m;
            let overall = delta_acc.iter().map(|d| d.overall).sum::<f64>() / m;
            delta_lines.push(format!(
                "delta {}: in {:.4} out {:.4} margin {:+.4} overall {:.4}",
                variant.label(),
                in_mean,
                out_mean,
                in_mean - out_mean,
                overall
            ));
        }
    }

    let mut text = grid_text(&grid_rows);
    for line in pck_lines.iter().chain(&delta_lines) {
        text.push_str(line);
        text.push('\n');
    }
    print!("{text}");
    info(&format!("experiment finished in {:.1} s", started.elapsed().as_secs_f64()));

    fs::write(args.out.join("grid.txt"), &text)?;
    outputs.push(stamp(Some(&args.out), Path::new("grid.txt"))?);
    outputs.push(write_resolved_config(&args.out, &r)?);
    Manifest {
        tool: tool_id(),
        command: "experiment".into(),
        seed: r.seed,
        inputs: base_inputs(args, &r)?,
        outputs,
        config: r.snapshot.clone(),
    }
    .write(&args.out)?;
    Ok(())
}

fn tool_id() -> String {
    format!("dram {}", env!("CARGO_PKG_VERSION"))
}

/// Re-check a manifest's outputs against the files on disk.
pub fn verify_outputs(out: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let mut mismatched = Vec::new();
    for f in &manifest.outputs {
        let actual = sha256_file(&out.join(&f.path))?;
        if actual != f.sha256 {
            mismatched.push(f.path.clone());
        }
    }
    Ok(mismatched)
}
