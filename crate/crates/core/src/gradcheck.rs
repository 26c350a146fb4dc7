//! Finite-difference verification of the tape's backward pass.
//!
//! Every case builds a scalar loss from a fresh parameter set, computes
//! analytic gradients once, then probes each parameter entry with central
//! differences. Input draws that land a relu/abs argument within 1e-3 of its
//! kink are redrawn so probe steps never cross a nondifferentiable point.

use crate::backbone::{lstm_cell_step, Lstm, LstmHyper, Tcn, TcnHyper};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, StepWindows, Variant};
use crate::rng;
use crate::tape::{NodeId, ParamLeases, ParamSet, Tape};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_SEEDS: usize = 20;
/// A corrupted backward must blow past this for the harness to count as
/// sensitive.
pub const PROBE_MIN_ERR: f64 = 0.1;

const KINK_MARGIN_MIN: f64 = 1e-3;

type LossBuilder = Box<dyn Fn(&mut Tape, &ParamLeases) -> Result<NodeId>>;

/// A parameter set plus a builder that reconstructs the same scalar loss on
/// any tape those parameters are registered on.
pub struct CasePrepared {
    pub params: ParamSet,
    pub build: LossBuilder,
}

pub struct GradCase {
    pub name: &'static str,
    /// True for the corrupted-backward probe, which must FAIL loudly.
    pub expect_fail: bool,
    setup: Box<dyn Fn(u64) -> Result<CasePrepared>>,
}

impl GradCase {
    /// Build the case's parameters and loss builder for one seed.
    pub fn prepare(&self, seed: u64) -> Result<CasePrepared> {
        (self.setup)(seed)
    }
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_err: f64,
    pub expect_fail: bool,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckSummary {
    pub reports: Vec<CaseReport>,
    pub seeds: usize,
    pub tol: f64,
    pub all_ok: bool,
}

fn eval_loss(prep: &CasePrepared, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let leases = tape.register_params(params);
    let loss = (prep.build)(&mut tape, &leases)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", format!("loss must be scalar, got {:?}", v.shape())));
    }
    Ok(v.at(0))
}

/// Max relative gradient error for one case at one seed:
/// |analytic - central| / max(|analytic|, |central|, 1e-5) over all
/// parameter entries.
pub fn check_case(case: &GradCase, seed: u64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::Config(format!("finite-difference step {h} outside (0, 1e-3]")));
    }
    let mut input_seed = seed;
    let mut prep = (case.setup)(input_seed)?;
    for _ in 0..16 {
        let mut tape = Tape::new();
        let leases = tape.register_params(&prep.params);
        (prep.build)(&mut tape, &leases)?;
        if tape.kink_margin() > KINK_MARGIN_MIN {
            break;
        }
        input_seed = rng::splitmix64(input_seed ^ 0x9e37);
        prep = (case.setup)(input_seed)?;
    }

    let mut params = prep.params.clone();
    let mut tape = Tape::new();
    let leases = tape.register_params(&params);
    let loss = (prep.build)(&mut tape, &leases)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::shape(
            "grad_check",
            format!("loss must be scalar, got {:?}", tape.value(loss).shape()),
        ));
    }
    let grads = tape.backward(loss)?;
    params.zero_grads();
    tape.accumulate_param_grads(&grads, &leases, &mut params, 1.0);

    let mut max_rel: f64 = 0.0;
    let mut scratch = params.clone();
    for pi in 0..params.len() {
        for j in 0..params.get(pi).value.len() {
            let orig = params.get(pi).value.data()[j];
            scratch.get_mut(pi).value.data_mut()[j] = orig + h;
            let f_plus = eval_loss(&prep, &scratch)?;
            scratch.get_mut(pi).value.data_mut()[j] = orig - h;
            let f_minus = eval_loss(&prep, &scratch)?;
            scratch.get_mut(pi).value.data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let analytic = params.get(pi).grad.data()[j];
            // central differences at this h on an O(1) loss carry ~1e-11 of
            // roundoff, so entries below ~1e-5 are buried in that noise; the
            // floor keeps the statistic a correctness measure (a wrong
            // gradient on any meaningful entry still shows up as O(1))
            let denom = analytic.abs().max(numeric.abs()).max(1e-5);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

/// Worst error for a case across `seeds` consecutive seeds from `base_seed`.
pub fn check_case_seeds(case: &GradCase, base_seed: u64, seeds: usize, h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        worst = worst.max(check_case(case, base_seed.wrapping_add(s as u64), h)?);
    }
    Ok(worst)
}

/// Run every registered case. `all_ok` requires normal cases under `tol` and
/// the corrupted-backward probe above its detection floor.
pub fn run_all(base_seed: u64, seeds: usize, h: f64, tol: f64) -> Result<GradcheckSummary> {
    let mut reports = Vec::new();
    for case in standard_cases() {
        let err = check_case_seeds(&case, base_seed, seeds, h)?;
        let pass = if case.expect_fail { err > PROBE_MIN_ERR } else { err < tol };
        reports.push(CaseReport {
            name: case.name.to_string(),
            max_rel_err: err,
            expect_fail: case.expect_fail,
            pass,
        });
    }
    let all_ok = reports.iter().all(|r| r.pass);
    Ok(GradcheckSummary { reports, seeds, tol, all_ok })
}

fn case_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    rng::chacha(rng::derive_seed(seed, tag))
}

fn add_param(params: &mut ParamSet, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng::uniform_range(rng, -1.0, 1.0))
        .collect();
    params.add(name, Tensor::from_vec(shape, data).unwrap())
}

/// Values with magnitude in [0.2, 1]: safe distance from relu/abs kinks even
/// after a probe step.
fn add_param_off_kink(
    params: &mut ParamSet,
    name: &str,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> usize {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let mag = rng::uniform_range(rng, 0.2, 1.0);
            if rng::uniform(rng) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    params.add(name, Tensor::from_vec(shape, data).unwrap())
}

fn case(
    name: &'static str,
    setup: impl Fn(u64) -> Result<CasePrepared> + 'static,
) -> GradCase {
    GradCase { name, expect_fail: false, setup: Box::new(setup) }
}

pub fn standard_cases() -> Vec<GradCase> {
    let mut cases = Vec::new();

    cases.push(case("matvec", |seed| {
        let mut rng = case_rng(seed, 1);
        let mut params = ParamSet::new();
        let w = add_param(&mut params, "w", &[5, 4], &mut rng);
        let x = add_param(&mut params, "x", &[4], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.matvec(leases.node(w), leases.node(x))?;
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("linear", |seed| {
        let mut rng = case_rng(seed, 2);
        let mut params = ParamSet::new();
        let w = add_param(&mut params, "w", &[4, 6], &mut rng);
        let x = add_param(&mut params, "x", &[6], &mut rng);
        let b = add_param(&mut params, "b", &[4], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.linear(leases.node(w), leases.node(x), leases.node(b))?;
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("conv1d_dilation1", |seed| {
        let mut rng = case_rng(seed, 3);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[2, 8], &mut rng);
        let k = add_param(&mut params, "k", &[3, 2, 3], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.conv1d(leases.node(x), leases.node(k), 1)?;
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("conv1d_dilation2", |seed| {
        let mut rng = case_rng(seed, 4);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[3, 10], &mut rng);
        let k = add_param(&mut params, "k", &[2, 3, 2], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.conv1d(leases.node(x), leases.node(k), 2)?;
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("bias_channels", |seed| {
        let mut rng = case_rng(seed, 5);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[3, 5], &mut rng);
        let b = add_param(&mut params, "b", &[3], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.bias_channels(leases.node(x), leases.node(b))?;
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("tanh_chain", |seed| {
        let mut rng = case_rng(seed, 6);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[6], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let a = tape.tanh(leases.node(x));
                let b = tape.tanh(a);
                Ok(tape.sum_all(b))
            }),
        })
    }));

    cases.push(case("sigmoid", |seed| {
        let mut rng = case_rng(seed, 7);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[6], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.sigmoid(leases.node(x));
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("relu", |seed| {
        let mut rng = case_rng(seed, 8);
        let mut params = ParamSet::new();
        let x = add_param_off_kink(&mut params, "x", &[7], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.relu(leases.node(x));
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("abs", |seed| {
        let mut rng = case_rng(seed, 9);
        let mut params = ParamSet::new();
        let x = add_param_off_kink(&mut params, "x", &[7], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let y = tape.abs(leases.node(x));
                Ok(tape.sum_all(y))
            }),
        })
    }));

    cases.push(case("arithmetic_mix", |seed| {
        let mut rng = case_rng(seed, 10);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[5], &mut rng);
        let y = add_param(&mut params, "y", &[5], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let (xn, yn) = (leases.node(x), leases.node(y));
                let prod = tape.mul(xn, yn)?;
                let scaled = tape.scale(xn, -0.5);
                let diff = tape.sub(prod, scaled)?;
                let total = tape.add_n(&[diff, yn, xn])?;
                Ok(tape.sum_all(total))
            }),
        })
    }));

    cases.push(case("concat_stack_slice", |seed| {
        let mut rng = case_rng(seed, 11);
        let mut params = ParamSet::new();
        let x = add_param(&mut params, "x", &[3, 4], &mut rng);
        let y = add_param(&mut params, "y", &[2, 4], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let all = tape.concat_rows(&[leases.node(x), leases.node(y)])?;
                let c1 = tape.column(all, 1)?;
                let c3 = tape.column(all, 3)?;
                let mat = tape.stack_cols(&[c1, c3])?;
                let top = tape.rows(mat, 1, 3)?;
                Ok(tape.sum_all(top))
            }),
        })
    }));

    cases.push(case("attention_gate", |seed| {
        let mut rng = case_rng(seed, 12);
        let mut params = ParamSet::new();
        let zm = add_param(&mut params, "zm", &[5], &mut rng);
        // keep |zd - zm| away from the abs kink
        let offsets: Vec<f64> = (0..5)
            .map(|_| {
                let mag = rng::uniform_range(&mut rng, 0.3, 1.2);
                if rng::uniform(&mut rng) < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        let zm_vals = params.get(zm).value.data().to_vec();
        let zd_vals: Vec<f64> = zm_vals.iter().zip(&offsets).map(|(a, o)| a + o).collect();
        let zd = params.add("zd", Tensor::from_vec(&[5], zd_vals).unwrap());
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let delta = crate::model::residual_attention(tape, leases.node(zm), leases.node(zd), false)?;
                let out = crate::model::dram_combine(tape, leases.node(zm), leases.node(zd), delta)?;
                Ok(tape.sum_all(out))
            }),
        })
    }));

    cases.push(case("mse_loss", |seed| {
        let mut rng = case_rng(seed, 13);
        let mut params = ParamSet::new();
        let pred = add_param(&mut params, "pred", &[2, 3], &mut rng);
        let target = add_param(&mut params, "target", &[2, 3], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                tape.mse_loss(leases.node(pred), leases.node(target))
            }),
        })
    }));

    cases.push(case("lstm_cell", |seed| {
        let mut rng = case_rng(seed, 14);
        let mut params = ParamSet::new();
        let w_ih = add_param(&mut params, "w_ih", &[8, 3], &mut rng);
        let w_hh = add_param(&mut params, "w_hh", &[8, 2], &mut rng);
        let b = add_param(&mut params, "b", &[8], &mut rng);
        let x = add_param(&mut params, "x", &[3], &mut rng);
        let h0 = add_param(&mut params, "h0", &[2], &mut rng);
        let c0 = add_param(&mut params, "c0", &[2], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let (h, c) = lstm_cell_step(
                    tape,
                    leases.node(w_ih),
                    leases.node(w_hh),
                    leases.node(b),
                    leases.node(x),
                    leases.node(h0),
                    leases.node(c0),
                )?;
                let hs = tape.sum_all(h);
                let cs = tape.sum_all(c);
                let total = tape.add(hs, cs)?;
                Ok(total)
            }),
        })
    }));

    cases.push(case("tcn_backbone", |seed| {
        let mut rng = case_rng(seed, 15);
        let mut params = ParamSet::new();
        let hyper = TcnHyper { hidden: 5, kernel: 2, dilations: vec![1, 2], residual: true };
        let net = Tcn::build(4, 3, 8, hyper, &mut params, "net", rng::derive_seed(seed, 150))?;
        let x = add_param(&mut params, "x", &[4, 8], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let out = net.forward(tape, leases, leases.node(x))?;
                Ok(tape.sum_all(out))
            }),
        })
    }));

    cases.push(case("lstm_backbone", |seed| {
        let mut rng = case_rng(seed, 16);
        let mut params = ParamSet::new();
        let hyper = LstmHyper { hidden: 4, layers: 2 };
        let net = Lstm::build(4, 3, 6, hyper, &mut params, "net", rng::derive_seed(seed, 160))?;
        let x = add_param(&mut params, "x", &[4, 6], &mut rng);
        Ok(CasePrepared {
            params,
            build: Box::new(move |tape, leases| {
                let out = net.forward(tape, leases, leases.node(x))?;
                Ok(tape.sum_all(out))
            }),
        })
    }));

    cases.push(case("dram_step_tcn", |seed| {
        dram_step_case(seed, true)
    }));

    cases.push(case("dram_step_lstm", |seed| {
        dram_step_case(seed, false)
    }));

    cases.push(GradCase {
        name: "corrupted_backward_probe",
        expect_fail: true,
        setup: Box::new(|seed| {
            let mut rng = case_rng(seed, 99);
            let mut params = ParamSet::new();
            let x = add_param(&mut params, "x", &[4], &mut rng);
            Ok(CasePrepared {
                params,
                build: Box::new(move |tape, leases| {
                    let y = tape.sign_flip_probe(leases.node(x));
                    Ok(tape.sum_all(y))
                }),
            })
        }),
    });

    cases
}

fn dram_step_case(seed: u64, tcn: bool) -> Result<CasePrepared> {
    let mut rng = case_rng(seed, if tcn { 17 } else { 18 });
    let (a, p, k) = (3usize, 6usize, 8usize);
    let backbone = if tcn {
        crate::backbone::BackboneHyper::Tcn(TcnHyper {
            hidden: 5,
            kernel: 2,
            dilations: vec![1, 2],
            residual: true,
        })
    } else {
        crate::backbone::BackboneHyper::Lstm(LstmHyper { hidden: 4, layers: 1 })
    };
    let config = ModelConfig {
        variant: Variant::Dram,
        backbone,
        audio_dim: a,
        pose_dim: p,
        k,
        include_current_monadic: true,
        detach_attention: false,
        seed: rng::derive_seed(seed, 170),
    };
    let model = Model::new(config)?;
    let params = model.params.clone();
    let mk = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng::uniform_range(rng, -0.8, 0.8)).collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    };
    let avatar_audio = mk(&mut rng, a, k);
    let avatar_pose = mk(&mut rng, p, k);
    let human_audio = mk(&mut rng, a, k);
    let human_pose = mk(&mut rng, p, k);
    let monadic_history = mk(&mut rng, p, k - 1);
    let target_vals: Vec<f64> = (0..p).map(|_| rng::uniform_range(&mut rng, -0.8, 0.8)).collect();
    let target = Tensor::from_vec(&[p], target_vals).unwrap();
    Ok(CasePrepared {
        params,
        build: Box::new(move |tape, leases| {
            let windows = StepWindows {
                avatar_audio: tape.leaf(avatar_audio.clone()),
                avatar_pose: tape.leaf(avatar_pose.clone()),
                human_audio: tape.leaf(human_audio.clone()),
                human_pose: tape.leaf(human_pose.clone()),
                monadic_history: Some(tape.leaf(monadic_history.clone())),
            };
            let out = model.step(tape, leases, &windows)?;
            let t = tape.leaf(target.clone());
            tape.mse_loss(out.prediction, t)
        }),
    })
}
