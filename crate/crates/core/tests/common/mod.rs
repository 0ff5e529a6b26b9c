//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use cmta::data::{Matrix, PatientRecord};
use cmta::model::{forward, patient_loss, ModelConfig, ModelParams};
use cmta::survival::{alignment_loss, nll_survival_loss, total_loss};
use cmta::tensor::gradcheck::{compare, numerical_gradient, GradCheck, DEFAULT_FLOOR, DEFAULT_STEP};
use cmta::{Result, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-4;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Gradcheck of `f` at `inputs`. The output of `f` is contracted with fixed
/// random weights so every output element carries a distinct upstream
/// gradient.
pub fn check_op(
    rng: &mut ChaCha8Rng,
    inputs: &[(Vec<f64>, Vec<usize>)],
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> GradCheck {
    let consts: Vec<Tensor> = inputs.iter().map(|(d, s)| Tensor::new(d.clone(), s).unwrap()).collect();
    let out_shape = f(&consts).unwrap().shape().to_vec();
    let weights = Tensor::new(uniform(rng, &out_shape, -1.0, 1.0), &out_shape).unwrap();

    let params: Vec<Tensor> = inputs.iter().map(|(d, s)| Tensor::param(d.clone(), s).unwrap()).collect();
    let loss = f(&params).unwrap().mul(&weights).unwrap().sum();
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = params
        .iter()
        .flat_map(|p| grads.get(p).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|(d, _)| d.iter().copied()).collect();
    let numeric = numerical_gradient(&flat, DEFAULT_STEP, |x| {
        let mut at = 0;
        let ts: Vec<Tensor> = inputs
            .iter()
            .map(|(d, s)| {
                let t = Tensor::new(x[at..at + d.len()].to_vec(), s).unwrap();
                at += d.len();
                t
            })
            .collect();
        f(&ts).unwrap().mul(&weights).unwrap().sum().item().unwrap()
    });
    compare(&analytic, &numeric, DEFAULT_FLOOR)
}

pub fn random_record(rng: &mut ChaCha8Rng, cfg: &ModelConfig, patches: usize, time: f64, censored: bool) -> PatientRecord {
    PatientRecord {
        patient_id: "grad".into(),
        pathology: Matrix::new(patches, cfg.pathology_width, uniform(rng, &[patches, cfg.pathology_width], -1.0, 1.0)).unwrap(),
        genomics: cfg.genomic_widths.iter().map(|&w| uniform(rng, &[w], -1.0, 1.0)).collect(),
        time_months: time,
        censored,
    }
}

/// Initial parameters with every tensor (biases included) nudged off its
/// initial value so no coordinate sits at a special point.
pub fn random_params(rng: &mut ChaCha8Rng, cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(cfg, seed).unwrap();
    params.visit_mut(&mut |_, t| {
        let data: Vec<f64> = t.values().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        *t = Tensor::param(data, t.shape()).unwrap();
    });
    params
}

fn with_value(params: &ModelParams, name: &str, index: usize, value: f64) -> ModelParams {
    let mut p = params.frozen();
    p.visit_mut(&mut |n, t| {
        if n == name {
            let mut data = t.values().to_vec();
            data[index] = value;
            *t = Tensor::new(data, t.shape()).unwrap();
        }
    });
    p
}

/// Result of checking the total loss gradient on sampled coordinates.
#[derive(Debug)]
pub struct LossGradCheck {
    pub report: GradCheck,
    pub tensors: usize,
    pub coordinates: usize,
}

/// Checks the gradient of the total training loss at `per_tensor` sampled
/// coordinates of every parameter tensor.
///
/// With detached targets the differentiated function holds `p` and `g` at
/// their values for the unperturbed parameters, which is the function whose
/// gradient a stop-gradient defines.
pub fn check_total_loss(
    rng: &mut ChaCha8Rng,
    record: &PatientRecord,
    params: &ModelParams,
    cfg: &ModelConfig,
    bin: usize,
    per_tensor: usize,
) -> LossGradCheck {
    let trainable = params.trainable();
    let (art, _) = forward(record, &trainable, cfg).unwrap();
    let grads = patient_loss(&art, bin, record.censored, cfg).unwrap().total.backward().unwrap();
    let frozen_targets = (art.p.detach(), art.g.detach());

    let value = |p: &ModelParams| -> f64 {
        let (a, _) = forward(record, p, cfg).unwrap();
        let sur = nll_survival_loss(&a.hazards, bin, record.censored).unwrap();
        if !cfg.use_alignment {
            return sur.item().unwrap();
        }
        let (tp, tg) = if cfg.detach_targets { frozen_targets.clone() } else { (a.p.clone(), a.g.clone()) };
        let sim = alignment_loss(&tp, &a.p_hat, &tg, &a.g_hat, cfg.alignment_metric, false).unwrap();
        total_loss(&sur, &sim, cfg.alpha).unwrap().item().unwrap()
    };

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let named = trainable.named();
    for (name, t) in &named {
        let g = grads.get(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let k = per_tensor.min(t.numel());
        for i in sample(rng, t.numel(), k) {
            let x0 = t.values()[i];
            let up = value(&with_value(params, name, i, x0 + DEFAULT_STEP));
            let down = value(&with_value(params, name, i, x0 - DEFAULT_STEP));
            analytic.push(g[i]);
            numeric.push((up - down) / (2.0 * DEFAULT_STEP));
        }
    }
    LossGradCheck {
        report: compare(&analytic, &numeric, DEFAULT_FLOOR),
        tensors: named.len(),
        coordinates: analytic.len(),
    }
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (uniform(rng, shape, -1.0, 1.0), shape.to_vec())
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (uniform(rng, shape, 0.5, 2.0), shape.to_vec())
}

/// Inputs bounded away from zero, so kinks at the origin are never straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let data = uniform(rng, shape, 0.1, 1.0).into_iter().map(|v| if rng.gen() { v } else { -v }).collect();
    (data, shape.to_vec())
}

/// Gradchecks of every differentiable tensor operation and the attention,
/// position encoding and loss building blocks.
pub fn op_checks(rng: &mut ChaCha8Rng) -> Vec<(&'static str, GradCheck)> {
    use cmta::attention::{
        cross_modal_attention, iterative_pinv, multi_head_self_attention, ppeg, AttentionMode, CrossModalParams, MsaParams,
        PpegParams,
    };
    use cmta::survival::AlignmentMetric;
    use cmta::tensor::Unary;

    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<(Vec<f64>, Vec<usize>)>, rng: &mut ChaCha8Rng, f: &dyn Fn(&[Tensor]) -> Result<Tensor>| {
        out.push((name, check_op(rng, &inputs, f)));
    };

    let i = vec![input(rng, &[4, 3]), input(rng, &[3, 5])];
    run("matmul", i, rng, &|t| t[0].matmul(&t[1]));
    let i = vec![input(rng, &[4, 3])];
    run("transpose", i, rng, &|t| t[0].transpose());
    let i = vec![input(rng, &[3, 4]), input(rng, &[3, 4])];
    run("add", i, rng, &|t| t[0].add(&t[1]));
    let i = vec![input(rng, &[3, 4]), input(rng, &[3, 4])];
    run("sub", i, rng, &|t| t[0].sub(&t[1]));
    let i = vec![input(rng, &[3, 4]), input(rng, &[3, 4])];
    run("mul", i, rng, &|t| t[0].mul(&t[1]));
    let i = vec![input(rng, &[3, 4]), off_zero(rng, &[3, 4])];
    run("div", i, rng, &|t| t[0].div(&t[1]));
    let i = vec![input(rng, &[3, 4]), input(rng, &[1, 4])];
    run("add_row", i, rng, &|t| t[0].add_row(&t[1]));
    let i = vec![input(rng, &[3, 4])];
    run("scale", i, rng, &|t| Ok(t[0].scale(-1.7)));
    let i = vec![input(rng, &[3, 4])];
    run("add_scalar", i, rng, &|t| Ok(t[0].add_scalar(0.3)));
    let i = vec![input(rng, &[3, 4]), input(rng, &[1])];
    run("mul_scalar", i, rng, &|t| t[0].mul_scalar(&t[1]));
    let i = vec![input(rng, &[3, 4])];
    run("sum", i, rng, &|t| Ok(t[0].sum()));
    let i = vec![input(rng, &[3, 4])];
    run("mean", i, rng, &|t| Ok(t[0].mean()));
    let i = vec![input(rng, &[3, 4])];
    run("sum_rows", i, rng, &|t| t[0].sum_rows());
    let i = vec![input(rng, &[3, 4])];
    run("max", i, rng, &|t| Ok(t[0].max()));
    let i = vec![input(rng, &[3, 4])];
    run("reshape", i, rng, &|t| t[0].reshape(&[2, 6]));
    let i = vec![input(rng, &[5, 3])];
    run("slice_rows", i, rng, &|t| t[0].slice_rows(1, 4));
    let i = vec![input(rng, &[4, 3])];
    run("gather_rows", i, rng, &|t| t[0].gather_rows(&[3, 0, 0, 2, 1, 3]));
    let i = vec![input(rng, &[2, 3]), input(rng, &[3, 3])];
    run("concat_rows", i, rng, &|t| Tensor::concat_rows(t));
    let i = vec![input(rng, &[3, 5])];
    run("slice_cols", i, rng, &|t| t[0].slice_cols(1, 4));
    let i = vec![input(rng, &[3, 2]), input(rng, &[3, 3])];
    run("concat_cols", i, rng, &|t| Tensor::concat_cols(t));
    let i = vec![input(rng, &[3, 4])];
    run("sigmoid", i, rng, &|t| Ok(t[0].sigmoid()));
    let i = vec![off_zero(rng, &[3, 4])];
    run("relu", i, rng, &|t| Ok(t[0].relu()));
    let i = vec![input(rng, &[3, 4])];
    run("exp", i, rng, &|t| Ok(t[0].exp()));
    let i = vec![positive(rng, &[3, 4])];
    run("ln", i, rng, &|t| t[0].ln());
    let i = vec![input(rng, &[3, 4])];
    run("gelu", i, rng, &|t| Ok(t[0].gelu()));
    let i = vec![off_zero(rng, &[3, 4])];
    run("abs", i, rng, &|t| Ok(t[0].abs()));
    let i = vec![positive(rng, &[3, 4])];
    run("sqrt", i, rng, &|t| t[0].unary(Unary::Sqrt));
    let i = vec![off_zero(rng, &[3, 4])];
    run("recip", i, rng, &|t| t[0].unary(Unary::Recip));
    let i = vec![(vec![-0.9, -0.5, -0.2, 0.1, 0.3, 0.7, 0.95, 0.45], vec![2, 4])];
    run("clamp", i, rng, &|t| Ok(t[0].clamp(-0.6, 0.6)));
    let i = vec![input(rng, &[3, 5])];
    run("softmax_rows", i, rng, &|t| t[0].softmax(1));
    let i = vec![input(rng, &[3, 5])];
    run("softmax_cols", i, rng, &|t| t[0].softmax(0));
    let i = vec![input(rng, &[3, 5])];
    run("log_softmax", i, rng, &|t| t[0].log_softmax(1));
    let i = vec![input(rng, &[4, 6]), input(rng, &[1, 6]), input(rng, &[1, 6])];
    run("layer_norm", i, rng, &|t| t[0].layer_norm(&t[1], &t[2]));
    let i = vec![input(rng, &[2, 4, 4]), input(rng, &[2, 3, 3])];
    run("depthwise_conv2d_3", i, rng, &|t| t[0].depthwise_conv2d(&t[1]));
    let i = vec![input(rng, &[2, 3, 3]), input(rng, &[2, 5, 5])];
    run("depthwise_conv2d_5", i, rng, &|t| t[0].depthwise_conv2d(&t[1]));

    // Well-conditioned row-stochastic input, as the attention core sees.
    let i = vec![input(rng, &[4, 4])];
    run("iterative_pinv", i, rng, &|t| iterative_pinv(&t[0].scale(0.5).add(&Tensor::eye(4)?.scale(2.0))?.softmax(1)?, 6));

    let (n, d, heads) = (9, 8, 2);
    let msa = MsaParams::init(d, heads, rng).unwrap();
    let msa_inputs = |rng: &mut ChaCha8Rng| {
        let mut v = vec![input(rng, &[n, d])];
        for h in 0..heads {
            v.push((msa.wq[h].values().to_vec(), msa.wq[h].shape().to_vec()));
            v.push((msa.wk[h].values().to_vec(), msa.wk[h].shape().to_vec()));
            v.push((msa.wv[h].values().to_vec(), msa.wv[h].shape().to_vec()));
        }
        v.push((msa.wo.values().to_vec(), msa.wo.shape().to_vec()));
        v.push(input(rng, &[1, d]));
        v.push(input(rng, &[1, d]));
        v
    };
    let rebuild = |t: &[Tensor]| -> MsaParams {
        let mut p = msa.clone();
        for h in 0..heads {
            p.wq[h] = t[1 + 3 * h].clone();
            p.wk[h] = t[2 + 3 * h].clone();
            p.wv[h] = t[3 + 3 * h].clone();
        }
        p.wo = t[1 + 3 * heads].clone();
        p.ln_gain = t[2 + 3 * heads].clone();
        p.ln_bias = t[3 + 3 * heads].clone();
        p
    };
    let i = msa_inputs(rng);
    run("msa_exact", i, rng, &|t| multi_head_self_attention(&t[0], &rebuild(t), AttentionMode::Exact, 0, 0));
    let i = msa_inputs(rng);
    run("msa_nystrom", i, rng, &|t| multi_head_self_attention(&t[0], &rebuild(t), AttentionMode::Nystrom, 3, 6));

    let pp = PpegParams::init(3, rng).unwrap();
    let i = vec![
        input(rng, &[1, 3]),
        input(rng, &[7, 3]),
        (pp.k3.values().to_vec(), pp.k3.shape().to_vec()),
        (pp.k5.values().to_vec(), pp.k5.shape().to_vec()),
        (pp.k7.values().to_vec(), pp.k7.shape().to_vec()),
    ];
    run("ppeg", i, rng, &|t| {
        let p = PpegParams { k3: t[2].clone(), k5: t[3].clone(), k7: t[4].clone() };
        let (c, x) = ppeg(&t[0], &t[1], &p)?;
        Tensor::concat_rows(&[c, x])
    });

    let cm = CrossModalParams::init(4, rng).unwrap();
    let i = vec![
        input(rng, &[5, 4]),
        input(rng, &[3, 4]),
        (cm.u.values().to_vec(), vec![4, 4]),
        (cm.v.values().to_vec(), vec![4, 4]),
        (cm.w_p.values().to_vec(), vec![4, 4]),
        (cm.w_g.values().to_vec(), vec![4, 4]),
    ];
    run("cross_modal_attention", i, rng, &|t| {
        let p = CrossModalParams { u: t[2].clone(), v: t[3].clone(), w_p: t[4].clone(), w_g: t[5].clone() };
        let o = cross_modal_attention(&t[0], &t[1], &p)?;
        Tensor::concat_rows(&[o.p_related, o.g_related])
    });

    let hz = || (vec![0.2, 0.6, 0.35, 0.8], vec![1, 4]);
    run("nll_event", vec![hz()], rng, &|t| nll_survival_loss(&t[0], 2, false));
    run("nll_event_first_bin", vec![hz()], rng, &|t| nll_survival_loss(&t[0], 0, false));
    run("nll_censored", vec![hz()], rng, &|t| nll_survival_loss(&t[0], 1, true));
    for (name, metric) in [
        ("alignment_l1", AlignmentMetric::L1),
        ("alignment_mse", AlignmentMetric::Mse),
        ("alignment_cosine", AlignmentMetric::Cosine),
        ("alignment_kl", AlignmentMetric::Kl),
    ] {
        let i = vec![off_zero(rng, &[1, 6]), off_zero(rng, &[1, 6]), off_zero(rng, &[1, 6]), off_zero(rng, &[1, 6])];
        run(name, i, rng, &move |t| alignment_loss(&t[0], &t[1], &t[2], &t[3], metric, false));
    }
    out
}
