//! Optimisation: AdamW with batch-of-one updates, the per-fold training loop
//! and cross-validation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, Cohort, PatientRecord};
use crate::error::{CmtaError, Result};
use crate::model::{forward, patient_loss, ModelConfig, ModelParams};
use crate::survival::{alignment_loss, compute_bins, concordance_index, BinEdges, SurvivalOutput};
use crate::tensor::GradientMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(CmtaError::Config(format!("invalid optimiser settings: {self:?}")));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Moment buffers follow the
/// [`ModelParams::visit`] order.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: TrainConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> AdamW {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(vec![0.0; t.numel()]));
        AdamW {
            cfg: cfg.clone(),
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update. Parameters absent from `grads` are left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientMap) -> Result<()> {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let mut i = 0;
        let mut failure = None;
        params.visit_mut(&mut |_, p| {
            let idx = i;
            i += 1;
            let Some(g) = grads.get(p) else { return };
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let data: Vec<f64> = p
                .values()
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                    let step = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                    w * (1.0 - c.lr * c.weight_decay) - c.lr * step
                })
                .collect();
            match crate::Tensor::param(data, p.shape()) {
                Ok(t) => *p = t,
                Err(e) => failure = Some(e),
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

/// Mean losses over one pass of the training patients. Epoch 0 is measured
/// before any update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub sur: f64,
    pub sim: f64,
}

type StepLosses = (f64, f64, f64, Option<GradientMap>);

/// Forward, losses and (when the parameters are trainable) gradients for one
/// patient. Non-finite activations are reported as a non-finite loss at
/// `(epoch, step)` before they can surface as a domain error.
fn loss_values(record: &PatientRecord, params: &ModelParams, cfg: &ModelConfig, edges: &BinEdges, at: (usize, usize)) -> Result<StepLosses> {
    let (art, _) = forward(record, params, cfg)?;
    let outputs = [&art.hazards, &art.p, &art.g, &art.p_hat, &art.g_hat];
    if outputs.iter().any(|t| t.values().iter().any(|v| !v.is_finite())) {
        return Err(non_finite(record, at));
    }
    let terms = patient_loss(&art, edges.bin_of(record.time_months), record.censored, cfg)?;
    let sim = terms.sim.as_ref().map_or(Ok(0.0), |s| s.item())?;
    let total = terms.total.item()?;
    if !total.is_finite() {
        return Err(non_finite(record, at));
    }
    let grads = if terms.total.requires_grad() { Some(terms.total.backward()?) } else { None };
    Ok((total, terms.sur.item()?, sim, grads))
}

/// Trains a fresh model on `records` for `tc.epochs` epochs, one patient per
/// update, in a seeded order reshuffled every epoch.
pub fn train_model(
    records: &[&PatientRecord],
    cfg: &ModelConfig,
    tc: &TrainConfig,
    edges: &BinEdges,
    init_seed: u64,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    cfg.validate()?;
    tc.validate()?;
    if records.is_empty() {
        return Err(CmtaError::Empty("no training patients".into()));
    }
    let mut params = ModelParams::init(cfg, init_seed)?;
    let mut opt = AdamW::new(&params, tc);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed ^ 0x5EED_0F_00D3_u64);
    let mut log = Vec::with_capacity(tc.epochs + 1);

    let frozen = params.frozen();
    let mut sums = (0.0, 0.0, 0.0);
    for (step, r) in records.iter().enumerate() {
        let (t, s, a, _) = loss_values(r, &frozen, cfg, edges, (0, step))?;
        sums = (sums.0 + t, sums.1 + s, sums.2 + a);
    }
    log.push(epoch_mean(0, sums, records.len()));

    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        for (step, &i) in order.iter().enumerate() {
            let r = records[i];
            let (t, s, a, grads) = loss_values(r, &params, cfg, edges, (epoch, step))?;
            if let Some(g) = grads {
                opt.step(&mut params, &g)?;
            }
            sums = (sums.0 + t, sums.1 + s, sums.2 + a);
        }
        log.push(epoch_mean(epoch, sums, records.len()));
    }
    Ok((params, log))
}

fn non_finite(r: &PatientRecord, (epoch, step): (usize, usize)) -> CmtaError {
    CmtaError::NonFiniteLoss {
        patient_id: r.patient_id.clone(),
        epoch,
        step,
    }
}

fn epoch_mean(epoch: usize, sums: (f64, f64, f64), n: usize) -> EpochLog {
    let n = n as f64;
    EpochLog {
        epoch,
        total: sums.0 / n,
        sur: sums.1 / n,
        sim: sums.2 / n,
    }
}

/// Hazards, survival curve and risk for each record, computed on a frozen
/// copy of the parameters.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, records: &[&PatientRecord]) -> Result<Vec<SurvivalOutput>> {
    let frozen = params.frozen();
    records.par_iter().map(|r| forward(r, &frozen, cfg).map(|(_, s)| s)).collect()
}

pub fn cindex_of(outputs: &[SurvivalOutput], records: &[&PatientRecord]) -> Result<f64> {
    let risks: Vec<f64> = outputs.iter().map(|o| o.risk).collect();
    let times: Vec<f64> = records.iter().map(|r| r.time_months).collect();
    let censored: Vec<bool> = records.iter().map(|r| r.censored).collect();
    concordance_index(&risks, &times, &censored)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub edges: BinEdges,
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub train_cindex: f64,
    pub test_cindex: f64,
    pub test_outputs: Vec<SurvivalOutput>,
}

/// Seed used to initialise the model of fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

pub fn run_fold(cohort: &Cohort, cfg: &ModelConfig, tc: &TrainConfig, fold: usize, train: &[usize], test: &[usize]) -> Result<FoldOutcome> {
    let all = cohort.records();
    for r in all {
        cfg.check_record(r)?;
    }
    let train_records: Vec<&PatientRecord> = train.iter().map(|&i| &all[i]).collect();
    let test_records: Vec<&PatientRecord> = test.iter().map(|&i| &all[i]).collect();
    let times: Vec<f64> = train_records.iter().map(|r| r.time_months).collect();
    let censored: Vec<bool> = train_records.iter().map(|r| r.censored).collect();
    let edges = compute_bins(&times, &censored, cfg.bins)?;
    let (params, log) = train_model(&train_records, cfg, tc, &edges, fold_seed(tc.seed, fold))?;
    let train_outputs = predict(&params, cfg, &train_records)?;
    let test_outputs = predict(&params, cfg, &test_records)?;
    Ok(FoldOutcome {
        fold,
        train_indices: train.to_vec(),
        test_indices: test.to_vec(),
        train_cindex: cindex_of(&train_outputs, &train_records)?,
        test_cindex: cindex_of(&test_outputs, &test_records)?,
        edges,
        params,
        log,
        test_outputs,
    })
}

/// `k`-fold cross-validation. Folds train in parallel on a pool of at most
/// `threads` workers; results come back in fold order and do not depend on
/// the thread count.
pub fn cross_validate(cohort: &Cohort, cfg: &ModelConfig, tc: &TrainConfig, k: usize, threads: usize) -> Result<Vec<FoldOutcome>> {
    let folds = kfold_split(cohort.len(), k, tc.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CmtaError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        folds
            .par_iter()
            .enumerate()
            .map(|(i, f)| run_fold(cohort, cfg, tc, i, &f.train, &f.test))
            .collect()
    })
}

/// Which parameters the loss terms reach for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    /// Parameters present in the gradient of the total loss.
    pub reachable: Vec<String>,
    /// Parameters present in the gradient of the alignment term alone.
    pub sim_reachable: Vec<String>,
    /// L2 norm of the alignment-term gradient over all parameters.
    pub sim_grad_norm: f64,
    /// L2 norm of the part of the alignment-term gradient that flows back
    /// through the targets `p`, `g` (zero when they are detached).
    pub target_path_grad_norm: f64,
}

fn names_in(params: &ModelParams, grads: &GradientMap) -> Vec<String> {
    params.named().into_iter().filter(|(_, t)| grads.contains(t)).map(|(n, _)| n).collect()
}

fn flat(params: &ModelParams, grads: &GradientMap) -> Vec<f64> {
    let mut out = Vec::new();
    params.visit(&mut |_, t| match grads.get(t) {
        Some(g) => out.extend_from_slice(g),
        None => out.extend(std::iter::repeat(0.0).take(t.numel())),
    });
    out
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn probe_gradients(record: &PatientRecord, params: &ModelParams, cfg: &ModelConfig, edges: &BinEdges) -> Result<GradientProbe> {
    let params = params.trainable();
    let (art, _) = forward(record, &params, cfg)?;
    let terms = patient_loss(&art, edges.bin_of(record.time_months), record.censored, cfg)?;
    let total = terms.total.backward()?;
    let reachable = names_in(&params, &total);
    let Some(sim) = terms.sim else {
        return Ok(GradientProbe {
            reachable,
            sim_reachable: Vec::new(),
            sim_grad_norm: 0.0,
            target_path_grad_norm: 0.0,
        });
    };
    let sim_grads = sim.backward()?;
    let detached = alignment_loss(&art.p, &art.p_hat, &art.g, &art.g_hat, cfg.alignment_metric, true)?.backward()?;
    let (a, b) = (flat(&params, &sim_grads), flat(&params, &detached));
    Ok(GradientProbe {
        reachable,
        sim_reachable: names_in(&params, &sim_grads),
        sim_grad_norm: l2(a.iter().copied()),
        target_path_grad_norm: l2(a.iter().zip(&b).map(|(x, y)| x - y)),
    })
}

/// Per-parameter gradient lookup by name.
pub fn gradients_by_name(params: &ModelParams, grads: &GradientMap) -> HashMap<String, Vec<f64>> {
    params
        .named()
        .into_iter()
        .filter_map(|(n, t)| grads.get(&t).map(|g| (n, g.to_vec())))
        .collect()
}
