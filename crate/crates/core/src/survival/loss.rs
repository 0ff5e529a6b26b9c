//! Training objectives: discrete-time NLL and the representation alignment
//! term.

use serde::{Deserialize, Serialize};

use crate::error::{CmtaError, Result};
use crate::tensor::Tensor;

/// Hazards are clipped into `[HAZARD_CLAMP, 1 − HAZARD_CLAMP]` before logs.
pub const HAZARD_CLAMP: f64 = 1e-7;

/// Negative log-likelihood of one patient under per-interval hazards.
///
/// With `S_j = Π_{k≤j}(1 − h_k)` and `S_{−1} = 1`, a censored patient
/// contributes `−log S_j` and an observed event `−log S_{j−1} − log h_j`.
pub fn nll_survival_loss(hazards: &Tensor, event_bin: usize, censored: bool) -> Result<Tensor> {
    let b = hazards.numel();
    if event_bin >= b {
        return Err(CmtaError::contract(format!("event bin {event_bin} out of range for {b} bins")));
    }
    let h = hazards.reshape(&[1, b])?.clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
    let log_surv = h.scale(-1.0).add_scalar(1.0).ln()?;
    if censored {
        return Ok(log_surv.slice_cols(0, event_bin + 1)?.sum().scale(-1.0));
    }
    let log_hazard = h.slice_cols(event_bin, event_bin + 1)?.ln()?.sum();
    let nll = if event_bin == 0 {
        log_hazard
    } else {
        log_surv.slice_cols(0, event_bin)?.sum().add(&log_hazard)?
    };
    Ok(nll.scale(-1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMetric {
    #[default]
    L1,
    Mse,
    Cosine,
    Kl,
}

impl AlignmentMetric {
    pub const ALL: [AlignmentMetric; 4] = [AlignmentMetric::L1, AlignmentMetric::Mse, AlignmentMetric::Cosine, AlignmentMetric::Kl];

    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentMetric::L1 => "l1",
            AlignmentMetric::Mse => "mse",
            AlignmentMetric::Cosine => "cosine",
            AlignmentMetric::Kl => "kl",
        }
    }
}

impl std::str::FromStr for AlignmentMetric {
    type Err = CmtaError;

    fn from_str(s: &str) -> Result<Self> {
        AlignmentMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CmtaError::Config(format!("unknown alignment metric {s:?} (expected l1, mse, cosine or kl)")))
    }
}

fn pair_distance(target: &Tensor, estimate: &Tensor, metric: AlignmentMetric) -> Result<Tensor> {
    let d = target.numel() as f64;
    match metric {
        AlignmentMetric::L1 => Ok(target.sub(estimate)?.abs().sum().scale(1.0 / d)),
        AlignmentMetric::Mse => {
            let diff = target.sub(estimate)?;
            Ok(diff.mul(&diff)?.sum().scale(1.0 / d))
        }
        AlignmentMetric::Cosine => {
            for t in [target, estimate] {
                if t.values().iter().all(|&v| v == 0.0) {
                    return Err(CmtaError::DegenerateInput("cosine distance of a zero vector".into()));
                }
            }
            let dot = target.mul(estimate)?.sum();
            let nt = target.mul(target)?.sum().unary(crate::tensor::Unary::Sqrt)?;
            let ne = estimate.mul(estimate)?.sum().unary(crate::tensor::Unary::Sqrt)?;
            let cos = dot.div(&nt.mul(&ne)?)?;
            Ok(cos.scale(-1.0).add_scalar(1.0))
        }
        AlignmentMetric::Kl => {
            let lt = target.log_softmax(1)?;
            let le = estimate.log_softmax(1)?;
            let pt = target.softmax(1)?;
            Ok(pt.mul(&lt.sub(&le)?)?.sum())
        }
    }
}

/// Distance between intra-modal (`p`, `g`) and cross-modal (`p̂`, `ĝ`)
/// representations. The L1 form is `(‖p − p̂‖₁ + ‖g − ĝ‖₁) / d`.
///
/// With `detach_targets`, `p` and `g` enter as constants so the gradient only
/// pulls the cross-modal side toward them.
pub fn alignment_loss(
    p: &Tensor,
    p_hat: &Tensor,
    g: &Tensor,
    g_hat: &Tensor,
    metric: AlignmentMetric,
    detach_targets: bool,
) -> Result<Tensor> {
    for (a, b) in [(p, p_hat), (g, g_hat), (p, g)] {
        if a.shape() != b.shape() {
            return Err(CmtaError::dim("alignment_loss", a.shape(), b.shape()));
        }
    }
    let d = p.numel();
    let row = |t: &Tensor| -> Result<Tensor> {
        let t = if detach_targets { t.detach() } else { t.clone() };
        t.reshape(&[1, d])
    };
    let (p, g) = (row(p)?, row(g)?);
    let (p_hat, g_hat) = (p_hat.reshape(&[1, d])?, g_hat.reshape(&[1, d])?);
    pair_distance(&p, &p_hat, metric)?.add(&pair_distance(&g, &g_hat, metric)?)
}

/// `l_sur + α·l_sim`.
pub fn total_loss(l_sur: &Tensor, l_sim: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha >= 0.0) {
        return Err(CmtaError::contract(format!("alpha must be non-negative, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(l_sur.clone());
    }
    l_sur.add(&l_sim.scale(alpha))
}
