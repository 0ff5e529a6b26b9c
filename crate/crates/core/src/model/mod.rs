//! The full network: two modality encoders, the cross-modal bridge, two
//! translating decoders and the fusion head that emits discrete hazards.
//!
//! Token flow for one patient with `M` patches and `K` genomic groups:
//!
//! ```text
//! P (M×F) ─proj─► [p⁽⁰⁾; ·] ─MSA─PPEG─MSA─► p, P_inst (M×d) ──┐
//! G (K groups) ─proj─► [g⁽⁰⁾; ·] ─MSA─MSA─► g, G_inst (K×d) ──┤ cross-modal
//!                                                               ▼
//!   𝒫 (K×d) ─► [ρ⁽⁰⁾; 𝒫] ─MSA─MSA─► ĝ        𝒢 (M×d) ─► [ξ⁽⁰⁾; 𝒢] ─MSA─PPEG─MSA─► p̂
//!
//! hazards = sigmoid(MLP((p + p̂)/2 ⊕ (g + ĝ)/2))
//! ```

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    cross_modal_attention, multi_head_self_attention, ppeg, uniform_cross_modal, AttentionMode, CrossModalParams,
    MsaParams, PpegParams, Visitor, VisitorMut,
};
use crate::data::PatientRecord;
use crate::error::{CmtaError, Result};
use crate::survival::{alignment_loss, nll_survival_loss, total_loss, AlignmentMetric, SurvivalOutput};
use crate::tensor::{init, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub landmarks: usize,
    pub pinv_iters: usize,
    pub attention: AttentionMode,
    pub bins: usize,
    pub pathology_width: usize,
    pub genomic_widths: Vec<usize>,
    pub mlp_hidden: usize,
    pub use_cross_modal: bool,
    pub use_alignment: bool,
    pub detach_targets: bool,
    pub use_ppeg: bool,
    pub alignment_metric: AlignmentMetric,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            heads: 8,
            landmarks: 8,
            pinv_iters: 6,
            attention: AttentionMode::Nystrom,
            bins: 4,
            pathology_width: 1024,
            genomic_widths: vec![64; 6],
            mlp_hidden: 64,
            use_cross_modal: true,
            use_alignment: true,
            detach_targets: true,
            use_ppeg: true,
            alignment_metric: AlignmentMetric::L1,
            alpha: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CmtaError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.landmarks == 0 || self.pinv_iters == 0 {
            return fail("landmarks and pinv_iters must be positive".into());
        }
        if self.bins < 2 {
            return fail(format!("need at least 2 bins, got {}", self.bins));
        }
        if self.pathology_width == 0 || self.genomic_widths.is_empty() || self.genomic_widths.contains(&0) {
            return fail("input widths must be positive and at least one genomic group is required".into());
        }
        if self.mlp_hidden == 0 {
            return fail("mlp_hidden must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        Ok(())
    }

    /// Weight actually applied to the alignment term.
    pub fn alpha_effective(&self) -> f64 {
        if self.use_alignment {
            self.alpha
        } else {
            0.0
        }
    }

    /// Shape check of a record against the configured input widths.
    pub fn check_record(&self, record: &PatientRecord) -> Result<()> {
        if record.pathology.cols != self.pathology_width {
            return Err(CmtaError::dim(
                "pathology input",
                &[record.pathology.rows, record.pathology.cols],
                &[record.pathology.rows, self.pathology_width],
            ));
        }
        let widths = record.genomic_widths();
        if widths != self.genomic_widths {
            return Err(CmtaError::dim("genomic input", &widths, &self.genomic_widths));
        }
        Ok(())
    }
}

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Linear> {
        Ok(Linear {
            w: init::fan_in_uniform(&[input, output], input, rng)?,
            b: init::constant(&[1, output], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_row(&self.b)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub pathology_proj: Linear,
    pub genomic_proj: Vec<Linear>,
    /// `p⁽⁰⁾`, `g⁽⁰⁾`, `ρ⁽⁰⁾`, `ξ⁽⁰⁾`
    pub class_p: Tensor,
    pub class_g: Tensor,
    pub class_rho: Tensor,
    pub class_xi: Tensor,
    pub pathology_encoder: [MsaParams; 2],
    pub pathology_ppeg: PpegParams,
    pub genomics_encoder: [MsaParams; 2],
    pub cross: CrossModalParams,
    pub pathology_decoder: [MsaParams; 2],
    pub genomics_decoder: [MsaParams; 2],
    pub genomics_decoder_ppeg: PpegParams,
    pub fusion_hidden: Linear,
    pub fusion_out: Linear,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
        cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.dim;
        let msa = |rng: &mut ChaCha8Rng| -> Result<[MsaParams; 2]> {
            Ok([MsaParams::init(d, cfg.heads, rng)?, MsaParams::init(d, cfg.heads, rng)?])
        };
        Ok(ModelParams {
            pathology_proj: Linear::init(cfg.pathology_width, d, rng)?,
            genomic_proj: cfg.genomic_widths.iter().map(|&w| Linear::init(w, d, rng)).collect::<Result<_>>()?,
            class_p: init::normal(&[1, d], 0.02, rng)?,
            class_g: init::normal(&[1, d], 0.02, rng)?,
            class_rho: init::normal(&[1, d], 0.02, rng)?,
            class_xi: init::normal(&[1, d], 0.02, rng)?,
            pathology_encoder: msa(rng)?,
            pathology_ppeg: PpegParams::init(d, rng)?,
            genomics_encoder: msa(rng)?,
            cross: CrossModalParams::init(d, rng)?,
            pathology_decoder: msa(rng)?,
            genomics_decoder: msa(rng)?,
            genomics_decoder_ppeg: PpegParams::init(d, rng)?,
            fusion_hidden: Linear::init(2 * d, cfg.mlp_hidden, rng)?,
            fusion_out: Linear::init(cfg.mlp_hidden, cfg.bins, rng)?,
        })
    }

    /// Enumerates every parameter with a stable dotted name, always in the
    /// same order.
    pub fn visit(&self, f: &mut Visitor<'_>) {
        self.pathology_proj.visit("pathology_proj", f);
        for (k, l) in self.genomic_proj.iter().enumerate() {
            l.visit(&format!("genomic_proj.{k}"), f);
        }
        f("class_p".into(), &self.class_p);
        f("class_g".into(), &self.class_g);
        f("class_rho".into(), &self.class_rho);
        f("class_xi".into(), &self.class_xi);
        for (i, m) in self.pathology_encoder.iter().enumerate() {
            m.visit(&format!("pathology_encoder.{i}"), f);
        }
        self.pathology_ppeg.visit("pathology_ppeg", f);
        for (i, m) in self.genomics_encoder.iter().enumerate() {
            m.visit(&format!("genomics_encoder.{i}"), f);
        }
        self.cross.visit("cross", f);
        for (i, m) in self.pathology_decoder.iter().enumerate() {
            m.visit(&format!("pathology_decoder.{i}"), f);
        }
        for (i, m) in self.genomics_decoder.iter().enumerate() {
            m.visit(&format!("genomics_decoder.{i}"), f);
        }
        self.genomics_decoder_ppeg.visit("genomics_decoder_ppeg", f);
        self.fusion_hidden.visit("fusion_hidden", f);
        self.fusion_out.visit("fusion_out", f);
    }

    /// Same order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        self.pathology_proj.visit_mut("pathology_proj", f);
        for (k, l) in self.genomic_proj.iter_mut().enumerate() {
            l.visit_mut(&format!("genomic_proj.{k}"), f);
        }
        f("class_p".into(), &mut self.class_p);
        f("class_g".into(), &mut self.class_g);
        f("class_rho".into(), &mut self.class_rho);
        f("class_xi".into(), &mut self.class_xi);
        for (i, m) in self.pathology_encoder.iter_mut().enumerate() {
            m.visit_mut(&format!("pathology_encoder.{i}"), f);
        }
        self.pathology_ppeg.visit_mut("pathology_ppeg", f);
        for (i, m) in self.genomics_encoder.iter_mut().enumerate() {
            m.visit_mut(&format!("genomics_encoder.{i}"), f);
        }
        self.cross.visit_mut("cross", f);
        for (i, m) in self.pathology_decoder.iter_mut().enumerate() {
            m.visit_mut(&format!("pathology_decoder.{i}"), f);
        }
        for (i, m) in self.genomics_decoder.iter_mut().enumerate() {
            m.visit_mut(&format!("genomics_decoder.{i}"), f);
        }
        self.genomics_decoder_ppeg.visit_mut("genomics_decoder_ppeg", f);
        self.fusion_hidden.visit_mut("fusion_hidden", f);
        self.fusion_out.visit_mut("fusion_out", f);
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t.clone())));
        out
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Copy whose tensors require no gradient; inference on it builds no
    /// backward graph and the copy may be shared across threads.
    pub fn frozen(&self) -> ModelParams {
        let mut out = self.clone();
        out.visit_mut(&mut |_, t| *t = t.detach());
        out
    }

    /// Copy with fresh trainable leaves holding the same values.
    pub fn trainable(&self) -> ModelParams {
        let mut out = self.clone();
        out.visit_mut(&mut |_, t| *t = t.to_param());
        out
    }
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    /// Class rows of the pathology and genomics encoders, `1×d`.
    pub p: Tensor,
    pub g: Tensor,
    /// Class rows of the genomics and pathology decoders, `1×d`.
    pub p_hat: Tensor,
    pub g_hat: Tensor,
    pub pathology_tokens: Tensor,
    pub genomic_tokens: Tensor,
    /// `𝒫` (`K×d`) and `𝒢` (`M×d`).
    pub p_related: Tensor,
    pub g_related: Tensor,
    pub h_p: Tensor,
    pub h_g: Tensor,
    /// `1×B` hazards in `(0, 1)`.
    pub hazards: Tensor,
}

fn attend(x: &Tensor, msa: &MsaParams, cfg: &ModelConfig) -> Result<Tensor> {
    let n = x.shape()[0];
    let out = multi_head_self_attention(x, msa, cfg.attention, cfg.landmarks.min(n), cfg.pinv_iters)?;
    x.add(&out)
}

fn split_class(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = x.shape()[0];
    Ok((x.slice_rows(0, 1)?, x.slice_rows(1, n)?))
}

/// Class token, two residual attention blocks and an optional PPEG between
/// them. Returns the class row and the remaining rows.
fn translate(class: &Tensor, tokens: &Tensor, blocks: &[MsaParams; 2], pe: Option<&PpegParams>, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let mut x = attend(&Tensor::concat_rows(&[class.clone(), tokens.clone()])?, &blocks[0], cfg)?;
    if let Some(pe) = pe {
        let (c, rest) = split_class(&x)?;
        let (c, rest) = ppeg(&c, &rest, pe)?;
        x = Tensor::concat_rows(&[c, rest])?;
    }
    split_class(&attend(&x, &blocks[1], cfg)?)
}

/// Projects `M×F` patch embeddings and runs the pathology encoder.
pub fn encode_pathology(pathology: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let (m, _) = pathology.dims2()?;
    if m == 0 {
        return Err(CmtaError::Empty("pathology bag has no patches".into()));
    }
    let tokens = params.pathology_proj.forward(pathology)?.gelu();
    let pe = cfg.use_ppeg.then_some(&params.pathology_ppeg);
    translate(&params.class_p, &tokens, &params.pathology_encoder, pe, cfg)
}

/// Projects each `1×w_k` genomic group to a token and runs the genomics
/// encoder (no PPEG).
pub fn encode_genomics(groups: &[Tensor], params: &ModelParams, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    if groups.is_empty() {
        return Err(CmtaError::Empty("no genomic groups".into()));
    }
    if groups.len() != params.genomic_proj.len() {
        return Err(CmtaError::dim("genomic groups", &[groups.len()], &[params.genomic_proj.len()]));
    }
    let rows = groups
        .iter()
        .zip(&params.genomic_proj)
        .map(|(g, proj)| Ok(proj.forward(&g.reshape(&[1, g.numel()])?)?.gelu()))
        .collect::<Result<Vec<_>>>()?;
    translate(&params.class_g, &Tensor::concat_rows(&rows)?, &params.genomics_encoder, None, cfg)
}

/// Translates `𝒫` (`K×d`) into `ĝ`.
pub fn decode_pathology(p_related: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    Ok(translate(&params.class_rho, p_related, &params.pathology_decoder, None, cfg)?.0)
}

/// Translates `𝒢` (`M×d`) into `p̂`.
pub fn decode_genomics(g_related: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let pe = cfg.use_ppeg.then_some(&params.genomics_decoder_ppeg);
    Ok(translate(&params.class_xi, g_related, &params.genomics_decoder, pe, cfg)?.0)
}

/// Forward pass on tensors; `groups[k]` holds genomic group `k`.
pub fn forward_tensors(pathology: &Tensor, groups: &[Tensor], params: &ModelParams, cfg: &ModelConfig) -> Result<ForwardArtifacts> {
    let (p, pathology_tokens) = encode_pathology(pathology, params, cfg)?;
    let (g, genomic_tokens) = encode_genomics(groups, params, cfg)?;
    let bridge = if cfg.use_cross_modal {
        cross_modal_attention(&pathology_tokens, &genomic_tokens, &params.cross)?
    } else {
        uniform_cross_modal(&pathology_tokens, &genomic_tokens, &params.cross)?
    };
    let g_hat = decode_pathology(&bridge.p_related, params, cfg)?;
    let p_hat = decode_genomics(&bridge.g_related, params, cfg)?;
    let fused = Tensor::concat_cols(&[p.add(&p_hat)?.scale(0.5), g.add(&g_hat)?.scale(0.5)])?;
    let hidden = params.fusion_hidden.forward(&fused)?.gelu();
    let hazards = params.fusion_out.forward(&hidden)?.sigmoid();
    Ok(ForwardArtifacts {
        p,
        g,
        p_hat,
        g_hat,
        pathology_tokens,
        genomic_tokens,
        p_related: bridge.p_related,
        g_related: bridge.g_related,
        h_p: bridge.h_p,
        h_g: bridge.h_g,
        hazards,
    })
}

/// Record inputs as constant tensors.
pub fn record_tensors(record: &PatientRecord) -> Result<(Tensor, Vec<Tensor>)> {
    let p = &record.pathology;
    let pathology = Tensor::new(p.data.clone(), &[p.rows, p.cols])?;
    let groups = record
        .genomics
        .iter()
        .map(|g| Tensor::new(g.clone(), &[1, g.len()]))
        .collect::<Result<Vec<_>>>()?;
    Ok((pathology, groups))
}

pub fn forward(record: &PatientRecord, params: &ModelParams, cfg: &ModelConfig) -> Result<(ForwardArtifacts, SurvivalOutput)> {
    cfg.check_record(record)?;
    let (pathology, groups) = record_tensors(record)?;
    let art = forward_tensors(&pathology, &groups, params, cfg)?;
    let surv = SurvivalOutput::from_hazards(art.hazards.values().to_vec());
    Ok((art, surv))
}

/// Scalar losses of one patient; `sim` is `None` when alignment is off.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Tensor,
    pub sur: Tensor,
    pub sim: Option<Tensor>,
}

pub fn patient_loss(art: &ForwardArtifacts, event_bin: usize, censored: bool, cfg: &ModelConfig) -> Result<LossTerms> {
    let sur = nll_survival_loss(&art.hazards, event_bin, censored)?;
    if !cfg.use_alignment {
        return Ok(LossTerms { total: sur.clone(), sur, sim: None });
    }
    let sim = alignment_loss(&art.p, &art.p_hat, &art.g, &art.g_hat, cfg.alignment_metric, cfg.detach_targets)?;
    let total = total_loss(&sur, &sim, cfg.alpha)?;
    Ok(LossTerms { total, sur, sim: Some(sim) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            heads: 2,
            landmarks: 4,
            pathology_width: 12,
            genomic_widths: vec![3, 5, 4],
            mlp_hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn record(m: usize, seed: u64) -> PatientRecord {
        let mut x = seed as f64;
        let mut next = || {
            x = (x * 1.7 + 0.31).sin();
            x
        };
        PatientRecord {
            patient_id: "a".into(),
            pathology: Matrix::new(m, 12, (0..m * 12).map(|_| next()).collect()).unwrap(),
            genomics: [3, 5, 4].iter().map(|&w| (0..w).map(|_| next()).collect()).collect(),
            time_months: 3.0,
            censored: false,
        }
    }

    #[test]
    fn shapes_and_hazard_range() {
        let cfg = small_cfg();
        let params = ModelParams::init(&cfg, 1).unwrap();
        for m in [1, 2, 5, 10] {
            let (art, surv) = forward(&record(m, 3), &params, &cfg).unwrap();
            assert_eq!(art.p.shape(), &[1, 8]);
            assert_eq!(art.p_hat.shape(), &[1, 8]);
            assert_eq!(art.pathology_tokens.shape(), &[m, 8]);
            assert_eq!(art.genomic_tokens.shape(), &[3, 8]);
            assert_eq!(art.h_p.shape(), &[3, m]);
            assert_eq!(surv.hazards.len(), 4);
            assert!(surv.hazards.iter().all(|&h| h > 0.0 && h < 1.0));
        }
    }

    #[test]
    fn zero_head_gives_half_hazards() {
        let cfg = small_cfg();
        let mut params = ModelParams::init(&cfg, 1).unwrap();
        params.fusion_out.w = Tensor::zeros(&[8, 4]).unwrap();
        params.fusion_out.b = Tensor::zeros(&[1, 4]).unwrap();
        let (_, surv) = forward(&record(3, 1), &params, &cfg).unwrap();
        assert_eq!(surv.hazards, vec![0.5; 4]);
        assert_eq!(surv.survival, vec![0.5, 0.25, 0.125, 0.0625]);
    }

    #[test]
    fn residual_identity_with_zero_projections() {
        let cfg = small_cfg();
        let mut params = ModelParams::init(&cfg, 2).unwrap();
        for blocks in [&mut params.pathology_encoder, &mut params.genomics_encoder] {
            for b in blocks.iter_mut() {
                b.wv.iter_mut().for_each(|w| *w = Tensor::zeros(w.shape()).unwrap());
                b.wo = Tensor::zeros(&[8, 8]).unwrap();
            }
        }
        let pe = &mut params.pathology_ppeg;
        for k in [&mut pe.k3, &mut pe.k5, &mut pe.k7] {
            *k = Tensor::zeros(k.shape()).unwrap();
        }
        let (path, groups) = record_tensors(&record(5, 4)).unwrap();
        let (p, inst) = encode_pathology(&path, &params, &cfg).unwrap();
        assert_eq!(p.values(), params.class_p.values());
        let emb = params.pathology_proj.forward(&path).unwrap().gelu();
        assert_eq!(inst.values(), emb.values());
        let (g, _) = encode_genomics(&groups, &params, &cfg).unwrap();
        assert_eq!(g.values(), params.class_g.values());
    }

    #[test]
    fn bag_permutation_invariant_without_ppeg() {
        let cfg = ModelConfig { use_ppeg: false, attention: AttentionMode::Exact, ..small_cfg() };
        let params = ModelParams::init(&cfg, 5).unwrap();
        let r = record(6, 2);
        let mut shuffled = r.clone();
        let perm = [3, 0, 5, 1, 4, 2];
        shuffled.pathology.data = perm.iter().flat_map(|&i| r.pathology.row(i).to_vec()).collect();
        let (a, sa) = forward(&r, &params, &cfg).unwrap();
        let (b, sb) = forward(&shuffled, &params, &cfg).unwrap();
        for (x, y) in [(&a.p, &b.p), (&a.g, &b.g), (&a.p_hat, &b.p_hat), (&a.g_hat, &b.g_hat)] {
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        for (u, v) in sa.hazards.iter().zip(&sb.hazards) {
            assert!((u - v).abs() < 1e-12);
        }
        let cfg = ModelConfig { use_ppeg: true, ..cfg };
        let (_, sa) = forward(&r, &params, &cfg).unwrap();
        let (_, sb) = forward(&shuffled, &params, &cfg).unwrap();
        assert!(sa.hazards.iter().zip(&sb.hazards).any(|(u, v)| (u - v).abs() > 1e-9));
    }

    #[test]
    fn record_shape_mismatch() {
        let cfg = ModelConfig { pathology_width: 13, ..small_cfg() };
        let params = ModelParams::init(&cfg, 1).unwrap();
        assert!(matches!(forward(&record(2, 1), &params, &cfg), Err(CmtaError::Dimension { .. })));
    }

    #[test]
    fn frozen_builds_no_graph() {
        let cfg = small_cfg();
        let params = ModelParams::init(&cfg, 1).unwrap().frozen();
        let (art, _) = forward(&record(3, 1), &params, &cfg).unwrap();
        assert!(!art.hazards.requires_grad());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { heads: 3, ..small_cfg() }.validate().is_err());
        assert!(ModelConfig { bins: 1, ..small_cfg() }.validate().is_err());
        assert!(ModelConfig { alpha: -0.5, ..small_cfg() }.validate().is_err());
        assert!(small_cfg().validate().is_ok());
    }
}
