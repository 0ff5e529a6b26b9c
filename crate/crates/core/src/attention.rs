//! Self-attention (exact and Nyström), the pyramid position encoding
//! generator, and the cross-modal attention bridge between the two
//! modalities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmtaError, Result};
use crate::tensor::{init, Tensor};

/// Callback used to enumerate named parameters.
pub type Visitor<'a> = dyn FnMut(String, &Tensor) + 'a;
pub type VisitorMut<'a> = dyn FnMut(String, &mut Tensor) + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Exact,
    #[default]
    Nystrom,
}

/// Multi-head self-attention weights with the pre-attention layer norm.
#[derive(Debug, Clone)]
pub struct MsaParams {
    /// Per-head `d×d_head` projections.
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    /// `d×d` output projection.
    pub wo: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl MsaParams {
    pub fn init(d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(CmtaError::Config(format!("width {d} is not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let proj = |rng: &mut _| (0..heads).map(|_| init::fan_in_uniform(&[d, dh], d, rng)).collect::<Result<Vec<_>>>();
        Ok(MsaParams {
            wq: proj(rng)?,
            wk: proj(rng)?,
            wv: proj(rng)?,
            wo: init::fan_in_uniform(&[d, d], d, rng)?,
            ln_gain: init::constant(&[d], 1.0)?,
            ln_bias: init::constant(&[d], 0.0)?,
        })
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn dim(&self) -> usize {
        self.wo.shape()[0]
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        for (name, ws) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            for (h, w) in ws.iter().enumerate() {
                f(format!("{prefix}.{name}.{h}"), w);
            }
        }
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.ln_gain"), &self.ln_gain);
        f(format!("{prefix}.ln_bias"), &self.ln_bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        for (name, ws) in [("wq", &mut self.wq), ("wk", &mut self.wk), ("wv", &mut self.wv)] {
            for (h, w) in ws.iter_mut().enumerate() {
                f(format!("{prefix}.{name}.{h}"), w);
            }
        }
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.ln_gain"), &mut self.ln_gain);
        f(format!("{prefix}.ln_bias"), &mut self.ln_bias);
    }
}

/// Segment-mean pooling matrix (`m×n`): row `i` averages tokens
/// `floor(i·n/m) .. floor((i+1)·n/m)`.
fn landmark_pool(n: usize, m: usize) -> Result<Tensor> {
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let (lo, hi) = (i * n / m, (i + 1) * n / m);
        let w = 1.0 / (hi - lo) as f64;
        for j in lo..hi {
            data[i * n + j] = w;
        }
    }
    Tensor::new(data, &[m, n])
}

/// Iterative Moore-Penrose pseudo-inverse used by Nyström attention.
///
/// Starts from `Z = aᵀ / (‖a‖₁·‖a‖∞)` and repeats
/// `Z ← ¼·Z·(13I − aZ·(15I − aZ·(7I − aZ)))`.
pub fn iterative_pinv(a: &Tensor, iters: usize) -> Result<Tensor> {
    let (m, m2) = a.dims2()?;
    if m != m2 {
        return Err(CmtaError::contract(format!("pseudo-inverse needs a square matrix, got {:?}", a.shape())));
    }
    if iters == 0 {
        return Err(CmtaError::contract("pseudo-inverse needs at least one iteration"));
    }
    let abs = a.abs();
    let col_norm = abs.sum_rows()?.max();
    let row_norm = abs.transpose()?.sum_rows()?.max();
    let scale = col_norm.mul(&row_norm)?.unary(crate::tensor::Unary::Recip)?;
    let mut z = a.transpose()?.mul_scalar(&scale)?;
    let eye = Tensor::eye(m)?;
    let (i7, i15, i13) = (eye.scale(7.0), eye.scale(15.0), eye.scale(13.0));
    for _ in 0..iters {
        let az = a.matmul(&z)?;
        let inner = i7.sub(&az)?;
        let mid = i15.sub(&az.matmul(&inner)?)?;
        let outer = i13.sub(&az.matmul(&mid)?)?;
        z = z.matmul(&outer)?.scale(0.25);
    }
    Ok(z)
}

fn check_tokens(tokens: &Tensor, d: usize) -> Result<usize> {
    let (n, td) = tokens.dims2()?;
    if td != d {
        return Err(CmtaError::dim("attention tokens", tokens.shape(), &[n, d]));
    }
    Ok(n)
}

/// `MSA(LN(tokens))`, without the residual.
///
/// In Nyström mode `landmarks` segment means stand in for the queries and
/// keys; `landmarks` may not exceed the token count.
pub fn multi_head_self_attention(
    tokens: &Tensor,
    params: &MsaParams,
    mode: AttentionMode,
    landmarks: usize,
    pinv_iters: usize,
) -> Result<Tensor> {
    let d = params.dim();
    let n = check_tokens(tokens, d)?;
    let x = tokens.layer_norm(&params.ln_gain, &params.ln_bias)?;
    let dh = d / params.heads();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let pool = match mode {
        AttentionMode::Exact => None,
        AttentionMode::Nystrom => {
            if landmarks == 0 || landmarks > n {
                return Err(CmtaError::contract(format!(
                    "Nyström attention needs 1..={n} landmarks, got {landmarks}"
                )));
            }
            Some(landmark_pool(n, landmarks)?)
        }
    };
    let mut heads = Vec::with_capacity(params.heads());
    for h in 0..params.heads() {
        let q = x.matmul(&params.wq[h])?.scale(inv_sqrt);
        let k = x.matmul(&params.wk[h])?;
        let v = x.matmul(&params.wv[h])?;
        let out = match &pool {
            None => q.matmul(&k.transpose()?)?.softmax(1)?.matmul(&v)?,
            Some(pool) => {
                let ql = pool.matmul(&q)?;
                let kl = pool.matmul(&k)?;
                let kernel_1 = q.matmul(&kl.transpose()?)?.softmax(1)?;
                let kernel_2 = ql.matmul(&kl.transpose()?)?.softmax(1)?;
                let kernel_3 = ql.matmul(&k.transpose()?)?.softmax(1)?;
                let core = iterative_pinv(&kernel_2, pinv_iters)?;
                kernel_1.matmul(&core)?.matmul(&kernel_3.matmul(&v)?)?
            }
        };
        heads.push(out);
    }
    Tensor::concat_cols(&heads)?.matmul(&params.wo)
}

/// Depthwise kernels of sizes 3, 5 and 7.
#[derive(Debug, Clone)]
pub struct PpegParams {
    pub k3: Tensor,
    pub k5: Tensor,
    pub k7: Tensor,
}

impl PpegParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PpegParams {
            k3: init::fan_in_uniform(&[d, 3, 3], 9, rng)?,
            k5: init::fan_in_uniform(&[d, 5, 5], 25, rng)?,
            k7: init::fan_in_uniform(&[d, 7, 7], 49, rng)?,
        })
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        f(format!("{prefix}.k3"), &self.k3);
        f(format!("{prefix}.k5"), &self.k5);
        f(format!("{prefix}.k7"), &self.k7);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        f(format!("{prefix}.k3"), &mut self.k3);
        f(format!("{prefix}.k5"), &mut self.k5);
        f(format!("{prefix}.k7"), &mut self.k7);
    }
}

/// Pyramid position encoding over the feature tokens.
///
/// Tokens are padded cyclically to the next perfect square `s²`, laid out on
/// an `s×s` grid with one channel per feature, convolved at three scales and
/// summed with the input. Pad rows are dropped on exit and the class token is
/// returned untouched.
pub fn ppeg(class_token: &Tensor, feature_tokens: &Tensor, params: &PpegParams) -> Result<(Tensor, Tensor)> {
    let (n, d) = feature_tokens.dims2()?;
    if params.k3.shape()[0] != d {
        return Err(CmtaError::dim("ppeg", feature_tokens.shape(), params.k3.shape()));
    }
    let side = (1..).find(|s| s * s >= n).expect("some square covers n");
    let cells = side * side;
    let idx: Vec<usize> = (0..cells).map(|i| i % n).collect();
    let grid = feature_tokens.gather_rows(&idx)?.transpose()?.reshape(&[d, side, side])?;
    let mixed = grid
        .add(&grid.depthwise_conv2d(&params.k3)?)?
        .add(&grid.depthwise_conv2d(&params.k5)?)?
        .add(&grid.depthwise_conv2d(&params.k7)?)?;
    let tokens = mixed.reshape(&[d, cells])?.transpose()?;
    let tokens = if cells == n { tokens } else { tokens.slice_rows(0, n)? };
    Ok((class_token.clone(), tokens))
}

/// Square `d×d` maps of the cross-modal bridge.
#[derive(Debug, Clone)]
pub struct CrossModalParams {
    pub u: Tensor,
    pub v: Tensor,
    pub w_p: Tensor,
    pub w_g: Tensor,
}

impl CrossModalParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(CrossModalParams {
            u: init::fan_in_uniform(&[d, d], d, rng)?,
            v: init::fan_in_uniform(&[d, d], d, rng)?,
            w_p: init::fan_in_uniform(&[d, d], d, rng)?,
            w_g: init::fan_in_uniform(&[d, d], d, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        f(format!("{prefix}.u"), &self.u);
        f(format!("{prefix}.v"), &self.v);
        f(format!("{prefix}.w_p"), &self.w_p);
        f(format!("{prefix}.w_g"), &self.w_g);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        f(format!("{prefix}.u"), &mut self.u);
        f(format!("{prefix}.v"), &mut self.v);
        f(format!("{prefix}.w_p"), &mut self.w_p);
        f(format!("{prefix}.w_g"), &mut self.w_g);
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalOutput {
    /// Genomics-related information gathered from pathology tokens, `K×d`.
    pub p_related: Tensor,
    /// Pathology-related information gathered from genomics tokens, `M×d`.
    pub g_related: Tensor,
    /// `K×M`, rows sum to one.
    pub h_p: Tensor,
    /// `M×K`, rows sum to one.
    pub h_g: Tensor,
    /// Pre-softmax `K×M` logits of `h_p`; `h_g` uses their transpose.
    pub logits: Tensor,
}

fn cross_shapes(p_tokens: &Tensor, g_tokens: &Tensor, d: usize) -> Result<(usize, usize)> {
    let (m, pd) = p_tokens.dims2()?;
    let (k, gd) = g_tokens.dims2()?;
    if pd != d || gd != d {
        return Err(CmtaError::dim("cross_modal_attention", p_tokens.shape(), g_tokens.shape()));
    }
    Ok((m, k))
}

/// Single-head cross-modal attention between `M` pathology tokens and `K`
/// genomics tokens. Softmax runs along each query row.
pub fn cross_modal_attention(p_tokens: &Tensor, g_tokens: &Tensor, params: &CrossModalParams) -> Result<CrossModalOutput> {
    let d = params.dim();
    cross_shapes(p_tokens, g_tokens, d)?;
    let gu = g_tokens.matmul(&params.u)?;
    let pv = p_tokens.matmul(&params.v)?;
    let logits = gu.matmul(&pv.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    let h_p = logits.softmax(1)?;
    let h_g = logits.transpose()?.softmax(1)?;
    let p_related = h_p.matmul(&p_tokens.matmul(&params.w_p)?)?;
    let g_related = h_g.matmul(&g_tokens.matmul(&params.w_g)?)?;
    Ok(CrossModalOutput {
        p_related,
        g_related,
        h_p,
        h_g,
        logits,
    })
}

/// The bridge with its attention maps replaced by uniform averages; `U` and
/// `V` take no part.
pub fn uniform_cross_modal(p_tokens: &Tensor, g_tokens: &Tensor, params: &CrossModalParams) -> Result<CrossModalOutput> {
    let d = params.dim();
    let (m, k) = cross_shapes(p_tokens, g_tokens, d)?;
    let h_p = Tensor::full(&[k, m], 1.0 / m as f64)?;
    let h_g = Tensor::full(&[m, k], 1.0 / k as f64)?;
    let p_related = h_p.matmul(&p_tokens.matmul(&params.w_p)?)?;
    let g_related = h_g.matmul(&g_tokens.matmul(&params.w_g)?)?;
    Ok(CrossModalOutput {
        p_related,
        g_related,
        h_p,
        h_g,
        logits: Tensor::zeros(&[k, m])?,
    })
}
