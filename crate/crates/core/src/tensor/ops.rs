//! Arithmetic, matrix products, reductions and shape manipulation.

use super::Tensor;
use crate::error::{CmtaError, Result};

/// `a (m×k) · b (k×n)`.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×n) · bᵀ` where `b` is `k×n`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for r in 0..m {
        let brow = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2().map_err(|_| CmtaError::dim("matmul", self.shape(), other.shape()))?;
        let (k2, n) = other.dims2().map_err(|_| CmtaError::dim("matmul", self.shape(), other.shape()))?;
        if k != k2 {
            return Err(CmtaError::dim("matmul", self.shape(), other.shape()));
        }
        let out = mm(self.values(), other.values(), m, k, n);
        Ok(Tensor::from_op(out, vec![m, n], vec![self.clone(), other.clone()], move |g, ps| {
            let da = ps[0].requires_grad().then(|| mm_nt(g, ps[1].values(), m, n, k));
            let db = ps[1].requires_grad().then(|| mm_tn(ps[0].values(), g, m, k, n));
            vec![da, db]
        }))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let out = transpose_raw(self.values(), r, c);
        Ok(Tensor::from_op(out, vec![c, r], vec![self.clone()], move |g, _| {
            vec![Some(transpose_raw(g, c, r))]
        }))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CmtaError::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let out = self.values().iter().zip(other.values()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, ps| {
            ps.iter().map(|p| p.requires_grad().then(|| g.to_vec())).collect()
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let out = self.values().iter().zip(other.values()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, ps| {
            vec![
                ps[0].requires_grad().then(|| g.to_vec()),
                ps[1].requires_grad().then(|| g.iter().map(|v| -v).collect()),
            ]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let out = self.values().iter().zip(other.values()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, ps| {
            let (a, b) = (ps[0].values(), ps[1].values());
            vec![
                ps[0].requires_grad().then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                ps[1].requires_grad().then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        }))
    }

    /// Elementwise quotient. Division by an exact zero is a domain error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "div")?;
        if let Some(i) = other.values().iter().position(|&v| v == 0.0) {
            return Err(CmtaError::Domain { op: "div", index: i, value: 0.0 });
        }
        let out = self.values().iter().zip(other.values()).map(|(a, b)| a / b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), other.clone()], |g, ps| {
            let (a, b) = (ps[0].values(), ps[1].values());
            vec![
                ps[0].requires_grad().then(|| g.iter().zip(b).map(|(g, b)| g / b).collect()),
                ps[1].requires_grad().then(|| {
                    g.iter().zip(a.iter().zip(b)).map(|(g, (a, b))| -g * a / (b * b)).collect()
                }),
            ]
        }))
    }

    /// Adds a `1×d` (or `[d]`) row to every row of an `n×d` tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (n, d) = self.dims2()?;
        if row.numel() != d {
            return Err(CmtaError::dim("add_row", self.shape(), row.shape()));
        }
        let r = row.values();
        let out = self.values().chunks(d).flat_map(|x| x.iter().zip(r).map(|(a, b)| a + b)).collect();
        Ok(Tensor::from_op(out, vec![n, d], vec![self.clone(), row.clone()], move |g, ps| {
            let db = ps[1].requires_grad().then(|| {
                let mut acc = vec![0.0; d];
                for gr in g.chunks(d) {
                    acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
                acc
            });
            vec![ps[0].requires_grad().then(|| g.to_vec()), db]
        }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.values().iter().map(|v| v * c).collect();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.values().iter().map(|v| v + c).collect();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], |g, _| vec![Some(g.to_vec())])
    }

    /// Multiplies every element by a single-element tensor.
    pub fn mul_scalar(&self, s: &Tensor) -> Result<Tensor> {
        let sv = s.item()?;
        let out = self.values().iter().map(|v| v * sv).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone(), s.clone()], move |g, ps| {
            vec![
                ps[0].requires_grad().then(|| g.iter().map(|v| v * sv).collect()),
                ps[1].requires_grad().then(|| vec![g.iter().zip(ps[0].values()).map(|(g, x)| g * x).sum()]),
            ]
        }))
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.values().iter().sum();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Column sums of an `r×c` tensor, shape `1×c`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; c];
        for row in self.values().chunks(c) {
            out.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        Ok(Tensor::from_op(out, vec![1, c], vec![self.clone()], move |g, _| {
            vec![Some((0..r).flat_map(|_| g.iter().copied()).collect())]
        }))
    }

    /// Largest element; the gradient flows to the first maximiser.
    pub fn max(&self) -> Tensor {
        let (idx, &m) = self
            .values()
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        let n = self.numel();
        Tensor::from_op(vec![m], vec![1], vec![self.clone()], move |g, _| {
            let mut d = vec![0.0; n];
            d[idx] = g[0];
            vec![Some(d)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        super::check_shape(self.numel(), shape).map_err(|_| CmtaError::dim("reshape", self.shape(), shape))?;
        Ok(Tensor::from_op(self.values().to_vec(), shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, _) = self.dims2()?;
        if start >= end || end > r {
            return Err(CmtaError::contract(format!("row slice {start}..{end} out of range for {r} rows")));
        }
        self.gather_rows(&(start..end).collect::<Vec<_>>())
    }

    /// Selects rows by index (repeats allowed); gradients scatter-add back.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if rows.is_empty() {
            return Err(CmtaError::contract("gather_rows needs at least one index"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(CmtaError::contract(format!("row index {bad} out of range for {r} rows")));
        }
        let x = self.values();
        let out = rows.iter().flat_map(|&i| x[i * c..(i + 1) * c].iter().copied()).collect();
        let idx = rows.to_vec();
        Ok(Tensor::from_op(out, vec![rows.len(), c], vec![self.clone()], move |g, _| {
            let mut d = vec![0.0; r * c];
            for (k, &i) in idx.iter().enumerate() {
                d[i * c..(i + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]).for_each(|(a, b)| *a += b);
            }
            vec![Some(d)]
        }))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| CmtaError::contract("concat_rows of nothing"))?;
        let (_, c) = first.dims2()?;
        let mut rows = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, pc) = p.dims2()?;
            if pc != c {
                return Err(CmtaError::dim("concat_rows", first.shape(), p.shape()));
            }
            rows.push(r);
        }
        let out = parts.iter().flat_map(|p| p.values().iter().copied()).collect();
        let total = rows.iter().sum();
        Ok(Tensor::from_op(out, vec![total, c], parts.to_vec(), move |g, ps| {
            let mut off = 0;
            ps.iter()
                .zip(&rows)
                .map(|(p, &r)| {
                    let seg = &g[off * c..(off + r) * c];
                    off += r;
                    p.requires_grad().then(|| seg.to_vec())
                })
                .collect()
        }))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if start >= end || end > c {
            return Err(CmtaError::contract(format!("column slice {start}..{end} out of range for {c} columns")));
        }
        let w = end - start;
        let out = self.values().chunks(c).flat_map(|row| row[start..end].iter().copied()).collect();
        Ok(Tensor::from_op(out, vec![r, w], vec![self.clone()], move |g, _| {
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                d[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(d)]
        }))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| CmtaError::contract("concat_cols of nothing"))?;
        let (r, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, w) = p.dims2()?;
            if pr != r {
                return Err(CmtaError::dim("concat_cols", first.shape(), p.shape()));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.values()[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor::from_op(out, vec![r, total], parts.to_vec(), move |g, ps| {
            let mut off = 0;
            ps.iter()
                .zip(&widths)
                .map(|(p, &w)| {
                    let start = off;
                    off += w;
                    p.requires_grad().then(|| {
                        (0..r).flat_map(|i| g[i * total + start..i * total + start + w].iter().copied()).collect()
                    })
                })
                .collect()
        }))
    }
}
