use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{dot, RngStream};
use crate::teacher::GmTeacher;

/// Row-major `rows x dim` matrix of token embeddings, serialized as nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for TokenMatrix {
    type Error = LabError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(LabError::Validation("token matrix must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            check_len(&format!("token row {i}"), r.len(), dim)?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data,
        })
    }
}

impl From<TokenMatrix> for Vec<Vec<f64>> {
    fn from(m: TokenMatrix) -> Self {
        m.data.chunks(m.dim).map(<[f64]>::to_vec).collect()
    }
}

impl TokenMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_flat(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_len("token matrix data", data.len(), rows * dim)?;
        Ok(Self { rows, dim, data })
    }

    /// I.i.d. `N(0, scale²)` entries.
    pub fn random(rows: usize, dim: usize, scale: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * dim).map(|_| scale * rng.normal()).collect();
        Self { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Mean of the rows.
    pub fn pool(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for r in self.data.chunks(self.dim) {
            for (a, b) in p.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.rows as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&TokenMatrix]) -> Result<TokenMatrix> {
        let dim = parts
            .first()
            .ok_or_else(|| LabError::Validation("nothing to concatenate".into()))?
            .dim;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            check_len("concatenated token width", p.dim, dim)?;
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, dim, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptSegment {
    Base,
    Hiper,
    Shared,
}

/// A prompt `[y; h; φ]`: frozen base tokens plus optional per-particle
/// (HiPer) and shared learnable blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub base: TokenMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hiper: Option<TokenMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared: Option<TokenMatrix>,
}

impl PromptSpec {
    pub fn new(base: TokenMatrix) -> Self {
        Self {
            base,
            hiper: None,
            shared: None,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.base.dim
    }

    pub fn validate(&self) -> Result<()> {
        for m in self.hiper.iter().chain(&self.shared) {
            check_len("prompt segment width", m.dim, self.base.dim)?;
        }
        Ok(())
    }

    /// Concatenate the requested segments in the order base, hiper, shared.
    pub fn concat(&self, include_hiper: bool, include_shared: bool) -> Result<TokenMatrix> {
        let mut parts = vec![&self.base];
        if include_hiper {
            parts.push(
                self.hiper
                    .as_ref()
                    .ok_or_else(|| LabError::Validation("prompt has no hiper segment".into()))?,
            );
        }
        if include_shared {
            parts.push(
                self.shared
                    .as_ref()
                    .ok_or_else(|| LabError::Validation("prompt has no shared segment".into()))?,
            );
        }
        TokenMatrix::concat(&parts)
    }

    /// Row ranges of each present segment within [`concat`](Self::concat)`(true, true)`.
    pub fn segments(&self) -> Vec<(PromptSegment, std::ops::Range<usize>)> {
        let mut out = vec![(PromptSegment::Base, 0..self.base.rows)];
        let mut at = self.base.rows;
        if let Some(h) = &self.hiper {
            out.push((PromptSegment::Hiper, at..at + h.rows));
            at += h.rows;
        }
        if let Some(s) = &self.shared {
            out.push((PromptSegment::Shared, at..at + s.rows));
        }
        out
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Random base prompt whose pooled vector has equal logits on every anchor of
/// `teacher`, so `w(y)` is uniform over the components.
pub fn equidistant_base(teacher: &GmTeacher, rows: usize, scale: f64, rng: &mut RngStream) -> Result<TokenMatrix> {
    let mut base = TokenMatrix::random(rows, teacher.embed_dim, scale, rng);
    let k = teacher.n_components();
    if k == 1 {
        return Ok(base);
    }
    let anchors: Vec<&[f64]> = teacher.components.iter().map(|c| c.anchor.as_slice()).collect();
    let p = base.pool();
    let logits: Vec<f64> = anchors.iter().map(|a| dot(a, &p)).collect();
    let mean = logits.iter().sum::<f64>() / k as f64;
    let rhs: Vec<f64> = logits.iter().map(|l| l - mean).collect();
    let gram: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| anchors.iter().map(|b| dot(a, b)).collect())
        .collect();
    let coef = solve(gram, rhs).ok_or_else(|| {
        LabError::Validation("anchors are linearly dependent; cannot build an equidistant base prompt".into())
    })?;
    let mut delta = vec![0.0; teacher.embed_dim];
    for (c, a) in coef.iter().zip(&anchors) {
        for (d, v) in delta.iter_mut().zip(a.iter()) {
            *d += c * v;
        }
    }
    for r in base.data.chunks_mut(teacher.embed_dim) {
        for (x, d) in r.iter_mut().zip(&delta) {
            *x -= d;
        }
    }
    Ok(base)
}
