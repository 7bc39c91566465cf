use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{sigmoid, softplus, softplus_grad, RngStream};
use crate::scenes::volume::{render_field, render_field_vjp, trilinear, RadianceField};
use crate::scenes::{Camera, RenderConfig, Renderable};

/// Parameter blocks of a [`GridMlpField`], in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldBlock {
    Grid,
    DensityHidden,
    DensityOut,
    ColorHidden,
    ColorOut,
}

/// Feature grid followed by two small ReLU heads:
/// `σ = softplus(MLP_σ(h(p)))`, `c = sigmoid(MLP_c(h(p)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMlpField {
    pub resolution: usize,
    pub features: usize,
    pub hidden: usize,
    pub channels: usize,
    pub extent: f64,
    pub params: Vec<f64>,
}

struct HeadTrace {
    h: Vec<f64>,
    pre_d: Vec<f64>,
    pre_c: Vec<f64>,
    out_d: f64,
    out_c: Vec<f64>,
}

impl GridMlpField {
    pub fn random(
        resolution: usize,
        features: usize,
        hidden: usize,
        channels: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if resolution == 0 || features == 0 || hidden == 0 || channels == 0 {
            return Err(LabError::Validation("field dimensions must be positive".into()));
        }
        let mut f = Self {
            resolution,
            features,
            hidden,
            channels,
            extent: 1.0,
            params: Vec::new(),
        };
        let total = f.block_range(FieldBlock::ColorOut).end;
        f.params = vec![0.0; total];
        let blocks = [
            (FieldBlock::Grid, 0.5),
            (FieldBlock::DensityHidden, 1.0 / (features as f64).sqrt()),
            (FieldBlock::DensityOut, 1.0 / (hidden as f64).sqrt()),
            (FieldBlock::ColorHidden, 1.0 / (features as f64).sqrt()),
            (FieldBlock::ColorOut, 1.0 / (hidden as f64).sqrt()),
        ];
        for (b, scale) in blocks {
            let range = f.block_range(b);
            for v in &mut f.params[range] {
                *v = scale * rng.normal();
            }
        }
        Ok(f)
    }

    /// Index range of a parameter block (weights then biases for heads).
    pub fn block_range(&self, block: FieldBlock) -> Range<usize> {
        let (f, h, c) = (self.features, self.hidden, self.channels);
        let sizes = [self.resolution.pow(3) * f, h * f + h, h + 1, h * f + h, c * h + c];
        let idx = block as usize;
        let start: usize = sizes[..idx].iter().sum();
        start..start + sizes[idx]
    }

    fn features_at(&self, p: [f64; 3]) -> Vec<f64> {
        let f = self.features;
        let mut h = vec![0.0; f];
        for (idx, w) in trilinear(p, self.resolution, self.extent) {
            for (q, hq) in h.iter_mut().enumerate() {
                *hq += w * self.params[idx * f + q];
            }
        }
        h
    }

    fn forward(&self, p: [f64; 3]) -> HeadTrace {
        let (f, hd, c) = (self.features, self.hidden, self.channels);
        let h = self.features_at(p);
        let layer = |w: &[f64], b: &[f64], input: &[f64], rows: usize| -> Vec<f64> {
            (0..rows)
                .map(|r| b[r] + w[r * input.len()..(r + 1) * input.len()].iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
                .collect()
        };
        let dh = &self.params[self.block_range(FieldBlock::DensityHidden)];
        let pre_d = layer(&dh[..hd * f], &dh[hd * f..], &h, hd);
        let act_d: Vec<f64> = pre_d.iter().map(|v| v.max(0.0)).collect();
        let dout = &self.params[self.block_range(FieldBlock::DensityOut)];
        let out_d = layer(&dout[..hd], &dout[hd..], &act_d, 1)[0];
        let ch = &self.params[self.block_range(FieldBlock::ColorHidden)];
        let pre_c = layer(&ch[..hd * f], &ch[hd * f..], &h, hd);
        let act_c: Vec<f64> = pre_c.iter().map(|v| v.max(0.0)).collect();
        let cout = &self.params[self.block_range(FieldBlock::ColorOut)];
        let out_c = layer(&cout[..c * hd], &cout[c * hd..], &act_c, c);
        HeadTrace { h, pre_d, pre_c, out_d, out_c }
    }

    /// Smallest |pre-activation| over both hidden layers at `p`; the field is
    /// smooth in its parameters only where this is nonzero.
    pub fn relu_margin(&self, p: [f64; 3]) -> f64 {
        let tr = self.forward(p);
        tr.pre_d.iter().chain(&tr.pre_c).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn density_at(&self, p: [f64; 3]) -> f64 {
        softplus(self.forward(p).out_d)
    }

    pub fn color_at(&self, p: [f64; 3]) -> Vec<f64> {
        self.forward(p).out_c.into_iter().map(sigmoid).collect()
    }
}

impl RadianceField for GridMlpField {
    fn channels(&self) -> usize {
        self.channels
    }

    fn n_field_params(&self) -> usize {
        self.params.len()
    }

    fn query(&self, p: [f64; 3], color: &mut [f64]) -> f64 {
        let tr = self.forward(p);
        for (c, o) in color.iter_mut().zip(&tr.out_c) {
            *c = sigmoid(*o);
        }
        softplus(tr.out_d)
    }

    fn query_vjp(&self, p: [f64; 3], dsigma: f64, dcolor: &[f64], grad: &mut [f64]) {
        let (f, hd, c) = (self.features, self.hidden, self.channels);
        let tr = self.forward(p);
        let mut dh = vec![0.0; f];

        // density head
        let g_out = dsigma * softplus_grad(tr.out_d);
        let r_out = self.block_range(FieldBlock::DensityOut);
        let r_hid = self.block_range(FieldBlock::DensityHidden);
        grad[r_out.start + hd] += g_out;
        for r in 0..hd {
            if tr.pre_d[r] <= 0.0 {
                continue;
            }
            grad[r_out.start + r] += g_out * tr.pre_d[r];
            let g_pre = g_out * self.params[r_out.start + r];
            grad[r_hid.start + hd * f + r] += g_pre;
            for q in 0..f {
                grad[r_hid.start + r * f + q] += g_pre * tr.h[q];
                dh[q] += g_pre * self.params[r_hid.start + r * f + q];
            }
        }

        // color head
        let r_out = self.block_range(FieldBlock::ColorOut);
        let r_hid = self.block_range(FieldBlock::ColorHidden);
        let g_c: Vec<f64> = (0..c)
            .map(|k| {
                let s = sigmoid(tr.out_c[k]);
                dcolor[k] * s * (1.0 - s)
            })
            .collect();
        for k in 0..c {
            grad[r_out.start + c * hd + k] += g_c[k];
        }
        for r in 0..hd {
            if tr.pre_c[r] <= 0.0 {
                continue;
            }
            let mut g_pre = 0.0;
            for k in 0..c {
                grad[r_out.start + k * hd + r] += g_c[k] * tr.pre_c[r];
                g_pre += g_c[k] * self.params[r_out.start + k * hd + r];
            }
            grad[r_hid.start + hd * f + r] += g_pre;
            for q in 0..f {
                grad[r_hid.start + r * f + q] += g_pre * tr.h[q];
                dh[q] += g_pre * self.params[r_hid.start + r * f + q];
            }
        }

        for (idx, w) in trilinear(p, self.resolution, self.extent) {
            for q in 0..f {
                grad[idx * f + q] += w * dh[q];
            }
        }
    }
}

impl Renderable for GridMlpField {
    fn kind(&self) -> &'static str {
        "field"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn shape_info(&self) -> serde_json::Value {
        serde_json::json!({
            "resolution": self.resolution,
            "features": self.features,
            "hidden": self.hidden,
            "channels": self.channels,
            "extent": self.extent,
        })
    }

    fn render(&self, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>> {
        if self.extent != cfg.extent {
            return Err(LabError::Shape("field extent differs from render extent".into()));
        }
        render_field(self, camera, cfg)
    }

    fn render_vjp(&self, camera: &Camera, cfg: &RenderConfig, upstream: &[f64]) -> Result<Vec<f64>> {
        if self.extent != cfg.extent {
            return Err(LabError::Shape("field extent differs from render extent".into()));
        }
        render_field_vjp(self, camera, cfg, upstream)
    }
}
