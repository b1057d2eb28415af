//! Channel mix, affine window projection and cosine self-similarity head,
//! with an analytic reverse pass.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, DohaError, Result};
use crate::rng;
use crate::ssp::{dot, mse, mse_grad, self_similarity, SspMap, NORM_EPS};

/// Multi-channel trace, channel-major (`data[c * frames + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Clip {
    pub fn new(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || frames == 0 {
            return param("clip needs at least one channel and one frame");
        }
        if data.len() != channels * frames {
            return param(format!(
                "clip {channels}x{frames} needs {} values, got {}",
                channels * frames,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DohaError::Data("non-finite clip value".into()));
        }
        Ok(Self { channels, frames, data })
    }

    pub fn from_channels(rows: &[Vec<f64>]) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return param("clip channels differ in length");
        }
        Self::new(rows.len(), frames, rows.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-frame channel mix followed by an `l_win x proj_dim` affine projection
/// of every stride-1 window and a cosine self-similarity head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub channels: usize,
    pub l_win: usize,
    pub proj_dim: usize,
    pub frame_weights: Vec<f64>,
    /// Row-major `l_win x proj_dim`.
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ToyModel {
    /// Projection initialised as the identity (rectangular when
    /// `proj_dim != l_win`) plus Gaussian jitter; channel weights drawn from
    /// N(weight_mean, weight_scale²); zero bias.
    pub fn init(
        channels: usize,
        l_win: usize,
        proj_dim: usize,
        weight_mean: f64,
        weight_scale: f64,
        proj_jitter: f64,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || l_win < 2 || proj_dim == 0 {
            return param("model needs channels >= 1, l_win >= 2, proj_dim >= 1");
        }
        let mut r = rng::keyed(seed, &[0x004d_4f44_454c]);
        let w = Normal::new(weight_mean, weight_scale.max(0.0)).map_err(|e| DohaError::Parameter(e.to_string()))?;
        let j = Normal::new(0.0, proj_jitter.max(0.0)).map_err(|e| DohaError::Parameter(e.to_string()))?;
        let frame_weights = (0..channels).map(|_| w.sample(&mut r)).collect();
        let proj = (0..l_win * proj_dim)
            .map(|idx| {
                let (k, p) = (idx / proj_dim, idx % proj_dim);
                let eye = if k == p { 1.0 } else { 0.0 };
                eye + j.sample(&mut r)
            })
            .collect();
        Ok(Self { channels, l_win, proj_dim, frame_weights, proj, bias: vec![0.0; proj_dim] })
    }

    /// Identity projection and the given channel weights.
    pub fn identity(frame_weights: Vec<f64>, l_win: usize) -> Self {
        let proj = (0..l_win * l_win).map(|i| if i / l_win == i % l_win { 1.0 } else { 0.0 }).collect();
        Self {
            channels: frame_weights.len(),
            l_win,
            proj_dim: l_win,
            frame_weights,
            proj,
            bias: vec![0.0; l_win],
        }
    }

    /// Number of trainable parameters, `C + l_win * P + P`.
    pub fn num_params(&self) -> usize {
        self.channels + self.l_win * self.proj_dim + self.proj_dim
    }

    /// Parameters flattened as `[frame_weights, proj, bias]`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.frame_weights);
        v.extend_from_slice(&self.proj);
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return param(format!("expected {} parameters, got {}", self.num_params(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(DohaError::Numeric("non-finite parameter".into()));
        }
        let (w, rest) = flat.split_at(self.channels);
        let (p, b) = rest.split_at(self.l_win * self.proj_dim);
        self.frame_weights.copy_from_slice(w);
        self.proj.copy_from_slice(p);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    fn check_clip(&self, clip: &Clip) -> Result<()> {
        if clip.channels != self.channels {
            return param(format!("clip has {} channels, model expects {}", clip.channels, self.channels));
        }
        if clip.frames < self.l_win {
            return param(format!("clip of {} frames is shorter than window {}", clip.frames, self.l_win));
        }
        Ok(())
    }

    /// Channel-mixed per-frame trace.
    pub fn mix(&self, clip: &Clip) -> Result<Vec<f64>> {
        self.check_clip(clip)?;
        let mut s = vec![0.0; clip.frames];
        for (c, &w) in self.frame_weights.iter().enumerate() {
            for (st, x) in s.iter_mut().zip(clip.channel(c)) {
                *st += w * x;
            }
        }
        Ok(s)
    }

    fn project(&self, s: &[f64]) -> Vec<f64> {
        let (l, p) = (self.l_win, self.proj_dim);
        let n = s.len() - l + 1;
        let mut z = Vec::with_capacity(n * p);
        for i in 0..n {
            let mut zi = self.bias.clone();
            for k in 0..l {
                let sv = s[i + k];
                for (zp, w) in zi.iter_mut().zip(&self.proj[k * p..(k + 1) * p]) {
                    *zp += sv * w;
                }
            }
            z.extend(zi);
        }
        z
    }

    /// Predicted SSP map at sampling rate `fs`.
    pub fn forward(&self, clip: &Clip, fs: f64) -> Result<SspMap> {
        let s = self.mix(clip)?;
        let z = self.project(&s);
        let (size, values) = self_similarity(&z, self.proj_dim);
        SspMap::from_values(size, values, self.l_win, fs)
    }

    /// Loss against `label` and its gradient with respect to [`Self::params`].
    pub fn backward(&self, clip: &Clip, label: &SspMap) -> Result<(f64, Vec<f64>)> {
        let s = self.mix(clip)?;
        let (l, p) = (self.l_win, self.proj_dim);
        let n = s.len() - l + 1;
        if label.size() != n {
            return param(format!("label size {} does not match output size {n}", label.size()));
        }
        let z = self.project(&s);
        let (_, pred) = self_similarity(&z, p);
        let loss = mse(&pred, label.values());
        let g_map = mse_grad(&pred, label.values());

        let norms: Vec<f64> = z.chunks_exact(p).map(|zi| dot(zi, zi).sqrt()).collect();
        let valid: Vec<bool> = norms.iter().map(|&v| v >= NORM_EPS).collect();
        let unit: Vec<f64> = z
            .chunks_exact(p)
            .zip(&norms)
            .flat_map(|(zi, &nz)| zi.iter().map(move |v| if nz >= NORM_EPS { v / nz } else { 0.0 }))
            .collect();

        // d loss / d z_i = (1/|z_i|) * sum_j S_ij (u_j - c_ij u_i), S = G + G^T off the diagonal
        let mut gz = vec![0.0; n * p];
        for i in 0..n {
            if !valid[i] {
                continue;
            }
            let gi = &mut gz[i * p..(i + 1) * p];
            let mut coef = 0.0;
            for j in 0..n {
                if j == i || !valid[j] {
                    continue;
                }
                let sij = g_map[i * n + j] + g_map[j * n + i];
                if sij == 0.0 {
                    continue;
                }
                coef += sij * pred[i * n + j];
                for (g, u) in gi.iter_mut().zip(&unit[j * p..(j + 1) * p]) {
                    *g += sij * u;
                }
            }
            let inv = 1.0 / norms[i];
            for (g, u) in gi.iter_mut().zip(&unit[i * p..(i + 1) * p]) {
                *g = (*g - coef * u) * inv;
            }
        }

        let mut d_proj = vec![0.0; l * p];
        let mut d_bias = vec![0.0; p];
        let mut d_s = vec![0.0; s.len()];
        for i in 0..n {
            let gi = &gz[i * p..(i + 1) * p];
            for (db, g) in d_bias.iter_mut().zip(gi) {
                *db += g;
            }
            for k in 0..l {
                let row = &self.proj[k * p..(k + 1) * p];
                d_s[i + k] += dot(row, gi);
                let sv = s[i + k];
                for (dw, g) in d_proj[k * p..(k + 1) * p].iter_mut().zip(gi) {
                    *dw += sv * g;
                }
            }
        }
        let mut grad: Vec<f64> = (0..self.channels).map(|c| dot(&d_s, clip.channel(c))).collect();
        grad.extend(d_proj);
        grad.extend(d_bias);
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(DohaError::Numeric("non-finite loss or gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Loss only.
    pub fn loss(&self, clip: &Clip, label: &SspMap) -> Result<f64> {
        let pred = self.forward(clip, label.fs)?;
        if pred.size() != label.size() {
            return param(format!("label size {} does not match output size {}", label.size(), pred.size()));
        }
        Ok(mse(pred.values(), label.values()))
    }
}
