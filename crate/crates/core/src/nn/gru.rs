//! GRU cells, dense layers, activations and Gaussian log-densities.
//!
//! Each structure exists in two matching forms: a plain forward used during
//! rollout collection and evaluation (no gradients), and a taped builder
//! used when replaying sequences for training. The two run the identical
//! arithmetic in the identical order, so their outputs agree bit-for-bit.

use super::tape::{NodeId, Tape};
use super::{ParamId, ParamSet};
use crate::{Error, Result};

use rand::Rng;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

const LN_2PI: f64 = 1.837_877_066_409_345_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu,
}

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// One gated recurrent unit: update gate z, reset gate r, candidate h̃.
///
/// The step takes a forgetting factor `γ_f`: the previous hidden state is
/// replaced by `γ_f · h_prev` inside every gate and candidate pre-activation
/// (the convex mix at the output uses the raw `h_prev`). `γ_f = 1` is the
/// standard GRU.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl GruCell {
    /// Register the cell's nine tensors under `prefix` in `params`.
    /// Weights initialize uniform ±1/sqrt(fan_in); biases start at zero.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |gate: &str, rows: usize, cols: usize| {
            params.add_uniform(&format!("{prefix}.{gate}"), rows, cols, rng)
        };
        let wz = w("wz", hidden_size, input_size);
        let uz = w("uz", hidden_size, hidden_size);
        let wr = w("wr", hidden_size, input_size);
        let ur = w("ur", hidden_size, hidden_size);
        let wh = w("wh", hidden_size, input_size);
        let uh = w("uh", hidden_size, hidden_size);
        let bz = params.add_zeros(&format!("{prefix}.bz"), hidden_size, 1);
        let br = params.add_zeros(&format!("{prefix}.br"), hidden_size, 1);
        let bh = params.add_zeros(&format!("{prefix}.bh"), hidden_size, 1);
        GruCell {
            input_size,
            hidden_size,
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
        }
    }

    fn check_shapes(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_size {
            return Err(Error::Shape {
                context: "gru input",
                expected: self.input_size,
                got: x.len(),
            });
        }
        if h_prev.len() != self.hidden_size {
            return Err(Error::Shape {
                context: "gru hidden",
                expected: self.hidden_size,
                got: h_prev.len(),
            });
        }
        Ok(())
    }

    /// Plain step; `h_new` receives the updated hidden state.
    pub fn step_plain(
        &self,
        p: &ParamSet,
        x: &[f64],
        h_prev: &[f64],
        forget: f64,
        h_new: &mut [f64],
    ) -> Result<()> {
        let (z, _r, hhat) = self.step_plain_parts(p, x, h_prev, forget)?;
        for i in 0..self.hidden_size {
            let omz = -1.0 * z[i] + 1.0;
            h_new[i] = omz * h_prev[i] + z[i] * hhat[i];
        }
        Ok(())
    }

    /// Gate-level step, exposed for tests and diagnostics.
    pub(crate) fn step_plain_parts(
        &self,
        p: &ParamSet,
        x: &[f64],
        h_prev: &[f64],
        forget: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_shapes(x, h_prev)?;
        let n = self.hidden_size;
        let hs: Vec<f64> = h_prev.iter().map(|&h| forget * h + 0.0).collect();

        let gate = |w: ParamId, u: ParamId, b: ParamId, hvec: &[f64]| -> Vec<f64> {
            let wv = p.slice(w);
            let uv = p.slice(u);
            let bv = p.slice(b);
            (0..n)
                .map(|i| {
                    let mut wx = 0.0;
                    for j in 0..self.input_size {
                        wx += wv[i * self.input_size + j] * x[j];
                    }
                    let mut uh = 0.0;
                    for j in 0..n {
                        uh += uv[i * n + j] * hvec[j];
                    }
                    (wx + uh) + bv[i]
                })
                .collect()
        };

        let z: Vec<f64> = gate(self.wz, self.uz, self.bz, &hs)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let r: Vec<f64> = gate(self.wr, self.ur, self.br, &hs)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let rh: Vec<f64> = (0..n).map(|i| r[i] * hs[i]).collect();
        let hhat: Vec<f64> = gate(self.wh, self.uh, self.bh, &rh)
            .iter()
            .map(|&v| v.tanh())
            .collect();
        Ok((z, r, hhat))
    }

    /// Insert the cell's parameter leaves into a tape.
    pub fn leaves(&self, tape: &mut Tape, p: &ParamSet) -> GruLeaves {
        GruLeaves {
            wz: tape.param(p, self.wz),
            uz: tape.param(p, self.uz),
            bz: tape.param(p, self.bz),
            wr: tape.param(p, self.wr),
            ur: tape.param(p, self.ur),
            br: tape.param(p, self.br),
            wh: tape.param(p, self.wh),
            uh: tape.param(p, self.uh),
            bh: tape.param(p, self.bh),
        }
    }

    /// Taped step mirroring [`step_plain`](Self::step_plain).
    pub fn step_taped(
        &self,
        tape: &mut Tape,
        leaves: &GruLeaves,
        x: NodeId,
        h_prev: NodeId,
        forget: f64,
    ) -> NodeId {
        let hs = tape.affine(h_prev, forget, 0.0);

        let gate = |w: NodeId, u: NodeId, b: NodeId, hvec: NodeId, tape: &mut Tape| {
            let wx = tape.matvec(w, x);
            let uh = tape.matvec(u, hvec);
            let s = tape.add(wx, uh);
            tape.add(s, b)
        };

        let pre_z = gate(leaves.wz, leaves.uz, leaves.bz, hs, tape);
        let z = tape.sigmoid(pre_z);
        let pre_r = gate(leaves.wr, leaves.ur, leaves.br, hs, tape);
        let r = tape.sigmoid(pre_r);
        let rh = tape.mul(r, hs);
        let pre_h = gate(leaves.wh, leaves.uh, leaves.bh, rh, tape);
        let hhat = tape.tanh(pre_h);

        let omz = tape.affine(z, -1.0, 1.0);
        let t1 = tape.mul(omz, h_prev);
        let t2 = tape.mul(z, hhat);
        tape.add(t1, t2)
    }
}

/// Parameter leaves of one GRU cell on a particular tape.
#[derive(Debug, Clone, Copy)]
pub struct GruLeaves {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

/// Plain dense layer: `out = act(W x + b)`.
pub fn dense_forward(
    p: &ParamSet,
    w: ParamId,
    b: ParamId,
    act: Activation,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let e = p.entry(w);
    if x.len() != e.cols {
        return Err(Error::Shape {
            context: "dense input",
            expected: e.cols,
            got: x.len(),
        });
    }
    if out.len() != e.rows {
        return Err(Error::Shape {
            context: "dense output",
            expected: e.rows,
            got: out.len(),
        });
    }
    let wv = p.slice(w);
    let bv = p.slice(b);
    for i in 0..e.rows {
        let mut acc = 0.0;
        for j in 0..e.cols {
            acc += wv[i * e.cols + j] * x[j];
        }
        let v = acc + bv[i];
        out[i] = match act {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu => leaky_relu(v),
        };
    }
    Ok(())
}

/// Taped dense layer mirroring [`dense_forward`].
pub fn dense_taped(
    tape: &mut Tape,
    w: NodeId,
    b: NodeId,
    act: Activation,
    x: NodeId,
) -> NodeId {
    let wx = tape.matvec(w, x);
    let pre = tape.add(wx, b);
    match act {
        Activation::Identity => pre,
        Activation::Tanh => tape.tanh(pre),
        Activation::LeakyRelu => tape.leaky_relu(pre, LEAKY_SLOPE),
    }
}

/// Log-density of a diagonal Gaussian at `sample`:
/// Σ_j −½((x_j−μ_j)/σ_j)² − log σ_j − ½ log 2π.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], sample: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), sample.len());
    let mut lp = 0.0;
    for j in 0..mean.len() {
        let sigma = log_std[j].exp();
        let z = (sample[j] - mean[j]) / sigma;
        lp += -0.5 * z * z - log_std[j] - 0.5 * LN_2PI;
    }
    lp
}

/// Log-determinant of the tanh squash `a = Δ_max · tanh(v)`:
/// Σ_j log Δ_max + log(1 − tanh²(v_j)), computed stably.
pub fn squash_log_det(v: &[f64], delta_max: f64) -> f64 {
    v.iter()
        .map(|&vj| {
            let a = vj.abs();
            // log(1 - tanh²) = 2 (log 2 − a − log(1 + e^{−2a}))
            delta_max.ln() + 2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
        })
        .sum()
}
