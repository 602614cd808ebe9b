//! Feed-forward network shared by the actor and the critic.
//!
//! ```text
//! bandwidth history --conv1d(filters, kernel)--relu--\
//! next chunk sizes  --conv1d(filters, kernel)--relu---+-- dense(hidden)--relu-- dense(out)
//! scalar features   --dense(scalar_units)----relu--/
//! ```
//!
//! Parameters live in one flat vector so that gradients, federated averaging
//! and checkpoints all work on plain slices.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Length of the bandwidth history input.
    pub history: usize,
    /// Number of actions; also the length of the next-size input.
    pub actions: usize,
    pub filters: usize,
    pub kernel: usize,
    pub scalar_units: usize,
    pub hidden: usize,
}

impl ArchSpec {
    /// The full-size architecture for `levels` quality levels.
    pub fn standard(levels: u8) -> Self {
        ArchSpec {
            history: crate::sim::BW_HISTORY_LEN,
            actions: 2 * levels as usize,
            filters: 128,
            kernel: 4,
            scalar_units: 128,
            hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions < 2
            || self.filters == 0
            || self.hidden == 0
            || self.scalar_units == 0
            || self.kernel == 0
        {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        if self.kernel > self.history || self.kernel > self.actions {
            return Err(Error::Shape(format!(
                "kernel {} longer than an input ({} history, {} actions)",
                self.kernel, self.history, self.actions
            )));
        }
        Ok(())
    }

    /// Scalars: buffer, download time, remaining chunks and the previous
    /// action one-hot.
    pub fn scalar_inputs(&self) -> usize {
        3 + self.actions
    }

    pub fn feature_len(&self) -> usize {
        self.history + self.actions + self.scalar_inputs()
    }

    fn bw_positions(&self) -> usize {
        self.history - self.kernel + 1
    }

    fn size_positions(&self) -> usize {
        self.actions - self.kernel + 1
    }

    fn merged(&self) -> usize {
        self.filters * (self.bw_positions() + self.size_positions()) + self.scalar_units
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub arch: ArchSpec,
    pub outputs: usize,
    bw_w: usize,
    bw_b: usize,
    sz_w: usize,
    sz_b: usize,
    sc_w: usize,
    sc_b: usize,
    h_w: usize,
    h_b: usize,
    o_w: usize,
    o_b: usize,
    len: usize,
}

impl Layout {
    pub fn new(arch: ArchSpec, outputs: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let bw_w = take(arch.filters * arch.kernel);
        let bw_b = take(arch.filters);
        let sz_w = take(arch.filters * arch.kernel);
        let sz_b = take(arch.filters);
        let sc_w = take(arch.scalar_units * arch.scalar_inputs());
        let sc_b = take(arch.scalar_units);
        let h_w = take(arch.hidden * arch.merged());
        let h_b = take(arch.hidden);
        let o_w = take(outputs * arch.hidden);
        let o_b = take(outputs);
        Layout {
            arch,
            outputs,
            bw_w,
            bw_b,
            sz_w,
            sz_b,
            sc_w,
            sc_b,
            h_w,
            h_b,
            o_w,
            o_b,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Name of the block holding parameter `i`.
    pub fn block_name(&self, i: usize) -> &'static str {
        match i {
            i if i < self.bw_b => "bandwidth conv weights",
            i if i < self.sz_w => "bandwidth conv bias",
            i if i < self.sz_b => "size conv weights",
            i if i < self.sc_w => "size conv bias",
            i if i < self.sc_b => "scalar weights",
            i if i < self.h_w => "scalar bias",
            i if i < self.h_b => "hidden weights",
            i if i < self.o_w => "hidden bias",
            i if i < self.o_b => "output weights",
            _ => "output bias",
        }
    }

    /// Random hidden layers (Gaussian, variance `2 / fan_in`) and a zero
    /// output layer.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = &self.arch;
        let mut p = vec![0.0; self.len];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let scale = (2.0 / fan_in as f64).sqrt();
            for v in &mut p[range] {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        };
        fill(self.bw_w..self.bw_b, a.kernel);
        fill(self.sz_w..self.sz_b, a.kernel);
        fill(self.sc_w..self.sc_b, a.scalar_inputs());
        fill(self.h_w..self.h_b, a.merged());
        p
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct Cache {
    input: Vec<f64>,
    /// Post-ReLU merged layer.
    merged: Vec<f64>,
    /// Post-ReLU hidden layer.
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn forward(layout: &Layout, params: &[f64], input: &[f64]) -> Result<Cache> {
    let a = &layout.arch;
    if params.len() != layout.len {
        return Err(Error::Shape(format!(
            "expected {} parameters, got {}",
            layout.len,
            params.len()
        )));
    }
    if input.len() != a.feature_len() {
        return Err(Error::Shape(format!(
            "expected {} features, got {}",
            a.feature_len(),
            input.len()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("input features".into()));
    }
    let (bw, rest) = input.split_at(a.history);
    let (sizes, scalars) = rest.split_at(a.actions);

    let mut merged = Vec::with_capacity(a.merged());
    conv(
        &params[layout.bw_w..layout.bw_b],
        &params[layout.bw_b..layout.sz_w],
        bw,
        a,
        &mut merged,
    );
    conv(
        &params[layout.sz_w..layout.sz_b],
        &params[layout.sz_b..layout.sc_w],
        sizes,
        a,
        &mut merged,
    );
    dense(
        &params[layout.sc_w..layout.sc_b],
        &params[layout.sc_b..layout.h_w],
        scalars,
        &mut merged,
        true,
    );

    let mut hidden = Vec::with_capacity(a.hidden);
    dense(
        &params[layout.h_w..layout.h_b],
        &params[layout.h_b..layout.o_w],
        &merged,
        &mut hidden,
        true,
    );
    let mut output = Vec::with_capacity(layout.outputs);
    dense(
        &params[layout.o_w..layout.o_b],
        &params[layout.o_b..layout.len],
        &hidden,
        &mut output,
        false,
    );
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(Cache {
        input: input.to_vec(),
        merged,
        hidden,
        output,
    })
}

fn conv(w: &[f64], b: &[f64], x: &[f64], a: &ArchSpec, out: &mut Vec<f64>) {
    let positions = x.len() - a.kernel + 1;
    for f in 0..a.filters {
        let wf = &w[f * a.kernel..(f + 1) * a.kernel];
        for p in 0..positions {
            let z = b[f]
                + wf.iter()
                    .zip(&x[p..p + a.kernel])
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            out.push(relu(z));
        }
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>, activate: bool) {
    for (j, bias) in b.iter().enumerate() {
        let row = &w[j * x.len()..(j + 1) * x.len()];
        let z = bias + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        out.push(if activate { relu(z) } else { z });
    }
}

/// Accumulates `d(output) -> d(params)` into `grad`.
pub fn backward(layout: &Layout, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let a = &layout.arch;
    debug_assert_eq!(grad.len(), layout.len);
    debug_assert_eq!(d_out.len(), layout.outputs);

    // Output layer.
    let mut d_hidden = vec![0.0; a.hidden];
    for (j, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad[layout.o_b + j] += g;
        let row = layout.o_w + j * a.hidden;
        for k in 0..a.hidden {
            grad[row + k] += g * cache.hidden[k];
            d_hidden[k] += g * params[row + k];
        }
    }

    // Hidden layer; ReLU passes gradient where the activation is positive.
    let m = a.merged();
    let mut d_merged = vec![0.0; m];
    for j in 0..a.hidden {
        if cache.hidden[j] <= 0.0 || d_hidden[j] == 0.0 {
            continue;
        }
        let g = d_hidden[j];
        grad[layout.h_b + j] += g;
        let row = layout.h_w + j * m;
        let w = &params[row..row + m];
        for (gw, x) in grad[row..row + m].iter_mut().zip(&cache.merged) {
            *gw += g * x;
        }
        for (dm, w) in d_merged.iter_mut().zip(w) {
            *dm += g * w;
        }
    }

    let (bw, rest) = cache.input.split_at(a.history);
    let (sizes, scalars) = rest.split_at(a.actions);
    let bw_len = a.filters * a.bw_positions();
    let sz_len = a.filters * a.size_positions();
    conv_backward(
        layout.bw_w,
        layout.bw_b,
        bw,
        &cache.merged[..bw_len],
        &d_merged[..bw_len],
        a,
        grad,
    );
    conv_backward(
        layout.sz_w,
        layout.sz_b,
        sizes,
        &cache.merged[bw_len..bw_len + sz_len],
        &d_merged[bw_len..bw_len + sz_len],
        a,
        grad,
    );
    let sc_act = &cache.merged[bw_len + sz_len..];
    let sc_d = &d_merged[bw_len + sz_len..];
    let n = scalars.len();
    for j in 0..a.scalar_units {
        if sc_act[j] <= 0.0 || sc_d[j] == 0.0 {
            continue;
        }
        grad[layout.sc_b + j] += sc_d[j];
        let row = layout.sc_w + j * n;
        for (gw, x) in grad[row..row + n].iter_mut().zip(scalars) {
            *gw += sc_d[j] * x;
        }
    }
}

fn conv_backward(
    w_at: usize,
    b_at: usize,
    x: &[f64],
    act: &[f64],
    d: &[f64],
    a: &ArchSpec,
    grad: &mut [f64],
) {
    let positions = x.len() - a.kernel + 1;
    for f in 0..a.filters {
        for p in 0..positions {
            let i = f * positions + p;
            if act[i] <= 0.0 || d[i] == 0.0 {
                continue;
            }
            grad[b_at + f] += d[i];
            for k in 0..a.kernel {
                grad[w_at + f * a.kernel + k] += d[i] * x[p + k];
            }
        }
    }
}
