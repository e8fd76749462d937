//! Forward and backward passes of the query-only score-map network.
//!
//! Layout conventions: the prior map is channel-major `[d][N][N]`; token
//! embeddings are `[vocab][embed_dim]`; the projection is `[embed_dim][d]`;
//! conv weights are `[out][in][k][k]`.
//!
//! The first convolution is linear in the fused map `M ⊙ q`, so it can be
//! factored as `z0[o] = b0[o] + sum_c q_c (W0[o,c] ⋆ M[c])`. The per-channel
//! responses `W0[o,c] ⋆ M[c]` depend only on parameters, so they are computed
//! once per step and shared by every query in the batch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::conv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn kernel(&self, o: usize, c: usize, kk: usize) -> &[f64] {
        let at = (o * self.in_ch + c) * kk;
        &self.weight[at..at + kk]
    }

    fn kernel_mut(&mut self, o: usize, c: usize, kk: usize) -> &mut [f64] {
        let at = (o * self.in_ch + c) * kk;
        &mut self.weight[at..at + kk]
    }
}

/// All learnable parameters (also used as the gradient container).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub prior_map: Vec<f64>,
    pub token_embeddings: Vec<f64>,
    pub query_projection: Vec<f64>,
    pub conv: Vec<ConvLayer>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            prior_map: vec![0.0; self.prior_map.len()],
            token_embeddings: vec![0.0; self.token_embeddings.len()],
            query_projection: vec![0.0; self.query_projection.len()],
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("prior_map".into(), &self.prior_map),
            ("token_embeddings".into(), &self.token_embeddings),
            ("query_projection".into(), &self.query_projection),
        ];
        for (l, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv{l}.weight"), &layer.weight));
            out.push((format!("conv{l}.bias"), &layer.bias));
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = vec![
            ("prior_map".into(), &mut self.prior_map),
            ("token_embeddings".into(), &mut self.token_embeddings),
            ("query_projection".into(), &mut self.query_projection),
        ];
        for (l, layer) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{l}.weight"), &mut layer.weight));
            out.push((format!("conv{l}.bias"), &mut layer.bias));
        }
        out
    }

    /// `self -= rate(group) * grads`
    pub fn sgd_step(&mut self, grads: &Params, rate: impl Fn(&str) -> f64) {
        for ((name, dst), (_, src)) in self.groups_mut().into_iter().zip(grads.groups()) {
            let r = rate(&name);
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= r * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
    pub embed: usize,
    pub k: usize,
}

impl Dims {
    pub fn cells(&self) -> usize {
        self.n * self.n
    }
}

/// How the first convolution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstLayer {
    /// Precompute `W0[o,c] ⋆ M[c]` once per step.
    Factored,
    /// Convolve the fused map for every query.
    Direct,
}

/// Above this many cached response values the direct path is used.
const FACTORED_LIMIT: usize = 1 << 23;

impl FirstLayer {
    pub fn auto(params: &Params, dims: &Dims) -> FirstLayer {
        if params.conv[0].out_ch * dims.d * dims.cells() <= FACTORED_LIMIT {
            FirstLayer::Factored
        } else {
            FirstLayer::Direct
        }
    }
}

/// `W0[o,c] ⋆ M[c]` for every `(o, c)`, laid out `[o][c][N*N]`.
pub(crate) fn factored_responses(params: &Params, dims: &Dims) -> Vec<f64> {
    let cells = dims.cells();
    let kk = dims.k * dims.k;
    let layer = &params.conv[0];
    let mut out = vec![0.0; layer.out_ch * dims.d * cells];
    for o in 0..layer.out_ch {
        for c in 0..dims.d {
            let at = (o * dims.d + c) * cells;
            conv::forward(
                &mut out[at..at + cells],
                &params.prior_map[c * cells..(c + 1) * cells],
                layer.kernel(o, c, kk),
                dims.n,
                dims.k,
            );
        }
    }
    out
}

/// Mean token embedding followed by the projection. `token_ids` must be
/// non-empty (callers substitute the UNK id for empty queries).
pub(crate) fn encode(params: &Params, dims: &Dims, token_ids: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut pooled = vec![0.0; dims.embed];
    for &t in token_ids {
        let row = &params.token_embeddings[t * dims.embed..(t + 1) * dims.embed];
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let inv = 1.0 / token_ids.len() as f64;
    pooled.iter_mut().for_each(|p| *p *= inv);
    let mut q = vec![0.0; dims.d];
    for (e, pe) in pooled.iter().enumerate() {
        let row = &params.query_projection[e * dims.d..(e + 1) * dims.d];
        for (qc, w) in q.iter_mut().zip(row) {
            *qc += pe * w;
        }
    }
    (pooled, q)
}

pub(crate) struct Activations {
    /// Pre-activation output of each conv layer, `[out_ch][N*N]`.
    pub z: Vec<Vec<f64>>,
    /// `M ⊙ q`, kept only on the direct path.
    fused: Option<Vec<f64>>,
}

impl Activations {
    pub fn logits(&self) -> &[f64] {
        self.z.last().expect("at least one layer")
    }
}

pub(crate) fn forward(params: &Params, dims: &Dims, q: &[f64], factored: Option<&[f64]>) -> Activations {
    let cells = dims.cells();
    let kk = dims.k * dims.k;
    let first = &params.conv[0];
    let mut z0 = vec![0.0; first.out_ch * cells];
    let mut fused = None;
    match factored {
        Some(resp) => {
            for o in 0..first.out_ch {
                let out = &mut z0[o * cells..(o + 1) * cells];
                for (c, &qc) in q.iter().enumerate() {
                    let at = (o * dims.d + c) * cells;
                    for (z, r) in out.iter_mut().zip(&resp[at..at + cells]) {
                        *z += qc * r;
                    }
                }
            }
        }
        None => {
            let mut f = params.prior_map.clone();
            for (c, &qc) in q.iter().enumerate() {
                f[c * cells..(c + 1) * cells].iter_mut().for_each(|v| *v *= qc);
            }
            for o in 0..first.out_ch {
                for c in 0..dims.d {
                    conv::forward(
                        &mut z0[o * cells..(o + 1) * cells],
                        &f[c * cells..(c + 1) * cells],
                        first.kernel(o, c, kk),
                        dims.n,
                        dims.k,
                    );
                }
            }
            fused = Some(f);
        }
    }
    for o in 0..first.out_ch {
        let b = first.bias[o];
        z0[o * cells..(o + 1) * cells].iter_mut().for_each(|v| *v += b);
    }
    let mut z = vec![z0];
    for layer in &params.conv[1..] {
        let h: Vec<f64> = z.last().expect("previous layer").iter().map(|v| v.max(0.0)).collect();
        let mut out = vec![0.0; layer.out_ch * cells];
        for o in 0..layer.out_ch {
            let dst = &mut out[o * cells..(o + 1) * cells];
            for c in 0..layer.in_ch {
                conv::forward(dst, &h[c * cells..(c + 1) * cells], layer.kernel(o, c, kk), dims.n, dims.k);
            }
            let b = layer.bias[o];
            dst.iter_mut().for_each(|v| *v += b);
        }
        z.push(out);
    }
    Activations { z, fused }
}

/// Backpropagates `g_logits` through one query.
///
/// On the factored path the gradient w.r.t. the cached responses is
/// accumulated into `resp_grad` (layout as [`factored_responses`]) and
/// turned into prior-map / first-kernel gradients by [`finish_factored`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    params: &Params,
    dims: &Dims,
    token_ids: &[usize],
    pooled: &[f64],
    q: &[f64],
    acts: &Activations,
    factored: Option<(&[f64], &mut [f64])>,
    g_logits: Vec<f64>,
    grads: &mut Params,
) {
    let cells = dims.cells();
    let kk = dims.k * dims.k;
    let mut g = g_logits;
    for l in (1..params.conv.len()).rev() {
        let layer = &params.conv[l];
        let z_prev = &acts.z[l - 1];
        let h: Vec<f64> = z_prev.iter().map(|v| v.max(0.0)).collect();
        let mut g_h = vec![0.0; layer.in_ch * cells];
        let grad_layer = &mut grads.conv[l];
        for o in 0..layer.out_ch {
            let go = &g[o * cells..(o + 1) * cells];
            grad_layer.bias[o] += go.iter().sum::<f64>();
            for c in 0..layer.in_ch {
                conv::weight_grad(
                    grad_layer.kernel_mut(o, c, kk),
                    go,
                    &h[c * cells..(c + 1) * cells],
                    dims.n,
                    dims.k,
                );
                conv::input_grad(
                    &mut g_h[c * cells..(c + 1) * cells],
                    go,
                    layer.kernel(o, c, kk),
                    dims.n,
                    dims.k,
                );
            }
        }
        for (gv, zv) in g_h.iter_mut().zip(z_prev) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        g = g_h;
    }

    let first = &params.conv[0];
    let mut g_q = vec![0.0; dims.d];
    for o in 0..first.out_ch {
        grads.conv[0].bias[o] += g[o * cells..(o + 1) * cells].iter().sum::<f64>();
    }
    match factored {
        Some((resp, resp_grad)) => {
            for o in 0..first.out_ch {
                let go = &g[o * cells..(o + 1) * cells];
                for c in 0..dims.d {
                    let at = (o * dims.d + c) * cells;
                    g_q[c] += go.iter().zip(&resp[at..at + cells]).map(|(a, b)| a * b).sum::<f64>();
                    let qc = q[c];
                    for (dst, gv) in resp_grad[at..at + cells].iter_mut().zip(go) {
                        *dst += qc * gv;
                    }
                }
            }
        }
        None => {
            let fused = acts.fused.as_ref().expect("direct path keeps the fused map");
            let mut g_fused = vec![0.0; dims.d * cells];
            for o in 0..first.out_ch {
                let go = &g[o * cells..(o + 1) * cells];
                for c in 0..dims.d {
                    conv::weight_grad(
                        grads.conv[0].kernel_mut(o, c, kk),
                        go,
                        &fused[c * cells..(c + 1) * cells],
                        dims.n,
                        dims.k,
                    );
                    conv::input_grad(
                        &mut g_fused[c * cells..(c + 1) * cells],
                        go,
                        first.kernel(o, c, kk),
                        dims.n,
                        dims.k,
                    );
                }
            }
            for c in 0..dims.d {
                let m = &params.prior_map[c * cells..(c + 1) * cells];
                let gf = &g_fused[c * cells..(c + 1) * cells];
                g_q[c] = gf.iter().zip(m).map(|(a, b)| a * b).sum();
                for (dst, gv) in grads.prior_map[c * cells..(c + 1) * cells].iter_mut().zip(gf) {
                    *dst += q[c] * gv;
                }
            }
        }
    }

    // q = pooled · P ; pooled = mean of embedding rows
    let mut g_pooled = vec![0.0; dims.embed];
    for e in 0..dims.embed {
        let row = &params.query_projection[e * dims.d..(e + 1) * dims.d];
        g_pooled[e] = row.iter().zip(&g_q).map(|(a, b)| a * b).sum();
        for (dst, gq) in grads.query_projection[e * dims.d..(e + 1) * dims.d].iter_mut().zip(&g_q) {
            *dst += pooled[e] * gq;
        }
    }
    let inv = 1.0 / token_ids.len() as f64;
    for &t in token_ids {
        for (dst, gp) in grads.token_embeddings[t * dims.embed..(t + 1) * dims.embed]
            .iter_mut()
            .zip(&g_pooled)
        {
            *dst += gp * inv;
        }
    }
}

/// Converts accumulated response gradients into prior-map and first-kernel
/// gradients.
pub(crate) fn finish_factored(params: &Params, dims: &Dims, resp_grad: &[f64], grads: &mut Params) {
    let cells = dims.cells();
    let kk = dims.k * dims.k;
    let first = &params.conv[0];
    for o in 0..first.out_ch {
        for c in 0..dims.d {
            let at = (o * dims.d + c) * cells;
            let gr = &resp_grad[at..at + cells];
            conv::weight_grad(
                grads.conv[0].kernel_mut(o, c, kk),
                gr,
                &params.prior_map[c * cells..(c + 1) * cells],
                dims.n,
                dims.k,
            );
            conv::input_grad(
                &mut grads.prior_map[c * cells..(c + 1) * cells],
                gr,
                first.kernel(o, c, kk),
                dims.n,
                dims.k,
            );
        }
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Samples that share a token multiset share a forward pass. Targets enter
/// the cross-entropy linearly, so a group contributes
/// `count * softplus(z) - sum(y) * z` per cell.
pub(crate) struct Group<'a> {
    pub token_ids: &'a [usize],
    pub count: usize,
    pub target_sum: Vec<f64>,
}

pub(crate) fn group_examples<'a>(
    examples: impl IntoIterator<Item = (&'a [usize], &'a [usize], Vec<f64>)>,
) -> Vec<Group<'a>> {
    // key: sorted token ids; value: representative ids + accumulated targets
    let mut groups: BTreeMap<&'a [usize], Group<'a>> = BTreeMap::new();
    for (key, ids, target) in examples {
        let group = groups.entry(key).or_insert_with(|| Group {
            token_ids: ids,
            count: 0,
            target_sum: vec![0.0; target.len()],
        });
        group.count += 1;
        for (s, t) in group.target_sum.iter_mut().zip(&target) {
            *s += t;
        }
    }
    groups.into_values().collect()
}

/// Mean (over examples and valid cells) binary cross-entropy, and optionally
/// its gradient.
pub(crate) fn objective(
    params: &Params,
    dims: &Dims,
    groups: &[Group<'_>],
    valid: &[bool],
    n_examples: usize,
    path: FirstLayer,
    want_grad: bool,
) -> (f64, Option<Params>) {
    let n_valid = valid.iter().filter(|v| **v).count();
    let scale = 1.0 / (n_examples as f64 * n_valid as f64);
    let resp = match path {
        FirstLayer::Factored => Some(factored_responses(params, dims)),
        FirstLayer::Direct => None,
    };
    let mut grads = want_grad.then(|| params.zeros_like());
    let mut resp_grad = match (&resp, want_grad) {
        (Some(r), true) => vec![0.0; r.len()],
        _ => Vec::new(),
    };
    let mut loss = 0.0;
    for group in groups {
        let (pooled, q) = encode(params, dims, group.token_ids);
        let acts = forward(params, dims, &q, resp.as_deref());
        let count = group.count as f64;
        let logits = acts.logits();
        let mut g_logits = vec![0.0; logits.len()];
        for (cell, &z) in logits.iter().enumerate() {
            if !valid[cell] {
                continue;
            }
            let y = group.target_sum[cell];
            loss += count * softplus(z) - y * z;
            g_logits[cell] = scale * (count * sigmoid(z) - y);
        }
        if let Some(grads) = grads.as_mut() {
            let factored = resp.as_deref().map(|r| (r, resp_grad.as_mut_slice()));
            backward(params, dims, group.token_ids, &pooled, &q, &acts, factored, g_logits, grads);
        }
    }
    if let (Some(grads), Some(_)) = (grads.as_mut(), resp.as_ref()) {
        finish_factored(params, dims, &resp_grad, grads);
    }
    (loss * scale, grads)
}
