//! Convolutional softmax policy with hand-written backpropagation.
//!
//! Architecture: one input channel, `filters` valid (unpadded) `k x k`
//! convolutions with stride `s` in both directions, ReLU, flatten, one
//! fully-connected layer onto the action logits, softmax.
//!
//! Observations are binary, so every receptive field is one of `2^(k*k)`
//! patterns. [`Network`] precomputes each filter's response to every
//! pattern; the convolution becomes one table lookup per output cell and the
//! kernel gradient is accumulated per pattern.

mod adam;
mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::env::{Action, ClusterConfig, StateImage};
use crate::error::{usage_err, Error, Result};
use crate::seed::rng_from;

pub const DEFAULT_FILTERS: usize = 8;
pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_STRIDE: usize = 2;
const MAX_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub actions: usize,
}

impl PolicyLayout {
    pub fn for_cluster(cluster: &ClusterConfig) -> Self {
        Self {
            height: cluster.image_height(),
            width: cluster.image_width(),
            filters: DEFAULT_FILTERS,
            kernel: DEFAULT_KERNEL,
            stride: DEFAULT_STRIDE,
            actions: cluster.num_actions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.filters >= 1
            && (1..=MAX_KERNEL).contains(&self.kernel)
            && self.stride >= 1
            && self.height >= self.kernel
            && self.width >= self.kernel
            && self.actions >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("unsupported network layout {self}")))
        }
    }

    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    /// Output cells per filter.
    pub fn cells(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Length of the flattened convolution output.
    pub fn flat_len(&self) -> usize {
        self.filters * self.cells()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel * self.kernel
    }

    fn patterns(&self) -> usize {
        1 << self.kernel_len()
    }
}

impl std::fmt::Display for PolicyLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{} image, {} filters {}x{}/{}, {} actions",
            self.height, self.width, self.filters, self.kernel, self.kernel, self.stride, self.actions
        )
    }
}

/// Weight tensors, also used for gradients and optimizer moments.
///
/// `conv_w` is `[filter][row][col]`; `fc_w` is `[flat][action]` with the
/// cell-major flat index `(out_row * out_width + out_col) * filters + filter`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlocks {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ParamBlocks {
    pub fn zeros(layout: &PolicyLayout) -> Self {
        Self {
            conv_w: vec![0.0; layout.filters * layout.kernel_len()],
            conv_b: vec![0.0; layout.filters],
            fc_w: vec![0.0; layout.flat_len() * layout.actions],
            fc_b: vec![0.0; layout.actions],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.conv_w, &self.conv_b, &self.fc_w, &self.fc_b]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.conv_w, &mut self.conv_b, &mut self.fc_w, &mut self.fc_b]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.blocks().iter().zip(other.blocks()).all(|(a, b)| a.len() == b.len())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.conv_w.iter().chain(&self.conv_b).chain(&self.fc_w).chain(&self.fc_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layout: PolicyLayout,
    pub weights: ParamBlocks,
}

impl PolicyParams {
    /// All-zero parameters; the policy is uniform over actions.
    pub fn zeros(layout: PolicyLayout) -> Self {
        Self { weights: ParamBlocks::zeros(&layout), layout }
    }
}

/// He-normal convolution kernels, Glorot-uniform dense weights, zero
/// biases.
pub fn init_params(layout: PolicyLayout, seed: u64) -> Result<PolicyParams> {
    layout.validate()?;
    let mut rng = rng_from(seed);
    let mut p = PolicyParams::zeros(layout);
    let conv = Normal::new(0.0, (2.0 / layout.kernel_len() as f64).sqrt()).expect("positive std");
    p.weights.conv_w.iter_mut().for_each(|w| *w = conv.sample(&mut rng));
    let limit = (6.0 / (layout.flat_len() + layout.actions) as f64).sqrt();
    let dense = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    p.weights.fc_w.iter_mut().for_each(|w| *w = dense.sample(&mut rng));
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return Action(i);
            }
        }
        Action(last)
    }

    /// Most likely action, lowest index on exact ties.
    pub fn greedy(&self) -> Action {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        Action(best)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Frozen parameters plus the per-pattern filter responses.
pub struct Network<'a> {
    params: &'a PolicyParams,
    /// `[pattern][filter]` response of each filter to each receptive field.
    table: Vec<f64>,
    /// `relu(conv_b[f])`, the activation of every all-zero field.
    blank: Vec<f64>,
    /// Per filter, the FC rows summed over all cells.
    filter_sums: Vec<f64>,
    /// Logits of an all-zero image.
    blank_logits: Vec<f64>,
}

/// What the backward pass needs from one forward pass: the cells whose
/// receptive field is not all zero, with their patterns, and the output
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    active: Vec<(u32, u16)>,
    pub probs: Vec<f64>,
}

/// Arena slots for the (cell, pattern) pairs seen so far, in first-seen
/// order.
#[derive(Debug, Clone)]
struct PairIndex {
    patterns: usize,
    /// `slot + 1` per (cell, pattern); 0 when unseen.
    table: Vec<u32>,
    pairs: Vec<(u32, u16)>,
}

impl PairIndex {
    fn new(layout: &PolicyLayout) -> Self {
        Self { patterns: layout.patterns(), table: vec![0; layout.cells() * layout.patterns()], pairs: Vec::new() }
    }

    /// Slot of `(cell, pat)` and whether it was just created.
    #[inline]
    fn slot(&mut self, cell: u32, pat: u16) -> (usize, bool) {
        let entry = &mut self.table[cell as usize * self.patterns + pat as usize];
        if *entry != 0 {
            return (*entry as usize - 1, false);
        }
        self.pairs.push((cell, pat));
        *entry = self.pairs.len() as u32;
        (self.pairs.len() - 1, true)
    }
}

/// Memo of per-(cell, pattern) logit contributions for one [`Network`].
///
/// A cache must only be used with the network it was first used with.
#[derive(Debug, Clone)]
pub struct PatternCache {
    index: PairIndex,
    contrib: Vec<f64>,
}

impl PatternCache {
    pub fn new(layout: &PolicyLayout) -> Self {
        Self { index: PairIndex::new(layout), contrib: Vec::new() }
    }
}

impl<'a> Network<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        let l = &params.layout;
        let (np, kk, nf, a_len) = (l.patterns(), l.kernel_len(), l.filters, l.actions);
        let w = &params.weights;
        let mut table = vec![0.0; np * nf];
        table[..nf].copy_from_slice(&w.conv_b);
        for pat in 1..np {
            let low = pat.trailing_zeros() as usize;
            let prev = pat & (pat - 1);
            for f in 0..nf {
                table[pat * nf + f] = table[prev * nf + f] + w.conv_w[f * kk + low];
            }
        }
        let blank: Vec<f64> = w.conv_b.iter().map(|&b| b.max(0.0)).collect();
        let mut filter_sums = vec![0.0; nf * a_len];
        for cell in w.fc_w.chunks_exact(nf * a_len) {
            filter_sums.iter_mut().zip(cell).for_each(|(s, &r)| *s += r);
        }
        let mut blank_logits = w.fc_b.clone();
        for (f, sum) in filter_sums.chunks_exact(a_len).enumerate() {
            blank_logits.iter_mut().zip(sum).for_each(|(o, &s)| *o += blank[f] * s);
        }
        Self { params, table, blank, filter_sums, blank_logits }
    }

    pub fn params(&self) -> &PolicyParams {
        self.params
    }

    fn active_cells(&self, img: &StateImage) -> Result<Vec<(u32, u16)>> {
        let l = &self.params.layout;
        if img.height != l.height || img.width != l.width {
            return Err(usage_err(format!(
                "image is {}x{}, network expects {}x{}",
                img.height, img.width, l.height, l.width
            )));
        }
        let (oh, ow, k, s) = (l.out_height(), l.out_width(), l.kernel, l.stride);
        let words = img.words_per_row();
        let mask = (1u64 << k) - 1;
        let field = |w: &[u64], col: usize| -> u16 {
            let (i, o) = (col / 64, col % 64);
            let mut v = w[i] >> o;
            if o + k > 64 && i + 1 < words {
                v |= w[i + 1] << (64 - o);
            }
            (v & mask) as u16
        };
        let mut out = Vec::new();
        let mut union = vec![0u64; words];
        let mut hit = vec![0u64; ow.div_ceil(64)];
        for i in 0..oh {
            let rows: Vec<&[u64]> = (s * i..s * i + k).map(|r| img.row_words(r)).collect();
            union.iter_mut().enumerate().for_each(|(x, u)| *u = rows.iter().fold(0, |acc, r| acc | r[x]));
            if union.iter().all(|&u| u == 0) {
                continue;
            }
            // Output column j reads input columns [s*j, s*j + k).
            hit.fill(0);
            for (wi, &u) in union.iter().enumerate() {
                let mut bits = u;
                while bits != 0 {
                    let x = wi * 64 + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    let lo = (x + 1).saturating_sub(k).div_ceil(s);
                    for j in lo..=(x / s).min(ow - 1) {
                        hit[j / 64] |= 1 << (j % 64);
                    }
                }
            }
            for (hi, &h) in hit.iter().enumerate() {
                let mut bits = h;
                while bits != 0 {
                    let j = hi * 64 + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    let mut pat = 0u16;
                    for (ki, row) in rows.iter().enumerate() {
                        pat |= field(row, s * j) << (ki * k);
                    }
                    out.push(((i * ow + j) as u32, pat));
                }
            }
        }
        Ok(out)
    }

    /// Change of the logits when `cell` shows `pat` instead of zeros.
    fn contribution(&self, cell: u32, pat: u16, out: &mut [f64]) {
        let (nf, a_len) = (self.params.layout.filters, self.params.layout.actions);
        let z = &self.table[pat as usize * nf..(pat as usize + 1) * nf];
        let w = &self.params.weights.fc_w[cell as usize * nf * a_len..(cell as usize + 1) * nf * a_len];
        out.fill(0.0);
        for ((&z, &blank), row) in z.iter().zip(&self.blank).zip(w.chunks_exact(a_len)) {
            let delta = z.max(0.0) - blank;
            if delta != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, &r)| *o += delta * r);
            }
        }
    }

    pub fn activations(&self, img: &StateImage) -> Result<Activations> {
        let active = self.active_cells(img)?;
        let mut logits = self.blank_logits.clone();
        let mut buf = vec![0.0; logits.len()];
        for &(c, pat) in &active {
            self.contribution(c, pat, &mut buf);
            logits.iter_mut().zip(&buf).for_each(|(o, &d)| *o += d);
        }
        Ok(Activations { active, probs: softmax(&logits) })
    }

    /// Same result as [`Network::activations`], reusing contributions
    /// memoized in `cache`.
    pub fn activations_cached(&self, img: &StateImage, cache: &mut PatternCache) -> Result<Activations> {
        let active = self.active_cells(img)?;
        let a_len = self.params.layout.actions;
        let mut logits = self.blank_logits.clone();
        for &(c, pat) in &active {
            let (slot, fresh) = cache.index.slot(c, pat);
            if fresh {
                cache.contrib.resize((slot + 1) * a_len, 0.0);
                self.contribution(c, pat, &mut cache.contrib[slot * a_len..]);
            }
            let d = &cache.contrib[slot * a_len..(slot + 1) * a_len];
            logits.iter_mut().zip(d).for_each(|(o, &d)| *o += d);
        }
        Ok(Activations { active, probs: softmax(&logits) })
    }

    pub fn forward(&self, img: &StateImage) -> Result<ActionDistribution> {
        Ok(ActionDistribution { probs: self.activations(img)?.probs })
    }

    /// Adds `weight * grad log pi(action | img)` into `acc`.
    pub fn accumulate(&self, act: &Activations, action: Action, weight: f64, acc: &mut GradAccumulator) {
        let mut g: Vec<f64> = act.probs.iter().map(|&p| -weight * p).collect();
        g[action.0] += weight;
        self.accumulate_logit_grad(act, &g, acc);
    }

    /// Adds the parameter gradient of any scalar whose gradient with respect
    /// to the logits is `g`.
    pub fn accumulate_logit_grad(&self, act: &Activations, g: &[f64], acc: &mut GradAccumulator) {
        let a_len = self.params.layout.actions;
        assert_eq!(g.len(), a_len, "logit gradient length");
        acc.total.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
        for &(c, pat) in &act.active {
            let (slot, fresh) = acc.index.slot(c, pat);
            if fresh {
                acc.sums.resize((slot + 1) * a_len, 0.0);
            }
            acc.sums[slot * a_len..(slot + 1) * a_len].iter_mut().zip(g).for_each(|(d, &v)| *d += v);
        }
    }

    /// Turns accumulated softmax gradients into parameter gradients.
    pub fn finish(&self, acc: GradAccumulator) -> ParamBlocks {
        let l = self.params.layout;
        let (nf, np, kk, a_len) = (l.filters, l.patterns(), l.kernel_len(), l.actions);
        let fc_w = &self.params.weights.fc_w;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut grad = ParamBlocks::zeros(&l);
        grad.fc_b.copy_from_slice(&acc.total);

        // Every cell first as if blank; active cells are corrected below.
        let mut blank_row = vec![0.0; nf * a_len];
        for (f, row) in blank_row.chunks_exact_mut(a_len).enumerate() {
            row.iter_mut().zip(&acc.total).for_each(|(d, &v)| *d = self.blank[f] * v);
        }
        if self.blank.iter().any(|&b| b > 0.0) {
            for cell in grad.fc_w.chunks_exact_mut(nf * a_len) {
                cell.copy_from_slice(&blank_row);
            }
        }

        let mut pattern_grad = vec![0.0; nf * np];
        let mut active_dz = vec![0.0; nf];
        for (slot, &(c, pat)) in acc.index.pairs.iter().enumerate() {
            let span = c as usize * nf * a_len..(c as usize + 1) * nf * a_len;
            let w_cell = &fc_w[span.clone()];
            let g_cell = &mut grad.fc_w[span];
            let sum = &acc.sums[slot * a_len..(slot + 1) * a_len];
            let z = &self.table[pat as usize * nf..(pat as usize + 1) * nf];
            for f in 0..nf {
                let (z, blank) = (z[f], self.blank[f]);
                if z <= 0.0 && blank == 0.0 {
                    continue;
                }
                let row = f * a_len..(f + 1) * a_len;
                let dz = dot(&w_cell[row.clone()], sum);
                active_dz[f] += dz;
                let delta = z.max(0.0) - blank;
                if delta != 0.0 {
                    g_cell[row].iter_mut().zip(sum).for_each(|(d, &v)| *d += delta * v);
                }
                if z > 0.0 {
                    pattern_grad[f * np + pat as usize] += dz;
                }
            }
        }
        for f in 0..nf {
            if self.blank[f] > 0.0 {
                let all = dot(&self.filter_sums[f * a_len..(f + 1) * a_len], &acc.total);
                pattern_grad[f * np] += all - active_dz[f];
            }
            let g = &pattern_grad[f * np..(f + 1) * np];
            grad.conv_b[f] = g.iter().sum();
            for bit in 0..kk {
                grad.conv_w[f * kk + bit] =
                    g.iter().enumerate().filter(|(pat, _)| pat & (1 << bit) != 0).map(|(_, v)| v).sum();
            }
        }
        grad
    }
}

/// Sum of softmax-output gradients over many (observation, action, weight)
/// triples, kept per (cell, pattern) until [`Network::finish`].
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    total: Vec<f64>,
    index: PairIndex,
    sums: Vec<f64>,
}

impl GradAccumulator {
    pub fn new(layout: PolicyLayout) -> Self {
        Self { total: vec![0.0; layout.actions], index: PairIndex::new(&layout), sums: Vec::new() }
    }
}

/// Gradient of the distribution's entropy with respect to the logits,
/// `-p_a (ln p_a + H)`.
pub fn entropy_logit_grad(probs: &[f64]) -> Vec<f64> {
    let h: f64 = -probs.iter().map(|&p| p * p.ln()).sum::<f64>();
    probs.iter().map(|&p| -p * (p.ln() + h)).collect()
}

/// Policy distribution for one observation.
pub fn forward(params: &PolicyParams, img: &StateImage) -> Result<ActionDistribution> {
    Network::new(params).forward(img)
}

/// Exact gradient of `log pi(action | img)` with respect to all weights.
pub fn grad_log_prob(params: &PolicyParams, img: &StateImage, action: Action) -> Result<ParamBlocks> {
    if action.0 >= params.layout.actions {
        return Err(usage_err(format!("action {} outside {} actions", action.0, params.layout.actions)));
    }
    let net = Network::new(params);
    let act = net.activations(img)?;
    let mut acc = GradAccumulator::new(params.layout);
    net.accumulate(&act, action, 1.0, &mut acc);
    Ok(net.finish(acc))
}
