//! Brute-force ground truth for the top-down sweep.
//!
//! The network is unrolled into an absorbing Markov chain over individual
//! neurons: a walk starts at a signal-layer neuron, repeatedly moves to a
//! child chosen with probability `(a + shift)·max(w, 0) / Σ`, and stops at
//! the bottom layer. Expected visit counts are the winning probabilities.
//! Everything here is scalar code reading raw weights and cached responses,
//! so it shares nothing with the layer-wise engine it checks.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::excitation::TopDownSignal;
use crate::netgraph::{ActivationCache, LayerKind, ModelBundle};
use crate::tensor::Tensor;

pub const DEFAULT_STATE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Upper bound on transient plus absorbing states.
    pub cap: usize,
    /// Added to every child activation, as in the shifted engine.
    pub shift: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_STATE_CAP,
            shift: 0.0,
        }
    }
}

/// Canonical-form absorbing chain.
///
/// States `0..n_transient` are transient, the next `n_absorbing` are the
/// bottom layer's neurons followed by one sink that collects walks from
/// neurons with no excitatory child.
#[derive(Debug, Clone)]
pub struct ChainModel {
    pub n_transient: usize,
    pub n_absorbing: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// (layer id, flat neuron offset) → state
    pub state_index: BTreeMap<(String, usize), usize>,
    rows: Vec<Vec<(usize, f64)>>,
    blocks: Vec<(String, Range<usize>)>,
}

impl ChainModel {
    pub fn n_states(&self) -> usize {
        self.n_transient + self.n_absorbing
    }

    pub fn sink(&self) -> usize {
        self.n_states() - 1
    }

    /// Outgoing transitions of a transient state as (state, probability).
    pub fn row(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    /// Layers covered by the chain, top first, with their state ranges.
    pub fn layers(&self) -> &[(String, Range<usize>)] {
        &self.blocks
    }

    pub fn layer_range(&self, layer_id: &str) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|(id, _)| id == layer_id)
            .map(|(_, r)| r.clone())
    }

    /// Start distribution over transient states from a signal on the top layer.
    pub fn start_from(&self, signal: &TopDownSignal) -> Result<Vec<f64>> {
        let (top, range) = &self.blocks[0];
        if signal.layer_id() != top {
            return Err(Error::InvalidArgument(format!(
                "chain starts at `{top}`, signal is on `{}`",
                signal.layer_id()
            )));
        }
        if signal.values().len() != range.len() {
            return Err(Error::shape(format!(
                "signal has {} values, layer `{top}` has {} neurons",
                signal.values().len(),
                range.len()
            )));
        }
        let mut s = vec![0.0; self.n_transient];
        s[range.clone()].copy_from_slice(signal.values().data());
        Ok(s)
    }

    /// Writes the transition matrix `[Q R]` in coordinate matrix-market form.
    pub fn write_matrix_market(&self, mut out: impl Write) -> Result<()> {
        let nnz: usize = self.rows.iter().map(Vec::len).sum();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(
            out,
            "% transient {} absorbing {} (last is sink)",
            self.n_transient, self.n_absorbing
        )?;
        for (id, r) in &self.blocks {
            writeln!(out, "% layer {id} states {}..{}", r.start, r.end)?;
        }
        writeln!(out, "{} {} {}", self.n_transient, self.n_states(), nnz)?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                writeln!(out, "{} {} {:.17e}", i + 1, j + 1, p)?;
            }
        }
        Ok(())
    }
}

struct Grid {
    c: usize,
    h: usize,
    w: usize,
}

impl Grid {
    fn of(t: &Tensor) -> Self {
        let s = t.shape();
        match s.len() {
            1 => Grid { c: s[0], h: 1, w: 1 },
            2 => Grid { c: 1, h: s[0], w: s[1] },
            _ => Grid {
                c: s[0],
                h: s[1],
                w: s[2],
            },
        }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    fn split(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.h * self.w), (i / self.w) % self.h, i % self.w)
    }
}

/// In-bounds input coordinate for output position `o`, tap `k`.
fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let p = (o * stride + k).checked_sub(pad)?;
    (p < extent).then_some(p)
}

/// Unrolls the part of `model` between `top_layer` and `bottom_layer`.
pub fn build_chain(
    model: &ModelBundle,
    cache: &ActivationCache,
    top_layer: &str,
    bottom_layer: &str,
    opts: ChainOptions,
) -> Result<ChainModel> {
    cache.check_model(model)?;
    let top = model.position(top_layer)?;
    let bottom = model.position(bottom_layer)?;
    if bottom >= top {
        return Err(Error::SignalBelowTarget {
            signal: top_layer.to_string(),
            target: bottom_layer.to_string(),
        });
    }
    let layers = model.layers();
    let from_bottom = model.descendants(bottom);
    let to_top = model.ancestors(top);
    let members: Vec<usize> = (bottom..=top).rev().filter(|&p| from_bottom[p] && to_top[p]).collect();

    let size = |p: usize| cache.response_at(p).len();
    let total: usize = members.iter().map(|&p| size(p)).sum::<usize>() + 1;
    if total > opts.cap {
        return Err(Error::TooLarge {
            states: total,
            cap: opts.cap,
        });
    }

    let mut first_state = vec![usize::MAX; layers.len()];
    let mut blocks = Vec::new();
    let mut next = 0;
    for &p in &members {
        first_state[p] = next;
        blocks.push((layers[p].id().to_string(), next..next + size(p)));
        next += size(p);
    }
    let n_transient = first_state[bottom];
    let n_states = next + 1;
    let sink = next;

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_transient);
    let shift = opts.shift;
    for &p in members.iter().filter(|&&p| p != bottom) {
        let layer = &layers[p];
        let out = Grid::of(cache.response_at(p));
        let n = size(p);
        let unsupported = || Error::UnsupportedLayerKind {
            id: layer.id().to_string(),
            kind: layer.kind().name().to_string(),
        };
        // (child layer position, child offset, unnormalized weight)
        let children = |i: usize| -> Result<Vec<(usize, usize, f64)>> {
            let child = layer.inputs.first().copied().ok_or_else(unsupported)?;
            let act = cache.response_at(child);
            let weighted = |off: usize, w: f64| -> Result<(usize, usize, f64)> {
                let a = act.data()[off] + shift;
                if a < 0.0 {
                    return Err(Error::NegativeActivation {
                        value: act.data()[off],
                        shift,
                    });
                }
                Ok((child, off, a * w))
            };
            Ok(match layer.kind() {
                LayerKind::Conv(cp) => {
                    let inp = Grid::of(act);
                    let k = cp.kernel.shape();
                    let (kc, kh, kw) = (k[1], k[2], k[3]);
                    let (o, oy, ox) = out.split(i);
                    let mut v = Vec::new();
                    for c in 0..kc {
                        for ky in 0..kh {
                            let Some(y) = tap(oy, ky, cp.stride.0, cp.padding.0, inp.h) else {
                                continue;
                            };
                            for kx in 0..kw {
                                let Some(x) = tap(ox, kx, cp.stride.1, cp.padding.1, inp.w) else {
                                    continue;
                                };
                                let wt = cp.kernel.data()[((o * kc + c) * kh + ky) * kw + kx];
                                if wt > 0.0 {
                                    v.push(weighted(inp.at(c, y, x), wt)?);
                                }
                            }
                        }
                    }
                    v
                }
                LayerKind::Fc(lp) => {
                    let width = lp.weight.shape()[1];
                    let mut v = Vec::new();
                    for j in 0..width {
                        let wt = lp.weight.data()[i * width + j];
                        if wt > 0.0 {
                            v.push(weighted(j, wt)?);
                        }
                    }
                    v
                }
                LayerKind::AvgPool(g) => {
                    let inp = Grid::of(act);
                    let (c, oy, ox) = out.split(i);
                    let wt = 1.0 / (g.window.0 * g.window.1) as f64;
                    let mut v = Vec::new();
                    for ky in 0..g.window.0 {
                        let Some(y) = tap(oy, ky, g.stride.0, g.padding.0, inp.h) else {
                            continue;
                        };
                        for kx in 0..g.window.1 {
                            let Some(x) = tap(ox, kx, g.stride.1, g.padding.1, inp.w) else {
                                continue;
                            };
                            v.push(weighted(inp.at(c, y, x), wt)?);
                        }
                    }
                    v
                }
                LayerKind::MaxPool(g) => {
                    let inp = Grid::of(act);
                    let (c, oy, ox) = out.split(i);
                    let mut best: Option<(usize, f64)> = None;
                    for ky in 0..g.window.0 {
                        let Some(y) = tap(oy, ky, g.stride.0, g.padding.0, inp.h) else {
                            continue;
                        };
                        for kx in 0..g.window.1 {
                            let Some(x) = tap(ox, kx, g.stride.1, g.padding.1, inp.w) else {
                                continue;
                            };
                            let off = inp.at(c, y, x);
                            let a = act.data()[off];
                            if best.is_none_or(|(_, b)| a > b) {
                                best = Some((off, a));
                            }
                        }
                    }
                    best.map(|(off, _)| vec![(child, off, 1.0)]).unwrap_or_default()
                }
                LayerKind::Relu | LayerKind::Lrn(_) | LayerKind::Dropout | LayerKind::Flatten => {
                    vec![(child, i, 1.0)]
                }
                LayerKind::Concat => {
                    let (ch, y, x) = out.split(i);
                    let mut start = 0;
                    let mut found = None;
                    for &inp_pos in &layer.inputs {
                        let g = Grid::of(cache.response_at(inp_pos));
                        if ch < start + g.c {
                            found = Some((inp_pos, g.at(ch - start, y, x), 1.0));
                            break;
                        }
                        start += g.c;
                    }
                    found.into_iter().collect()
                }
                LayerKind::Softmax | LayerKind::Input { .. } => return Err(unsupported()),
            })
        };
        for i in 0..n {
            let kids = children(i).map_err(|e| e.at_layer(layer.id()))?;
            let total: f64 = kids.iter().map(|k| k.2).sum();
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            if total > 0.0 {
                for (lp, off, w) in kids {
                    // edges into layers outside the chain lose their walks
                    let s = if first_state[lp] == usize::MAX {
                        sink
                    } else {
                        first_state[lp] + off
                    };
                    *row.entry(s).or_default() += w / total;
                }
            } else {
                row.insert(sink, 1.0);
            }
            rows.push(row.into_iter().collect());
        }
    }

    let n_absorbing = n_states - n_transient;
    let mut q = DMatrix::zeros(n_transient, n_transient);
    let mut r = DMatrix::zeros(n_transient, n_absorbing);
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in row {
            if j < n_transient {
                q[(i, j)] = p;
            } else {
                r[(i, j - n_transient)] = p;
            }
        }
    }
    let mut state_index = BTreeMap::new();
    for (id, range) in &blocks {
        for (k, s) in range.clone().enumerate() {
            state_index.insert((id.clone(), k), s);
        }
    }
    Ok(ChainModel {
        n_transient,
        n_absorbing,
        q,
        r,
        state_index,
        rows,
        blocks,
    })
}

fn check_start(chain: &ChainModel, start: &[f64]) -> Result<()> {
    if start.len() != chain.n_transient {
        return Err(Error::shape(format!(
            "start has {} entries, chain has {} transient states",
            start.len(),
            chain.n_transient
        )));
    }
    if let Some(&bad) = start.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeWeight(bad));
    }
    Ok(())
}

fn with_absorbing(chain: &ChainModel, transient: DVector<f64>) -> Vec<f64> {
    let absorbed = chain.r.tr_mul(&transient);
    transient.iter().chain(absorbed.iter()).copied().collect()
}

/// Expected visits to every state: transient `v` solves `(I − Qᵀ) v = s`,
/// absorbing visits are `Rᵀ v`.
pub fn expected_visits(chain: &ChainModel, start: &[f64]) -> Result<Vec<f64>> {
    check_start(chain, start)?;
    let n = chain.n_transient;
    let system = DMatrix::identity(n, n) - chain.q.transpose();
    let v = system
        .lu()
        .solve(&DVector::from_column_slice(start))
        .ok_or(Error::SingularSystem)?;
    Ok(with_absorbing(chain, v))
}

/// Expected visits by summing `(Qᵀ)ᵏ s` until the increment drops below
/// `tol` (in max norm) or `max_terms` is reached.
pub fn neumann_visits(chain: &ChainModel, start: &[f64], tol: f64, max_terms: usize) -> Result<Vec<f64>> {
    check_start(chain, start)?;
    let mut term = DVector::from_column_slice(start);
    let mut total = term.clone();
    for _ in 0..max_terms {
        term = chain.q.tr_mul(&term);
        total += &term;
        if term.amax() < tol {
            return Ok(with_absorbing(chain, total));
        }
    }
    Err(Error::InvalidArgument(format!(
        "series did not settle within {max_terms} terms"
    )))
}

/// Per-state visit counts of `n_samples` seeded random walks. Each walk
/// starts at a transient state drawn in proportion to `start`.
pub fn sample_winner_paths(chain: &ChainModel, start: &[f64], n_samples: usize, seed: u64) -> Result<Vec<u64>> {
    check_start(chain, start)?;
    let mass: f64 = start.iter().sum();
    let mut counts = vec![0u64; chain.n_states()];
    if mass <= 0.0 || n_samples == 0 {
        return Ok(counts);
    }
    let cumulative = |weights: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
        weights
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    };
    let start_cdf = cumulative(&mut start.iter().copied());
    let row_cdfs: Vec<Vec<f64>> = chain
        .rows
        .iter()
        .map(|r| cumulative(&mut r.iter().map(|e| e.1)))
        .collect();
    let pick = |cdf: &[f64], u: f64| cdf.partition_point(|&c| c <= u * cdf[cdf.len() - 1]).min(cdf.len() - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let mut s = pick(&start_cdf, rng.random::<f64>());
        loop {
            counts[s] += 1;
            if s >= chain.n_transient {
                break;
            }
            let k = pick(&row_cdfs[s], rng.random::<f64>());
            s = chain.rows[s][k].0;
        }
    }
    Ok(counts)
}

/// Outcome of comparing sampled visit frequencies with expected visits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingAgreement {
    /// States with expected visit probability at least the floor.
    pub checked: usize,
    /// Of those, states whose frequency lies within the bound.
    pub within: usize,
    /// Largest deviation in standard deviations.
    pub worst_sigma: f64,
}

impl SamplingAgreement {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.within as f64 / self.checked as f64
        }
    }
}

/// Samples `n_samples` walks and checks every transient and absorbing state
/// whose per-walk visit probability `p = visits / start mass` is at least
/// `floor`: the empirical frequency must lie within `sigmas · sqrt(p(1−p)/n)`
/// of `p`. A walk visits a state at most once, so counts are binomial.
pub fn sampling_agreement(
    chain: &ChainModel,
    start: &[f64],
    expected: &[f64],
    n_samples: usize,
    seed: u64,
    floor: f64,
    sigmas: f64,
) -> Result<SamplingAgreement> {
    if expected.len() != chain.n_states() {
        return Err(Error::shape("expected visits do not cover the chain"));
    }
    let counts = sample_winner_paths(chain, start, n_samples, seed)?;
    let mass: f64 = start.iter().sum();
    let n = n_samples as f64;
    let mut out = SamplingAgreement {
        checked: 0,
        within: 0,
        worst_sigma: 0.0,
    };
    if mass <= 0.0 {
        return Ok(out);
    }
    // the sink is bookkeeping, not a neuron
    for s in 0..chain.sink() {
        let p = (expected[s] / mass).min(1.0);
        if p < floor {
            continue;
        }
        out.checked += 1;
        let sd = (p * (1.0 - p) / n).sqrt();
        let dev = (counts[s] as f64 / n - p).abs();
        let z = if sd > 0.0 {
            dev / sd
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        out.worst_sigma = out.worst_sigma.max(z);
        if z <= sigmas {
            out.within += 1;
        }
    }
    Ok(out)
}
