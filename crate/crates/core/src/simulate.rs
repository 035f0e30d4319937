//! Monte Carlo oracle for passage, exit and reflection statistics.
//!
//! Paths are advanced segment by segment between background transitions and
//! jump epochs. Over a segment the Brownian endpoint is exact and the running
//! maximum or minimum is drawn from the Brownian bridge law
//!
//! ```text
//! max = (x₀ + x₁ + sqrt((x₁ − x₀)² − 2σ²T log U)) / 2
//! ```
//!
//! so level crossings and one-sided reflection are exact for any segment
//! length. Two-sided reflection and interval exit cap segments at the step
//! `h` and correct against the nearer barrier only, which is exact up to the
//! chance of reaching both barriers within one step.
//!
//! Every path (or replication) owns a ChaCha8 stream selected by its index,
//! so results do not depend on the number of threads.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DriftSign, MapModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    /// Segment cap for interval problems and sampling interval for long-run
    /// statistics.
    pub step: f64,
    /// Paths per starting state, or independent replications for long-run
    /// statistics.
    pub paths: usize,
    /// Time horizon of each path or replication.
    pub horizon: f64,
    pub seed: u64,
    /// Fraction of each replication discarded before collecting samples.
    pub burn_in: f64,
    /// Batches per replication for batch-means errors.
    pub batches: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            paths: 100_000,
            horizon: 1_000.0,
            seed: 0,
            burn_in: 0.1,
            batches: 20,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.paths == 0 {
            return Err(Error::InvalidArgument("paths must be at least 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidArgument(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in
            )));
        }
        if self.batches == 0 {
            return Err(Error::InvalidArgument("batches must be at least 1".into()));
        }
        Ok(())
    }
}

/// Point estimates with standard errors. For long-run statistics the batch
/// means are kept so that standard errors of derived quantities can be
/// formed.
#[derive(Clone, Debug, Serialize)]
pub struct SimEstimate {
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub samples: usize,
    #[serde(skip)]
    pub batches: Vec<DMatrix<f64>>,
}

impl SimEstimate {
    fn from_counts(counts: &DMatrix<u64>, per_row: usize) -> Self {
        let n = per_row as f64;
        let mean = counts.map(|c| c as f64 / n);
        let stderr = mean.map(|p| (p * (1.0 - p) / n).sqrt());
        Self {
            mean,
            stderr,
            samples: per_row,
            batches: Vec::new(),
        }
    }

    fn from_batches(batches: Vec<DMatrix<f64>>) -> Self {
        let b = batches.len() as f64;
        let (r, c) = batches[0].shape();
        let mut mean = DMatrix::zeros(r, c);
        for m in &batches {
            mean += m;
        }
        mean /= b;
        let mut var = DMatrix::zeros(r, c);
        for m in &batches {
            var += (m - &mean).map(|x| x * x);
        }
        let denom = (b * (b - 1.0)).max(1.0);
        let stderr = var.map(|v| (v / denom).sqrt());
        Self {
            mean,
            stderr,
            samples: batches.len(),
            batches,
        }
    }

    /// Mean and standard error of a scalar functional of the batch means.
    pub fn functional(&self, f: impl Fn(&DMatrix<f64>) -> f64) -> (f64, f64) {
        if self.batches.is_empty() {
            return (f(&self.mean), f64::NAN);
        }
        let values: Vec<f64> = self.batches.iter().map(&f).collect();
        let b = values.len() as f64;
        let mean = values.iter().sum::<f64>() / b;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b * (b - 1.0)).max(1.0);
        (mean, var.sqrt())
    }
}

#[derive(Clone, Debug)]
enum Event {
    Transition { to: usize, jump: Option<usize> },
    Jump { decay: f64 },
}

#[derive(Clone, Debug)]
struct StateLaw {
    drift: f64,
    sigma: f64,
    rate: f64,
    events: Vec<(f64, Event)>,
}

/// Precomputed sampling tables for a model.
#[derive(Clone, Debug)]
struct Sampler {
    states: Vec<StateLaw>,
    /// Cumulative mixture tables of transition jumps.
    mixtures: Vec<Vec<(f64, f64)>>,
}

impl Sampler {
    fn new(model: &MapModel) -> Self {
        let n = model.dim();
        let gen = model.generator();
        let mut mixtures = Vec::new();
        let mut states = Vec::with_capacity(n);
        for (i, l) in model.levy().iter().enumerate() {
            let mut events = Vec::new();
            let mut acc = 0.0;
            for j in 0..n {
                if j == i || gen[(i, j)] <= 0.0 {
                    continue;
                }
                acc += gen[(i, j)];
                let jump = model.transition_jump(i, j).map(|t| {
                    let mut cum = 0.0;
                    let table = t
                        .mixture
                        .iter()
                        .map(|c| {
                            cum += c.weight;
                            (cum, c.decay)
                        })
                        .collect();
                    mixtures.push(table);
                    mixtures.len() - 1
                });
                events.push((acc, Event::Transition { to: j, jump }));
            }
            for jump in &l.jumps {
                acc += jump.rate;
                events.push((acc, Event::Jump { decay: jump.decay }));
            }
            states.push(StateLaw {
                drift: l.drift,
                sigma: l.sigma,
                rate: acc,
                events,
            });
        }
        Self { states, mixtures }
    }

    fn holding(&self, rng: &mut ChaCha8Rng, state: usize) -> f64 {
        let rate = self.states[state].rate;
        if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        }
    }

    /// Applies the event at the end of a holding time: returns the new state
    /// and the (nonnegative) size of the downward jump.
    fn fire(&self, rng: &mut ChaCha8Rng, state: usize) -> (usize, f64) {
        let law = &self.states[state];
        let u = rng.random::<f64>() * law.rate;
        let idx = law
            .events
            .iter()
            .position(|(cum, _)| u < *cum)
            .unwrap_or(law.events.len() - 1);
        match &law.events[idx].1 {
            Event::Transition { to, jump } => {
                let size = match jump {
                    Some(k) => {
                        let table = &self.mixtures[*k];
                        let total = table.last().map_or(1.0, |t| t.0);
                        let v = rng.random::<f64>() * total;
                        let decay = table.iter().find(|t| v < t.0).unwrap_or(table.last().unwrap()).1;
                        rng.sample::<f64, _>(Exp1) / decay
                    }
                    None => 0.0,
                };
                (*to, size)
            }
            Event::Jump { decay } => (state, rng.sample::<f64, _>(Exp1) / decay),
        }
    }

    /// Increment over `t` and the running maximum of the increment.
    fn with_max(&self, rng: &mut ChaCha8Rng, state: usize, t: f64) -> (f64, f64) {
        let law = &self.states[state];
        let mean = law.drift * t;
        if law.sigma == 0.0 {
            return (mean, mean.max(0.0));
        }
        let z: f64 = rng.sample(StandardNormal);
        let d = mean + law.sigma * t.sqrt() * z;
        let u = 1.0 - rng.random::<f64>();
        let spread = (d * d - 2.0 * law.sigma * law.sigma * t * u.ln()).sqrt();
        (d, 0.5 * (d + spread))
    }

    /// Increment over `t` and the running minimum of the increment.
    fn with_min(&self, rng: &mut ChaCha8Rng, state: usize, t: f64) -> (f64, f64) {
        let law = &self.states[state];
        let mean = law.drift * t;
        if law.sigma == 0.0 {
            return (mean, mean.min(0.0));
        }
        let z: f64 = rng.sample(StandardNormal);
        let d = mean + law.sigma * t.sqrt() * z;
        let u = 1.0 - rng.random::<f64>();
        let spread = (d * d - 2.0 * law.sigma * law.sigma * t * u.ln()).sqrt();
        (d, 0.5 * (d - spread))
    }

    fn increment(&self, rng: &mut ChaCha8Rng, state: usize, t: f64) -> f64 {
        let law = &self.states[state];
        let mean = law.drift * t;
        if law.sigma == 0.0 {
            return mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        mean + law.sigma * t.sqrt() * z
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_state(rng: &mut ChaCha8Rng, pi: &DVector<f64>) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pi.len() - 1
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..count).map(f).collect()
}

/// Runs `paths` independent paths in chunks and sums their integer tallies.
fn tally(paths: usize, width: usize, f: impl Fn(usize, &mut [u64]) + Sync + Send) -> Vec<u64> {
    const CHUNK: usize = 4096;
    let chunks = paths.div_ceil(CHUNK);
    let parts = map_indices(chunks, |c| {
        let mut acc = vec![0u64; width];
        for p in c * CHUNK..((c + 1) * CHUNK).min(paths) {
            f(p, &mut acc);
        }
        acc
    });
    let mut total = vec![0u64; width];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

#[derive(Clone, Debug, Serialize)]
pub struct PassageEstimate {
    pub q: f64,
    pub levels: Vec<f64>,
    /// One `N × N₊` estimate of `P_i(J(τ_x) = j, τ_x < e_q)` per level.
    pub estimates: Vec<SimEstimate>,
    /// Per starting state, fraction of paths still alive at the horizon
    /// below the highest level.
    pub unresolved: Vec<f64>,
    pub plus_states: Vec<usize>,
}

/// First passage over each of `levels` with killing at rate `q`, from every
/// starting state (`cfg.paths` paths each).
pub fn simulate_first_passage(model: &MapModel, q: f64, levels: &[f64], cfg: &SimConfig) -> Result<PassageEstimate> {
    cfg.validate()?;
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "killing rate must be nonnegative, got {q}"
        )));
    }
    if levels.is_empty() || levels.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("levels must be positive".into()));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sampler = Sampler::new(model);
    let n = model.dim();
    let nl = sorted.len();
    // per start: nl * n crossing counts, then one unresolved count
    let width = n * (nl * n + 1);
    let counts = tally(n * cfg.paths, width, |p, acc| {
        let start = p / cfg.paths;
        let mut rng = stream(cfg.seed, p as u64);
        let base = start * (nl * n + 1);
        let mut state = start;
        let mut x = 0.0;
        let mut t = 0.0;
        let kill = if q > 0.0 {
            rng.sample::<f64, _>(Exp1) / q
        } else {
            f64::INFINITY
        };
        let mut next = 0;
        let end = cfg.horizon.min(kill);
        loop {
            let hold = sampler.holding(&mut rng, state);
            let seg = hold.min(end - t);
            let (d, mx) = sampler.with_max(&mut rng, state, seg);
            while next < nl && x + mx > sorted[next] {
                acc[base + next * n + state] += 1;
                next += 1;
            }
            if next == nl {
                return;
            }
            x += d;
            t += seg;
            if t >= end {
                if kill > cfg.horizon {
                    acc[base + nl * n] += 1;
                }
                return;
            }
            let (to, jump) = sampler.fire(&mut rng, state);
            state = to;
            x -= jump;
        }
    });

    let plus = model.plus_states().to_vec();
    let mut estimates = Vec::with_capacity(nl);
    let order: Vec<usize> = levels
        .iter()
        .map(|x| sorted.iter().position(|s| s == x).unwrap())
        .collect();
    for &k in &order {
        let mut m = DMatrix::zeros(n, plus.len());
        for i in 0..n {
            for (c, &j) in plus.iter().enumerate() {
                m[(i, c)] = counts[i * (nl * n + 1) + k * n + j];
            }
        }
        estimates.push(SimEstimate::from_counts(&m, cfg.paths));
    }
    let unresolved = (0..n)
        .map(|i| counts[i * (nl * n + 1) + nl * n] as f64 / cfg.paths as f64)
        .collect();
    Ok(PassageEstimate {
        q,
        levels: levels.to_vec(),
        estimates,
        unresolved,
        plus_states: plus,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitEstimate {
    pub q: f64,
    pub a: f64,
    pub b: f64,
    /// `N × N₊` estimate of `C(a, b)`.
    pub c: SimEstimate,
    /// `N × N₋` estimate of `D(a, b)`.
    pub d: SimEstimate,
    pub unresolved: Vec<f64>,
}

/// Exit from `(−b, a)` with killing at rate `q`, from every starting state.
pub fn simulate_exit(model: &MapModel, q: f64, a: f64, b: f64, cfg: &SimConfig) -> Result<ExitEstimate> {
    cfg.validate()?;
    if !model.is_mmbm() {
        return Err(Error::NotMmbm);
    }
    if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "levels must be nonnegative and not both zero, got a = {a}, b = {b}"
        )));
    }
    let sampler = Sampler::new(model);
    let n = model.dim();
    let width = n * (2 * n + 1);
    let counts = tally(n * cfg.paths, width, |p, acc| {
        let start = p / cfg.paths;
        let mut rng = stream(cfg.seed, p as u64);
        let base = start * (2 * n + 1);
        let mut state = start;
        let mut x = 0.0;
        let mut t = 0.0;
        let kill = if q > 0.0 {
            rng.sample::<f64, _>(Exp1) / q
        } else {
            f64::INFINITY
        };
        let end = cfg.horizon.min(kill);
        let mut hold = sampler.holding(&mut rng, state);
        loop {
            let seg = hold.min(cfg.step).min(end - t);
            if x - (a - b) * 0.5 >= 0.0 {
                let (d, mx) = sampler.with_max(&mut rng, state, seg);
                if x + mx > a {
                    acc[base + state] += 1;
                    return;
                }
                x += d;
                if x < -b {
                    acc[base + n + state] += 1;
                    return;
                }
            } else {
                let (d, mn) = sampler.with_min(&mut rng, state, seg);
                if x + mn < -b {
                    acc[base + n + state] += 1;
                    return;
                }
                x += d;
                if x > a {
                    acc[base + state] += 1;
                    return;
                }
            }
            t += seg;
            hold -= seg;
            if t >= end {
                if kill > cfg.horizon {
                    acc[base + 2 * n] += 1;
                }
                return;
            }
            if hold <= 0.0 {
                let (to, _) = sampler.fire(&mut rng, state);
                state = to;
                hold = sampler.holding(&mut rng, state);
            }
        }
    });
    let plus = model.plus_states().to_vec();
    let minus = model.minus_states();
    let mut c = DMatrix::zeros(n, plus.len());
    let mut d = DMatrix::zeros(n, minus.len());
    for i in 0..n {
        let base = i * (2 * n + 1);
        for (k, &j) in plus.iter().enumerate() {
            c[(i, k)] = counts[base + j];
        }
        for (k, &j) in minus.iter().enumerate() {
            d[(i, k)] = counts[base + n + j];
        }
    }
    Ok(ExitEstimate {
        q,
        a,
        b,
        c: SimEstimate::from_counts(&c, cfg.paths),
        d: SimEstimate::from_counts(&d, cfg.paths),
        unresolved: (0..n)
            .map(|i| counts[i * (2 * n + 1) + 2 * n] as f64 / cfg.paths as f64)
            .collect(),
    })
}

/// Statistics requested from a long-run reflected simulation.
#[derive(Clone, Debug, Default)]
pub struct ReflectRequest {
    /// Levels `x` for the joint CDF `P(W ≤ x, J = i)`.
    pub grid: Vec<f64>,
    /// Arguments `α` of `E[e^{αW} e_Jᵀ]`.
    pub alphas: Vec<Complex<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReflectEstimate {
    pub b: Option<f64>,
    pub grid: Vec<f64>,
    /// `N × G`: `P(W ≤ x_g, J = i)`.
    pub cdf: SimEstimate,
    /// `N × 2`: `P(W = 0, J = i)` and `P(W = b, J = i)`.
    pub atoms: SimEstimate,
    /// `N × 2A`: real and imaginary parts of `E[e^{αW} e_Jᵀ]`, interleaved.
    pub mgf: SimEstimate,
    /// `N × 1`: fraction of time in each state.
    pub occupation: SimEstimate,
    pub mean_level: SimEstimate,
}

impl ReflectEstimate {
    /// Estimate of `E[e^{αW} e_Jᵀ]` for the `k`-th requested `α`.
    pub fn mgf_value(&self, k: usize) -> DVector<Complex<f64>> {
        let m = &self.mgf.mean;
        DVector::from_fn(m.nrows(), |i, _| Complex::new(m[(i, 2 * k)], m[(i, 2 * k + 1)]))
    }
}

/// Long-run statistics of `X` reflected at 0 (and at `b` when given),
/// sampled every `cfg.step` time units over `cfg.paths` replications.
pub fn simulate_reflected(
    model: &MapModel,
    b: Option<f64>,
    request: &ReflectRequest,
    cfg: &SimConfig,
) -> Result<ReflectEstimate> {
    cfg.validate()?;
    match b {
        None if model.drift_sign() != DriftSign::Negative => {
            return Err(Error::Precondition(format!(
                "one-sided reflection needs negative drift (kappa = {})",
                model.kappa()
            )))
        }
        Some(b) if !(b > 0.0) => {
            return Err(Error::InvalidArgument(format!(
                "upper barrier must be positive, got {b}"
            )))
        }
        Some(_) if !model.is_mmbm() => return Err(Error::NotMmbm),
        _ => {}
    }
    let sampler = Sampler::new(model);
    let n = model.dim();
    let g = request.grid.len();
    let na = request.alphas.len();
    let pi = model.stationary().clone();
    let total_samples = (cfg.horizon / cfg.step).floor() as usize;
    let skip = (cfg.burn_in * total_samples as f64).ceil() as usize;
    let kept = total_samples.saturating_sub(skip);
    if kept < cfg.batches {
        return Err(Error::InvalidArgument(
            "horizon too short for the requested step, burn-in and batch count".into(),
        ));
    }
    let per_batch = kept / cfg.batches;
    // columns: cdf (g), atoms (2), mgf (2 na), occupation (1), level (1)
    let cols = g + 2 + 2 * na + 2;

    let replications = map_indices(cfg.paths, |r| {
        let mut rng = stream(cfg.seed, r as u64);
        let mut state = sample_state(&mut rng, &pi);
        let mut w = 0.0f64;
        let mut hold = sampler.holding(&mut rng, state);
        let mut batches = Vec::with_capacity(cfg.batches);
        let mut current = DMatrix::<f64>::zeros(n, cols);
        let mut in_batch = 0;
        for k in 1..=skip + per_batch * cfg.batches {
            let mut remaining = cfg.step;
            while remaining > 0.0 {
                let seg = match b {
                    None => hold.min(remaining),
                    Some(_) => hold.min(remaining).min(cfg.step),
                };
                w = match b {
                    None => {
                        let (d, mn) = sampler.with_min(&mut rng, state, seg);
                        (w + d).max(d - mn)
                    }
                    Some(b) => {
                        if w < 0.5 * b {
                            let (d, mn) = sampler.with_min(&mut rng, state, seg);
                            (w + d).max(d - mn).min(b)
                        } else {
                            let (d, mx) = sampler.with_max(&mut rng, state, seg);
                            (w + d).min(b + d - mx).max(0.0)
                        }
                    }
                };
                remaining -= seg;
                hold -= seg;
                if hold <= 0.0 {
                    let (to, jump) = sampler.fire(&mut rng, state);
                    state = to;
                    w = (w - jump).max(0.0);
                    hold = sampler.holding(&mut rng, state);
                }
            }
            if k <= skip {
                continue;
            }
            for (c, &x) in request.grid.iter().enumerate() {
                if w <= x {
                    current[(state, c)] += 1.0;
                }
            }
            if w <= 0.0 {
                current[(state, g)] += 1.0;
            }
            if b.is_some_and(|b| w >= b) {
                current[(state, g + 1)] += 1.0;
            }
            for (c, alpha) in request.alphas.iter().enumerate() {
                let e = (alpha * w).exp();
                current[(state, g + 2 + 2 * c)] += e.re;
                current[(state, g + 3 + 2 * c)] += e.im;
            }
            current[(state, cols - 2)] += 1.0;
            current[(state, cols - 1)] += w;
            in_batch += 1;
            if in_batch == per_batch {
                batches.push(std::mem::replace(&mut current, DMatrix::zeros(n, cols)) / per_batch as f64);
                in_batch = 0;
            }
        }
        batches
    });
    let all: Vec<DMatrix<f64>> = replications.into_iter().flatten().collect();
    let pick = |start: usize, width: usize| {
        SimEstimate::from_batches(all.iter().map(|m| m.columns(start, width).into_owned()).collect())
    };
    Ok(ReflectEstimate {
        b,
        grid: request.grid.clone(),
        cdf: pick(0, g),
        atoms: pick(g, 2),
        mgf: pick(g + 2, 2 * na),
        occupation: pick(cols - 2, 1),
        mean_level: pick(cols - 1, 1),
    })
}

/// Estimate of `E_π[X(t)] / t` with `J(0) ~ π`, one value per path.
pub fn simulate_drift(model: &MapModel, t: f64, cfg: &SimConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    let sampler = Sampler::new(model);
    let pi = model.stationary().clone();
    let values = map_indices(cfg.paths, |p| {
        let mut rng = stream(cfg.seed, p as u64);
        let mut state = sample_state(&mut rng, &pi);
        let mut x = 0.0;
        let mut elapsed = 0.0;
        loop {
            let hold = sampler.holding(&mut rng, state);
            let seg = hold.min(t - elapsed);
            x += sampler.increment(&mut rng, state, seg);
            elapsed += seg;
            if elapsed >= t {
                return x / t;
            }
            let (to, jump) = sampler.fire(&mut rng, state);
            state = to;
            x -= jump;
        }
    });
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn bm(drift: f64) -> MapModel {
        MapModel::mmbm(dmatrix![0.0], &[drift], &[1.0]).unwrap()
    }

    #[test]
    fn seed_determinism() {
        let cfg = SimConfig {
            paths: 2000,
            horizon: 50.0,
            seed: 7,
            ..Default::default()
        };
        let a = simulate_first_passage(&bm(-1.0), 0.0, &[1.0], &cfg).unwrap();
        let b = simulate_first_passage(&bm(-1.0), 0.0, &[1.0], &cfg).unwrap();
        assert_eq!(a.estimates[0].mean, b.estimates[0].mean);
    }

    #[test]
    fn scalar_passage_matches_closed_form() {
        let cfg = SimConfig {
            paths: 40_000,
            horizon: 200.0,
            seed: 1,
            ..Default::default()
        };
        let est = simulate_first_passage(&bm(-1.0), 0.0, &[1.0], &cfg).unwrap();
        let p = est.estimates[0].mean[(0, 0)];
        let se = est.estimates[0].stderr[(0, 0)];
        assert!((p - (-2.0f64).exp()).abs() < 4.0 * se, "{p} ± {se}");
    }

    #[test]
    fn heavy_killing_empties_passage() {
        let cfg = SimConfig {
            paths: 5_000,
            horizon: 50.0,
            ..Default::default()
        };
        let est = simulate_first_passage(&bm(-1.0), 200.0, &[1.0], &cfg).unwrap();
        assert!(est.estimates[0].mean[(0, 0)] < 1e-3);
    }
}
