#![allow(dead_code)]

use std::path::PathBuf;

use mapfluct::model::{JumpComponent, MixtureComponent, TransitionJumpSpec};
use mapfluct::{LevyDescriptor, MapModel, ModelSpec};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C64 = Complex<f64>;

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("models")
        .join(format!("{name}.json"))
}

pub fn corpus(name: &str) -> MapModel {
    let text = std::fs::read_to_string(corpus_path(name)).unwrap();
    MapModel::from_json(&text).unwrap()
}

pub const CORPUS: [&str; 6] = ["bm", "mmbm2_neg", "mmbm2_zero", "mmbm2_pos", "sub3", "hyper2"];

pub fn bm(drift: f64, sigma: f64) -> MapModel {
    MapModel::mmbm(DMatrix::from_element(1, 1, 0.0), &[drift], &[sigma]).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    /// Brownian in every state.
    Mmbm,
    /// MMBM where some states are pure drift.
    MmbmDegenerate,
    /// Hyperexponential jumps, transition jumps and downward subordinators.
    Jumps,
    /// Jumps, but every state has a Brownian part.
    JumpsFull,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

/// Random irreducible model with asymptotic drift of the requested sign.
#[allow(clippy::needless_range_loop)]
pub fn random_model(seed: u64, kind: Kind, sign: Sign) -> MapModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let n = if matches!(kind, Kind::MmbmDegenerate | Kind::Jumps) {
        n.max(2)
    } else {
        n
    };
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if i != j {
                q[i][j] = rng.random_range(0.2..2.0);
                total += q[i][j];
            }
        }
        q[i][i] = -total;
    }
    let mut states = Vec::with_capacity(n);
    let mut transition_jumps = Vec::new();
    for i in 0..n {
        let mut s = LevyDescriptor::brownian(rng.random_range(-2.0..2.0), rng.random_range(0.5..1.5));
        match kind {
            Kind::Mmbm => {}
            Kind::MmbmDegenerate => {
                if i > 0 && rng.random_bool(0.5) {
                    s.sigma = 0.0;
                    s.drift = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.3..2.0);
                }
            }
            Kind::Jumps | Kind::JumpsFull => {
                if kind == Kind::Jumps && i > 0 && rng.random_bool(0.4) {
                    s.sigma = 0.0;
                    s.drift = -rng.random_range(0.05..1.0);
                }
                for _ in 0..rng.random_range(0..=2usize) {
                    s.jumps.push(JumpComponent {
                        rate: rng.random_range(0.1..1.5),
                        decay: rng.random_range(0.5..6.0),
                    });
                }
            }
        }
        states.push(s);
    }
    if matches!(kind, Kind::Jumps | Kind::JumpsFull) {
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.3) {
                    let w = rng.random_range(0.1..0.9);
                    transition_jumps.push(TransitionJumpSpec {
                        from: i,
                        to: j,
                        mixture: vec![
                            MixtureComponent {
                                weight: w,
                                decay: rng.random_range(0.5..5.0),
                            },
                            MixtureComponent {
                                weight: 1.0 - w,
                                decay: rng.random_range(0.5..5.0),
                            },
                        ],
                    });
                }
            }
        }
    }
    let target = match sign {
        Sign::Negative => -rng.random_range(0.2..1.0),
        Sign::Zero => 0.0,
        Sign::Positive => rng.random_range(0.2..1.0),
    };
    let mut spec = ModelSpec {
        schema: 1,
        generator: q,
        states,
        transition_jumps,
        force_zero_drift: false,
    };
    // Shift the drift of the Brownian states so that κ hits the target.
    let model = MapModel::from_spec(&spec).unwrap();
    let pi = model.stationary();
    let weight: f64 = (0..n).filter(|&i| spec.states[i].sigma > 0.0).map(|i| pi[i]).sum();
    let delta = (target - model.raw_kappa()) / weight;
    for s in spec.states.iter_mut().filter(|s| s.sigma > 0.0) {
        s.drift += delta;
    }
    spec.force_zero_drift = sign == Sign::Zero;
    MapModel::from_spec(&spec).unwrap()
}

/// `F^q(α)` assembled directly from the declaration.
pub fn f_matrix(spec: &ModelSpec, alpha: C64, q: f64) -> DMatrix<C64> {
    let n = spec.generator.len();
    let mut f = DMatrix::from_fn(n, n, |i, j| C64::from(spec.generator[i][j]));
    for t in &spec.transition_jumps {
        let g: C64 = t.mixture.iter().map(|c| c.weight * c.decay / (alpha + c.decay)).sum();
        f[(t.from, t.to)] *= g;
    }
    for (i, s) in spec.states.iter().enumerate() {
        let mut psi = alpha * s.drift + alpha * alpha * (0.5 * s.sigma * s.sigma) - q;
        for j in &s.jumps {
            psi += j.rate * (j.decay / (alpha + j.decay) - 1.0);
        }
        f[(i, i)] += psi;
    }
    f
}

pub fn det_f(spec: &ModelSpec, alpha: C64, q: f64) -> C64 {
    f_matrix(spec, alpha, q).determinant()
}

/// Zeros of `det F^q` enclosed by a closed polygonal path, by the argument
/// principle with adaptive refinement.
pub fn winding_count(spec: &ModelSpec, q: f64, path: &[C64]) -> i64 {
    let f = |z: C64| det_f(spec, z, q);
    let mut total = 0.0;
    for w in path.windows(2) {
        total += arg_change(&f, w[0], w[1], f(w[0]), f(w[1]), 0);
    }
    (total / std::f64::consts::TAU).round() as i64
}

fn arg_change(f: &impl Fn(C64) -> C64, a: C64, b: C64, fa: C64, fb: C64, depth: u32) -> f64 {
    let d = (fb / fa).arg();
    if d.abs() < 0.3 || depth > 40 {
        return d;
    }
    let m = (a + b) * 0.5;
    let fm = f(m);
    arg_change(f, a, m, fa, fm, depth + 1) + arg_change(f, m, b, fm, fb, depth + 1)
}

/// Counterclockwise boundary of `{Re z > shift, |z − shift| < r}` (or the
/// left half when `right` is false).
pub fn half_disk(shift: f64, r: f64, right: bool) -> Vec<C64> {
    let k = 256;
    let c = C64::from(shift);
    let mut path = Vec::with_capacity(k + 2);
    if right {
        for i in 0..=k {
            let t = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / k as f64;
            path.push(c + C64::from_polar(r, t));
        }
    } else {
        for i in 0..=k {
            let t = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / k as f64;
            path.push(c + C64::from_polar(r, t));
        }
    }
    // Diameter, refined cubically towards the real axis.
    let m = 1000;
    let sign = if right { -1.0 } else { 1.0 };
    for i in 1..2 * m {
        let t = (m as f64 - i as f64) / m as f64;
        path.push(c + C64::new(0.0, -sign * r * t * t * t));
    }
    path.push(path[0]);
    path
}

/// Generous bound on the modulus of every zero of `det F^q`.
pub fn zero_bound(spec: &ModelSpec, q: f64) -> f64 {
    let rates: f64 = spec
        .generator
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let jumps: f64 = spec
        .states
        .iter()
        .map(|s| s.jumps.iter().map(|j| j.rate + j.decay).sum::<f64>())
        .fold(0.0, f64::max);
    let decays = spec
        .transition_jumps
        .iter()
        .flat_map(|t| t.mixture.iter().map(|c| c.decay))
        .fold(0.0, f64::max);
    let slopes = spec.states.iter().map(|s| s.drift.abs()).fold(0.0, f64::max);
    let sigma_min = spec
        .states
        .iter()
        .filter(|s| s.sigma > 0.0)
        .map(|s| s.sigma * s.sigma)
        .fold(f64::INFINITY, f64::min);
    let drift_min = spec
        .states
        .iter()
        .filter(|s| s.sigma == 0.0 && s.drift != 0.0)
        .map(|s| s.drift.abs())
        .fold(f64::INFINITY, f64::min);
    let base = 1.0 + rates + jumps + decays + slopes + q;
    10.0 * base * (1.0 + 1.0 / sigma_min.min(1.0)) * (1.0 + 1.0 / drift_min.min(1.0))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}
