mod common;

use common::{random_model, Kind, Sign};
use mapfluct::scale::{scale_matrices, verify_strong_markov};
use mapfluct::{Error, SpectralConfig};
use nalgebra::DVector;
use proptest::prelude::*;

fn cfg() -> SpectralConfig {
    SpectralConfig::default()
}

/// Scalar BM exit from `(−b, a)`, from the two roots `θ₊ > 0 > θ₋` of
/// `σ²θ²/2 + μθ − q` (or the null pair when `q = 0`).
fn scalar_exit(mu: f64, sigma: f64, q: f64, a: f64, b: f64) -> (f64, f64) {
    let v = sigma * sigma;
    let disc = (mu * mu + 2.0 * q * v).sqrt();
    let (tp, tm) = ((-mu + disc) / v, (-mu - disc) / v);
    // W(x) ∝ e^{θ₊x} − e^{θ₋x}; the mirrored scale function has roots −θ∓.
    let w = |x: f64| {
        if tp == tm || (tp - tm).abs() < 1e-14 {
            x
        } else {
            (tp * x).exp() - (tm * x).exp()
        }
    };
    let w_dual = |x: f64| {
        if (tp - tm).abs() < 1e-14 {
            x
        } else {
            (-tm * x).exp() - (-tp * x).exp()
        }
    };
    (w(b) / w(a + b), w_dual(a) / w_dual(a + b))
}

#[test]
fn scalar_exit_closed_form() {
    for (mu, s) in [(-1.0, 1.0), (0.4, 0.7), (0.0, 1.3)] {
        for q in [0.0, 0.5, 3.0] {
            for (a, b) in [(1.0, 1.0), (0.2, 1.5), (2.0, 0.5)] {
                let sm = scale_matrices(&common::bm(mu, s), q, a, b, &cfg()).unwrap();
                let (c, d) = scalar_exit(mu, s, q, a, b);
                assert!(
                    (sm.c[(0, 0)] - c).abs() < 1e-11,
                    "{mu} {s} {q} {a} {b}: {} vs {c}",
                    sm.c
                );
                assert!(
                    (sm.d[(0, 0)] - d).abs() < 1e-11,
                    "{mu} {s} {q} {a} {b}: {} vs {d}",
                    sm.d
                );
            }
        }
    }
}

#[test]
fn driftless_symmetric_halves() {
    for a in [0.1, 1.0, 7.0] {
        let sm = scale_matrices(&common::bm(0.0, 1.0), 0.0, a, a, &cfg()).unwrap();
        assert!((sm.c[(0, 0)] - 0.5).abs() < 1e-10);
        assert!((sm.d[(0, 0)] - 0.5).abs() < 1e-10);
    }
}

#[test]
fn jump_models_are_rejected() {
    let m = common::corpus("hyper2");
    assert!(matches!(scale_matrices(&m, 0.0, 1.0, 1.0, &cfg()), Err(Error::NotMmbm)));
}

#[test]
fn degenerate_interval_is_rejected() {
    let m = common::corpus("mmbm2_neg");
    assert!(matches!(
        scale_matrices(&m, 0.0, 0.0, 0.0, &cfg()),
        Err(Error::InvalidArgument(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn strong_markov_and_mass(
        seed in any::<u64>(),
        degenerate in any::<bool>(),
        sign in prop_oneof![Just(Sign::Negative), Just(Sign::Zero), Just(Sign::Positive)],
        killed in any::<bool>(),
        a in 0.05f64..3.0,
        b in 0.05f64..3.0,
    ) {
        let m = random_model(seed, if degenerate { Kind::MmbmDegenerate } else { Kind::Mmbm }, sign);
        let q = if killed { 0.5 } else { 0.0 };
        let sm = scale_matrices(&m, q, a, b, &cfg()).unwrap();
        prop_assert!(sm.jordan_residual <= 1e-10, "{}", sm.jordan_residual);
        let r = verify_strong_markov(&m, &sm, &cfg()).unwrap();
        prop_assert!(r.max() <= 1e-8, "{:?}", r);
        prop_assert!(sm.c.iter().chain(sm.d.iter()).all(|&x| (-1e-10..=1.0 + 1e-10).contains(&x)));
        let mass = sm.exit_mass();
        if killed {
            prop_assert!(mass.iter().all(|&s| s < 1.0));
        } else {
            prop_assert!((mass - DVector::from_element(m.dim(), 1.0)).amax() <= 1e-9);
        }
    }

    #[test]
    fn exit_up_is_immediate_at_zero_level(seed in any::<u64>(), sign in prop_oneof![Just(Sign::Negative), Just(Sign::Positive)]) {
        let m = random_model(seed, Kind::Mmbm, sign);
        let sm = scale_matrices(&m, 0.3, 0.0, 1.0, &cfg()).unwrap();
        let n = m.dim();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((sm.c[(i, j)] - target).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn wider_top_lowers_upward_exit(seed in any::<u64>(), a in 0.1f64..2.0) {
        let m = random_model(seed, Kind::Mmbm, Sign::Negative);
        let near = scale_matrices(&m, 0.2, a, 1.0, &cfg()).unwrap();
        let far = scale_matrices(&m, 0.2, a + 0.5, 1.0, &cfg()).unwrap();
        // Entries can move between phases; the total upward mass cannot grow.
        for i in 0..m.dim() {
            prop_assert!(far.c.row(i).sum() <= near.c.row(i).sum() + 1e-10);
        }
    }
}
