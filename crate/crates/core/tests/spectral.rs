mod common;

use common::{half_disk, random_model, winding_count, zero_bound, Kind, Sign, C64};
use mapfluct::spectral::{self, assemble_pair, find_eigenvalues, jordan_chains, spectrum};
use mapfluct::{Error, MapModel, Region, SpectralConfig};
use proptest::prelude::*;

fn sign_of(i: u8) -> Sign {
    match i % 3 {
        0 => Sign::Negative,
        1 => Sign::Zero,
        _ => Sign::Positive,
    }
}

fn kind_of(i: u8) -> Kind {
    match i % 4 {
        0 => Kind::Mmbm,
        1 => Kind::MmbmDegenerate,
        2 => Kind::Jumps,
        _ => Kind::JumpsFull,
    }
}

/// States that can set new maxima: anything but a downward subordinator.
fn plus_count(model: &MapModel) -> usize {
    model.levy().iter().filter(|s| s.sigma > 0.0 || s.drift > 0.0).count()
}

fn minus_count(model: &MapModel) -> usize {
    model.levy().iter().filter(|s| s.sigma > 0.0 || s.drift < 0.0).count()
}

fn right_zeros_by_winding(model: &MapModel, q: f64) -> i64 {
    let spec = model.to_spec();
    let shift = if q == 0.0 { 1e-7 } else { 0.0 };
    winding_count(&spec, q, &half_disk(shift, zero_bound(&spec, q), true))
}

fn left_zeros_by_winding(model: &MapModel, q: f64) -> i64 {
    let spec = model.to_spec();
    let shift = if q == 0.0 { -1e-7 } else { 0.0 };
    winding_count(&spec, q, &half_disk(shift, zero_bound(&spec, q), false))
}

#[test]
fn scalar_zeros_are_quadratic_roots() {
    let model = common::bm(-1.0, 1.0);
    for q in [0.5, 1.0, 5.0] {
        let s = spectrum(&model, q, &SpectralConfig::default()).unwrap();
        let disc = (1.0 + 2.0 * q).sqrt();
        assert!((s.positive[0].value.re - (1.0 + disc)).abs() < 1e-12);
        assert!((s.negative[0].value.re - (1.0 - disc)).abs() < 1e-12);
    }
}

#[test]
fn zero_drift_zero_is_double() {
    let model = common::corpus("mmbm2_zero");
    let s = spectrum(&model, 0.0, &SpectralConfig::default()).unwrap();
    assert_eq!(s.zero_multiplicity, 2);
    let all = find_eigenvalues(&model, 0.0, Region::All, &SpectralConfig::default()).unwrap();
    assert_eq!(all[0].multiplicity, 2);
}

#[test]
fn full_plane_needs_mmbm() {
    let model = common::corpus("hyper2");
    assert!(matches!(
        find_eigenvalues(&model, 0.0, Region::All, &SpectralConfig::default()),
        Err(Error::NotMmbm)
    ));
}

#[test]
fn winding_oracle_sees_scalar_zero() {
    let model = common::bm(-1.0, 1.0);
    assert_eq!(right_zeros_by_winding(&model, 0.0), 1);
    assert_eq!(right_zeros_by_winding(&model, 1.0), 1);
    assert_eq!(left_zeros_by_winding(&model, 1.0), 1);
}

#[test]
fn corpus_counts_match_winding() {
    for name in common::CORPUS {
        let model = common::corpus(name);
        for q in [0.0, 0.5] {
            let s = spectrum(&model, q, &SpectralConfig::default()).unwrap();
            assert_eq!(
                s.positive_count() as i64,
                right_zeros_by_winding(&model, q),
                "{name} q={q}"
            );
        }
    }
}

#[test]
fn double_zero_chain_has_length_two() {
    let model = common::corpus("mmbm2_zero");
    let sys = assemble_pair(&model, 0.0, Region::All, &SpectralConfig::default()).unwrap();
    let zero = sys.blocks.iter().find(|b| b.eigenvalue.norm() == 0.0).unwrap();
    assert_eq!(zero.vectors.len(), 2);
    assert!(sys.zero_drift.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn right_half_plane_count(seed in any::<u64>(), k in 0u8..4, s in 0u8..3, killed in any::<bool>()) {
        let model = random_model(seed, kind_of(k), sign_of(s));
        let q = if killed { 0.7 } else { 0.0 };
        let spec = spectrum(&model, q, &SpectralConfig::default()).unwrap();
        let indicator = usize::from(q == 0.0 && model.kappa() >= 0.0);
        prop_assert_eq!(spec.positive_count(), plus_count(&model) - indicator);
        prop_assert_eq!(spec.positive_count() as i64, right_zeros_by_winding(&model, q));
    }

    #[test]
    fn full_plane_count_for_mmbm(seed in any::<u64>(), degenerate in any::<bool>(), s in 0u8..3, killed in any::<bool>()) {
        let kind = if degenerate { Kind::MmbmDegenerate } else { Kind::Mmbm };
        let model = random_model(seed, kind, sign_of(s));
        let q = if killed { 0.4 } else { 0.0 };
        let spec = spectrum(&model, q, &SpectralConfig::default()).unwrap();
        let neg = usize::from(q == 0.0 && model.kappa() <= 0.0);
        prop_assert_eq!(spec.negative_count(), minus_count(&model) - neg);
        let zero = if q > 0.0 { 0 } else if model.kappa() == 0.0 { 2 } else { 1 };
        prop_assert_eq!(spec.zero_multiplicity, zero);
        prop_assert_eq!(spec.negative_count() as i64, left_zeros_by_winding(&model, q));
    }

    #[test]
    fn chains_satisfy_recursion(seed in any::<u64>(), k in 0u8..4, s in 0u8..3) {
        let model = random_model(seed, kind_of(k), sign_of(s));
        let cfg = SpectralConfig::default();
        for q in [0.0, 0.3] {
            let eig = find_eigenvalues(&model, q, Region::Positive, &cfg).unwrap();
            let chains: Vec<_> = eig.iter().flat_map(|e| jordan_chains(&model, q, e.value, e.multiplicity, &cfg).unwrap()).collect();
            for chain in &chains {
                let scale = model.derivative(chain.eigenvalue, q, 0).unwrap().iter().map(|z| z.norm()).fold(1.0, f64::max);
                let res = chain.residual(&model, q).unwrap();
                prop_assert!(res <= 1e-8 * scale, "{res} {scale} {:?} {}", chain.eigenvalue, chain.len());
                let first = chain.vectors[0].iter().find(|z| z.norm() > 1e-8).unwrap();
                prop_assert!(first.im.abs() <= 1e-12 && first.re > 0.0);
            }
        }
    }

    #[test]
    fn spectrum_is_conjugate_symmetric(seed in any::<u64>(), k in 0u8..4) {
        let model = random_model(seed, kind_of(k), Sign::Negative);
        let s = spectrum(&model, 0.2, &SpectralConfig::default()).unwrap();
        for e in s.positive.iter().chain(&s.negative) {
            let partner = s.positive.iter().chain(&s.negative).any(|f| (f.value - e.value.conj()).norm() <= 1e-9 * (1.0 + e.value.norm()) && f.multiplicity == e.multiplicity);
            prop_assert!(partner);
        }
    }

    #[test]
    fn determinant_vanishes_at_zeros(seed in any::<u64>(), k in 0u8..4) {
        let model = random_model(seed, kind_of(k), Sign::Positive);
        let spec = model.to_spec();
        let s = spectrum(&model, 0.5, &SpectralConfig::default()).unwrap();
        for e in &s.positive {
            // Compare against the size of det on a small circle around the zero.
            let r = 1e-3 * (1.0 + e.value.norm());
            let ring = (0..8)
                .map(|k| common::det_f(&spec, e.value + C64::from_polar(r, k as f64), 0.5).norm())
                .fold(0.0, f64::max);
            prop_assert!(common::det_f(&spec, e.value, 0.5).norm() <= 1e-4 * ring);
        }
    }
}

#[test]
fn report_lists_every_zero() {
    let model = common::corpus("mmbm2_neg");
    let report = spectral::spectrum_report(&model, 0.5, &SpectralConfig::default()).unwrap();
    let total: usize = report.eigenvalues.iter().map(|e| e.multiplicity).sum();
    assert_eq!(total, 4);
}
