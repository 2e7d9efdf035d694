use levy_ou::conditions::*;
use levy_ou::levy::{LevyMeasure, LevyTriplet};
use levy_ou::matrix::{spectral_profile, SpectralProfile, SquareMatrix};
use levy_ou::measure::{GridSpec, GriddedMeasure};
use levy_ou::stats::normal_pdf;
use proptest::prelude::*;

fn contracting(d: usize) -> SpectralProfile {
    spectral_profile(&SquareMatrix::diagonal(&vec![-1.0; d]).unwrap()).unwrap()
}

fn value(r: &ConditionRecord, label: &str) -> f64 {
    r.evidence.iter().find(|e| e.label == label).unwrap_or_else(|| panic!("no {label} in {r:?}")).value
}

fn stable(index: f64, c: f64) -> LevyMeasure {
    LevyMeasure::stable(1, index, c).unwrap()
}

#[test]
fn stable_model_is_exp_ergodic_alpha() {
    let t = LevyTriplet::pure_jump(stable(1.0, 1.0 / std::f64::consts::PI));
    let r = check_model(&t, &contracting(1), &CheckSettings::default()).unwrap();
    assert_eq!(r.classification, Classification::ExpErgodicAlpha);
    assert_eq!(r.alpha, 0.5);
    assert!(r.record(ConditionName::SmallJumpSpread).unwrap().passed());
    let half = r.records.iter().find(|x| x.name == ConditionName::PowerMoment && x.parameters["order"] == 0.5).unwrap();
    assert!(half.passed());
}

#[test]
fn gaussian_jumps_are_exp_ergodic_with_the_right_ratio() {
    let t = LevyTriplet::pure_jump(LevyMeasure::gaussian(1.0, vec![0.0], 1.0).unwrap());
    let r = check_model(&t, &contracting(1), &CheckSettings::default()).unwrap();
    assert_eq!(r.classification, Classification::ExpErgodic);
    let ratio = r.record(ConditionName::TvRatio).unwrap();
    assert!(ratio.passed());
    // TV(N(0,1), N(x,1)) = 2(2 Phi(x/2) - 1) ~ 2 phi(0) |x|.
    let want = 2.0 * normal_pdf(0.0);
    assert!((value(ratio, "limit_estimate") - want).abs() < 0.02 * want);
    assert!(r.record(ConditionName::Overlap).unwrap().passed());
}

#[test]
fn single_atom_only_has_an_invariant_measure() {
    let t = LevyTriplet::pure_jump(LevyMeasure::single_atom(vec![1.0], 1.0).unwrap());
    let r = check_model(&t, &contracting(1), &CheckSettings::default()).unwrap();
    assert_eq!(r.classification, Classification::InvariantMeasureExists);
    assert_eq!(r.record(ConditionName::Overlap).unwrap().status, Status::Fail);
    let ratio = r.record(ConditionName::TvRatio).unwrap();
    assert_eq!(ratio.status, Status::Fail);
    // Every probe radius is at least two cells, so the shifted atom never overlaps: ratio 2 / rho.
    for e in ratio.evidence.iter().filter(|e| e.label.starts_with("ratio@")) {
        let rho: f64 = e.label["ratio@".len()..].parse().unwrap();
        assert!((e.value - 2.0 / rho).abs() < 1e-9);
    }
}

#[test]
fn stable_log_moment_matches_closed_form() {
    // int_1^inf log(1+r) / r^2 dr = 2 log 2, both sides.
    let c = 0.7;
    let r = check_log_moment(&stable(1.0, c));
    assert!(r.passed());
    assert!((value(&r, "integral") - 2.0 * c * 2.0 * 2f64.ln()).abs() < 1e-7);
    assert_eq!(check_log_moment(&LevyMeasure::log_tail(1, 1.0).unwrap()).status, Status::Fail);
    assert!(check_log_moment(&LevyMeasure::atoms(1, vec![levy_ou::levy::Atom::new(vec![5.0], 2.0)]).unwrap()).passed());
}

#[test]
fn stable_overlap_matches_closed_form() {
    // nu_1 = c|z|^{-1-a} on |z| >= 1. For 0 < x <= 1 the overlap with its shift is 2c(1+x)^{-a}/a,
    // smallest at x = rho.
    let (a, c, rho) = (1.5, 1.0, 0.5);
    let r = check_overlap_condition(&stable(a, c), 1.0, rho, &CheckSettings::default());
    assert!(r.passed());
    let want = 2.0 * c * (1.0f64 + rho).powf(-a) / a;
    assert!((value(&r, "min_overlap") - want).abs() < 1e-3, "{} vs {want}: {r:?}", value(&r, "min_overlap"));
}

#[test]
fn uniform_jumps_have_unit_ratio() {
    // Uniform mass 1 on [-1, 1]: the shift moves |x|/2 of mass out of each end, so TV = |x|.
    let nu = LevyMeasure::uniform(1.0, vec![0.0], 1.0).unwrap();
    let r = check_tv_ratio_condition(&nu, 1.0, &CheckSettings::default());
    assert!(r.passed());
    assert!((value(&r, "limit_estimate") - 1.0).abs() < 1e-9);
}

#[test]
fn planar_gaussian_ratio() {
    // In the plane the TV along any direction is the one-dimensional one.
    let nu = LevyMeasure::gaussian(1.0, vec![0.0, 0.0], 1.0).unwrap();
    let r = check_tv_ratio_condition(&nu, 1.0, &CheckSettings::default());
    assert!(r.passed());
    assert!((value(&r, "limit_estimate") - 2.0 * normal_pdf(0.0)).abs() < 0.02);
}

#[test]
fn small_jump_spread_cases() {
    let s = CheckSettings::default();
    let (a, c) = (1.2, 0.8);
    let r = check_small_jump_spread(&stable(a, c), 1e4, 1, &s);
    assert!(r.passed());
    for e in r.evidence.iter().filter(|e| e.label.starts_with("ratio@")) {
        let k: f64 = e.label["ratio@".len()..].parse().unwrap();
        let k = 10f64.powf((k.log10() * 4.0).round() / 4.0);
        let want = 2.0 * c * k.powf(a) / ((2.0 - a) * k.ln_1p());
        assert!((e.value - want).abs() < 1e-6 * want, "{} vs {want}", e.value);
    }
    let finite = LevyMeasure::gaussian(3.0, vec![0.0], 1.0).unwrap();
    assert_eq!(check_small_jump_spread(&finite, 1e4, 1, &s).status, Status::Fail);
    assert!(check_small_jump_spread(&stable(1.0, 1.0), 1e2, 1, &s).status == Status::Inconclusive);
}

#[test]
fn log_singular_spread_decays() {
    // 1/(|z| log^2(1/|z|)) near the origin: the ratio falls like 1/log^3 |xi|.
    let nu = LevyMeasure::log_singular(1, 1.0).unwrap();
    let s = CheckSettings::default();
    let r = check_small_jump_spread(&nu, 1e4, 1, &s);
    assert_eq!(r.status, Status::Fail, "{r:?}");
}

#[test]
fn symbol_growth_cases() {
    let s = CheckSettings::default();
    let brownian = LevyTriplet::new(SquareMatrix::identity(1), vec![0.0], LevyMeasure::zero(1).unwrap()).unwrap();
    let r = check_symbol_growth(&brownian, 1e4, 1, &s);
    assert!(r.passed());
    assert!(value(&r, "c0_estimate") > 1.0);
    let cp = LevyTriplet::pure_jump(LevyMeasure::gaussian(1.0, vec![0.0], 1.0).unwrap());
    assert_eq!(check_symbol_growth(&cp, 1e4, 1, &s).status, Status::Fail);
    let st = LevyTriplet::pure_jump(stable(0.7, 1.0));
    assert!(check_symbol_growth(&st, 1e4, 1, &s).passed());
    // Degenerate planar Brownian motion: bounded symbol along the second axis.
    let q = SquareMatrix::diagonal(&[1.0, 0.0]).unwrap();
    let degenerate = LevyTriplet::new(q, vec![0.0, 0.0], LevyMeasure::zero(2).unwrap()).unwrap();
    assert_eq!(check_symbol_growth(&degenerate, 1e4, 4, &s).status, Status::Fail);
}

#[test]
fn density_criteria() {
    let s = CheckSettings::default();
    let (inv, shift) = check_density_sufficient(|_: &[f64]| 1.0, 1, &[0.0], 0.5, &s);
    assert!(inv.passed() && shift.passed());
    assert!((value(&inv, "integral") - 1.0).abs() < 1e-8);
    let (inv, _) = check_density_sufficient(|z: &[f64]| z[0].abs(), 1, &[0.0], 0.5, &s);
    assert_eq!(inv.status, Status::Fail);
    let (inv, _) = check_density_sufficient(|z: &[f64]| if z[0] > 0.1 { 0.0 } else { 1.0 }, 1, &[0.0], 0.5, &s);
    assert_eq!(inv.status, Status::Fail);
    // Lipschitz with constant L on the interval: the L1 shift ratio stays below L times its length.
    let l = 3.0;
    let (inv, shift) = check_density_sufficient(|z: &[f64]| 2.0 + l * z[0], 1, &[0.0], 0.5, &s);
    assert!(inv.passed() && shift.passed());
    for e in shift.evidence.iter().filter(|e| e.label.starts_with("ratio@")) {
        assert!(e.value <= l * 1.0 + 1e-9);
    }
    let (inv, shift) = check_density_sufficient(|_: &[f64]| 1.0, 2, &[0.0, 0.0], 0.5, &s);
    assert!(inv.passed() && shift.passed());
    assert!((value(&inv, "integral") - std::f64::consts::PI * 0.25).abs() < 1e-6);
}

fn gridded<F: Fn(f64) -> f64>(f: F) -> GriddedMeasure {
    let spec = GridSpec::centered(1, 3.0, 1.0 / 64.0).unwrap();
    let w = (0..spec.len()).map(|k| f(spec.center(k)[0]) / 64.0).collect();
    GriddedMeasure::from_weights(spec, w).unwrap()
}

#[test]
fn minorant_cases() {
    let s = CheckSettings::default();
    let half_gauss = |z: f64| if z.abs() <= 2.0 { 0.5 * normal_pdf(z) } else { 0.0 };
    let mu = gridded(half_gauss);
    assert!(check_minorant(&stable(1.0, 1.0), &mu, &s).passed());
    // A small stable scale falls below the Gaussian bump around |z| = 1.
    assert_eq!(check_minorant(&stable(1.0, 0.01), &mu, &s).status, Status::Fail);
    let nu = LevyMeasure::gaussian(1.0, vec![0.0], 1.0).unwrap();
    let mut w = gridded(|z| 0.5 * normal_pdf(z)).weights().to_vec();
    let spec = GridSpec::centered(1, 3.0, 1.0 / 64.0).unwrap();
    w[spec.locate(&[0.5]).unwrap()] += 0.2;
    let atom = GriddedMeasure::from_weights(spec, w).unwrap();
    assert_eq!(check_minorant(&nu, &atom, &s).status, Status::Fail);
}

fn reference_models() -> Vec<LevyTriplet> {
    vec![
        LevyTriplet::pure_jump(stable(1.0, 1.0 / std::f64::consts::PI)),
        LevyTriplet::pure_jump(stable(1.5, 0.5)),
        LevyTriplet::pure_jump(LevyMeasure::gaussian(1.0, vec![0.0], 1.0).unwrap()),
        LevyTriplet::pure_jump(LevyMeasure::single_atom(vec![1.0], 1.0).unwrap()),
        LevyTriplet::pure_jump(LevyMeasure::uniform(2.0, vec![0.5], 1.0).unwrap()),
        LevyTriplet::pure_jump(LevyMeasure::log_singular(1, 1.0).unwrap()),
    ]
}

#[test]
fn doubling_error_bars_never_flips_a_decision() {
    let base = CheckSettings::default();
    let wide = CheckSettings { bar_inflation: 2.0, ..CheckSettings::default() };
    for t in reference_models() {
        let a = check_model(&t, &contracting(1), &base).unwrap();
        let b = check_model(&t, &contracting(1), &wide).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.name, y.name);
            assert!(x.status == y.status || y.status == Status::Inconclusive, "{:?}: {:?} -> {:?}", x.name, x.status, y.status);
        }
        // A bounded TV ratio comes with a positive overlap.
        if a.record(ConditionName::TvRatio).unwrap().passed() {
            assert!(a.record(ConditionName::Overlap).unwrap().passed());
        }
    }
}

fn record(name: ConditionName, order: Option<f64>) -> ConditionRecord {
    let mut parameters = std::collections::BTreeMap::new();
    if let Some(p) = order {
        parameters.insert("order".to_string(), p);
    }
    ConditionRecord { name, status: Status::Pass, evidence: vec![], parameters, note: String::new() }
}

fn all_passes() -> Vec<ConditionRecord> {
    vec![
        record(ConditionName::LogMoment, None),
        record(ConditionName::PowerMoment, Some(1.0)),
        record(ConditionName::PowerMoment, Some(0.5)),
        record(ConditionName::Overlap, None),
        record(ConditionName::TvRatio, None),
        record(ConditionName::SmallJumpSpread, None),
        record(ConditionName::SymbolGrowth, None),
        record(ConditionName::Minorant, None),
    ]
}

proptest! {
    #[test]
    fn classification_is_monotone(mask in 0u32..256, extra in 0usize..8) {
        let all = all_passes();
        let chosen: Vec<ConditionRecord> = all.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| r.clone()).collect();
        let mut more = chosen.clone();
        more.push(all[extra].clone());
        let sp = contracting(1);
        let a = classify(chosen, &sp, 0.5).unwrap();
        let b = classify(more, &sp, 0.5).unwrap();
        prop_assert!(b.classification >= a.classification);
    }
}
