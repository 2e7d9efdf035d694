use levy_ou::levy::{LevyMeasure, LevyTriplet, SmallJumpScheme};
use levy_ou::matrix::SquareMatrix;
use levy_ou::ou::*;
use levy_ou::rng::{Execution, RandomStream};
use levy_ou::stats::{binomial_se, ks_pvalue, ks_statistic, ks_two_sample, ks_two_sample_pvalue, normal_cdf};
use levy_ou::spectral::{stationary_density, AccumulatedSymbol, OracleSettings};
use num_complex::Complex64;
use proptest::prelude::*;

fn brownian_ou() -> OUModel {
    let t = LevyTriplet::new(SquareMatrix::identity(1), vec![0.0], LevyMeasure::zero(1).unwrap()).unwrap();
    OUModel::new(SquareMatrix::scalar(-1.0).unwrap(), t).unwrap()
}

fn jump_ou(nu: LevyMeasure) -> OUModel {
    let d = nu.dim();
    OUModel::new(SquareMatrix::diagonal(&vec![-1.0; d]).unwrap(), LevyTriplet::pure_jump(nu)).unwrap()
}

fn first(v: Vec<Vec<f64>>) -> Vec<f64> {
    v.into_iter().map(|x| x[0]).collect()
}

#[test]
fn gaussian_ou_endpoint_law() {
    let m = brownian_ou();
    let (x, t) = (1.5, 0.7);
    let s = first(simulate_many(&m, &[x], t, SmallJumpScheme::default(), 10_000, &RandomStream::new(3), &Execution::default()).unwrap());
    let (mu, sd) = ((-t).exp() * x, ((1.0 - (-2.0 * t).exp()) / 2.0).sqrt());
    let d = ks_statistic(&s, |v| normal_cdf((v - mu) / sd));
    assert!(ks_pvalue(d, s.len()) > 0.01, "D = {d}");
}

#[test]
fn gaussian_invariant_law() {
    let m = brownian_ou();
    let (draws, horizon) = sample_invariant_many(&m, SmallJumpScheme::default(), 1e-6, 10_000, &RandomStream::new(5), &Execution::default()).unwrap();
    assert!(horizon >= 1.0);
    let s = first(draws);
    let d = ks_statistic(&s, |v| normal_cdf(v / 0.5f64.sqrt()));
    assert!(ks_pvalue(d, s.len()) > 0.01, "D = {d}");
}

#[test]
fn zero_noise_invariant_is_origin() {
    let m = jump_ou(LevyMeasure::zero(2).unwrap());
    let v = sample_invariant(&m, SmallJumpScheme::default(), 1e-6, &mut RandomStream::new(1)).unwrap();
    assert_eq!(v, vec![0.0, 0.0]);
}

#[test]
fn log_moment_failure_blocks_invariant_sampling() {
    let m = jump_ou(LevyMeasure::log_tail(1, 1.0).unwrap());
    assert!(sample_invariant(&m, SmallJumpScheme::default(), 1e-6, &mut RandomStream::new(1)).is_err());
}

fn synchronous_models() -> Vec<OUModel> {
    let a = SquareMatrix::from_row_major(2, &[-1.0, 2.0, -0.5, -1.5]).unwrap();
    let t = LevyTriplet::new(SquareMatrix::diagonal(&[0.3, 1.0]).unwrap(), vec![0.2, -0.1], LevyMeasure::gaussian(2.0, vec![0.5, 0.0], 0.7).unwrap()).unwrap();
    vec![
        OUModel::new(a, t).unwrap(),
        jump_ou(LevyMeasure::stable(1, 1.3, 1.0).unwrap()),
        jump_ou(LevyMeasure::stable(2, 0.8, 0.5).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn synchronous_noise_identity(seed in any::<u64>(), which in 0usize..3, x0 in -5.0..5.0f64, y0 in -5.0..5.0f64, t in 0.01..4.0f64) {
        let m = &synchronous_models()[which];
        let d = m.dim();
        let x = vec![x0; d];
        let y: Vec<f64> = (0..d).map(|i| y0 + i as f64).collect();
        for scheme in [SmallJumpScheme::default(), SmallJumpScheme { epsilon: 0.1, gaussian_fill: false, exact_stable: false }] {
            let sx = EndpointSampler::new(m, t, scheme).unwrap();
            let px = sx.draw(&x, &mut RandomStream::new(seed)).unwrap();
            let py = sx.draw(&y, &mut RandomStream::new(seed)).unwrap();
            let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let flow = m.flow(&diff, t).unwrap();
            for i in 0..d {
                prop_assert!((px[i] - py[i] - flow[i]).abs() <= 1e-9 * (1.0 + px[i].abs() + py[i].abs()));
            }
        }
    }
}

#[test]
fn no_jump_probability() {
    let m = jump_ou(LevyMeasure::gaussian(1.5, vec![0.0], 1.0).unwrap());
    let t = 0.8;
    let n = 100_000;
    let st = coupling_frequency(&m, &[0.0], &[0.0], 1.0, t, n, &RandomStream::new(7), &Execution::default()).unwrap();
    let want = (-1.5 * t).exp();
    assert!((st.p_no_jump - want).abs() < 3.0 * binomial_se(st.no_jump, n), "{} vs {want}", st.p_no_jump);
    // Identical starts couple whenever a big jump happened.
    assert_eq!(st.coupled + st.no_jump, n);
}

#[test]
fn coupling_marginals_are_exact() {
    let m = jump_ou(LevyMeasure::gaussian(1.0, vec![0.0], 1.0).unwrap());
    let (x, y, t, n) = ([2.0], [-1.0], 1.5, 10_000);
    let s = CouplingSampler::new(&m, 1.0, t).unwrap();
    let pairs = Execution::default().sample(n, &RandomStream::new(11), |rng| s.draw(&x, &y, rng).unwrap());
    let (px, py): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.x[0], p.y[0])).unzip();
    let fx = first(simulate_many(&m, &x, t, s.scheme(), n, &RandomStream::new(12), &Execution::default()).unwrap());
    let fy = first(simulate_many(&m, &y, t, s.scheme(), n, &RandomStream::new(13), &Execution::default()).unwrap());
    assert!(ks_two_sample_pvalue(ks_two_sample(&px, &fx), n, n) > 0.01);
    assert!(ks_two_sample_pvalue(ks_two_sample(&py, &fy), n, n) > 0.01);
    let mut coupled = 0;
    for p in &pairs {
        if p.coupled {
            coupled += 1;
            assert_eq!(p.x, p.y);
            assert!(p.n_jumps >= 1);
        }
        if p.n_jumps == 0 {
            assert!(!p.coupled);
        }
    }
    assert!(coupled > n / 10);
}

#[test]
fn planar_coupling_couples_bitwise() {
    let a = SquareMatrix::from_row_major(2, &[-0.5, 1.0, -1.0, -0.5]).unwrap();
    let m = OUModel::new(a, LevyTriplet::pure_jump(LevyMeasure::stable(2, 1.5, 1.0).unwrap())).unwrap();
    let s = CouplingSampler::new(&m, 0.5, 2.0).unwrap();
    let mut rng = RandomStream::new(19);
    let mut hits = 0;
    for _ in 0..2000 {
        let p = s.draw(&[1.0, 0.0], &[0.0, 0.5], &mut rng).unwrap();
        if p.coupled {
            hits += 1;
            assert_eq!(p.x, p.y);
        }
    }
    assert!(hits > 0);
}

#[test]
fn single_atom_never_couples() {
    let m = jump_ou(LevyMeasure::single_atom(vec![1.0], 2.0).unwrap());
    let st = coupling_frequency(&m, &[1.0], &[0.0], 0.5, 3.0, 5000, &RandomStream::new(2), &Execution::default()).unwrap();
    assert_eq!(st.coupled, 0);
    assert_eq!(st.tv_bound, 2.0);
}

#[test]
fn coupling_needs_big_jumps() {
    assert!(coupled_pair_endpoint(&brownian_ou(), &[0.0], &[1.0], 0.5, 1.0, &mut RandomStream::new(0)).is_err());
    // A finite measure is kept whole, whatever the level.
    let m = jump_ou(LevyMeasure::gaussian(1.0, vec![0.0], 0.1).unwrap());
    assert!(coupled_pair_endpoint(&m, &[0.0], &[1.0], 10.0, 1.0, &mut RandomStream::new(0)).is_ok());
}

#[test]
fn gaussian_moment_plateau() {
    let m = brownian_ou();
    let grid = [0.5, 1.0, 3.0, 6.0, 10.0];
    let tab = uniform_moment_check(&m, 1.0, &grid, 20_000, SmallJumpScheme::default(), &RandomStream::new(4), &Execution::default()).unwrap();
    for r in &tab.rows {
        let want = ((1.0 - (-2.0 * r.t).exp()) / std::f64::consts::PI).sqrt();
        assert!((r.mean - want).abs() < 3.0 * r.se + 1e-12, "t = {}: {} vs {want}", r.t, r.mean);
    }
    assert!(tab.plateau);
}

#[test]
fn stable_moment_plateau() {
    let m = jump_ou(LevyMeasure::stable(1, 1.2, 1.0).unwrap());
    let grid = [1.0, 5.0, 10.0, 20.0, 35.0, 50.0];
    let tab = uniform_moment_check(&m, 0.5, &grid, 20_000, SmallJumpScheme::default(), &RandomStream::new(8), &Execution::default()).unwrap();
    assert!(tab.plateau, "{tab:?}");
    let heavy = jump_ou(LevyMeasure::stable(1, 0.8, 1.0).unwrap());
    assert!(uniform_moment_check(&heavy, 1.0, &grid, 100, SmallJumpScheme::default(), &RandomStream::new(8), &Execution::default()).is_err());
}

#[test]
fn zero_noise_moments_vanish() {
    let m = jump_ou(LevyMeasure::zero(1).unwrap());
    let tab = uniform_moment_check(&m, 0.5, &[1.0, 2.0, 3.0], 100, SmallJumpScheme::default(), &RandomStream::new(0), &Execution::default()).unwrap();
    assert!(tab.rows.iter().all(|r| r.mean == 0.0));
}

#[test]
fn parallel_and_sequential_agree() {
    let m = jump_ou(LevyMeasure::stable(1, 1.2, 1.0).unwrap());
    let s = RandomStream::new(99);
    let a = simulate_many(&m, &[1.0], 2.0, SmallJumpScheme::default(), 3000, &s, &Execution::sequential()).unwrap();
    let b = simulate_many(&m, &[1.0], 2.0, SmallJumpScheme::default(), 3000, &s, &Execution::parallel(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empirical_characteristic_function() {
    let a = SquareMatrix::from_row_major(2, &[-1.0, 0.4, -0.4, -0.8]).unwrap();
    let nu = LevyMeasure::sum(vec![LevyMeasure::stable(2, 1.4, 0.3).unwrap(), LevyMeasure::gaussian(1.0, vec![0.5, 0.0], 0.4).unwrap()]).unwrap();
    let tr = LevyTriplet::new(SquareMatrix::diagonal(&[0.1, 0.0]).unwrap(), vec![0.2, -0.3], nu).unwrap();
    let m = OUModel::new(a, tr).unwrap();
    let (x, t, n) = ([1.0, -0.5], 1.3, 40_000);
    // A general A rules out exact stable sampling; jumps below 0.1 are replaced by their Gaussian moment match,
    // whose effect on the characteristic function at these frequencies is far below the Monte Carlo band.
    let scheme = SmallJumpScheme { epsilon: 0.1, gaussian_fill: true, exact_stable: false };
    let draws = simulate_many(&m, &x, t, scheme, n, &RandomStream::new(21), &Execution::default()).unwrap();
    let sym = AccumulatedSymbol::new(&m, t).unwrap();
    let mx = m.flow(&x, t).unwrap();
    for j in 0..10 {
        let th = j as f64 * 0.6;
        let r = 0.3 + 0.25 * j as f64;
        let xi = [r * th.cos(), r * th.sin()];
        let emp: Complex64 = draws.iter().map(|v| Complex64::from_polar(1.0, xi[0] * v[0] + xi[1] * v[1])).sum::<Complex64>() / n as f64;
        let want = (Complex64::new(0.0, xi[0] * mx[0] + xi[1] * mx[1]) - sym.eval(&xi).unwrap()).exp();
        assert!((emp - want).norm() < 4.0 / (n as f64).sqrt(), "xi = {xi:?}: {emp} vs {want}");
    }
}

#[test]
fn cauchy_invariant_law() {
    let nu = LevyMeasure::stable(1, 1.0, 1.0 / std::f64::consts::PI).unwrap();
    let m = jump_ou(nu);
    let (draws, _) = sample_invariant_many(&m, SmallJumpScheme::default(), 1e-6, 20_000, &RandomStream::new(6), &Execution::default()).unwrap();
    let d = stationary_density(&m, None, &OracleSettings::default()).unwrap();
    let cdf = d.cdf_fn().unwrap();
    let s = first(draws);
    assert!(ks_statistic(&s, &cdf) <= 0.02);
    // The invariant law is standard Cauchy here.
    assert!(ks_pvalue(ks_statistic(&s, |v| 0.5 + v.atan() / std::f64::consts::PI), s.len()) > 0.01);
}
