use levy_ou::measure::{discretize, meet, overlap_mass, shift, tv_norm, GridSpec, GriddedMeasure, LatticeCoupling, Source};
use levy_ou::rng::{Execution, RandomStream};
use levy_ou::stats::{binomial_se, ks_pvalue, ks_statistic, normal_cdf, normal_pdf};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0], n)
}

fn unit(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; w.len()];
        v[0] = 1.0;
        return v;
    }
    w.iter().map(|x| x / s).collect()
}

fn grid1() -> GridSpec {
    GridSpec::new(vec![-1.0], vec![0.1], vec![21]).unwrap()
}

fn grid2() -> GridSpec {
    GridSpec::new(vec![-0.5, -0.5], vec![0.25, 0.25], vec![5, 5]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn meet_tv_identity_1d(a in weights(21), b in weights(21)) {
        let a = GriddedMeasure::from_weights(grid1(), a).unwrap();
        let b = GriddedMeasure::from_weights(grid1(), b).unwrap();
        let m = meet(&a, &b).unwrap().mass();
        let tv = tv_norm(&a, &b).unwrap();
        prop_assert!((m - 0.5 * (a.mass() + b.mass() - tv)).abs() <= 1e-10);
        let (ab, ba, aa) = (meet(&a, &b).unwrap(), meet(&b, &a).unwrap(), meet(&a, &a).unwrap());
        prop_assert_eq!(ab.weights(), ba.weights());
        prop_assert_eq!(aa.weights(), a.weights());
    }

    #[test]
    fn meet_tv_identity_2d(a in weights(25), b in weights(25)) {
        let a = GriddedMeasure::from_weights(grid2(), a).unwrap();
        let b = GriddedMeasure::from_weights(grid2(), b).unwrap();
        let m = meet(&a, &b).unwrap().mass();
        let tv = tv_norm(&a, &b).unwrap();
        prop_assert!((m - 0.5 * (a.mass() + b.mass() - tv)).abs() <= 1e-10);
    }

    #[test]
    fn tv_is_a_metric(a in weights(21), b in weights(21), c in weights(21)) {
        let (a, b, c) = (unit(a), unit(b), unit(c));
        let a = GriddedMeasure::from_weights(grid1(), a).unwrap();
        let b = GriddedMeasure::from_weights(grid1(), b).unwrap();
        let c = GriddedMeasure::from_weights(grid1(), c).unwrap();
        let ab = tv_norm(&a, &b).unwrap();
        prop_assert!((ab - tv_norm(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= tv_norm(&a, &c).unwrap() + tv_norm(&c, &b).unwrap() + 1e-12);
        prop_assert_eq!(tv_norm(&a, &a).unwrap(), 0.0);
        if a.weights() != b.weights() {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn shift_preserves_mass(a in weights(25), x in -0.2f64..0.2, y in -0.2f64..0.2) {
        let mut w = a;
        // Keep the boundary empty so nothing leaves the grid.
        for (k, v) in w.iter_mut().enumerate() {
            let (i, j) = (k / 5, k % 5);
            if i == 0 || j == 0 || i == 4 || j == 4 {
                *v = 0.0;
            }
        }
        let g = GriddedMeasure::from_weights(grid2(), w).unwrap();
        let s = shift(&g, &[x, y], 0.0).unwrap();
        prop_assert!((s.mass() - g.mass()).abs() <= 1e-12 * (1.0 + g.mass()));
    }

    #[test]
    fn overlap_symmetric_for_symmetric_measures(half in weights(10), x in 0.0f64..0.5) {
        let mut w = half.clone();
        w.push(1.0);
        w.extend(half.iter().rev());
        let g = GriddedMeasure::from_weights(grid1(), w).unwrap();
        let (p, _) = overlap_mass(&g, &[x], f64::INFINITY).unwrap();
        let (m, _) = overlap_mass(&g, &[-x], f64::INFINITY).unwrap();
        prop_assert!((p - m).abs() < 1e-12);
        let tv = tv_norm(&g, &shift(&g, &[x], f64::INFINITY).unwrap()).unwrap();
        let s = shift(&g, &[x], f64::INFINITY).unwrap();
        prop_assert!((p - 0.5 * (g.mass() + s.mass() - tv)).abs() < 1e-10);
    }
}

fn unit_gaussian(h: f64) -> GriddedMeasure {
    let spec = GridSpec::centered(1, 10.0, h).unwrap();
    let f = |z: &[f64]| normal_pdf(z[0]);
    discretize(Source::Density { f: &f, total_mass: Some(1.0) }, &spec, 1e-8).unwrap()
}

#[test]
fn overlap_of_shifted_copy_extremes() {
    let g = unit_gaussian(0.05);
    let (m, _) = overlap_mass(&g, &[0.0], 0.0).unwrap();
    assert!((m - g.mass()).abs() < 1e-15);
    let spec = GridSpec::centered(1, 5.0, 0.1).unwrap();
    let mut w = vec![0.0; spec.len()];
    w[50] = 0.5;
    w[51] = 0.5;
    let two = GriddedMeasure::from_weights(spec, w).unwrap();
    let (m, _) = overlap_mass(&two, &[1.0], 0.0).unwrap();
    assert_eq!(m, 0.0);
}

#[test]
fn coupling_frequency_matches_gaussian_overlap() {
    let g = unit_gaussian(0.01);
    let mu = g.normalized().unwrap();
    let coupling = LatticeCoupling::new(&mu, &[1.0], 1e-8).unwrap();
    let n = 100_000;
    let draws = Execution::default().sample(n, &RandomStream::new(99), |r| coupling.sample(r));
    let k = draws.iter().filter(|d| d.coupled).count();
    let p = 2.0 * normal_cdf(-0.5);
    let freq = k as f64 / n as f64;
    assert!((freq - p).abs() < 3.0 * binomial_se(k, n).max(1e-4), "{freq} vs {p}");
    for d in draws.iter().filter(|d| d.coupled) {
        assert_eq!(d.u, d.u_shifted);
    }
}

#[test]
fn coupling_marginals_pass_ks() {
    let mu = unit_gaussian(0.01).normalized().unwrap();
    let coupling = LatticeCoupling::new(&mu, &[1.0], 1e-8).unwrap();
    let n = 10_000;
    let draws = Execution::default().sample(n, &RandomStream::new(5), |r| coupling.sample(r));
    let u: Vec<f64> = draws.iter().map(|d| d.u[0]).collect();
    let v: Vec<f64> = draws.iter().map(|d| d.u_shifted[0]).collect();
    assert!(ks_pvalue(ks_statistic(&u, normal_cdf), n) > 0.01);
    assert!(ks_pvalue(ks_statistic(&v, |x| normal_cdf(x - 1.0)), n) > 0.01);
}

#[test]
fn coupling_trivial_cases() {
    let mu = unit_gaussian(0.1).normalized().unwrap();
    let c = LatticeCoupling::new(&mu, &[0.0], 0.0).unwrap();
    let mut rng = RandomStream::new(1);
    for _ in 0..100 {
        let d = c.sample(&mut rng);
        assert!(d.coupled && d.u == d.u_shifted);
    }
    let spec = GridSpec::centered(1, 5.0, 0.1).unwrap();
    let mut w = vec![0.0; spec.len()];
    w[50] = 1.0;
    let atom = GriddedMeasure::from_weights(spec, w).unwrap();
    let c = LatticeCoupling::new(&atom, &[0.5], 0.0).unwrap();
    for _ in 0..100 {
        assert!(!c.sample(&mut rng).coupled);
    }
}
