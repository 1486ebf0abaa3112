use homlab_core::rng::{derive_seed, stream_tag, KeyedStream};
use homlab_core::stats::{ks_critical, ks_statistic};
use homlab_core::*;
use proptest::prelude::*;

fn uniform_iid(d: usize) -> FieldSpec {
    FieldSpec::iid(d, Diagonal::Isotropic(DistributionSpec::Uniform { a: 1.0, b: 2.0 }))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn shifted_sample_reads_the_original(seed in any::<u64>(), z in prop::collection::vec(-1000i64..1000, 3),
                                         x in prop::collection::vec(-50.0f64..50.0, 3), offset in any::<bool>()) {
        let mut spec = uniform_iid(3).with_lambda(DistributionSpec::Pareto { x_m: 1.0, alpha: 2.0 });
        spec.random_offset = offset;
        let f = sample_field(&spec, seed, 0).unwrap();
        let zf: Vec<f64> = z.iter().map(|v| *v as f64).collect();
        let g = shift(&f, &zf);
        let moved: Vec<f64> = x.iter().zip(&zf).map(|(a, b)| a + b).collect();
        prop_assert_eq!(g.diag(&x), f.diag(&moved));
        prop_assert_eq!(g.lambda_at(&x).to_bits(), f.lambda_at(&moved).to_bits());
    }

    #[test]
    fn samples_are_positive_and_finite(seed in any::<u64>(), x in prop::collection::vec(-1e6f64..1e6, 2)) {
        for law in [
            DistributionSpec::Uniform { a: 0.0, b: 1.0 },
            DistributionSpec::Pareto { x_m: 0.5, alpha: 0.5 },
            DistributionSpec::Lognormal { mu: -3.0, sigma: 2.0 },
            DistributionSpec::TwoPoint { v1: 1e-3, p: 0.9, v2: 1e3 },
        ] {
            let f = sample_field(&FieldSpec::iid(2, Diagonal::Isotropic(law)), seed, 7).unwrap();
            let w = f.diag(&x);
            prop_assert!(w.iter().all(|v| v.is_finite() && *v > 0.0), "{:?}", w);
        }
    }

    #[test]
    fn seed_derivation_is_pure(master in any::<u64>(), c in prop::collection::vec(any::<u64>(), 0..4)) {
        let s = stream_tag("estimate");
        prop_assert_eq!(derive_seed(master, s, &c), derive_seed(master, s, &c));
        prop_assert_ne!(derive_seed(master, s, &c), derive_seed(master, stream_tag("recession"), &c));
    }
}

#[test]
fn shifted_marginal_has_the_same_law() {
    // Ergodic shift invariance: the law of a(x + z) does not depend on z.
    let spec = uniform_iid(2);
    let n = 400;
    let at = |z: f64| -> Vec<f64> {
        (0..n as u64).map(|r| sample_field(&spec, 99, r).unwrap().diag(&[0.3 + z, 0.7])[0]).collect()
    };
    let (a, b) = (at(0.0), at(1234.0));
    let ks = ks_statistic(&a, &b);
    assert!(ks < ks_critical(n, n, 0.001), "KS {ks}");
}

#[test]
fn independent_cells_are_uncorrelated() {
    let spec = uniform_iid(1);
    let f = sample_field(&spec, 5, 0).unwrap();
    let xs: Vec<f64> = (0..20_000).map(|k| f.diag(&[k as f64 + 0.5])[0] - 1.5).collect();
    let cov: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (xs.len() - 1) as f64;
    // variance of U(1,2) is 1/12; the lag-one covariance should vanish
    assert!(cov.abs() < 4.0 / 12.0 / (xs.len() as f64).sqrt(), "{cov}");
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let spec = FieldSpec::iid(2, Diagonal::Isotropic(DistributionSpec::TwoPoint { v1: 1.0, p: 0.5, v2: 2.0 }));
    let xi = Matrix::from_rows(&[vec![1.0, 0.5]]);
    let s = McSettings::new(6, 42, 1e-5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate_f_hom(&spec, &xi, &[2.0, 4.0], &s).unwrap())
    };
    let checksum = |e: &HomEstimate| -> Vec<u64> {
        e.records.iter().flat_map(|r| [r.primal.to_bits(), r.dual.to_bits(), r.iterations as u64]).collect()
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(checksum(&a), checksum(&b));
    assert_eq!(a.f_hat.to_bits(), b.f_hat.to_bits());
}

fn random_problem(rng: &mut KeyedStream, n: usize, lambda: f64) -> CellProblem64 {
    let grid = Grid::with_corner(vec![0.0, 0.0], 1.0, n, 1).unwrap();
    let cells = grid.num_cells();
    let diag = (0..2 * cells).map(|_| 0.5 + 2.0 * rng.next_f64()).collect();
    let lam = (0..cells).map(|_| lambda * rng.next_f64()).collect();
    CellProblem::from_weights(grid, Matrix::from_rows(&[vec![0.0, 0.0]]), diag, lam).unwrap()
}

fn random_function(rng: &mut KeyedStream, p: &CellProblem64, rough: bool) -> Vec<f64> {
    let (a, b, c, k) = (rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0, rng.next_f64(), 1.0 + 6.0 * rng.next_f64());
    let mut x = [0.0; 2];
    (0..p.grid.num_nodes())
        .map(|i| {
            p.grid.node_coord(i, &mut x);
            let smooth = a * x[0] + b * x[1] + c * (k * x[0]).sin() * (k * x[1]).cos();
            if rough { smooth + 0.05 * (rng.next_f64() - 0.5) } else { smooth }
        })
        .collect()
}

#[test]
fn cutoff_estimate_holds_on_random_instances() {
    let mut rng = KeyedStream::new(2024);
    let b = AxisBox::unit(2);
    for case in 0..20 {
        let n = [32, 48, 64][case % 3];
        let p = random_problem(&mut rng, n, if case % 2 == 0 { 0.0 } else { 3.0 });
        let u = random_function(&mut rng, &p, case % 4 == 1);
        let v = random_function(&mut rng, &p, case % 4 == 3);
        // node-aligned inner box, outer margins of at least 6 cells
        let h = 1.0 / n as f64;
        let lo = (n / 4 + case % 3) as f64 * h;
        let hi = (n / 2 + case % 2) as f64 * h;
        let inner = AxisBox::new(vec![lo, lo], vec![hi, hi]);
        let m = 6.0 * h;
        let outer = AxisBox::new(vec![lo - m, lo - m.max(0.1)], vec![hi + m.max(0.2), hi + m]);
        let delta = [0.5, 0.25, 1.0 / 3.0, 0.2][case % 4];
        let (w, r) = glue_with_cutoff(&u, &v, &inner, &outer, &b, delta, &p).unwrap();
        assert!(r.holds(), "case {case}: {r:?}");
        assert!((energy_on_box(&p, &w, &b).unwrap() - r.lhs).abs() <= 1e-12 * r.lhs.max(1.0));
        assert!(r.chosen < r.layers);
        let min = r.layer_energies.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.layer_energies[r.chosen], min);
    }
}
