use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slicematch::ot::*;

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // make the sum exactly one in floating point
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    w
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal assignment cost between uniform n-point sets by enumeration.
fn brute_force(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn one_d_matches_lp_on_weighted_unequal_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..200 {
        let (na, nb) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let p = [1.0, 2.0, 3.0][trial % 3];
        let a = WeightedSamples::new(random_points(&mut rng, na, 1), random_weights(&mut rng, na)).unwrap();
        let b = WeightedSamples::new(random_points(&mut rng, nb, 1), random_weights(&mut rng, nb)).unwrap();
        let closed = wasserstein_1d(&a, &b, p).unwrap();
        let (lp, plan) = exact_wasserstein_lp(&a, &b, p).unwrap();
        assert!((closed - lp).abs() <= 1e-9, "trial {trial}: {closed} vs {lp}");
        assert!(plan.marginal_error() < 1e-12);
    }
}

#[test]
fn uniform_five_vs_weighted_seven() {
    let a = WeightedSamples::from_1d(&[0.0, 0.4, -1.2, 2.0, 0.9], vec![0.2; 5]).unwrap();
    let b = WeightedSamples::from_1d(
        &[0.3, -0.5, 1.7, 1.1, -2.0, 0.0, 0.8],
        vec![0.05, 0.2, 0.1, 0.15, 0.25, 0.1, 0.15],
    )
    .unwrap();
    let (lp, _) = exact_wasserstein_lp(&a, &b, 2.0).unwrap();
    assert!((wasserstein_1d(&a, &b, 2.0).unwrap() - lp).abs() <= 1e-9);
}

#[test]
fn lp_and_one_d_match_permutation_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=6 {
        for _ in 0..10 {
            let d = rng.random_range(1..=3);
            let a = WeightedSamples::uniform(random_points(&mut rng, n, d)).unwrap();
            let b = WeightedSamples::uniform(random_points(&mut rng, n, d)).unwrap();
            let oracle = brute_force(&ground_cost(a.values(), b.values(), 2.0));
            let (lp, _) = exact_wasserstein_lp(&a, &b, 2.0).unwrap();
            assert!((lp - oracle).abs() <= 1e-10, "n={n}: {lp} vs {oracle}");
            if d == 1 {
                assert!((wasserstein_1d(&a, &b, 2.0).unwrap() - oracle).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn sliced_is_bounded_by_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let d = rng.random_range(1..=8);
        let (na, nb) = (rng.random_range(2..=32), rng.random_range(2..=32));
        let a = WeightedSamples::uniform(random_points(&mut rng, na, d)).unwrap();
        let b = WeightedSamples::uniform(random_points(&mut rng, nb, d)).unwrap();
        let proj = sample_projections(50, d, trial).unwrap();
        let sw = sw_distance(&a, &b, &proj, 2.0).unwrap();
        let (w, _) = exact_wasserstein_lp(&a, &b, 2.0).unwrap();
        assert!(sw <= w.sqrt() + 1e-12, "trial {trial}: {sw} > {}", w.sqrt());
    }
}

#[test]
fn point_mass_sliced_converges_to_quadrature() {
    let l = 10_000;
    // oracle: midpoint quadrature of cos²θ over the circle
    let m = 100_000;
    let quad: f64 = (0..m)
        .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / m as f64).cos().powi(2))
        .sum::<f64>()
        / m as f64;
    let a = WeightedSamples::uniform(DMatrix::from_row_slice(1, 2, &[0.0, 0.0])).unwrap();
    let b = WeightedSamples::uniform(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    let proj = sample_projections(l, 2, 42).unwrap();
    let slices = slice_distances(&a, &b, &proj, 2.0).unwrap();
    let mean = slices.iter().sum::<f64>() / l as f64;
    let var = slices.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (l - 1) as f64;
    let se = (var / l as f64).sqrt();
    assert!((mean - quad).abs() <= 3.0 * se, "{mean} vs {quad} (se {se})");
    assert!((quad - 0.5).abs() < 1e-12);
    let sw = sw_distance(&a, &b, &proj, 2.0).unwrap();
    assert!((sw * sw - mean).abs() < 1e-12);
}

#[test]
fn ebsw_dominates_sw() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let d = rng.random_range(2..=6);
        let a = WeightedSamples::uniform(random_points(&mut rng, 20, d)).unwrap();
        let b = WeightedSamples::uniform(random_points(&mut rng, 25, d) * 1.5).unwrap();
        let proj = sample_projections(30, d, 100 + trial).unwrap();
        let sw = sw_distance(&a, &b, &proj, 2.0).unwrap();
        let eb = ebsw_is(&a, &b, &proj, 2.0).unwrap();
        assert!(eb >= sw, "trial {trial}: {eb} < {sw}");
    }
    let a = WeightedSamples::uniform(random_points(&mut rng, 9, 3)).unwrap();
    let proj = sample_projections(10, 3, 0).unwrap();
    assert_eq!(ebsw_is(&a, &a, &proj, 2.0).unwrap(), 0.0);
}

#[test]
fn sinkhorn_approaches_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = vec![1.0 / 8.0; 8];
    let opts = SinkhornOptions {
        epsilon_rel: 1e-3,
        max_iters: 200_000,
        tol: 1e-6,
        epsilon_scaling: true,
    };
    for _ in 0..20 {
        let cost = DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
        let (lp, _) = exact_transport(&cost, &u, &u).unwrap();
        let r = sinkhorn(&cost, &u, &u, &opts).unwrap();
        assert!(r.converged && r.marginal_error < 1e-6);
        assert!((r.cost - lp).abs() <= 0.01 * lp, "{} vs {lp}", r.cost);
    }
}

#[test]
fn sinkhorn_cost_decreases_with_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mu = random_weights(&mut rng, 10);
    let nu = random_weights(&mut rng, 12);
    let cost = ground_cost(&random_points(&mut rng, 10, 3), &random_points(&mut rng, 12, 3), 2.0);
    let costs: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| {
            let opts = SinkhornOptions {
                epsilon_rel: e,
                max_iters: 200_000,
                tol: 1e-10,
                epsilon_scaling: true,
            };
            let r = sinkhorn(&cost, &mu, &nu, &opts).unwrap();
            assert!(r.converged);
            r.cost
        })
        .collect();
    assert!(costs[0] >= costs[1] && costs[1] >= costs[2], "{costs:?}");
    let (lp, _) = exact_transport(&cost, &mu, &nu).unwrap();
    assert!(costs[2] >= lp - 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sliced_symmetric_and_triangle(seed in 0u64..10_000, d in 1usize..6, na in 1usize..20, nb in 1usize..20, nc in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = WeightedSamples::new(random_points(&mut rng, na, d), random_weights(&mut rng, na)).unwrap();
        let b = WeightedSamples::new(random_points(&mut rng, nb, d), random_weights(&mut rng, nb)).unwrap();
        let c = WeightedSamples::new(random_points(&mut rng, nc, d), random_weights(&mut rng, nc)).unwrap();
        let proj = sample_projections(16, d, seed).unwrap();
        let ab = sw_distance(&a, &b, &proj, 2.0).unwrap();
        prop_assert_eq!(ab, sw_distance(&b, &a, &proj, 2.0).unwrap());
        let bc = sw_distance(&b, &c, &proj, 2.0).unwrap();
        let ac = sw_distance(&a, &c, &proj, 2.0).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10);
        prop_assert!(ebsw_is(&a, &b, &proj, 2.0).unwrap() >= ab);
    }

    #[test]
    fn sinkhorn_marginals(seed in 0u64..10_000, n in 1usize..12, m in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_weights(&mut rng, n);
        let nu = random_weights(&mut rng, m);
        let cost = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..3.0));
        let r = sinkhorn(&cost, &mu, &nu, &SinkhornOptions { max_iters: 10_000, ..Default::default() }).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.marginal_error < 1e-6);
        prop_assert!(r.coupling.matrix.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn one_d_plan_is_a_coupling(seed in 0u64..10_000, na in 1usize..30, nb in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xa: Vec<f64> = (0..na).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xb: Vec<f64> = (0..nb).map(|_| rng.random_range(-2.0..2.0)).collect();
        let wa = random_weights(&mut rng, na);
        let wb = random_weights(&mut rng, nb);
        let plan = quantile_plan(&xa, &wa, &xb, &wb);
        let mut ra = vec![0.0; na];
        let mut rb = vec![0.0; nb];
        for e in &plan {
            prop_assert!(e.mass > 0.0);
            ra[e.a] += e.mass;
            rb[e.b] += e.mass;
        }
        for (x, y) in ra.iter().zip(&wa).chain(rb.iter().zip(&wb)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
