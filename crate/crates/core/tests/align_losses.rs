use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slicematch::align::*;
use slicematch::ot::sample_projections;

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

fn normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    out
}

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.01..1.0));
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

fn permutation_matrix(order: &[usize]) -> DMatrix<f64> {
    // row i selects entry order[i]
    DMatrix::from_fn(order.len(), order.len(), |i, j| if order[i] == j { 1.0 } else { 0.0 })
}

#[test]
fn similarity_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for tau in [1e-3, 0.07, 1.0, 50.0] {
        let fx = normalized(&random_features(&mut rng, 13, 5));
        let fy = normalized(&random_features(&mut rng, 9, 5));
        let s = soft_similarity(&fx, &fy, tau).unwrap();
        assert_eq!(s.tau(), tau);
        for row in s.matrix().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-8);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn similarity_temperature_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = normalized(&random_features(&mut rng, 20, 4));
    let sharp = soft_similarity(&f, &f, 1e-4).unwrap();
    for i in 0..20 {
        assert!(sharp.matrix()[(i, i)] > 0.999);
    }
    let g = normalized(&random_features(&mut rng, 7, 4));
    let flat = soft_similarity(&f, &g, 1e6).unwrap();
    assert!(flat.matrix().iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-6));
}

#[test]
fn similarity_argmax_agrees_with_nearest_neighbour() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fx = normalized(&random_features(&mut rng, 40, 6));
    let fy = normalized(&random_features(&mut rng, 30, 6));
    let nn = nn_map(&fx, &fy).unwrap();
    for tau in [1e-2, 0.07, 1.0, 1e3] {
        let s = soft_similarity(&fx, &fy, tau).unwrap();
        for (i, row) in s.matrix().row_iter().enumerate() {
            assert_eq!(row.transpose().argmax().0, nn[i], "tau {tau}, row {i}");
        }
    }
}

#[test]
fn perfect_alignment_is_zero_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = random_features(&mut rng, 15, 4);
    let eye = DMatrix::identity(15, 15);
    let proj = sample_projections(50, 4, 1).unwrap();
    assert_eq!(bisw_loss(&f, &f, &eye, &eye, &proj, 2.0).unwrap(), 0.0);
    assert_eq!(biebsw_loss(&f, &f, &eye, &eye, &proj, 2.0).unwrap(), 0.0);
    assert_eq!(unisw_loss(&f, &f, &eye, &proj, 2.0).unwrap(), 0.0);
    assert_eq!(uniebsw_loss(&f, &f, &eye, &proj, 2.0).unwrap(), 0.0);
    assert_eq!(mse_alignment_loss(&f, &f, &eye, &eye).unwrap(), 0.0);
}

#[test]
fn bisw_matches_hand_sorting() {
    // three points per side in the plane, hand-built similarities
    let fx = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.5, -0.7, 2.0]);
    let fy = DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 1.5, 1.0, -1.0, 0.4]);
    let pi_xy = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.0, 0.5, 0.5, 0.2, 0.2, 0.6]);
    let pi_yx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.25, 0.25, 0.5, 0.1, 0.8, 0.1]);
    let proj = sample_projections(7, 2, 5).unwrap();
    let hat_y = &pi_xy * &fy;
    let hat_x = &pi_yx * &fx;
    let sorted_cost = |a: &DMatrix<f64>, b: &DMatrix<f64>, theta: &[f64]| {
        let mut pa: Vec<f64> = (0..3).map(|i| a[(i, 0)] * theta[0] + a[(i, 1)] * theta[1]).collect();
        let mut pb: Vec<f64> = (0..3).map(|i| b[(i, 0)] * theta[0] + b[(i, 1)] * theta[1]).collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 3.0
    };
    let mut total = 0.0;
    for l in 0..7 {
        let theta = [proj.directions()[(0, l)], proj.directions()[(1, l)]];
        total += sorted_cost(&fx, &hat_y, &theta) + sorted_cost(&fy, &hat_x, &theta);
    }
    let hand = (total / 7.0).sqrt();
    let got = bisw_loss(&fx, &fy, &pi_xy, &pi_yx, &proj, 2.0).unwrap();
    assert!((got - hand).abs() <= 1e-10, "{got} vs {hand}");
}

#[test]
fn bidirectional_losses_are_role_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let fx = random_features(&mut rng, 11, 3);
        let fy = random_features(&mut rng, 8, 3);
        let pxy = random_stochastic(&mut rng, 11, 8);
        let pyx = random_stochastic(&mut rng, 8, 11);
        let proj = sample_projections(40, 3, 2).unwrap();
        let a = bisw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
        let b = bisw_loss(&fy, &fx, &pyx, &pxy, &proj, 2.0).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.max(1.0));
        let a = biebsw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
        let b = biebsw_loss(&fy, &fx, &pyx, &pxy, &proj, 2.0).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.max(1.0));
    }
}

#[test]
fn bisw_power_splits_into_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for p in [1.0, 2.0, 3.0] {
        let fx = random_features(&mut rng, 12, 5);
        let fy = random_features(&mut rng, 9, 5);
        let pxy = random_stochastic(&mut rng, 12, 9);
        let pyx = random_stochastic(&mut rng, 9, 12);
        let proj = sample_projections(30, 5, 3).unwrap();
        let bi = bisw_loss(&fx, &fy, &pxy, &pyx, &proj, p).unwrap().powf(p);
        let xy = unisw_loss(&fx, &fy, &pxy, &proj, p).unwrap().powf(p);
        let yx = unisw_loss(&fy, &fx, &pyx, &proj, p).unwrap().powf(p);
        assert!((bi - (xy + yx)).abs() <= 1e-12 * bi, "p={p}: {bi} vs {}", xy + yx);
    }
}

#[test]
fn biebsw_dominates_bisw() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for trial in 0..100 {
        let d = rng.random_range(2..=6);
        let fx = random_features(&mut rng, 14, d);
        let fy = random_features(&mut rng, 10, d) * 1.3;
        let pxy = random_stochastic(&mut rng, 14, 10);
        let pyx = random_stochastic(&mut rng, 10, 14);
        let proj = sample_projections(25, d, trial).unwrap();
        let sw = bisw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
        let eb = biebsw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
        assert!(eb >= sw, "trial {trial}: {eb} < {sw}");
    }
}

#[test]
fn biebsw_equals_bisw_when_slices_coincide() {
    // one point per side in d = 1: every direction is ±1, so all slices agree
    let fx = DMatrix::from_element(1, 1, 0.4);
    let fy = DMatrix::from_element(1, 1, -1.1);
    let one = DMatrix::from_element(1, 1, 1.0);
    let proj = sample_projections(20, 1, 9).unwrap();
    let sw = bisw_loss(&fx, &fy, &one, &one, &proj, 2.0).unwrap();
    let eb = biebsw_loss(&fx, &fy, &one, &one, &proj, 2.0).unwrap();
    assert!((sw - eb).abs() <= 1e-15 * sw, "{sw} vs {eb}");
}

#[test]
fn losses_are_relabeling_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (nx, ny, d) = (10, 7, 3);
    let fx = random_features(&mut rng, nx, d);
    let fy = random_features(&mut rng, ny, d);
    let pxy = random_stochastic(&mut rng, nx, ny);
    let pyx = random_stochastic(&mut rng, ny, nx);
    let proj = sample_projections(30, d, 4).unwrap();
    let ox: Vec<usize> = vec![3, 0, 9, 1, 4, 8, 2, 7, 5, 6];
    let oy: Vec<usize> = vec![6, 2, 0, 5, 1, 3, 4];
    let (px, py) = (permutation_matrix(&ox), permutation_matrix(&oy));
    let fx2 = &px * &fx;
    let fy2 = &py * &fy;
    let pxy2 = &px * &pxy * py.transpose();
    let pyx2 = &py * &pyx * px.transpose();
    let a = bisw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
    let b = bisw_loss(&fx2, &fy2, &pxy2, &pyx2, &proj, 2.0).unwrap();
    assert!((a - b).abs() <= 1e-10);
    let a = biebsw_loss(&fx, &fy, &pxy, &pyx, &proj, 2.0).unwrap();
    let b = biebsw_loss(&fx2, &fy2, &pxy2, &pyx2, &proj, 2.0).unwrap();
    assert!((a - b).abs() <= 1e-10);
}

#[test]
fn mse_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let fx = random_features(&mut rng, 4, 3);
    let fy = random_features(&mut rng, 5, 3);
    let pxy = random_stochastic(&mut rng, 4, 5);
    let pyx = random_stochastic(&mut rng, 5, 4);
    let mut direct = 0.0;
    for i in 0..4 {
        for c in 0..3 {
            let hat: f64 = (0..5).map(|j| pxy[(i, j)] * fy[(j, c)]).sum();
            direct += (fx[(i, c)] - hat).powi(2) / 4.0;
        }
    }
    for j in 0..5 {
        for c in 0..3 {
            let hat: f64 = (0..4).map(|i| pyx[(j, i)] * fx[(i, c)]).sum();
            direct += (fy[(j, c)] - hat).powi(2) / 5.0;
        }
    }
    let got = mse_alignment_loss(&fx, &fy, &pxy, &pyx).unwrap();
    assert!((got - direct).abs() <= 1e-12, "{got} vs {direct}");

    let constant = DMatrix::from_element(4, 3, 0.7);
    let constant_y = DMatrix::from_element(5, 3, 0.7);
    let ux = DMatrix::from_element(4, 5, 0.2);
    let uy = DMatrix::from_element(5, 4, 0.25);
    assert!(mse_alignment_loss(&constant, &constant_y, &ux, &uy).unwrap() < 1e-15);
}

#[test]
fn dimension_errors() {
    let f = DMatrix::from_element(3, 2, 1.0);
    let g = DMatrix::from_element(4, 2, 1.0);
    let bad = DMatrix::from_element(3, 3, 1.0 / 3.0);
    let proj = sample_projections(5, 2, 0).unwrap();
    assert!(matches!(
        bisw_loss(&f, &g, &bad, &bad, &proj, 2.0),
        Err(AlignError::DimensionMismatch(_))
    ));
    let wrong_dim = sample_projections(5, 3, 0).unwrap();
    let pxy = DMatrix::from_element(3, 4, 0.25);
    let pyx = DMatrix::from_element(4, 3, 1.0 / 3.0);
    assert!(bisw_loss(&f, &g, &pxy, &pyx, &wrong_dim, 2.0).is_err());
}

#[test]
fn nn_map_basics() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let f = random_features(&mut rng, 25, 4);
    assert_eq!(nn_map(&f, &f).unwrap(), (0..25).collect::<Vec<_>>());

    let target = DMatrix::from_row_slice(4, 2, &[5.0, 5.0, 1.0, 1.0, 1.0, 1.0, -3.0, 0.0]);
    let query = DMatrix::from_row_slice(1, 2, &[1.2, 0.9]);
    assert_eq!(nn_map(&query, &target).unwrap(), vec![1]);
}

#[test]
fn nn_map_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..5 {
        let n = rng.random_range(1..=64);
        let m = rng.random_range(1..=64);
        let fx = random_features(&mut rng, n, 3);
        // coarse grid values create exact ties
        let fy = DMatrix::from_fn(m, 3, |_, _| rng.random_range(-2..=2) as f64);
        let oracle: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = 0;
                for j in 1..m {
                    if (fx.row(i) - fy.row(j)).norm_squared() < (fx.row(i) - fy.row(best)).norm_squared() {
                        best = j;
                    }
                }
                best
            })
            .collect();
        assert_eq!(nn_map(&fx, &fy).unwrap(), oracle);
    }
}
