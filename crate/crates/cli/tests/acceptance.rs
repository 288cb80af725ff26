//! Acceptance suite: one pass/fail line per criterion, each checked against an
//! independent oracle at its stated tolerance. Runs as a plain binary.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slicematch::align::{LossConfig, LossContext, OtVariant, WeightScheme};
use slicematch::autodiff::{check_program, finite_difference_check, FdOptions, Tape, Var};
use slicematch::eval::{mean_geodesic_error, segmentation_miou, transfer_labels, Correspondence, LabelField};
use slicematch::fmap::{fmap_to_pointmap, resolvent_mask, solve_fmap, FmapConfig};
use slicematch::mesh::{cotangent_laplacian, shapes, TriMesh};
use slicematch::ot::*;
use slicematch::spectral::{compute_basis, SpectralBasis};

type Outcome = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_slicematch");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    w
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

/// Optimal assignment between uniform n-point sets by enumeration.
fn brute_force(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

fn one_d_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for trial in 0..500 {
        let (na, nb) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let p = [1.0, 2.0, 3.0][trial % 3];
        let a = WeightedSamples::new(gaussian(&mut rng, na, 1), random_weights(&mut rng, na)).map_err(|e| e.to_string())?;
        let b = WeightedSamples::new(gaussian(&mut rng, nb, 1), random_weights(&mut rng, nb)).map_err(|e| e.to_string())?;
        let closed = wasserstein_1d(&a, &b, p).map_err(|e| e.to_string())?;
        let (lp, _) = exact_wasserstein_lp(&a, &b, p).map_err(|e| e.to_string())?;
        worst = worst.max((closed - lp).abs());
        ensure((closed - lp).abs() <= 1e-9, || format!("trial {trial}: closed form {closed} vs LP {lp}"))?;
    }
    let mut worst_bf = 0.0f64;
    for n in 1..=6 {
        for _ in 0..20 {
            let a = WeightedSamples::uniform(gaussian(&mut rng, n, 1)).unwrap();
            let b = WeightedSamples::uniform(gaussian(&mut rng, n, 1)).unwrap();
            let oracle = brute_force(&ground_cost(a.values(), b.values(), 2.0));
            let closed = wasserstein_1d(&a, &b, 2.0).unwrap();
            worst_bf = worst_bf.max((closed - oracle).abs());
            ensure((closed - oracle).abs() <= 1e-10, || format!("n={n}: {closed} vs brute force {oracle}"))?;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("500 LP instances max |Δ| {worst:.1e}, 120 permutation instances max |Δ| {worst_bf:.1e}, {t:.2?}"))
}

fn sw_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut slack = f64::INFINITY;
    for trial in 0..100u64 {
        let d = rng.random_range(1..=8);
        let (na, nb, nc) = (rng.random_range(1..=64), rng.random_range(1..=64), rng.random_range(1..=64));
        let a = WeightedSamples::new(gaussian(&mut rng, na, d), random_weights(&mut rng, na)).unwrap();
        let b = WeightedSamples::new(gaussian(&mut rng, nb, d) * 1.3, random_weights(&mut rng, nb)).unwrap();
        let c = WeightedSamples::new(gaussian(&mut rng, nc, d), random_weights(&mut rng, nc)).unwrap();
        let proj = sample_projections(50, d, trial).unwrap();
        let ab = sw_distance(&a, &b, &proj, 2.0).unwrap();
        let (w, _) = exact_wasserstein_lp(&a, &b, 2.0).unwrap();
        let w = w.sqrt();
        slack = slack.min(w - ab);
        ensure(ab <= w + 1e-12, || format!("trial {trial}: SW {ab} > W {w}"))?;
        let ba = sw_distance(&b, &a, &proj, 2.0).unwrap();
        ensure(ab == ba, || format!("trial {trial}: asymmetric {ab} vs {ba}"))?;
        let root = |v: Vec<f64>| v.into_iter().map(f64::sqrt).collect::<Vec<_>>();
        let sab = root(slice_distances(&a, &b, &proj, 2.0).unwrap());
        let sbc = root(slice_distances(&b, &c, &proj, 2.0).unwrap());
        let sac = root(slice_distances(&a, &c, &proj, 2.0).unwrap());
        for l in 0..proj.len() {
            ensure(sac[l] <= sab[l] + sbc[l] + 1e-12, || format!("trial {trial} slice {l}: triangle inequality"))?;
        }
    }
    // point mass at 0 vs at v: every slice is (θ·v)², whose mean over the sphere is ‖v‖²/d
    let v = [1.0, 2.0, -0.5];
    let d = v.len();
    let l = 10_000;
    let a = WeightedSamples::uniform(DMatrix::zeros(1, d)).unwrap();
    let b = WeightedSamples::uniform(DMatrix::from_row_slice(1, d, &v)).unwrap();
    let proj = sample_projections(l, d, 7).unwrap();
    let s = slice_distances(&a, &b, &proj, 2.0).unwrap();
    let mean = s.iter().sum::<f64>() / l as f64;
    let se = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (l - 1) as f64 / l as f64).sqrt();
    let exact = v.iter().map(|x| x * x).sum::<f64>() / d as f64;
    let sw2 = sw_distance(&a, &b, &proj, 2.0).unwrap().powi(2);
    ensure((sw2 - exact).abs() <= 3.0 * se, || format!("point mass SW² {sw2} vs {exact} (se {se})"))?;
    Ok(format!(
        "100 instances, min W − SW {slack:.2e}; point-mass SW² {sw2:.4} vs ‖v‖²/d {exact:.4} ({:.2} se)",
        (sw2 - exact).abs() / se
    ))
}

fn ebsw_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut wins = 0;
    for trial in 0..100u64 {
        let d = rng.random_range(2..=8);
        let (na, nb) = (rng.random_range(2..=40), rng.random_range(2..=40));
        let a = WeightedSamples::new(gaussian(&mut rng, na, d), random_weights(&mut rng, na)).unwrap();
        let b = WeightedSamples::uniform(gaussian(&mut rng, nb, d) * 1.5).unwrap();
        let proj = sample_projections(40, d, 500 + trial).unwrap();
        let sw = sw_distance(&a, &b, &proj, 2.0).unwrap();
        let eb = ebsw_is(&a, &b, &proj, 2.0).unwrap();
        if eb >= sw {
            wins += 1;
        }
    }
    ensure(wins == 100, || format!("EBSW ≥ SW in {wins}/100 trials"))?;
    // in one dimension every direction is ±1 and all slices coincide
    let a = WeightedSamples::new(gaussian(&mut rng, 9, 1), random_weights(&mut rng, 9)).unwrap();
    let b = WeightedSamples::uniform(gaussian(&mut rng, 13, 1) + DMatrix::from_element(13, 1, 0.7)).unwrap();
    let proj = sample_projections(25, 1, 3).unwrap();
    let slices = slice_distances(&a, &b, &proj, 2.0).unwrap();
    let spread = slices.iter().copied().fold(f64::NEG_INFINITY, f64::max) - slices.iter().copied().fold(f64::INFINITY, f64::min);
    let (sw, eb) = (sw_distance(&a, &b, &proj, 2.0).unwrap(), ebsw_is(&a, &b, &proj, 2.0).unwrap());
    ensure((eb - sw).abs() <= 1e-12 * sw, || format!("coinciding slices: EBSW {eb} vs SW {sw}"))?;
    Ok(format!("100/100 trials; coinciding slices (spread {spread:.1e}) give EBSW − SW = {:.1e}", eb - sw))
}

fn sinkhorn_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_marginal = 0.0f64;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let mu = random_weights(&mut rng, n);
        let nu = random_weights(&mut rng, m);
        let cost = ground_cost(&gaussian(&mut rng, n, 3), &gaussian(&mut rng, m, 3), 2.0);
        let opts = SinkhornOptions {
            max_iters: 100_000,
            ..Default::default()
        };
        let r = sinkhorn(&cost, &mu, &nu, &opts).map_err(|e| e.to_string())?;
        // independent marginal check on the returned matrix
        let pi = &r.coupling.matrix;
        let err = (0..n)
            .map(|i| (pi.row(i).sum() - mu[i]).abs())
            .chain((0..m).map(|j| (pi.column(j).sum() - nu[j]).abs()))
            .fold(0.0, f64::max);
        worst_marginal = worst_marginal.max(err);
        ensure(err < 1e-6, || format!("{n}×{m}: marginal violation {err:e}"))?;
    }
    let u = vec![1.0 / 8.0; 8];
    let opts = SinkhornOptions {
        epsilon_rel: 1e-3,
        max_iters: 200_000,
        tol: 1e-6,
        epsilon_scaling: true,
    };
    let mut worst_gap = 0.0f64;
    for _ in 0..20 {
        let cost = DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
        let (lp, _) = exact_transport(&cost, &u, &u).map_err(|e| e.to_string())?;
        let r = sinkhorn(&cost, &u, &u, &opts).map_err(|e| e.to_string())?;
        ensure(r.marginal_error < 1e-6, || format!("8×8 marginal violation {:e}", r.marginal_error))?;
        let gap = (r.cost - lp).abs() / lp;
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 0.01, || format!("8×8 cost {} vs LP {lp}", r.cost))?;
    }
    let mu = random_weights(&mut rng, 6);
    let nu = random_weights(&mut rng, 9);
    let r = sinkhorn(&DMatrix::zeros(6, 9), &mu, &nu, &SinkhornOptions::default()).map_err(|e| e.to_string())?;
    let product = DMatrix::from_fn(6, 9, |i, j| mu[i] * nu[j]);
    let dev = (&r.coupling.matrix - product).amax();
    ensure(dev <= 1e-8, || format!("zero cost: deviation from μνᵀ {dev:e}"))?;
    Ok(format!(
        "max marginal violation {worst_marginal:.1e}; 8×8 cost within {:.3}% of LP; zero cost |π − μνᵀ| {dev:.1e}",
        100.0 * worst_gap
    ))
}

fn gradient_fidelity() -> Outcome {
    let x = shapes::bumpy_blob(1);
    let y = x.map_vertices(|p| Vector3::new(p.x * 1.05, p.y + 0.1 * p.x * p.x, p.z * 0.95)).unwrap();
    let basis = |m: &TriMesh| {
        let (w, mass) = cotangent_laplacian(m);
        compute_basis(&w, &mass, 8).unwrap()
    };
    let (bx, by) = (basis(&x), basis(&y));
    let d = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let params = [gaussian(&mut rng, bx.num_vertices(), d), gaussian(&mut rng, by.num_vertices(), d)];
    let ctx = |variant| {
        let loss = LossConfig {
            num_projections: 16,
            tau: 0.5,
            ot_variant: variant,
            ..Default::default()
        };
        LossContext::new(&bx, &by, &FmapConfig::default(), &loss, WeightScheme::Uniform, d).unwrap()
    };
    let opts = FdOptions::default();
    let mut report = Vec::new();
    let cases: [(&str, OtVariant, fn(&slicematch::align::LossVars) -> Var); 5] = [
        ("L_fmap", OtVariant::BiSw, |v| v.l_fmap),
        ("L_proper", OtVariant::BiSw, |v| v.l_proper),
        ("biSW", OtVariant::BiSw, |v| v.l_ot),
        ("biEBSW", OtVariant::BiEbsw, |v| v.l_ot),
        ("MSE", OtVariant::Mse, |v| v.l_ot),
    ];
    for (name, variant, pick) in cases {
        let c = ctx(variant);
        let r = check_program(&params, |t: &mut Tape, p: &[Var]| pick(&c.record(t, p[0], p[1], None)), &opts).map_err(|e| e.to_string())?;
        ensure(r.entries.len() == 10, || format!("{name}: {} coordinates checked", r.entries.len()))?;
        ensure(r.passed, || format!("{name}: max relative error {:e}", r.max_rel_err))?;
        report.push(format!("{name} {:.1e}", r.max_rel_err));
    }
    let c = ctx(OtVariant::BiSw);
    let (_, _, gx, gy) = c.value_and_grad(&params[0], &params[1], None).map_err(|e| e.to_string())?;
    let f = |p: &[DMatrix<f64>]| c.evaluate(&p[0], &p[1], None).unwrap().1;
    let bad = finite_difference_check(f, &params, &[gx * 1.1, gy * 1.1], &opts);
    ensure(!bad.passed, || "corrupted gradient passed the check".into())?;
    Ok(format!("max rel err: {}; corrupted gradient rejected ({:.1e})", report.join(", "), bad.max_rel_err))
}

/// Minimizes `‖CA − B‖² + λ Σ D_ij C_ij²` over `vec(C)` with the full
/// k²×k² normal equations.
fn dense_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, mask: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (kb, ka) = mask.shape();
    let idx = |i: usize, j: usize| i * ka + j;
    let mut h = DMatrix::zeros(kb * ka, kb * ka);
    let mut g = DVector::zeros(kb * ka);
    for i in 0..kb {
        for t in 0..a.ncols() {
            for j in 0..ka {
                g[idx(i, j)] += a[(j, t)] * b[(i, t)];
                for l in 0..ka {
                    h[(idx(i, j), idx(i, l))] += a[(j, t)] * a[(l, t)];
                }
            }
        }
        for j in 0..ka {
            h[(idx(i, j), idx(i, j))] += lambda * mask[(i, j)];
        }
    }
    let x = h.lu().solve(&g).expect("regular oracle system");
    DMatrix::from_fn(kb, ka, |i, j| x[idx(i, j)])
}

/// Complete eigenbasis of the cotangent pencil from a dense symmetric solve.
fn dense_basis(mesh: &TriMesh) -> SpectralBasis {
    let (w, m) = cotangent_laplacian(mesh);
    let mass = m.diagonal();
    let inv_sqrt: Vec<f64> = mass.iter().map(|v| 1.0 / v.sqrt()).collect();
    let n = mass.len();
    let wd = w.to_dense();
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * wd[(i, j)] * inv_sqrt[j]));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let phi = DMatrix::from_fn(n, n, |i, c| inv_sqrt[i] * eig.eigenvectors[(i, order[c])]);
    SpectralBasis::new(phi, order.iter().map(|&i| eig.eigenvalues[i]).collect(), mass).unwrap()
}

fn fmap_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let cfg = FmapConfig::default();
    let mut worst = 0.0f64;
    for (k, d) in [(6, 8), (6, 3), (9, 20), (12, 40)] {
        let a = gaussian(&mut rng, k, d);
        let b = gaussian(&mut rng, k, d);
        let ex: Vec<f64> = (0..k).map(|i| (i * i) as f64 * 0.3).collect();
        let ey: Vec<f64> = (0..k).map(|i| (i * i) as f64 * 0.31 + 0.01 * i as f64).collect();
        let c = solve_fmap(&a, &b, &ex, &ey, &cfg).map_err(|e| e.to_string())?;
        let oracle = dense_oracle(&a, &b, &resolvent_mask(&ex, &ey, cfg.resolvent_gamma), cfg.lambda_reg);
        let err = (&c - &oracle).amax();
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("k={k}, d={d}: deviation {err:e} from the dense oracle"))?;
    }
    let a = gaussian(&mut rng, 10, 16);
    let evals: Vec<f64> = (0..10).map(|i| i as f64 * 1.7).collect();
    let id_err = (solve_fmap(&a, &a, &evals, &evals, &cfg).unwrap() - DMatrix::<f64>::identity(10, 10)).amax();
    ensure(id_err <= 1e-8, || format!("identical inputs: |C − I| {id_err:e}"))?;

    let x = shapes::bumpy_blob(1);
    let n = x.num_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let y = x.permuted(&order).unwrap();
    let (bx, by) = (dense_basis(&x), dense_basis(&y));
    let fx = gaussian(&mut rng, n, n + 10);
    let fy = DMatrix::from_fn(n, n + 10, |j, c| fx[(order[j], c)]);
    let c_yx = solve_fmap(&(by.pinv() * &fy), &(bx.pinv() * &fx), by.eigenvalues(), bx.eigenvalues(), &cfg).unwrap();
    let map = fmap_to_pointmap(&c_yx, bx.phi(), by.phi()).unwrap();
    let mut expected = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        expected[old] = new;
    }
    let hits = map.iter().zip(&expected).filter(|(a, b)| a == b).count();
    ensure(hits == n, || format!("permuted copy: {hits}/{n} vertices recovered"))?;
    Ok(format!("dense oracle max |Δ| {worst:.1e}; identity |C − I| {id_err:.1e}; permutation {hits}/{n}"))
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`slicematch {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_corr(dir: &Path) -> Result<Vec<usize>, String> {
    slicematch::formats::load_indices(&dir.join("corr.txt")).map_err(|e| e.to_string())
}

/// Geodesic error from `slicematch eval` against the identity.
fn eval_identity(dir: &Path, mesh: &Path, n: usize) -> Result<f64, String> {
    let gt = dir.join("gt.txt");
    slicematch::formats::save_indices(&gt, &(0..n).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let out = run_bin(&[
        "eval",
        "--corr",
        dir.join("corr.txt").to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--mesh",
        mesh.to_str().unwrap(),
    ])?;
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let row = rdr.records().next().ok_or("empty eval report")?.map_err(|e| e.to_string())?;
    row[1].parse().map_err(|e| format!("{e}"))
}

/// Settings for the committed pair; the same for every matching run here.
const MATCH_FLAGS: [&str; 4] = ["--k", "50", "--lambda-reg", "1"];

fn run_match(x: &Path, y: &Path, out: &Path, refine: bool) -> Result<Duration, String> {
    let mut args = vec!["match", x.to_str().unwrap(), y.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend(MATCH_FLAGS);
    if !refine {
        args.push("--no-refine");
    }
    let t = Instant::now();
    run_bin(&args)?;
    Ok(t.elapsed())
}

fn pipeline_fixed_point(tmp: &Path) -> Outcome {
    let mesh = data("blob.off");
    let mut notes = Vec::new();
    for refine in [false, true] {
        let dir = tmp.join(format!("fixed_{refine}"));
        run_match(&mesh, &mesh, &dir, refine)?;
        let map = read_corr(&dir)?;
        let n = map.len();
        let identity = map.iter().enumerate().filter(|(i, &j)| *i == j).count() as f64 / n as f64;
        let err = eval_identity(&dir, &mesh, n)?;
        let label = if refine { "refined" } else { "no-refine" };
        ensure(identity >= 0.99, || format!("{label}: identity fraction {identity}"))?;
        ensure(err < 0.1, || format!("{label}: geodesic error {err}"))?;
        notes.push(format!("{label}: identity {:.2}%, error {err:.3}", 100.0 * identity));
    }
    Ok(notes.join("; "))
}

fn refinement_efficacy(tmp: &Path) -> Outcome {
    let (x, y) = (data("blob.off"), data("blob_bent.off"));
    let plain = tmp.join("efficacy_plain");
    let refined = tmp.join("efficacy_refined");
    run_match(&x, &y, &plain, false)?;
    let took = run_match(&x, &y, &refined, true)?;
    let n = read_corr(&plain)?.len();
    let e0 = eval_identity(&plain, &y, n)?;
    let e1 = eval_identity(&refined, &y, n)?;
    let mut rdr = csv::Reader::from_path(refined.join("trace.csv")).map_err(|e| e.to_string())?;
    let totals: Vec<f64> = rdr
        .records()
        .map(|r| r.map_err(|e| e.to_string()).and_then(|r| r[4].parse::<f64>().map_err(|e| e.to_string())))
        .collect::<Result<_, _>>()?;
    ensure(totals.windows(2).all(|w| w[1] <= w[0]), || format!("trace increases: {totals:?}"))?;
    ensure(e1 <= 0.8 * e0, || format!("refined {e1:.3} vs unrefined {e0:.3} (ratio {:.3})", e1 / e0))?;
    ensure(took < Duration::from_secs(120), || format!("refined run took {took:?}"))?;
    Ok(format!(
        "{n} vertices: unrefined {e0:.3} → refined {e1:.3} (ratio {:.3}); {} trace rows non-increasing; {took:.1?}",
        e1 / e0,
        totals.len()
    ))
}

fn complexity(tmp: &Path) -> Outcome {
    let csv_path = tmp.join("bench.csv");
    run_bin(&[
        "bench",
        "--sizes",
        "1000,2000,4000",
        "--ops",
        "sw,sinkhorn",
        "--repeats",
        "5",
        "--out",
        csv_path.to_str().unwrap(),
    ])?;
    let mut rdr = csv::Reader::from_path(&csv_path).map_err(|e| e.to_string())?;
    let mut sw = Vec::new();
    let mut sk = Vec::new();
    for r in rdr.records() {
        let r = r.map_err(|e| e.to_string())?;
        let (n, ns, bytes): (usize, f64, f64) = (r[1].parse().unwrap(), r[4].parse().unwrap(), r[5].parse().unwrap());
        match &r[0] {
            "sw" => sw.push((n, ns, bytes)),
            "sinkhorn" => sk.push((n, ns, bytes)),
            _ => {}
        }
    }
    ensure(sw.len() == 3 && sk.len() == 3, || "missing bench rows".into())?;
    let time_ratios: Vec<f64> = sw.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let mem_ratios: Vec<f64> = sk.windows(2).map(|w| w[1].2 / w[0].2).collect();
    ensure(sw.windows(2).all(|w| w[1].1 >= w[0].1), || format!("SW wall times not monotone: {sw:?}"))?;
    ensure(time_ratios.iter().all(|&r| r < 2.6), || format!("SW time ratios {time_ratios:?}"))?;
    ensure(mem_ratios.iter().all(|&r| (r - 4.0).abs() <= 0.01), || format!("Sinkhorn byte ratios {mem_ratios:?}"))?;
    Ok(format!(
        "SW time ratios {:.2} / {:.2}; Sinkhorn peak-byte ratios {:.4} / {:.4}",
        time_ratios[0], time_ratios[1], mem_ratios[0], mem_ratios[1]
    ))
}

fn spectral_sanity() -> Outcome {
    let (w, m) = cotangent_laplacian(&shapes::icosphere(3, 1.0));
    let b = compute_basis(&w, &m, 10).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, l) in [1usize, 1, 1, 2, 2, 2, 2, 2].iter().enumerate() {
        let exact = (l * (l + 1)) as f64;
        let rel = (b.eigenvalues()[i + 1] - exact).abs() / exact;
        worst = worst.max(rel);
        ensure(rel <= 0.05, || format!("eigenvalue {}: {} vs {exact}", i + 1, b.eigenvalues()[i + 1]))?;
    }
    let load = |name: &str| slicematch::mesh::load_mesh(&data(name), slicematch::mesh::MeshFormat::Off).unwrap();
    let meshes = [
        shapes::icosphere(3, 1.0),
        shapes::bumpy_blob(2),
        shapes::grid(12, 9, 1.5, 1.0),
        shapes::bend(&shapes::bumpy_blob(2), 0.2),
        load("blob.off"),
        load("blob_bent.off"),
    ];
    let mut worst_orth = 0.0f64;
    for (i, mesh) in meshes.iter().enumerate() {
        let (w, m) = cotangent_laplacian(mesh);
        let b = compute_basis(&w, &m, 30).map_err(|e| e.to_string())?;
        // ΦᵀMΦ − I, computed here from the raw pieces
        let phi = b.phi();
        let mphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |r, c| b.mass()[r] * phi[(r, c)]);
        let dev = (phi.transpose() * mphi - DMatrix::<f64>::identity(30, 30)).amax();
        worst_orth = worst_orth.max(dev);
        ensure(dev <= 1e-6, || format!("mesh {i}: |ΦᵀMΦ − I| {dev:e}"))?;
    }
    Ok(format!(
        "first two shells within {:.2}% of ℓ(ℓ+1); max |ΦᵀMΦ − I| {worst_orth:.1e} over {} meshes",
        100.0 * worst,
        meshes.len()
    ))
}

fn evaluation_metrics(tmp: &Path) -> Outcome {
    let labels = |l: &[usize]| LabelField::new(l.to_vec(), 2).unwrap();
    let m = segmentation_miou(&labels(&[0, 0, 1, 1, 1]), &labels(&[0, 0, 0, 0, 1])).map_err(|e| e.to_string())?;
    // class 0: |{0,1}| / |{0,1,2,3}| = 1/2; class 1: |{4}| / |{2,3,4}| = 1/3
    let hand = 100.0 * (0.5 + 1.0 / 3.0) / 2.0;
    ensure((m - hand).abs() < 1e-12 && format!("{m:.2}") == "41.67", || format!("mIoU {m}"))?;

    // 5×5 grid on the unit square (area 1): vertex 0 sent two edges (length 0.5) away
    let grid = shapes::grid(4, 4, 1.0, 1.0);
    let n = grid.num_vertices();
    let mut map: Vec<usize> = (0..n).collect();
    map[0] = 2;
    let e = mean_geodesic_error(&Correspondence::new(map, n).unwrap(), &Correspondence::identity(n), &grid).map_err(|e| e.to_string())?;
    ensure(e == 100.0 * 0.5 / 25.0, || format!("single-error example {e}"))?;

    let src = LabelField::new(vec![3, 1, 4, 1, 5, 0, 2], 6).unwrap();
    let moved = transfer_labels(&Correspondence::identity(7), &src).unwrap();
    let ident = segmentation_miou(&moved, &src).unwrap();
    ensure(ident == 100.0, || format!("identity transfer mIoU {ident}"))?;

    // the same through the binary: pred = gt reports 0
    let mesh = tmp.join("grid.off");
    slicematch::mesh::write_off(&mesh, &grid).map_err(|e| e.to_string())?;
    let dir = tmp.join("eval_identity");
    std::fs::create_dir_all(&dir).unwrap();
    slicematch::formats::save_indices(&dir.join("corr.txt"), &(0..n).collect::<Vec<_>>()).unwrap();
    let zero = eval_identity(&dir, &mesh, n)?;
    ensure(zero == 0.0, || format!("eval with pred = gt reported {zero}"))?;
    Ok(format!("mIoU {m:.2}; single error {e}; identity transfer {ident:.1}; cmd eval pred=gt {zero:.1}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let t = tmp.path();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1D Wasserstein exactness", Box::new(one_d_exactness)),
        ("SW bounds", Box::new(sw_bounds)),
        ("EBSW dominance", Box::new(ebsw_dominance)),
        ("Sinkhorn contract", Box::new(sinkhorn_contract)),
        ("Gradient fidelity", Box::new(gradient_fidelity)),
        ("Functional-map exactness", Box::new(fmap_exactness)),
        ("Pipeline fixed point", Box::new(|| pipeline_fixed_point(t))),
        ("Refinement efficacy", Box::new(|| refinement_efficacy(t))),
        ("Complexity evidence", Box::new(|| complexity(t))),
        ("Spectral sanity", Box::new(spectral_sanity)),
        ("Evaluation metrics", Box::new(|| evaluation_metrics(t))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
