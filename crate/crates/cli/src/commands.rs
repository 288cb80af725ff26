use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use slicematch::align::LossConfig;
use slicematch::eval::{mean_geodesic_error, segmentation_miou, transfer_labels, Correspondence, LabelField};
use slicematch::fmap::FmapConfig;
use slicematch::formats::{load_indices, load_rfnw, save_indices, save_rfnw};
use slicematch::mesh::{write_ply, TriMesh};
use slicematch::ot::SinkhornOptions;
use slicematch::refine::{train_refiner, FeatureRefiner, RefineConfig, TrainConfig, TrainingPair};

use crate::bench::{self, BenchConfig, Op};
use crate::error::{CliError, Result};
use crate::pipeline::{self, Features, Shape};
use crate::{BenchArgs, EvalArgs, ExportColorArgs, LossArgs, MatchArgs, PreprocessArgs, RefineArgs, TrainArgs, TransferArgs};

impl LossArgs {
    fn loss(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            p: self.p,
            num_projections: self.projections,
            tau: self.tau,
            ot_variant: self.ot_variant,
            projection_seed: self.seed,
        }
    }

    fn fmap(&self) -> FmapConfig {
        FmapConfig {
            lambda_reg: self.lambda_reg,
            resolvent_gamma: self.resolvent_gamma,
        }
    }
}

fn refine_config(loss: &LossArgs, r: &RefineArgs) -> RefineConfig {
    RefineConfig {
        iterations: r.iterations,
        step_size: r.step_size,
        max_halvings: r.max_halvings,
        sinkhorn: SinkhornOptions {
            epsilon_rel: r.epsilon_rel,
            max_iters: r.sinkhorn_iters,
            tol: r.sinkhorn_tol,
            ..Default::default()
        },
        inner_steps: r.inner_steps,
        unrolled_iters: r.unrolled_iters,
        loss: loss.loss(),
        fmap: loss.fmap(),
        weights: loss.weights,
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Prepares every distinct mesh once, in parallel, keyed by path.
fn prepare_all<'a>(
    paths: impl Iterator<Item = &'a PathBuf>,
    k: usize,
    wks_dim: usize,
    cache: Option<&Path>,
    jobs: usize,
) -> Result<BTreeMap<PathBuf, Shape>> {
    let unique: Vec<PathBuf> = paths.cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let shapes = pool(jobs)?.install(|| {
        unique
            .par_iter()
            .map(|p| pipeline::prepare(p, k, wks_dim, cache))
            .collect::<Vec<_>>()
    });
    unique.into_iter().zip(shapes).map(|(p, s)| Ok((p, s?))).collect()
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let (spec, fmat) = pipeline::preprocess(&a.mesh, &a.out_dir, a.shape.k, a.shape.wks_dim)?;
    println!("{}\n{}", spec.display(), fmat.display());
    Ok(())
}

pub fn match_meshes(a: MatchArgs) -> Result<()> {
    let config = refine_config(&a.loss, &a.refine);
    config.validate()?;
    let features = match (&a.features, &a.refiner) {
        (Some(f), _) => Features::External(f[0].clone(), f[1].clone()),
        (None, Some(path)) => Features::Refiner(FeatureRefiner::from_layers(load_rfnw(path)?).map_err(|e| CliError::Data(e.to_string()))?),
        (None, None) => Features::Wks,
    };
    let pairs = match (&a.pairs, &a.mesh_x, &a.mesh_y) {
        (Some(p), _, _) => pipeline::read_pairs(p)?,
        (None, Some(x), Some(y)) => vec![pipeline::PairSpec {
            id: String::new(),
            x: x.clone(),
            y: y.clone(),
        }],
        _ => return Err(CliError::Usage("give two meshes or --pairs".into())),
    };
    let batch = a.pairs.is_some();
    let shapes = prepare_all(
        pairs.iter().flat_map(|p| [&p.x, &p.y]),
        a.shape.k,
        a.shape.wks_dim,
        a.cache_dir.as_deref(),
        a.jobs,
    )?;
    let results = pool(a.jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|p| {
                let out = pipeline::match_pair(&shapes[&p.x], &shapes[&p.y], &features, &config, !a.no_refine)?;
                let dir = if batch { a.out_dir.join(&p.id) } else { a.out_dir.clone() };
                pipeline::write_outputs(&dir, &out)?;
                Ok(out)
            })
            .collect::<Vec<Result<_>>>()
    });
    for (p, r) in pairs.iter().zip(results) {
        let out = r.map_err(|e| if batch { e.context(&p.id) } else { e })?;
        let first = out.trace.first().map_or(f64::NAN, |r| r.total);
        let last = out.trace.last().map_or(f64::NAN, |r| r.total);
        let id = if batch { p.id.as_str() } else { "pair" };
        println!("{id}\tvertices {}\tloss {first:.6e} -> {last:.6e}", out.map.len());
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    load_indices(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn miou(corr: &Correspondence, src: &Path, gt: &Path) -> Result<f64> {
    let (src, gt) = (read_labels(src)?, read_labels(gt)?);
    let classes = src.iter().chain(&gt).max().map_or(0, |m| m + 1);
    let pred = transfer_labels(corr, &LabelField::new(src, classes)?)?;
    Ok(segmentation_miou(&pred, &LabelField::new(gt, classes)?)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mesh = pipeline::read_mesh(&a.mesh)?;
    let n = mesh.num_vertices();
    let corr = Correspondence::new(load_indices(&a.corr)?, n).map_err(|e| CliError::from(e).context(a.corr.display()))?;
    let gt = Correspondence::new(load_indices(&a.gt)?, n).map_err(|e| CliError::from(e).context(a.gt.display()))?;
    let geo = mean_geodesic_error(&corr, &gt, &mesh)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let coarse = match (&a.labels, &a.labels_gt) {
        (Some(s), Some(g)) => Some(miou(&corr, s, g)?),
        _ => None,
    };
    let fine = match (&a.fine_labels, &a.fine_labels_gt) {
        (Some(s), Some(g)) => Some(miou(&corr, s, g)?),
        _ => None,
    };
    let row = [a.pair_id.clone(), geo.to_string(), fmt(coarse), fmt(fine)];
    let header = ["pair_id", "geo_error_x100", "miou_coarse", "miou_fine"];
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => {
            let fresh = !a.append || !p.exists() || std::fs::metadata(p)?.len() == 0;
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(a.append)
                .truncate(!a.append)
                .open(p)?;
            let mut w = csv::Writer::from_writer(Box::new(file) as Box<dyn Write>);
            if fresh {
                w.write_record(header)?;
            }
            w.write_record(&row)?;
            w.flush()?;
            return Ok(());
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn transfer(a: TransferArgs) -> Result<()> {
    let labels = LabelField::from_labels(read_labels(&a.labels)?);
    let corr = Correspondence::new(load_indices(&a.corr)?, labels.len()).map_err(|e| CliError::from(e).context(a.corr.display()))?;
    let out = transfer_labels(&corr, &labels)?;
    save_indices(&a.out, out.labels())?;
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let ops = a
        .ops
        .iter()
        .map(|s| s.parse::<Op>().map_err(CliError::Usage))
        .collect::<Result<Vec<_>>>()?;
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::Usage("sizes must be positive".into()));
    }
    let rows = bench::run(
        &ops,
        &BenchConfig {
            sizes: a.sizes,
            dim: a.dim,
            projections: a.projections,
            repeats: a.repeats,
            sinkhorn_iters: a.sinkhorn_iters,
            seed: a.seed,
        },
    )?;
    match a.out {
        Some(p) => bench::write_csv(std::fs::File::create(p)?, &rows),
        None => bench::write_csv(std::io::stdout(), &rows),
    }
}

/// Colors from normalized vertex positions (bounding box → RGB cube).
fn position_colors(mesh: &TriMesh) -> Vec<[u8; 3]> {
    let v = mesh.vertices();
    let mut lo = v[0];
    let mut hi = v[0];
    for p in v {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).map(|s| if s > 0.0 { s } else { 1.0 });
    v.iter()
        .map(|p| {
            let t = (p - lo).component_div(&span);
            [0, 1, 2].map(|c| (t[c].clamp(0.0, 1.0) * 255.0).round() as u8)
        })
        .collect()
}

pub fn export_color(a: ExportColorArgs) -> Result<()> {
    let mx = pipeline::read_mesh(&a.mesh_x)?;
    let my = pipeline::read_mesh(&a.mesh_y)?;
    let corr = Correspondence::new(load_indices(&a.corr)?, my.num_vertices()).map_err(|e| CliError::from(e).context(a.corr.display()))?;
    if corr.len() != mx.num_vertices() {
        return Err(CliError::Data(format!(
            "correspondence has {} entries for a source mesh with {} vertices",
            corr.len(),
            mx.num_vertices()
        )));
    }
    let cy = position_colors(&my);
    let cx: Vec<[u8; 3]> = corr.map().iter().map(|&j| cy[j]).collect();
    std::fs::create_dir_all(&a.out_dir)?;
    let name = |p: &Path| {
        let s = p.file_stem().map_or_else(|| "mesh".into(), |s| s.to_string_lossy().into_owned());
        a.out_dir.join(format!("{s}.colors.ply"))
    };
    let (px, py) = (name(&a.mesh_x), name(&a.mesh_y));
    if px == py {
        return Err(CliError::Usage("both meshes share a file stem; outputs would collide".into()));
    }
    write_ply(&px, &mx, Some(&cx))?;
    write_ply(&py, &my, Some(&cy))?;
    println!("{}\n{}", px.display(), py.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        epochs: a.epochs,
        hidden: a.hidden,
        output: a.output,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        loss: a.loss.loss(),
        fmap: a.loss.fmap(),
        weights: a.loss.weights,
        ..Default::default()
    };
    let pairs = pipeline::read_pairs(&a.pairs)?;
    let shapes = prepare_all(
        pairs.iter().flat_map(|p| [&p.x, &p.y]),
        a.shape.k,
        a.shape.wks_dim,
        a.cache_dir.as_deref(),
        a.jobs,
    )?;
    let training: Vec<TrainingPair> = pairs
        .iter()
        .map(|p| {
            let (x, y) = (&shapes[&p.x], &shapes[&p.y]);
            TrainingPair {
                basis_x: x.basis.clone(),
                basis_y: y.basis.clone(),
                input_x: x.wks.clone(),
                input_y: y.wks.clone(),
            }
        })
        .collect();
    let report = train_refiner(&training, &config, a.loss.seed)?;
    save_rfnw(&a.out, report.refiner.layers())?;
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (i, l) in report.trace.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    println!(
        "trained on {} pairs: loss {:.6e} -> {:.6e}",
        training.len(),
        report.trace.first().copied().unwrap_or(f64::NAN),
        report.trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
