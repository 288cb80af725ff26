//! Shape preparation and pairwise matching shared by the subcommands.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use slicematch::align::nn_map;
use slicematch::fmap::solve_fmap;
use slicematch::formats::{load_fmat, load_spec, save_fmap, save_fmat, save_indices, save_spec};
use slicematch::mesh::{cotangent_laplacian, load_mesh, MeshFormat, TriMesh};
use slicematch::refine::{adaptive_refine, starting_loss, FeatureRefiner, RefineConfig, TraceRow};
use slicematch::spectral::{compute_basis, wks, SpectralBasis, WksParams};

use crate::error::{CliError, Result};

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| CliError::Data(format!("{}: unrecognized mesh extension (expected .off, .ply or .obj)", path.display())))?;
    load_mesh(path, format).map_err(|e| CliError::from(e).context(path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "mesh".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cache_paths(dir: &Path, mesh_path: &Path) -> (PathBuf, PathBuf) {
    let s = stem(mesh_path);
    (dir.join(format!("{s}.spec")), dir.join(format!("{s}.wks.fmat")))
}

/// A mesh rescaled to unit area with its spectral basis and WKS descriptor.
#[derive(Debug, Clone)]
pub struct Shape {
    pub mesh: TriMesh,
    pub basis: SpectralBasis,
    pub wks: DMatrix<f64>,
}

fn compute(mesh: TriMesh, k: usize, wks_dim: usize) -> Result<Shape> {
    let n = mesh.num_vertices();
    if k == 0 || k >= n {
        return Err(CliError::Data(format!("k = {k} eigenpairs needs 0 < k < n, but the mesh has n = {n} vertices")));
    }
    if wks_dim == 0 {
        return Err(CliError::Usage("wks-dim must be positive".into()));
    }
    let (w, m) = cotangent_laplacian(&mesh);
    let basis = compute_basis(&w, &m, k)?;
    let wks = wks(
        &basis,
        WksParams {
            num_energies: wks_dim,
            ..Default::default()
        },
    )?
    .into_inner();
    Ok(Shape { mesh, basis, wks })
}

/// Loads `path`, normalizes it to unit area and computes (or reads from
/// `cache`) its basis and descriptor. Cache entries are keyed by file stem
/// and used only when their shapes match; stale ones are overwritten.
pub fn prepare(path: &Path, k: usize, wks_dim: usize, cache: Option<&Path>) -> Result<Shape> {
    let mesh = read_mesh(path)?.with_unit_area()?;
    let n = mesh.num_vertices();
    if let Some(dir) = cache {
        let (spec, fmat) = cache_paths(dir, path);
        if spec.exists() && fmat.exists() {
            let (evals, phi) = load_spec(&spec)?;
            let f = load_fmat(&fmat)?;
            if phi.shape() == (n, k) && f.shape() == (n, wks_dim) {
                log::info!("{}: using cached basis {}", path.display(), spec.display());
                let basis = SpectralBasis::new(phi, evals, mesh.vertex_areas())?;
                return Ok(Shape { mesh, basis, wks: f });
            }
            log::warn!("{}: cache shape mismatch, recomputing", spec.display());
        }
        let shape = compute(mesh, k, wks_dim).map_err(|e| e.context(path.display()))?;
        std::fs::create_dir_all(dir)?;
        save_spec(&spec, shape.basis.eigenvalues(), shape.basis.phi())?;
        save_fmat(&fmat, &shape.wks)?;
        return Ok(shape);
    }
    compute(mesh, k, wks_dim).map_err(|e| e.context(path.display()))
}

/// Writes the cache files for one mesh; returns their paths.
pub fn preprocess(path: &Path, out_dir: &Path, k: usize, wks_dim: usize) -> Result<(PathBuf, PathBuf)> {
    let mesh = read_mesh(path)?.with_unit_area()?;
    let shape = compute(mesh, k, wks_dim).map_err(|e| e.context(path.display()))?;
    std::fs::create_dir_all(out_dir)?;
    let (spec, fmat) = cache_paths(out_dir, path);
    save_spec(&spec, shape.basis.eigenvalues(), shape.basis.phi())?;
    save_fmat(&fmat, &shape.wks)?;
    Ok((spec, fmat))
}

/// Where the per-vertex features come from.
#[derive(Debug, Clone)]
pub enum Features {
    Wks,
    Refiner(FeatureRefiner),
    /// External `(X, Y)` FMAT files.
    External(PathBuf, PathBuf),
}

impl Features {
    fn for_pair(&self, x: &Shape, y: &Shape) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (fx, fy) = match self {
            Features::Wks => (x.wks.clone(), y.wks.clone()),
            Features::Refiner(r) => {
                if r.input_dim() != x.wks.ncols() {
                    return Err(CliError::Data(format!(
                        "refiner expects {}-dim input but the descriptor has {} columns",
                        r.input_dim(),
                        x.wks.ncols()
                    )));
                }
                (r.forward(&x.wks)?, r.forward(&y.wks)?)
            }
            Features::External(px, py) => (load_fmat(px)?, load_fmat(py)?),
        };
        for (f, s, name) in [(&fx, x, "X"), (&fy, y, "Y")] {
            if f.nrows() != s.mesh.num_vertices() {
                return Err(CliError::Data(format!(
                    "{name} features have {} rows for a mesh with {} vertices",
                    f.nrows(),
                    s.mesh.num_vertices()
                )));
            }
        }
        if fx.ncols() != fy.ncols() || fx.ncols() == 0 {
            return Err(CliError::Data(format!("feature dimensions {} and {} differ", fx.ncols(), fy.ncols())));
        }
        if fx.iter().chain(fy.iter()).any(|v| !v.is_finite()) {
            return Err(CliError::Data("features contain non-finite values".into()));
        }
        Ok((fx, fy))
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    /// X vertex → Y vertex.
    pub map: Vec<usize>,
    pub c_xy: DMatrix<f64>,
    pub c_yx: DMatrix<f64>,
    pub trace: Vec<TraceRow>,
}

fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Nearest-neighbour map on the (optionally refined) features, the two
/// functional maps those features induce, and the loss trace. Without
/// refinement the trace holds only the starting loss.
pub fn match_pair(x: &Shape, y: &Shape, features: &Features, config: &RefineConfig, refine: bool) -> Result<MatchOutput> {
    let (fx, fy) = features.for_pair(x, y)?;
    let (fx, fy, map, trace) = if refine {
        let out = adaptive_refine(&x.basis, &y.basis, &fx, &fy, config)?;
        (out.fx, out.fy, out.map, out.trace)
    } else {
        let row = starting_loss(&x.basis, &y.basis, &fx, &fy, config)?;
        let map = nn_map(&fx, &fy)?;
        (fx, fy, map, vec![row])
    };
    let a = x.basis.pinv() * normalize_rows(&fx);
    let b = y.basis.pinv() * normalize_rows(&fy);
    let (ex, ey) = (x.basis.eigenvalues(), y.basis.eigenvalues());
    let c_xy = solve_fmap(&a, &b, ex, ey, &config.fmap)?;
    let c_yx = solve_fmap(&b, &a, ey, ex, &config.fmap)?;
    Ok(MatchOutput { map, c_xy, c_yx, trace })
}

pub fn write_trace<W: std::io::Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "l_fmap", "l_ot", "l_proper", "total"])?;
    for r in trace {
        out.write_record([
            r.iter.to_string(),
            r.parts.l_fmap.to_string(),
            r.parts.l_ot.to_string(),
            r.parts.l_proper.to_string(),
            r.total.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `corr.txt`, `maps.fmap` and `trace.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &MatchOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_indices(&dir.join("corr.txt"), &out.map)?;
    save_fmap(&dir.join("maps.fmap"), &out.c_xy, &out.c_yx)?;
    write_trace(std::fs::File::create(dir.join("trace.csv"))?, &out.trace)
}

/// One line of a pairs file: `mesh_x mesh_y [pair_id]`, paths relative to
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSpec {
    pub id: String,
    pub x: PathBuf,
    pub y: PathBuf,
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs: Vec<PairSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(CliError::Data(format!(
                "{} line {}: expected `mesh_x mesh_y [pair_id]`",
                path.display(),
                i + 1
            )));
        }
        let (x, y) = (base.join(fields[0]), base.join(fields[1]));
        let id = fields.get(2).map_or_else(|| format!("{}__{}", stem(&x), stem(&y)), |s| s.to_string());
        if pairs.iter().any(|p| p.id == id) {
            return Err(CliError::Data(format!("{} line {}: duplicate pair id {id:?}", path.display(), i + 1)));
        }
        pairs.push(PairSpec { id, x, y });
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", path.display())));
    }
    Ok(pairs)
}
