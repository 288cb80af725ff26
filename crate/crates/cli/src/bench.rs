//! Timing and peak-allocation measurements for the transport kernels.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slicematch::ot::{ebsw_is, sample_projections, sinkhorn, sq_euclidean_cost, sw_distance, SinkhornOptions, WeightedSamples};

use crate::error::{CliError, Result};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

/// System allocator that tracks live and peak heap bytes.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
            grow(new_size);
        }
        p
    }
}

fn grow(bytes: usize) {
    let now = CURRENT.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

/// Runs `f`, returning its wall time in ns and the peak heap growth above
/// the live bytes at entry.
fn measure<T>(f: impl FnOnce() -> T) -> (T, u128, usize) {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let t = Instant::now();
    let out = f();
    let ns = t.elapsed().as_nanos();
    (out, ns, PEAK.load(Ordering::Relaxed).saturating_sub(base))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Sw,
    Ebsw,
    Sinkhorn,
}

impl std::str::FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Ok(Op::Sw),
            "ebsw" => Ok(Op::Ebsw),
            "sinkhorn" => Ok(Op::Sinkhorn),
            _ => Err(format!("unknown op {s:?} (expected sw, ebsw or sinkhorn)")),
        }
    }
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Sw => "sw",
            Op::Ebsw => "ebsw",
            Op::Sinkhorn => "sinkhorn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub projections: usize,
    pub repeats: usize,
    pub sinkhorn_iters: usize,
    pub seed: u64,
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub op: Op,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub wall_ns: u128,
    pub peak_bytes: usize,
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

/// Minimum wall time and peak bytes over `repeats` runs of each op at each
/// size. Inputs are generated outside the measured region.
pub fn run(ops: &[Op], config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.repeats == 0 || config.dim == 0 || config.projections == 0 {
        return Err(CliError::Usage("repeats, dim and projections must be positive".into()));
    }
    let mut rows = Vec::new();
    for &op in ops {
        for &n in &config.sizes {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ n as u64);
            let a = gaussian(n, config.dim, &mut rng);
            let b = gaussian(n, config.dim, &mut rng);
            let mut best = (u128::MAX, usize::MAX);
            let l = if op == Op::Sinkhorn { 0 } else { config.projections };
            for _ in 0..config.repeats {
                let (ns, bytes) = match op {
                    Op::Sw | Op::Ebsw => {
                        let sa = WeightedSamples::uniform(a.clone())?;
                        let sb = WeightedSamples::uniform(b.clone())?;
                        let proj = sample_projections(l, config.dim, config.seed)?;
                        let (r, ns, bytes) = measure(|| match op {
                            Op::Sw => sw_distance(&sa, &sb, &proj, 2.0),
                            _ => ebsw_is(&sa, &sb, &proj, 2.0),
                        });
                        r?;
                        (ns, bytes)
                    }
                    Op::Sinkhorn => {
                        let w = vec![1.0 / n as f64; n];
                        let opts = SinkhornOptions {
                            max_iters: config.sinkhorn_iters,
                            ..Default::default()
                        };
                        let (r, ns, bytes) = measure(|| sinkhorn(&sq_euclidean_cost(&a, &b), &w, &w, &opts).map(|r| r.cost));
                        r?;
                        (ns, bytes)
                    }
                };
                best = (best.0.min(ns), best.1.min(bytes));
            }
            log::info!("bench {} n={n}: {} ns, {} bytes", op.name(), best.0, best.1);
            rows.push(BenchRow {
                op,
                n,
                d: config.dim,
                l,
                wall_ns: best.0,
                peak_bytes: best.1,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["op", "n", "d", "L", "wall_ns", "peak_bytes"])?;
    for r in rows {
        out.write_record([
            r.op.name().to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.l.to_string(),
            r.wall_ns.to_string(),
            r.peak_bytes.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
