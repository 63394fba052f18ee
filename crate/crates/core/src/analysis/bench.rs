//! Wall-clock scaling of dense and normal-plus-low-rank products.

use std::hint::black_box;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::hippo::gaussian;
use crate::kernel::NplrFactors;
use crate::linalg::C64;

pub const MIN_REPS: usize = 31;
const WARMUP: usize = 5;
/// Each timed sample runs the operation enough times to last this long.
const TARGET_SAMPLE_NS: u128 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub rank: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![128, 256, 512, 1024],
            rank: 16,
            reps: MIN_REPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub op: String,
    pub n: usize,
    pub r: usize,
    pub median_ns: f64,
}

fn complex_gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let re = gaussian(rows, cols, 1.0, rng);
    let im = gaussian(rows, cols, 1.0, rng);
    DMatrix::from_fn(rows, cols, |i, j| C64::new(re[(i, j)], im[(i, j)]))
}

/// Random factors with the right shapes; only their cost matters here.
fn timing_factors(n: usize, r: usize, rng: &mut ChaCha8Rng) -> NplrFactors {
    NplrFactors {
        v: complex_gaussian(n, n, rng),
        lambda: complex_gaussian(n, 1, rng).column(0).into_owned(),
        p: complex_gaussian(n, r, rng),
        q: complex_gaussian(n, r, rng),
        rank: r,
        residual_error: f64::NAN,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

struct Case {
    op: &'static str,
    n: usize,
    run: Box<dyn FnMut()>,
    inner: usize,
    samples: Vec<f64>,
}

impl Case {
    fn new(op: &'static str, n: usize, mut run: Box<dyn FnMut()>) -> Self {
        for _ in 0..WARMUP {
            run();
        }
        let mut inner = 1usize;
        loop {
            let start = Instant::now();
            for _ in 0..inner {
                run();
            }
            if start.elapsed().as_nanos() >= TARGET_SAMPLE_NS || inner >= 1 << 24 {
                break;
            }
            inner *= 2;
        }
        Self {
            op,
            n,
            run,
            inner,
            samples: Vec::new(),
        }
    }

    fn sample(&mut self) {
        // untimed call so the case starts from its own cache state
        (self.run)();
        let start = Instant::now();
        for _ in 0..self.inner {
            (self.run)();
        }
        self.samples.push(start.elapsed().as_nanos() as f64 / self.inner as f64);
    }
}

fn dense_case(n: usize, rng: &mut ChaCha8Rng) -> Case {
    let a = gaussian(n, n, 1.0, rng);
    let x = gaussian(n, 1, 1.0, rng).column(0).into_owned();
    let mut y = DVector::zeros(n);
    Case::new(
        "dense",
        n,
        Box::new(move || {
            y.gemv(1.0, &a, black_box(&x), 0.0);
            black_box(&y);
        }),
    )
}

fn factor_case(op: &'static str, n: usize, r: usize, rng: &mut ChaCha8Rng) -> Case {
    let f = timing_factors(n, r, rng);
    let x = complex_gaussian(n, 1, rng).column(0).into_owned();
    let mut out = DVector::zeros(n);
    let mut scratch = f.scratch();
    let full = op == "nplr";
    Case::new(
        op,
        n,
        Box::new(move || {
            if full {
                f.matvec_into(black_box(&x), &mut out, &mut scratch);
            } else {
                f.lowrank_accumulate(black_box(&x), &mut out, &mut scratch);
            }
            black_box(&out);
        }),
    )
}

/// Times `dense` (real `A v`), `nplr` (`V(Λ(V*v)) - P(Q*v)`) and `lowrank`
/// (`P(Q*v)` alone) at every size, on the calling thread. Samples are taken
/// round-robin over all cases so slow drifts in machine load affect every
/// size alike.
pub fn bench_complexity(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FlamesError::invalid("sizes", "must be non-empty and strictly ascending"));
    }
    if cfg.rank == 0 || cfg.sizes[0] < cfg.rank {
        return Err(FlamesError::invalid("rank", "must satisfy 1 <= r <= smallest size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = Vec::new();
    for &n in &cfg.sizes {
        cases.push(dense_case(n, &mut rng));
        cases.push(factor_case("nplr", n, cfg.rank, &mut rng));
        cases.push(factor_case("lowrank", n, cfg.rank, &mut rng));
    }
    for _ in 0..cfg.reps.max(1) {
        cases.iter_mut().for_each(Case::sample);
    }
    Ok(cases
        .into_iter()
        .map(|c| BenchRow {
            op: c.op.to_string(),
            n: c.n,
            r: cfg.rank,
            median_ns: median(c.samples),
        })
        .collect())
}

/// `median(N_{k+1}) / median(N_k)` for one op, in size order.
pub fn doubling_ratios(rows: &[BenchRow], op: &str) -> Vec<(usize, usize, f64)> {
    let series: Vec<&BenchRow> = rows.iter().filter(|r| r.op == op).collect();
    series
        .windows(2)
        .map(|w| (w[0].n, w[1].n, w[1].median_ns / w[0].median_ns))
        .collect()
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], reps: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "op,N,r,median_ns")?;
    if reps < MIN_REPS {
        writeln!(out, "# warning: reps={reps} is below {MIN_REPS}; medians are noisy")?;
    }
    for r in rows {
        writeln!(out, "{},{},{},{:.1}", r.op, r.n, r.r, r.median_ns)?;
    }
    Ok(())
}
