//! Wall-time scaling of the block against dense attention and a k-NN
//! hypergraph convolution.

use std::fmt::Write as _;
use std::hint::black_box;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{self, AttnParams};
use crate::error::{Error, Result};
use crate::message;
use crate::softhg::{Activation, BlockConfig, SoftHGParams};
use crate::tensor::Matrix;

const F64: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOp {
    /// Forward pass of one block.
    Softhgnn,
    /// Single-head dense self-attention.
    Attention,
    /// k-NN hypergraph construction followed by one convolution.
    Hgnn,
}

impl BenchOp {
    pub const ALL: [BenchOp; 3] = [BenchOp::Softhgnn, BenchOp::Attention, BenchOp::Hgnn];

    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Softhgnn => "softhgnn",
            BenchOp::Attention => "attention",
            BenchOp::Hgnn => "hgnn",
        }
    }

    /// Accepted log-log slope range of time against N.
    pub fn slope_band(self) -> (f64, f64) {
        match self {
            BenchOp::Softhgnn => (0.8, 1.3),
            BenchOp::Attention => (1.6, 2.3),
            BenchOp::Hgnn => (1.6, 2.5),
        }
    }
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchOp::ALL
            .into_iter()
            .find(|op| op.name() == s.trim())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown op `{s}` (valid ops: softhgnn, attention, hgnn)"
                ))
            })
    }
}

/// Comma-separated op names.
pub fn parse_ops(s: &str) -> Result<Vec<BenchOp>> {
    let mut ops: Vec<BenchOp> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    ops.dedup();
    Ok(ops)
}

/// Either `lo..hi` (powers of two from `lo` up to `hi`) or a comma list.
pub fn parse_n_list(s: &str) -> Result<Vec<usize>> {
    let bad = || {
        Error::config(format!(
            "bad N list `{s}` (use e.g. 256..8192 or 256,512,1024)"
        ))
    };
    let list: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        std::iter::successors(Some(lo), |&n| n.checked_mul(2))
            .take_while(|&n| n <= hi)
            .collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if list.is_empty() || list.contains(&0) || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "N list `{s}` must be positive and strictly ascending"
        )));
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub ops: Vec<BenchOp>,
    pub n_list: Vec<usize>,
    pub d: usize,
    /// Hyperedge count of the block.
    pub m: usize,
    pub heads: usize,
    /// Neighbours per k-NN hyperedge.
    pub knn_k: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ops: BenchOp::ALL.to_vec(),
            n_list: vec![256, 512, 1024, 2048, 4096, 8192],
            d: 64,
            m: 8,
            heads: 8,
            knn_k: 8,
            repeats: 5,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(Error::config(format!(
                "repeats must be at least 5, got {}",
                self.repeats
            )));
        }
        if self.ops.is_empty() {
            return Err(Error::config("no ops selected"));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "N list must be non-empty and strictly ascending",
            ));
        }
        if self.ops.contains(&BenchOp::Hgnn) && self.n_list[0] <= self.knn_k {
            return Err(Error::config(format!(
                "hgnn needs N > k ({}), smallest N is {}",
                self.knn_k, self.n_list[0]
            )));
        }
        self.block_config().validate()
    }

    pub fn block_config(&self) -> BlockConfig {
        BlockConfig {
            hyperedges: self.m,
            heads: self.heads,
            ..BlockConfig::with_dim(self.d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub op: BenchOp,
    pub n_tokens: usize,
    pub d: usize,
    pub m: usize,
    pub repeats: usize,
    pub median_seconds: f64,
    pub workspace_bytes: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// `(a, b)` with block forward workspace `bytes(N) = a·N + b`.
pub fn softhgnn_workspace_formula(cfg: &BlockConfig) -> (usize, usize) {
    let (d, m, e, o) = (cfg.dim, cfg.hyperedges, cfg.edge_dim, cfg.out_dim);
    let hidden = cfg.offset_hidden.unwrap_or(0);
    // per token: X W_pre, raw scores, A, Ã (A F'_e), W_n pre-activation,
    // activation, output
    let a = F64 * (d + 2 * m + e + 3 * o);
    // f_global, flat offset and P, Aᵀ X, W_e pre-activation and activation,
    // hidden offset layer
    let b = F64 * (2 * d + 2 * m * d + m * d + 2 * m * e + 2 * hidden);
    (a, b)
}

/// Q, K, V, the N × N score matrix, and the output.
pub fn attention_workspace(n: usize, d: usize) -> usize {
    F64 * (3 * n * d + n * n + n * d)
}

/// Neighbour candidates, member lists, degree vectors, edge and vertex
/// features, pre-activation and output.
pub fn hgnn_workspace(n: usize, d: usize, k: usize) -> usize {
    let usize_bytes = std::mem::size_of::<usize>();
    let candidates = n * (F64 + usize_bytes);
    let members = n * (k + 1) * usize_bytes;
    let degrees = 2 * n * usize_bytes;
    candidates + members + degrees + F64 * 4 * n * d
}

pub fn scaling_run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    scaling_run_with(cfg, |_| {})
}

fn timed<F: FnMut() -> Result<()>>(f: &mut F) -> Result<f64> {
    let t = Instant::now();
    f()?;
    // clamp so a coarse clock can never report zero
    Ok(t.elapsed().as_secs_f64().max(1e-9))
}

/// Like [`scaling_run`], calling `progress` after each finished row.
///
/// Repeats are interleaved across the N values (one warm-up call each, then
/// round-robin timed calls) so drift in machine speed during a sweep lands
/// on every size alike instead of bending the slope.
pub fn scaling_run_with<P: FnMut(&BenchRow)>(
    cfg: &BenchConfig,
    mut progress: P,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.ops.len() * cfg.n_list.len());
    for &op in &cfg.ops {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let block = SoftHGParams::init(cfg.block_config(), &mut rng)?;
        let attn = AttnParams::init(cfg.d, &mut rng);
        let theta = Matrix::random_uniform(cfg.d, cfg.d, -1.0, 1.0, &mut rng);
        let inputs: Vec<Matrix> = cfg
            .n_list
            .iter()
            .map(|&n| {
                let mut xr = ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).rotate_left(32));
                Matrix::random_uniform(n, cfg.d, -1.0, 1.0, &mut xr)
            })
            .collect();
        let run_once = |x: &Matrix| -> Result<()> {
            match op {
                BenchOp::Softhgnn => {
                    black_box(message::softhgnn_forward(black_box(x), &block)?);
                }
                BenchOp::Attention => {
                    black_box(baselines::self_attention(black_box(x), &attn)?);
                }
                BenchOp::Hgnn => {
                    let inc = baselines::knn_hypergraph(black_box(x), cfg.knn_k)?;
                    black_box(baselines::hgnn_conv(x, &inc, &theta, Activation::Relu)?);
                }
            }
            Ok(())
        };

        for x in &inputs {
            run_once(x)?;
        }
        let mut times = vec![Vec::with_capacity(cfg.repeats); inputs.len()];
        for _ in 0..cfg.repeats {
            for (x, t) in inputs.iter().zip(times.iter_mut()) {
                t.push(timed(&mut || run_once(x))?);
            }
        }

        for ((x, mut t), &n) in inputs.iter().zip(times).zip(&cfg.n_list) {
            let workspace_bytes = match op {
                BenchOp::Softhgnn => message::softhgnn_forward(x, &block)?.workspace_bytes(),
                BenchOp::Attention => attention_workspace(n, cfg.d),
                BenchOp::Hgnn => hgnn_workspace(n, cfg.d, cfg.knn_k),
            };
            let row = BenchRow {
                op,
                n_tokens: n,
                d: cfg.d,
                m: cfg.m,
                repeats: cfg.repeats,
                median_seconds: median(&mut t),
                workspace_bytes,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::config("a slope needs at least two points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Numeric("log-log slope needs positive values".into()));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("all N values are equal".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeCheck {
    pub op: BenchOp,
    pub slope: f64,
    pub band: (f64, f64),
    pub pass: bool,
}

/// Time-vs-N slope per op present in `rows` with at least `min_points` sizes.
pub fn slope_checks(rows: &[BenchRow], min_points: usize) -> Result<Vec<SlopeCheck>> {
    let mut out = Vec::new();
    for op in BenchOp::ALL {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.op == op)
            .map(|r| (r.n_tokens as f64, r.median_seconds))
            .collect();
        if pts.len() < min_points.max(2) {
            continue;
        }
        let slope = loglog_slope(&pts)?;
        let band = op.slope_band();
        out.push(SlopeCheck {
            op,
            slope,
            band,
            pass: (band.0..=band.1).contains(&slope),
        });
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "op,n,d,m,repeats,median_seconds,workspace_bytes";

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.9},{}",
            r.op.name(),
            r.n_tokens,
            r.d,
            r.m,
            r.repeats,
            r.median_seconds,
            r.workspace_bytes
        )?;
    }
    Ok(())
}

pub fn render_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<10} {:>6} {:>14} {:>16}\n",
        "op", "N", "median (ms)", "workspace (KiB)"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>14.3} {:>16.1}",
            r.op.name(),
            r.n_tokens,
            r.median_seconds * 1e3,
            r.workspace_bytes as f64 / 1024.0
        );
    }
    s
}
