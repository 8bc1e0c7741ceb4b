//! Central-difference verification of the block's analytic gradients.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::message::{self, BlockGrads, BlockOutput};
use crate::ses::{self, SeSConfig};
use crate::softhg::{Activation, BlockConfig, NormMode, SoftHGParams};
use crate::tensor::Matrix;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Floor for the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;
/// Inputs are redrawn until every kink is at least this many steps away.
const KINK_MARGIN_STEPS: f64 = 10.0;
const MAX_REDRAWS: usize = 1000;

/// Central differences `(L(θ + εeᵢ) − L(θ − εeᵢ)) / 2ε` per coordinate.
pub fn finite_diff<F>(loss_fn: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let up = loss_fn(&probe);
        probe[i] = theta[i] - step;
        let down = loss_fn(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss when perturbing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub n: usize,
    pub dim: usize,
    pub hyperedges: usize,
    pub heads: usize,
    pub norm: NormMode,
    pub residual: bool,
    pub activation: Activation,
    pub offset_hidden: Option<usize>,
    pub ses: Option<SeSConfig>,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n: 5,
            dim: 4,
            hyperedges: 3,
            heads: 2,
            norm: NormMode::Enorm,
            residual: true,
            activation: Activation::Relu,
            offset_hidden: None,
            ses: None,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl GradCheckConfig {
    pub fn label(&self) -> String {
        let norm = match self.norm {
            NormMode::Enorm => "enorm",
            NormMode::Vnorm => "vnorm",
            NormMode::None => "none",
        };
        let mut s = format!(
            "{norm} residual={} act={:?}",
            if self.residual { "on" } else { "off" },
            self.activation
        )
        .to_lowercase();
        if let Some(h) = self.offset_hidden {
            s.push_str(&format!(" offset-hidden={h}"));
        }
        if let Some(c) = &self.ses {
            s.push_str(&format!(" ses={}/{}/{}", c.m_fixed, c.m_dyn, c.k));
        }
        s
    }

    fn block_config(&self) -> BlockConfig {
        BlockConfig {
            dim: self.dim,
            edge_dim: self.dim,
            out_dim: self.dim,
            hyperedges: self.hyperedges,
            heads: self.heads,
            norm: self.norm,
            activation: self.activation,
            residual: self.residual,
            offset_hidden: self.offset_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub label: String,
    pub seed: u64,
    pub tolerance: f64,
    pub tensors: Vec<TensorReport>,
    pub pass: bool,
}

impl GradReport {
    /// Tensor with the largest relative error.
    pub fn worst(&self) -> Option<&TensorReport> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck [{}] seed={} tol={:e}: {}",
            self.label,
            self.seed,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        writeln!(
            f,
            "  {:<14} {:>12} {:>12} {:>7}  status",
            "tensor", "max_rel", "max_abs", "worst"
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<14} {:>12.3e} {:>12.3e} {:>7}  {}",
                t.name,
                t.max_rel_error,
                t.max_abs_error,
                t.worst_index,
                if t.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn run_forward(x: &Matrix, params: &SoftHGParams, ses: Option<&SeSConfig>) -> Result<BlockOutput> {
    match ses {
        None => message::softhgnn_forward(x, params),
        Some(c) => message::softhgnn_forward_ses(x, params, c),
    }
}

/// `Σ x_out² − Σ base²`, summed as `Σ (x − b)(x + b)`. The constant offset
/// leaves the gradient unchanged and keeps the summands at the size of the
/// perturbation, so differencing two evaluations loses far less to rounding.
fn sum_of_squares_from(out: &BlockOutput, base: &Matrix) -> f64 {
    out.x_out
        .data()
        .iter()
        .zip(base.data())
        .map(|(&v, &b)| (v - b) * (v + b))
        .sum()
}

/// Gap between the k-th and (k+1)-th dynamic activation score.
fn selection_margin(out: &BlockOutput, cfg: &SeSConfig) -> f64 {
    if cfg.k == cfg.m_dyn {
        return f64::INFINITY;
    }
    let s = &out.cache.participation.s_raw;
    let g = ses::activation_scores(&s.col_range(cfg.m_fixed, cfg.total()).unwrap());
    let mut sorted = g.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[cfg.k - 1] - sorted[cfg.k]
}

/// Checks every parameter tensor and the input of one randomly initialized
/// block against central differences of `L = Σ x_out²`.
pub fn check_block(cfg: &GradCheckConfig, seed: u64) -> Result<GradReport> {
    check_block_with(cfg, seed, |_| {})
}

/// As [`check_block`], letting the caller alter the analytic gradients
/// before comparison.
pub fn check_block_with(
    cfg: &GradCheckConfig,
    seed: u64,
    tamper: impl Fn(&mut BlockGrads),
) -> Result<GradReport> {
    let mut block_cfg = cfg.block_config();
    if let Some(sc) = &cfg.ses {
        sc.validate()?;
        block_cfg.hyperedges = sc.total();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SoftHGParams::init(block_cfg, &mut rng)?;
    let ses_cfg = cfg.ses.as_ref();

    // Redraw the input until no kink sits within reach of the step.
    let mut x = Matrix::random_uniform(cfg.n, cfg.dim, -1.0, 1.0, &mut rng);
    let mut out = run_forward(&x, &params, ses_cfg)?;
    let margin = |out: &BlockOutput| {
        let m = message::kink_margin(&params, out);
        ses_cfg.map_or(m, |c| m.min(selection_margin(out, c)))
    };
    let mut redraws = 0;
    while margin(&out) < KINK_MARGIN_STEPS * cfg.step {
        redraws += 1;
        if redraws > MAX_REDRAWS {
            return Err(Error::Numeric(format!(
                "could not find an input away from non-differentiable points after {MAX_REDRAWS} draws"
            )));
        }
        x = Matrix::random_uniform(cfg.n, cfg.dim, -1.0, 1.0, &mut rng);
        out = run_forward(&x, &params, ses_cfg)?;
    }

    let base = out.x_out.clone();
    let d_out = out.x_out.scale(2.0);
    let mut grads = message::softhgnn_backward(&params, &out, &d_out)?;
    tamper(&mut grads);

    let mut tensors = Vec::new();
    let n_param_tensors = params.tensors().len();
    for (idx, (name, analytic)) in grads.tensors().into_iter().enumerate() {
        let (theta, numeric) = if idx < n_param_tensors {
            let theta = params.tensors()[idx].1.data().to_vec();
            let numeric = finite_diff(
                |v| {
                    let mut p = params.clone();
                    p.tensors_mut()[idx].1.data_mut().copy_from_slice(v);
                    run_forward(&x, &p, ses_cfg)
                        .map_or(f64::NAN, |o| sum_of_squares_from(&o, &base))
                },
                &theta,
                cfg.step,
            )?;
            (theta, numeric)
        } else {
            let theta = x.data().to_vec();
            let numeric = finite_diff(
                |v| {
                    let xp = Matrix::new(x.rows(), x.cols(), v.to_vec()).expect("same shape");
                    run_forward(&xp, &params, ses_cfg)
                        .map_or(f64::NAN, |o| sum_of_squares_from(&o, &base))
                },
                &theta,
                cfg.step,
            )?;
            (theta, numeric)
        };
        debug_assert_eq!(theta.len(), analytic.len());

        let mut worst = TensorReport {
            name: name.to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            pass: true,
        };
        for (i, (&a, &n)) in analytic.data().iter().zip(&numeric).enumerate() {
            let rel = relative_error(a, n);
            worst.max_abs_error = worst.max_abs_error.max((a - n).abs());
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_index = i;
            }
        }
        worst.pass = worst.max_rel_error < cfg.tolerance;
        tensors.push(worst);
    }

    let pass = tensors.iter().all(|t| t.pass);
    Ok(GradReport {
        label: cfg.label(),
        seed,
        tolerance: cfg.tolerance,
        tensors,
        pass,
    })
}

/// The standard sweep: every normalization mode with the residual on and
/// off, plus a two-layer offset network and a sparse-selection block.
pub fn standard_configs() -> Vec<GradCheckConfig> {
    let mut v = Vec::new();
    for norm in [NormMode::Enorm, NormMode::Vnorm, NormMode::None] {
        for residual in [true, false] {
            v.push(GradCheckConfig {
                norm,
                residual,
                ..GradCheckConfig::default()
            });
        }
    }
    v.push(GradCheckConfig {
        activation: Activation::Gelu,
        offset_hidden: Some(6),
        ..GradCheckConfig::default()
    });
    v.push(GradCheckConfig {
        n: 6,
        ses: Some(SeSConfig {
            m_fixed: 2,
            m_dyn: 4,
            k: 2,
            window: 8,
        }),
        ..GradCheckConfig::default()
    });
    v
}

pub fn check_suite(seed: u64) -> Result<Vec<GradReport>> {
    standard_configs()
        .iter()
        .map(|cfg| check_block(cfg, seed))
        .collect()
}
