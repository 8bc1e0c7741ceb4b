//! Vertex → hyperedge → vertex message passing, the fused block forward, and
//! its hand-derived backward pass.
//!
//! The backward pass walks the cached forward intermediates in reverse:
//! output activation, dissemination, hyperedge activation, aggregation,
//! normalization, column selection, head-averaged scores, pre-projection,
//! prototype offsets, and finally mean/max pooling. Gradients flow through
//! the dynamic prototypes as well as through `X` directly.

use crate::error::{Error, Result};
use crate::ses::{self, SeSConfig};
use crate::softhg::{
    self, global_context_with_argmax, offset_forward, scores_from_projection, Activation, NormMode,
    OffsetNet, Participation, SoftHGParams,
};
use crate::tensor::Matrix;

/// `σ((Aᵀ X) W_eᵀ)`, M × D'.
pub fn aggregate_v_to_e(a: &Matrix, x: &Matrix, w_e: &Matrix, act: Activation) -> Result<Matrix> {
    let f_e = a.matmul_tn(x)?;
    let z = f_e.matmul_nt(w_e)?;
    Ok(act.apply_matrix(&z))
}

/// `σ((A F'_e) W_nᵀ)`, N × D''.
pub fn disseminate_e_to_v(
    a: &Matrix,
    f_e: &Matrix,
    w_n: &Matrix,
    act: Activation,
) -> Result<Matrix> {
    let x_tilde = a.matmul(f_e)?;
    let z = x_tilde.matmul_nt(w_n)?;
    Ok(act.apply_matrix(&z))
}

/// Intermediates retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Matrix,
    pub f_global: Vec<f64>,
    /// Row supplying each column maximum of `x`.
    pub argmax: Vec<usize>,
    /// Pre- and post-activation hidden layer of a two-layer offset network.
    pub phi_hidden: Option<(Matrix, Matrix)>,
    /// Dynamic prototypes, M × D.
    pub p: Matrix,
    pub x_proj: Matrix,
    pub participation: Participation,
    /// `Aᵀ X`
    pub f_e: Matrix,
    /// `F_e W_eᵀ`
    pub z_e: Matrix,
    /// `σ(z_e)`
    pub f_e_act: Matrix,
    /// `A F'_e`
    pub x_tilde: Matrix,
    /// `X̃ W_nᵀ`
    pub z_n: Matrix,
    /// `σ(z_n)`, the block output before any residual.
    pub x_msg: Matrix,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub x_out: Matrix,
    pub cache: ForwardCache,
    /// Dynamic hyperedges kept by sparse selection, if it was used.
    pub selection: Option<Vec<usize>>,
}

impl BlockOutput {
    pub fn participation(&self) -> &Participation {
        &self.cache.participation
    }

    /// Bytes of every intermediate matrix and vector the forward pass built,
    /// including the output.
    pub fn workspace_bytes(&self) -> usize {
        let c = &self.cache;
        let f64s = std::mem::size_of::<f64>();
        let mut bytes = c.f_global.len() * f64s
            + c.p.byte_size()
            // the flat offset φ(f) is materialized before it is reshaped
            + c.p.byte_size()
            + c.x_proj.byte_size()
            + c.participation.s_raw.byte_size()
            + c.participation.a.byte_size()
            + c.f_e.byte_size()
            + c.z_e.byte_size()
            + c.f_e_act.byte_size()
            + c.x_tilde.byte_size()
            + c.z_n.byte_size()
            + c.x_msg.byte_size();
        if let Some((pre, act)) = &c.phi_hidden {
            bytes += pre.byte_size() + act.byte_size();
        }
        bytes + self.x_out.byte_size()
    }
}

/// Gradients with the same layout as [`SoftHGParams`], plus the input.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub params: SoftHGParams,
    pub x: Matrix,
}

impl BlockGrads {
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = self.params.tensors();
        v.push(("x", &self.x));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = self.params.tensors_mut();
        v.push(("x", &mut self.x));
        v
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, g) in self.tensors_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

/// Full block forward with every prototype active.
pub fn softhgnn_forward(x: &Matrix, params: &SoftHGParams) -> Result<BlockOutput> {
    forward_impl(x, params, None)
}

/// Block forward with sparse selection of the dynamic prototypes. The
/// participation over the kept columns is always column-normalized.
pub fn softhgnn_forward_ses(
    x: &Matrix,
    params: &SoftHGParams,
    cfg: &SeSConfig,
) -> Result<BlockOutput> {
    forward_impl(x, params, Some(cfg))
}

fn forward_impl(
    x: &Matrix,
    params: &SoftHGParams,
    ses_cfg: Option<&SeSConfig>,
) -> Result<BlockOutput> {
    let cfg = &params.config;
    if x.rows() == 0 {
        return Err(Error::EmptyInput("softhgnn_forward"));
    }
    if x.cols() != cfg.dim {
        return Err(Error::shape(
            "softhgnn_forward",
            "x",
            x.shape(),
            "w_pre",
            params.w_pre.shape(),
        ));
    }

    let (f_global, argmax) = global_context_with_argmax(x)?;
    let (phi_hidden, offset) = offset_forward(params, &f_global)?;
    let delta = offset.reshape(cfg.hyperedges, cfg.dim)?;
    let p = params.p0.add(&delta)?;

    let x_proj = x.matmul(&params.w_pre)?;
    let s = scores_from_projection(&x_proj, &p, cfg.heads)?;

    let (participation, selection) = match ses_cfg {
        None => (softhg::normalize(&s, cfg.norm), None),
        Some(sc) => {
            let (sel, part) = ses::select_participation(&s, sc)?;
            (part, Some(sel))
        }
    };
    let a = &participation.a;

    let f_e = a.matmul_tn(x)?;
    let z_e = f_e.matmul_nt(&params.w_e)?;
    let f_e_act = cfg.activation.apply_matrix(&z_e);
    let x_tilde = a.matmul(&f_e_act)?;
    let z_n = x_tilde.matmul_nt(&params.w_n)?;
    let x_msg = cfg.activation.apply_matrix(&z_n);
    let x_out = if cfg.residual {
        x.add(&x_msg)?
    } else {
        x_msg.clone()
    };

    Ok(BlockOutput {
        x_out,
        selection,
        cache: ForwardCache {
            x: x.clone(),
            f_global,
            argmax,
            phi_hidden,
            p,
            x_proj,
            participation,
            f_e,
            z_e,
            f_e_act,
            x_tilde,
            z_n,
            x_msg,
        },
    })
}

fn softmax_cols_backward(a: &Matrix, d_a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for j in 0..a.cols() {
        let mut inner = 0.0;
        for i in 0..a.rows() {
            inner += a[(i, j)] * d_a[(i, j)];
        }
        for i in 0..a.rows() {
            out[(i, j)] = a[(i, j)] * (d_a[(i, j)] - inner);
        }
    }
    out
}

fn softmax_rows_backward(a: &Matrix, d_a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let inner: f64 = a.row(i).iter().zip(d_a.row(i)).map(|(p, g)| p * g).sum();
        for j in 0..a.cols() {
            out[(i, j)] = a[(i, j)] * (d_a[(i, j)] - inner);
        }
    }
    out
}

/// Gradients of a scalar loss with respect to every parameter and the input,
/// given `d_out = ∂L/∂x_out`.
pub fn softhgnn_backward(
    params: &SoftHGParams,
    out: &BlockOutput,
    d_out: &Matrix,
) -> Result<BlockGrads> {
    let cfg = &params.config;
    let c = &out.cache;
    if d_out.shape() != out.x_out.shape() {
        return Err(Error::shape(
            "softhgnn_backward",
            "d_out",
            d_out.shape(),
            "x_out",
            out.x_out.shape(),
        ));
    }
    if c.x.cols() != cfg.dim || c.p.shape() != params.p0.shape() {
        return Err(Error::shape(
            "softhgnn_backward",
            "cached x",
            c.x.shape(),
            "p0",
            params.p0.shape(),
        ));
    }
    let (n, d) = c.x.shape();
    let act = cfg.activation;
    let a = &c.participation.a;

    let mut d_x = if cfg.residual {
        d_out.clone()
    } else {
        Matrix::zeros(n, d)
    };

    // dissemination
    let dz_n = act.backprop(&c.z_n, d_out)?;
    let d_w_n = dz_n.matmul_tn(&c.x_tilde)?;
    let d_x_tilde = dz_n.matmul(&params.w_n)?;
    let mut d_a = d_x_tilde.matmul_nt(&c.f_e_act)?;
    let d_fe_act = a.matmul_tn(&d_x_tilde)?;

    // aggregation
    let dz_e = act.backprop(&c.z_e, &d_fe_act)?;
    let d_w_e = dz_e.matmul_tn(&c.f_e)?;
    let d_f_e = dz_e.matmul(&params.w_e)?;
    d_a.add_assign(&c.x.matmul_nt(&d_f_e)?)?;
    d_x.add_assign(&a.matmul(&d_f_e)?)?;

    // normalization, then scatter back onto the full score matrix
    let d_s_active = match c.participation.mode {
        NormMode::Enorm => softmax_cols_backward(a, &d_a),
        NormMode::Vnorm => softmax_rows_backward(a, &d_a),
        NormMode::None => d_a,
    };
    let mut d_s = Matrix::zeros(n, cfg.hyperedges);
    for (j, &col) in c.participation.active.iter().enumerate() {
        for i in 0..n {
            d_s[(i, col)] += d_s_active[(i, j)];
        }
    }

    // scores S = X_proj Pᵀ / (h √D_head)
    let scale = 1.0 / (cfg.heads as f64 * (cfg.head_dim() as f64).sqrt());
    let d_x_proj = d_s.matmul(&c.p)?.scale(scale);
    let d_p = d_s.matmul_tn(&c.x_proj)?.scale(scale);
    let d_w_pre = c.x.matmul_tn(&d_x_proj)?;
    d_x.add_assign(&d_x_proj.matmul_nt(&params.w_pre)?)?;

    // prototypes P = P0 + reshape(φ(f_global))
    let d_p0 = d_p.clone();
    let d_offset = d_p.reshape(1, cfg.hyperedges * d)?;
    let f = Matrix::row_vector(c.f_global.clone());
    let (d_phi, d_f) = match (&params.phi, &c.phi_hidden) {
        (OffsetNet::Affine(layer), None) => {
            let g = softhg::Dense {
                w: f.matmul_tn(&d_offset)?,
                b: d_offset.clone(),
            };
            let d_f = d_offset.matmul_nt(&layer.w)?;
            (OffsetNet::Affine(g), d_f)
        }
        (OffsetNet::TwoLayer { hidden, out: layer }, Some((pre, hid))) => {
            let g_out = softhg::Dense {
                w: hid.matmul_tn(&d_offset)?,
                b: d_offset.clone(),
            };
            let d_hid = d_offset.matmul_nt(&layer.w)?;
            let d_pre = act.backprop(pre, &d_hid)?;
            let g_hidden = softhg::Dense {
                w: f.matmul_tn(&d_pre)?,
                b: d_pre.clone(),
            };
            let d_f = d_pre.matmul_nt(&hidden.w)?;
            (
                OffsetNet::TwoLayer {
                    hidden: g_hidden,
                    out: g_out,
                },
                d_f,
            )
        }
        _ => {
            return Err(Error::config(
                "cache does not match the offset network layout",
            ))
        }
    };

    // mean and max pooling
    let inv_n = 1.0 / n as f64;
    for j in 0..d {
        let g_mean = d_f[(0, j)] * inv_n;
        for i in 0..n {
            d_x[(i, j)] += g_mean;
        }
        d_x[(c.argmax[j], j)] += d_f[(0, d + j)];
    }

    Ok(BlockGrads {
        params: SoftHGParams {
            config: cfg.clone(),
            p0: d_p0,
            phi: d_phi,
            w_pre: d_w_pre,
            w_e: d_w_e,
            w_n: d_w_n,
        },
        x: d_x,
    })
}

/// Smallest distance of any kink input (ReLU pre-activation, max-pool gap)
/// from its non-differentiable point. Finite differences are only reliable
/// when this exceeds the step size.
pub fn kink_margin(params: &SoftHGParams, out: &BlockOutput) -> f64 {
    let c = &out.cache;
    let mut margin = f64::INFINITY;
    if params.config.activation == Activation::Relu {
        let mats = [
            Some(&c.z_e),
            Some(&c.z_n),
            c.phi_hidden.as_ref().map(|(pre, _)| pre),
        ];
        for m in mats.into_iter().flatten() {
            for &v in m.data() {
                margin = margin.min(v.abs());
            }
        }
    }
    let (n, d) = c.x.shape();
    for j in 0..d {
        let top = c.x[(c.argmax[j], j)];
        for i in 0..n {
            if i != c.argmax[j] {
                margin = margin.min(top - c.x[(i, j)]);
            }
        }
    }
    margin
}
