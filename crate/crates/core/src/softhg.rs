//! Soft hyperedge generation.
//!
//! A sample `X` (N vertices × D features) is pooled into a global context,
//! which an offset network turns into per-sample shifts of the learned
//! prototypes `P0`. Vertices are projected, split into heads, and scored
//! against the shifted prototypes; the normalized scores form the
//! participation matrix `A`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Softmax over vertices for each hyperedge (columns sum to one).
    #[default]
    Enorm,
    /// Softmax over hyperedges for each vertex (rows sum to one).
    Vnorm,
    /// Raw scores, for ablations.
    None,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "enorm" => Ok(NormMode::Enorm),
            "vnorm" => Ok(NormMode::Vnorm),
            "none" => Ok(NormMode::None),
            other => Err(Error::config(format!(
                "unknown norm mode `{other}` (expected enorm, vnorm or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`; ReLU'(0) is taken as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_K * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        match self {
            Activation::Identity => m.clone(),
            _ => m.map(|v| self.apply(v)),
        }
    }

    /// `upstream ⊙ σ'(pre)`
    pub fn backprop(self, pre: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        match self {
            Activation::Identity => Ok(upstream.clone()),
            _ => pre.zip_map(upstream, "activation backprop", |z, g| {
                g * self.derivative(z)
            }),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!(
                "unknown activation `{other}` (expected relu, gelu or identity)"
            ))),
        }
    }
}

/// Hyperparameters of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockConfig {
    /// Input feature width D.
    pub dim: usize,
    /// Hyperedge feature width D'.
    pub edge_dim: usize,
    /// Output feature width D''.
    pub out_dim: usize,
    /// Number of prototypes M (fixed + dynamic when sparse selection is used).
    pub hyperedges: usize,
    pub heads: usize,
    pub norm: NormMode,
    pub activation: Activation,
    pub residual: bool,
    /// Hidden width of a two-layer offset network; `None` keeps it affine.
    pub offset_hidden: Option<usize>,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            edge_dim: 64,
            out_dim: 64,
            hyperedges: 8,
            heads: 8,
            norm: NormMode::Enorm,
            activation: Activation::Relu,
            residual: true,
            offset_hidden: None,
        }
    }
}

impl BlockConfig {
    /// Square block (D = D' = D'') with the default head and hyperedge counts.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            edge_dim: dim,
            out_dim: dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.edge_dim == 0 || self.out_dim == 0 || self.hyperedges == 0 {
            return Err(Error::config(
                "block widths and hyperedge count must be positive",
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "heads ({}) must divide the feature width ({})",
                self.heads, self.dim
            )));
        }
        if self.residual && self.out_dim != self.dim {
            return Err(Error::config(format!(
                "residual connection needs out_dim == dim, got {} and {}",
                self.out_dim, self.dim
            )));
        }
        if self.offset_hidden == Some(0) {
            return Err(Error::config("offset hidden width must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Affine layer `y = x · w + b` acting on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// in × out
    pub w: Matrix,
    /// 1 × out
    pub b: Matrix,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Matrix::random_uniform(fan_in, fan_out, -bound, bound, rng),
            b: Matrix::random_uniform(1, fan_out, -bound, bound, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.w)?;
        if self.b.cols() != y.cols() {
            return Err(Error::shape(
                "dense bias",
                "output",
                y.shape(),
                "bias",
                self.b.shape(),
            ));
        }
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        Ok(y)
    }
}

/// The network mapping the 2D-wide global context to M·D prototype offsets.
#[derive(Debug, Clone, PartialEq)]
pub enum OffsetNet {
    Affine(Dense),
    /// `out(σ(hidden(f)))`, σ being the block activation.
    TwoLayer {
        hidden: Dense,
        out: Dense,
    },
}

impl OffsetNet {
    pub fn output(&self) -> &Dense {
        match self {
            OffsetNet::Affine(d) => d,
            OffsetNet::TwoLayer { out, .. } => out,
        }
    }
}

/// Learnable parameters of one block together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftHGParams {
    pub config: BlockConfig,
    /// M × D
    pub p0: Matrix,
    pub phi: OffsetNet,
    /// D × D
    pub w_pre: Matrix,
    /// D' × D
    pub w_e: Matrix,
    /// D'' × D'
    pub w_n: Matrix,
}

/// Names of the parameter tensors, in the order `tensors()` yields them.
pub const AFFINE_TENSOR_NAMES: [&str; 6] = ["p0", "w_phi", "b_phi", "w_pre", "w_e", "w_n"];

impl SoftHGParams {
    /// Uniform initialization in ±1/√fan_in for every tensor.
    pub fn init<R: Rng + ?Sized>(config: BlockConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let m = config.hyperedges;
        let uniform = |rows, cols, fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Matrix::random_uniform(rows, cols, -bound, bound, rng)
        };
        let p0 = uniform(m, d, d, rng);
        let phi = match config.offset_hidden {
            None => OffsetNet::Affine(Dense::init(2 * d, m * d, rng)),
            Some(h) => OffsetNet::TwoLayer {
                hidden: Dense::init(2 * d, h, rng),
                out: Dense::init(h, m * d, rng),
            },
        };
        let w_pre = uniform(d, d, d, rng);
        let w_e = uniform(config.edge_dim, d, d, rng);
        let w_n = uniform(config.out_dim, config.edge_dim, config.edge_dim, rng);
        Ok(Self {
            config,
            p0,
            phi,
            w_pre,
            w_e,
            w_n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.dim;
        let md = c.hyperedges * d;
        let expect = |name: &'static str, m: &Matrix, shape: (usize, usize)| {
            if m.shape() != shape {
                Err(Error::shape(
                    "parameter check",
                    name,
                    m.shape(),
                    "expected",
                    shape,
                ))
            } else if !m.is_finite() {
                Err(Error::Numeric(format!(
                    "parameter {name} has non-finite entries"
                )))
            } else {
                Ok(())
            }
        };
        expect("p0", &self.p0, (c.hyperedges, d))?;
        match &self.phi {
            OffsetNet::Affine(out) => {
                if c.offset_hidden.is_some() {
                    return Err(Error::config("config asks for a two-layer offset network"));
                }
                expect("w_phi", &out.w, (2 * d, md))?;
                expect("b_phi", &out.b, (1, md))?;
            }
            OffsetNet::TwoLayer { hidden, out } => {
                let h = c
                    .offset_hidden
                    .ok_or_else(|| Error::config("config asks for an affine offset network"))?;
                expect("w_phi_hidden", &hidden.w, (2 * d, h))?;
                expect("b_phi_hidden", &hidden.b, (1, h))?;
                expect("w_phi", &out.w, (h, md))?;
                expect("b_phi", &out.b, (1, md))?;
            }
        }
        expect("w_pre", &self.w_pre, (d, d))?;
        expect("w_e", &self.w_e, (c.edge_dim, d))?;
        expect("w_n", &self.w_n, (c.out_dim, c.edge_dim))?;
        Ok(())
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![("p0", &self.p0)];
        match &self.phi {
            OffsetNet::Affine(out) => {
                v.push(("w_phi", &out.w));
                v.push(("b_phi", &out.b));
            }
            OffsetNet::TwoLayer { hidden, out } => {
                v.push(("w_phi_hidden", &hidden.w));
                v.push(("b_phi_hidden", &hidden.b));
                v.push(("w_phi", &out.w));
                v.push(("b_phi", &out.b));
            }
        }
        v.push(("w_pre", &self.w_pre));
        v.push(("w_e", &self.w_e));
        v.push(("w_n", &self.w_n));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = vec![("p0", &mut self.p0)];
        match &mut self.phi {
            OffsetNet::Affine(out) => {
                v.push(("w_phi", &mut out.w));
                v.push(("b_phi", &mut out.b));
            }
            OffsetNet::TwoLayer { hidden, out } => {
                v.push(("w_phi_hidden", &mut hidden.w));
                v.push(("b_phi_hidden", &mut hidden.b));
                v.push(("w_phi", &mut out.w));
                v.push(("b_phi", &mut out.b));
            }
        }
        v.push(("w_pre", &mut self.w_pre));
        v.push(("w_e", &mut self.w_e));
        v.push(("w_n", &mut self.w_n));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Parameter tensors as a flat name → tensor map.
    pub fn to_tensor_map(&self) -> TensorMap {
        self.tensors()
            .into_iter()
            .map(|(name, m)| (name.to_string(), TensorRecord::from(m)))
            .collect()
    }

    /// Rebuilds parameters for `config` from a tensor map; every tensor the
    /// configuration needs must be present with the right shape.
    pub fn from_tensor_map(config: BlockConfig, map: &TensorMap) -> Result<Self> {
        config.validate()?;
        let get = |name: &str| -> Result<Matrix> {
            map.get(name)
                .ok_or_else(|| Error::config(format!("parameter file is missing `{name}`")))?
                .to_matrix()
        };
        let phi = match config.offset_hidden {
            None => OffsetNet::Affine(Dense {
                w: get("w_phi")?,
                b: get("b_phi")?,
            }),
            Some(_) => OffsetNet::TwoLayer {
                hidden: Dense {
                    w: get("w_phi_hidden")?,
                    b: get("b_phi_hidden")?,
                },
                out: Dense {
                    w: get("w_phi")?,
                    b: get("b_phi")?,
                },
            },
        };
        let params = Self {
            p0: get("p0")?,
            phi,
            w_pre: get("w_pre")?,
            w_e: get("w_e")?,
            w_n: get("w_n")?,
            config,
        };
        params.validate()?;
        Ok(params)
    }
}

/// One serialized tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl From<&Matrix> for TensorRecord {
    fn from(m: &Matrix) -> Self {
        Self {
            shape: [m.rows(), m.cols()],
            values: m.data().to_vec(),
        }
    }
}

impl TensorRecord {
    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.shape[0], self.shape[1], self.values.clone())
    }
}

/// Flat JSON object of named tensors; ordered so files are byte-stable.
pub type TensorMap = BTreeMap<String, TensorRecord>;

pub fn save_tensor_map(path: &Path, map: &TensorMap) -> Result<()> {
    let text = serde_json::to_string_pretty(map)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_tensor_map(path: &Path) -> Result<TensorMap> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Continuous vertex-to-hyperedge assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Participation {
    /// N × active hyperedges
    pub a: Matrix,
    pub mode: NormMode,
    /// N × M scores before normalization and selection.
    pub s_raw: Matrix,
    /// Columns of `s_raw` that `a` covers, in order.
    pub active: Vec<usize>,
}

/// Column means followed by column maxima, length 2D.
pub fn global_context(x: &Matrix) -> Result<Vec<f64>> {
    global_context_with_argmax(x).map(|(f, _)| f)
}

/// Like [`global_context`], also returning the row that supplied each
/// column maximum (lowest row index on ties).
pub fn global_context_with_argmax(x: &Matrix) -> Result<(Vec<f64>, Vec<usize>)> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::EmptyInput("global_context"));
    }
    let mut mean = vec![0.0; d];
    let mut max = x.row(0).to_vec();
    let mut argmax = vec![0usize; d];
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            mean[j] += v;
            if v > max[j] {
                max[j] = v;
                argmax[j] = i;
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean.extend(max);
    Ok((mean, argmax))
}

/// Hidden activations (two-layer only) and the flat M·D offset.
pub(crate) fn offset_forward(
    params: &SoftHGParams,
    f_global: &[f64],
) -> Result<(Option<(Matrix, Matrix)>, Matrix)> {
    let d = params.config.dim;
    if f_global.len() != 2 * d {
        return Err(Error::shape(
            "dynamic_prototypes",
            "f_global",
            (1, f_global.len()),
            "expected",
            (1, 2 * d),
        ));
    }
    let f = Matrix::row_vector(f_global.to_vec());
    match &params.phi {
        OffsetNet::Affine(out) => Ok((None, out.forward(&f)?)),
        OffsetNet::TwoLayer { hidden, out } => {
            let pre = hidden.forward(&f)?;
            let act = params.config.activation.apply_matrix(&pre);
            let offset = out.forward(&act)?;
            Ok((Some((pre, act)), offset))
        }
    }
}

/// `P = P0 + reshape(φ(f_global))`, hyperedge-major reshape.
pub fn dynamic_prototypes(params: &SoftHGParams, f_global: &[f64]) -> Result<Matrix> {
    let (_, offset) = offset_forward(params, f_global)?;
    let delta = offset.reshape(params.config.hyperedges, params.config.dim)?;
    params.p0.add(&delta)
}

/// Scores from already projected vertices. Summing per-head dot products
/// over all heads gives the full dot product, so one product scaled by
/// `1 / (h · √D_head)` is the head average.
pub(crate) fn scores_from_projection(x_proj: &Matrix, p: &Matrix, heads: usize) -> Result<Matrix> {
    let d = x_proj.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "heads ({heads}) must divide D ({d})"
        )));
    }
    let head_dim = (d / heads) as f64;
    let s = x_proj.matmul_nt(p)?;
    Ok(s.scale(1.0 / (heads as f64 * head_dim.sqrt())))
}

/// Head-averaged scaled dot-product scores between projected vertices and
/// prototypes, N × M.
pub fn participation_scores(x: &Matrix, p: &Matrix, params: &SoftHGParams) -> Result<Matrix> {
    if x.cols() != params.config.dim {
        return Err(Error::shape(
            "participation_scores",
            "x",
            x.shape(),
            "w_pre",
            params.w_pre.shape(),
        ));
    }
    let x_proj = x.matmul(&params.w_pre)?;
    scores_from_projection(&x_proj, p, params.config.heads)
}

pub fn normalize(s: &Matrix, mode: NormMode) -> Participation {
    let a = match mode {
        NormMode::Enorm => s.softmax_cols(),
        NormMode::Vnorm => s.softmax_rows(),
        NormMode::None => s.clone(),
    };
    Participation {
        a,
        mode,
        s_raw: s.clone(),
        active: (0..s.cols()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(heads: usize, d: usize, m: usize) -> BlockConfig {
        BlockConfig {
            dim: d,
            edge_dim: d,
            out_dim: d,
            hyperedges: m,
            heads,
            ..BlockConfig::default()
        }
    }

    #[test]
    fn global_context_pools_mean_then_max() {
        let x = Matrix::from_rows(&[[1.0, 3.0], [5.0, 7.0]]).unwrap();
        assert_eq!(global_context(&x).unwrap(), vec![3.0, 5.0, 5.0, 7.0]);

        let one = Matrix::from_rows(&[[2.5, -1.0, 4.0]]).unwrap();
        assert_eq!(
            global_context(&one).unwrap(),
            vec![2.5, -1.0, 4.0, 2.5, -1.0, 4.0]
        );

        let c = Matrix::filled(4, 3, 1.5);
        assert!(global_context(&c).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn global_context_rejects_empty() {
        assert!(matches!(
            global_context(&Matrix::zeros(0, 3)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn argmax_ties_go_to_lowest_row() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]]).unwrap();
        let (_, arg) = global_context_with_argmax(&x).unwrap();
        assert_eq!(arg, vec![0, 0]);
    }

    #[test]
    fn zero_offset_network_keeps_p0() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = SoftHGParams::init(tiny(2, 4, 3), &mut rng).unwrap();
        if let OffsetNet::Affine(d) = &mut params.phi {
            d.w = Matrix::zeros(8, 12);
            d.b = Matrix::zeros(1, 12);
        }
        let f = vec![0.3; 8];
        assert_eq!(dynamic_prototypes(&params, &f).unwrap(), params.p0);
    }

    #[test]
    fn pure_offset_is_hyperedge_major_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = SoftHGParams::init(tiny(1, 2, 3), &mut rng).unwrap();
        params.p0 = Matrix::zeros(3, 2);
        let v: Vec<f64> = (0..6).map(|i| i as f64).collect();
        if let OffsetNet::Affine(d) = &mut params.phi {
            d.w = Matrix::zeros(4, 6);
            d.b = Matrix::row_vector(v);
        }
        let p = dynamic_prototypes(&params, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0]);
    }

    #[test]
    fn prototypes_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, m) = (3, 2);
        let params = SoftHGParams::init(tiny(1, d, m), &mut rng).unwrap();
        let f: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = dynamic_prototypes(&params, &f).unwrap();
        let OffsetNet::Affine(phi) = &params.phi else {
            unreachable!()
        };
        for e in 0..m {
            for c in 0..d {
                let out = e * d + c;
                let mut v = phi.b[(0, out)];
                for (k, fk) in f.iter().enumerate() {
                    v += phi.w[(k, out)] * fk;
                }
                let want = params.p0[(e, c)] + v;
                assert!((p[(e, c)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dynamic_prototypes_rejects_wrong_context_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = SoftHGParams::init(tiny(1, 2, 2), &mut rng).unwrap();
        assert!(matches!(
            dynamic_prototypes(&params, &[1.0, 2.0, 3.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn single_head_score_is_scaled_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = SoftHGParams::init(tiny(1, 2, 1), &mut rng).unwrap();
        params.w_pre = Matrix::identity(2);
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let s = participation_scores(&x, &p, &params).unwrap();
        assert!((s[(0, 0)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        let zero = participation_scores(&Matrix::zeros(3, 2), &p, &params).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_heads_average_half_dimension_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = SoftHGParams::init(tiny(2, 4, 3), &mut rng).unwrap();
        let x = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let p = Matrix::random_uniform(3, 4, -1.0, 1.0, &mut rng);
        let s = participation_scores(&x, &p, &params).unwrap();
        let xp = x.matmul(&params.w_pre).unwrap();
        for i in 0..5 {
            for m in 0..3 {
                let mut acc = 0.0;
                for head in 0..2 {
                    let mut dot = 0.0;
                    for c in head * 2..head * 2 + 2 {
                        dot += xp[(i, c)] * p[(m, c)];
                    }
                    acc += dot / 2f64.sqrt();
                }
                assert!((s[(i, m)] - acc / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = tiny(3, 4, 2);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_modes() {
        let s = Matrix::zeros(3, 2);
        let e = normalize(&s, NormMode::Enorm);
        assert!(e.a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let v = normalize(&s, NormMode::Vnorm);
        assert!(v.a.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let n = normalize(&s, NormMode::None);
        assert_eq!(n.a, s);
        assert_eq!(n.s_raw, s);
        assert_eq!(NormMode::default(), NormMode::Enorm);
    }

    #[test]
    fn scores_are_vertex_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let params = SoftHGParams::init(tiny(2, 4, 3), &mut rng).unwrap();
        let x = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = x.permute_rows(&perm).unwrap();
        let p = dynamic_prototypes(&params, &global_context(&x).unwrap()).unwrap();
        let p2 = dynamic_prototypes(&params, &global_context(&xp).unwrap()).unwrap();
        assert!(p.max_abs_diff(&p2).unwrap() < 1e-14);
        let s = participation_scores(&x, &p, &params).unwrap();
        let s2 = participation_scores(&xp, &p2, &params).unwrap();
        assert!(s.permute_rows(&perm).unwrap().max_abs_diff(&s2).unwrap() < 1e-14);
        for mode in [NormMode::Enorm, NormMode::Vnorm] {
            let a = normalize(&s, mode).a.permute_rows(&perm).unwrap();
            let a2 = normalize(&s2, mode).a;
            assert!(a.max_abs_diff(&a2).unwrap() < 1e-14);
        }
    }

    #[test]
    fn tensor_map_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = BlockConfig {
            offset_hidden: Some(3),
            ..tiny(2, 4, 3)
        };
        let params = SoftHGParams::init(cfg.clone(), &mut rng).unwrap();
        let map = params.to_tensor_map();
        assert_eq!(map["w_phi_hidden"].shape, [8, 3]);
        let back = SoftHGParams::from_tensor_map(cfg, &map).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn tensor_map_missing_entry_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = tiny(1, 2, 2);
        let params = SoftHGParams::init(cfg.clone(), &mut rng).unwrap();
        let mut map = params.to_tensor_map();
        map.remove("w_e");
        assert!(matches!(
            SoftHGParams::from_tensor_map(cfg, &map),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let num = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((num - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }
}
