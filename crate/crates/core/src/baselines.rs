//! Comparison points: hard hypergraphs built from k-NN or ε-ball
//! neighbourhoods, the classical degree-normalized hypergraph convolution,
//! and single-head scaled dot-product self-attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::softhg::Activation;
use crate::tensor::{softmax_in_place, Matrix};

/// Binary vertex/hyperedge incidence, kept as the member list of each
/// hyperedge. [`Incidence::to_matrix`] gives the dense N × M_e view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    n_vertices: usize,
    /// Sorted vertex indices of each hyperedge.
    members: Vec<Vec<usize>>,
}

impl Incidence {
    pub fn from_members(n_vertices: usize, mut members: Vec<Vec<usize>>) -> Result<Self> {
        for (e, m) in members.iter_mut().enumerate() {
            m.sort_unstable();
            m.dedup();
            if let Some(&v) = m.iter().find(|&&v| v >= n_vertices) {
                return Err(Error::config(format!(
                    "hyperedge {e} names vertex {v}, but there are only {n_vertices}"
                )));
            }
        }
        Ok(Self {
            n_vertices,
            members,
        })
    }

    /// Reads a dense 0/1 matrix; any nonzero entry counts as membership.
    pub fn from_matrix(h: &Matrix) -> Self {
        let members = (0..h.cols())
            .map(|e| (0..h.rows()).filter(|&v| h[(v, e)] != 0.0).collect())
            .collect();
        Self {
            n_vertices: h.rows(),
            members,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, e: usize) -> &[usize] {
        &self.members[e]
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut h = Matrix::zeros(self.n_vertices, self.members.len());
        for (e, m) in self.members.iter().enumerate() {
            for &v in m {
                h[(v, e)] = 1.0;
            }
        }
        h
    }

    pub fn edge_degrees(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn vertex_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_vertices];
        for m in &self.members {
            for &v in m {
                deg[v] += 1;
            }
        }
        deg
    }

    /// Stored index count, for workspace accounting.
    pub fn stored_entries(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hyperedge `i` holds vertex `i` and its `k` nearest other vertices by
/// Euclidean distance; equal distances favour the lower vertex index.
pub fn knn_hypergraph(x: &Matrix, k: usize) -> Result<Incidence> {
    let n = x.rows();
    if k >= n {
        return Err(Error::config(format!(
            "k-NN needs k < N, got k={k} with N={n}"
        )));
    }
    let mut members = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let xi = x.row(i);
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(xi, x.row(j)), j)),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k > 0 && k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
        }
        let mut edge: Vec<usize> = cand[..k].iter().map(|&(_, j)| j).collect();
        edge.push(i);
        members.push(edge);
    }
    Incidence::from_members(n, members)
}

/// Hyperedge `i` holds vertex `i` and every vertex strictly closer than
/// `eps`.
pub fn eps_hypergraph(x: &Matrix, eps: f64) -> Result<Incidence> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::config(format!(
            "radius must be non-negative, got {eps}"
        )));
    }
    let n = x.rows();
    let eps2 = eps * eps;
    let members = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j == i || squared_distance(x.row(i), x.row(j)) < eps2)
                .collect()
        })
        .collect();
    Incidence::from_members(n, members)
}

/// `σ(D_v⁻¹ H D_e⁻¹ Hᵀ X Θ)` with unit hyperedge weights.
pub fn hgnn_conv(x: &Matrix, inc: &Incidence, theta: &Matrix, act: Activation) -> Result<Matrix> {
    if x.rows() != inc.n_vertices() {
        return Err(Error::shape(
            "hgnn_conv",
            "x",
            x.shape(),
            "incidence",
            (inc.n_vertices(), inc.n_edges()),
        ));
    }
    if x.cols() != theta.rows() {
        return Err(Error::shape(
            "hgnn_conv",
            "x",
            x.shape(),
            "theta",
            theta.shape(),
        ));
    }
    let d = x.cols();
    if let Some(e) = inc.edge_degrees().iter().position(|&deg| deg == 0) {
        return Err(Error::Degenerate(format!("hyperedge {e} is empty")));
    }
    let dv = inc.vertex_degrees();
    if let Some(v) = dv.iter().position(|&deg| deg == 0) {
        return Err(Error::Degenerate(format!(
            "vertex {v} belongs to no hyperedge"
        )));
    }

    // D_e⁻¹ Hᵀ X
    let mut edge_feat = Matrix::zeros(inc.n_edges(), d);
    for e in 0..inc.n_edges() {
        let m = inc.members(e);
        let inv = 1.0 / m.len() as f64;
        let row = edge_feat.row_mut(e);
        for &v in m {
            for (r, &xv) in row.iter_mut().zip(x.row(v)) {
                *r += xv;
            }
        }
        row.iter_mut().for_each(|r| *r *= inv);
    }
    // D_v⁻¹ H (·)
    let mut vert = Matrix::zeros(x.rows(), d);
    for e in 0..inc.n_edges() {
        for &v in inc.members(e) {
            let (src, dst) = (edge_feat.row(e), vert.row_mut(v));
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    for (v, &deg) in dv.iter().enumerate() {
        let inv = 1.0 / deg as f64;
        vert.row_mut(v).iter_mut().for_each(|o| *o *= inv);
    }
    Ok(act.apply_matrix(&vert.matmul(theta)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttnParams {
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let b = 1.0 / (d as f64).sqrt();
        Self {
            w_q: Matrix::random_uniform(d, d, -b, b, rng),
            w_k: Matrix::random_uniform(d, d, -b, b, rng),
            w_v: Matrix::random_uniform(d, d, -b, b, rng),
        }
    }
}

/// Single-head `softmax((X W_q)(X W_k)ᵀ / √D) (X W_v)`, materializing the
/// full N × N attention matrix.
pub fn self_attention(x: &Matrix, params: &AttnParams) -> Result<Matrix> {
    let d = x.cols();
    for (name, w) in [
        ("w_q", &params.w_q),
        ("w_k", &params.w_k),
        ("w_v", &params.w_v),
    ] {
        if w.rows() != d {
            return Err(Error::shape(
                "self_attention",
                "x",
                x.shape(),
                name,
                w.shape(),
            ));
        }
    }
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let mut scores = q.matmul_nt(&k)?;
    let inv = 1.0 / (params.w_k.cols() as f64).sqrt();
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        row.iter_mut().for_each(|s| *s *= inv);
        softmax_in_place(row);
    }
    scores.matmul(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> Matrix {
        Matrix::new(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn knn_on_a_line() {
        let inc = knn_hypergraph(&line(&[0.0, 1.0, 10.0]), 1).unwrap();
        assert_eq!(inc.members(0), &[0, 1]);
        assert_eq!(inc.members(1), &[0, 1]);
        assert_eq!(inc.members(2), &[1, 2]);
    }

    #[test]
    fn knn_full_neighbourhood() {
        let inc = knn_hypergraph(&line(&[3.0, -1.0, 4.0, 1.5]), 3).unwrap();
        for e in 0..4 {
            assert_eq!(inc.members(e), &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn knn_ties_resolve_to_lower_index() {
        // vertices 1, 2 and 3 are all at distance 1 from vertex 0
        let x = line(&[0.0, 1.0, -1.0, 1.0]);
        let inc = knn_hypergraph(&x, 2).unwrap();
        assert_eq!(inc.members(0), &[0, 1, 2]);
        assert_eq!(inc, knn_hypergraph(&x, 2).unwrap());
        assert!(inc.edge_degrees().iter().all(|&d| d == 3));
    }

    #[test]
    fn knn_rejects_k_at_least_n() {
        assert!(matches!(
            knn_hypergraph(&line(&[0.0, 1.0]), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn eps_ball_cases() {
        let x = line(&[0.0, 1.0, 10.0]);
        let inc = eps_hypergraph(&x, 1.5).unwrap();
        assert_eq!(inc.members(0), &[0, 1]);
        assert_eq!(inc.members(1), &[0, 1]);
        assert_eq!(inc.members(2), &[2]);

        let single = eps_hypergraph(&x, 0.0).unwrap();
        assert!((0..3).all(|e| single.members(e) == [e]));

        let all = eps_hypergraph(&x, f64::MAX).unwrap();
        assert!((0..3).all(|e| all.members(e) == [0, 1, 2]));

        assert!(eps_hypergraph(&x, -1.0).is_err());
    }

    #[test]
    fn incidence_matrix_view_has_self_loops() {
        let inc = knn_hypergraph(&line(&[0.0, 1.0, 10.0]), 1).unwrap();
        let h = inc.to_matrix();
        for v in 0..3 {
            assert_eq!(h[(v, v)], 1.0);
        }
        assert_eq!(Incidence::from_matrix(&h), inc);
    }

    #[test]
    fn hgnn_single_shared_hyperedge() {
        let inc = Incidence::from_members(2, vec![vec![0, 1]]).unwrap();
        let x = line(&[2.0, 4.0]);
        let out = hgnn_conv(&x, &inc, &Matrix::identity(1), Activation::Identity).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);
    }

    #[test]
    fn hgnn_identity_structure_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::random_uniform(5, 3, -1.0, 1.0, &mut rng);
        let inc = Incidence::from_matrix(&Matrix::identity(5));
        let out = hgnn_conv(&x, &inc, &Matrix::identity(3), Activation::Identity).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn hgnn_reports_degenerate_structure() {
        let x = line(&[1.0, 2.0]);
        let empty_edge = Incidence::from_members(2, vec![vec![0, 1], vec![]]).unwrap();
        let err =
            hgnn_conv(&x, &empty_edge, &Matrix::identity(1), Activation::Identity).unwrap_err();
        assert!(err.to_string().contains("hyperedge 1"));
        let lonely = Incidence::from_members(2, vec![vec![0]]).unwrap();
        let err = hgnn_conv(&x, &lonely, &Matrix::identity(1), Activation::Identity).unwrap_err();
        assert!(err.to_string().contains("vertex 1"));
    }

    #[test]
    fn attention_single_token_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttnParams::init(3, &mut rng);
        let x = Matrix::random_uniform(1, 3, -1.0, 1.0, &mut rng);
        let out = self_attention(&x, &p).unwrap();
        assert!(out.max_abs_diff(&x.matmul(&p.w_v).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn attention_with_zero_queries_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = AttnParams::init(3, &mut rng);
        p.w_q = Matrix::zeros(3, 3);
        p.w_k = Matrix::zeros(3, 3);
        let x = Matrix::random_uniform(4, 3, -1.0, 1.0, &mut rng);
        let out = self_attention(&x, &p).unwrap();
        let v = x.matmul(&p.w_v).unwrap();
        let mean: Vec<f64> = v.col_sums().iter().map(|s| s / 4.0).collect();
        for i in 0..4 {
            for (a, b) in out.row(i).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
