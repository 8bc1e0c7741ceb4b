//! Sparse hyperedge selection and load balancing.
//!
//! The first `m_fixed` prototypes are always active. Of the remaining
//! `m_dyn`, only the `k` with the largest summed raw score take part in
//! message passing. A rolling window of selection masks tracks how often
//! each dynamic hyperedge is picked; the squared deviation from the uniform
//! rate `k / m_dyn` is the load-balancing loss.
//!
//! The loss is reported as a statistic only. Top-k masks are piecewise
//! constant in the parameters, so it contributes no gradient.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softhg::{NormMode, Participation};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeSConfig {
    pub m_fixed: usize,
    pub m_dyn: usize,
    /// Dynamic hyperedges kept per pass.
    pub k: usize,
    /// Number of recent passes the activation probabilities are taken over.
    pub window: usize,
}

impl Default for SeSConfig {
    fn default() -> Self {
        Self {
            m_fixed: 16,
            m_dyn: 32,
            k: 16,
            window: 64,
        }
    }
}

impl SeSConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.m_dyn {
            return Err(Error::config(format!(
                "top-k must satisfy 1 <= k <= m_dyn, got k={} m_dyn={}",
                self.k, self.m_dyn
            )));
        }
        if self.window == 0 {
            return Err(Error::config("selection window must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.m_fixed + self.m_dyn
    }

    pub fn active(&self) -> usize {
        self.m_fixed + self.k
    }

    pub fn p_target(&self) -> f64 {
        self.k as f64 / self.m_dyn as f64
    }
}

/// Rolling record of which dynamic hyperedges were selected.
#[derive(Debug, Clone, PartialEq)]
pub struct SeSState {
    capacity: usize,
    masks: VecDeque<Vec<bool>>,
    p: Vec<f64>,
    passes_seen: u64,
}

impl SeSState {
    pub fn new(cfg: &SeSConfig) -> Self {
        Self {
            capacity: cfg.window,
            masks: VecDeque::with_capacity(cfg.window),
            p: vec![0.0; cfg.m_dyn],
            passes_seen: 0,
        }
    }

    pub fn reset(&mut self) {
        self.masks.clear();
        self.p.iter_mut().for_each(|v| *v = 0.0);
        self.passes_seen = 0;
    }

    /// Activation probability of each dynamic hyperedge over the window.
    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn passes_seen(&self) -> u64 {
        self.passes_seen
    }

    pub fn window_len(&self) -> usize {
        self.masks.len()
    }

    pub fn window_full(&self) -> bool {
        self.masks.len() == self.capacity
    }

    pub fn dump(&self) -> SeSStateDump {
        SeSStateDump {
            p: self.p.clone(),
            passes_seen: self.passes_seen,
            capacity: self.capacity,
            window: self
                .masks
                .iter()
                .map(|m| m.iter().map(|&b| u8::from(b)).collect())
                .collect(),
        }
    }
}

/// JSON view of [`SeSState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeSStateDump {
    pub p: Vec<f64>,
    pub passes_seen: u64,
    pub capacity: usize,
    /// Oldest mask first.
    pub window: Vec<Vec<u8>>,
}

/// Column sums of the dynamic score slice.
pub fn activation_scores(s_dyn: &Matrix) -> Vec<f64> {
    s_dyn.col_sums()
}

/// Indices of the `k` largest scores, ties toward the lower index, returned
/// in ascending order.
pub fn select_topk(g: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > g.len() {
        return Err(Error::config(format!(
            "cannot select {k} of {} dynamic hyperedges",
            g.len()
        )));
    }
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let mut sel = order[..k].to_vec();
    sel.sort_unstable();
    Ok(sel)
}

/// Column-normalized participation over the fixed columns followed by the
/// selected dynamic columns.
pub fn build_participation_ses(
    s_fixed: &Matrix,
    s_dyn: &Matrix,
    sel: &[usize],
) -> Result<Participation> {
    if s_fixed.rows() != s_dyn.rows() {
        return Err(Error::shape(
            "build_participation_ses",
            "s_fixed",
            s_fixed.shape(),
            "s_dyn",
            s_dyn.shape(),
        ));
    }
    let m_fixed = s_fixed.cols();
    let n = s_fixed.rows();
    let picked = s_dyn.select_cols(sel)?;
    let s_sel = Matrix::from_fn(n, m_fixed + sel.len(), |i, j| {
        if j < m_fixed {
            s_fixed[(i, j)]
        } else {
            picked[(i, j - m_fixed)]
        }
    });
    let s_raw = Matrix::from_fn(n, m_fixed + s_dyn.cols(), |i, j| {
        if j < m_fixed {
            s_fixed[(i, j)]
        } else {
            s_dyn[(i, j - m_fixed)]
        }
    });
    let active = (0..m_fixed)
        .chain(sel.iter().map(|&j| m_fixed + j))
        .collect();
    Ok(Participation {
        a: s_sel.softmax_cols(),
        mode: NormMode::Enorm,
        s_raw,
        active,
    })
}

/// Splits a full N × M score matrix, selects, and normalizes.
pub fn select_participation(s: &Matrix, cfg: &SeSConfig) -> Result<(Vec<usize>, Participation)> {
    cfg.validate()?;
    if s.cols() != cfg.total() {
        return Err(Error::config(format!(
            "score matrix has {} hyperedges, selection config expects {}",
            s.cols(),
            cfg.total()
        )));
    }
    let s_fixed = s.col_range(0, cfg.m_fixed)?;
    let s_dyn = s.col_range(cfg.m_fixed, cfg.total())?;
    let sel = select_topk(&activation_scores(&s_dyn), cfg.k)?;
    let part = build_participation_ses(&s_fixed, &s_dyn, &sel)?;
    Ok((sel, part))
}

/// Mean squared deviation of `p` from `k / m_dyn`.
pub fn load_balance_loss(p: &[f64], k: usize) -> f64 {
    let m_dyn = p.len();
    if m_dyn == 0 {
        return 0.0;
    }
    let target = k as f64 / m_dyn as f64;
    p.iter().map(|&pj| (pj - target).powi(2)).sum::<f64>() / m_dyn as f64
}

/// Pushes the mask for `sel`, refreshes the probabilities over the last
/// `min(passes, window)` passes, and returns the load-balancing loss.
pub fn record_and_balance(state: &mut SeSState, sel: &[usize], cfg: &SeSConfig) -> f64 {
    let mut mask = vec![false; cfg.m_dyn];
    for &j in sel {
        if j < cfg.m_dyn {
            mask[j] = true;
        }
    }
    if state.masks.len() == state.capacity {
        state.masks.pop_front();
    }
    state.masks.push_back(mask);
    state.passes_seen += 1;

    let len = state.masks.len() as f64;
    state.p.clear();
    state.p.resize(cfg.m_dyn, 0.0);
    for m in &state.masks {
        for (p, &b) in state.p.iter_mut().zip(m) {
            if b {
                *p += 1.0;
            }
        }
    }
    for p in &mut state.p {
        *p /= len;
    }
    load_balance_loss(&state.p, cfg.k)
}
