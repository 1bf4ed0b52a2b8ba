//! Kernel manifold alignment of two labeled domains into a shared latent
//! space.
//!
//! The cost trades off within-domain geometry (GEO), same-label proximity
//! (SIM) and different-label separation (DIS). With a block-diagonal RBF
//! kernel `K = diag(K1, K2)` and unnormalized graph Laplacians, the
//! projection coefficients solve
//!
//! ```text
//! K (mu L_geo + (1 - mu) L_sim) K a = lambda K L_dis K a
//! ```
//!
//! and the directions with the smallest eigenvalues are kept, each scaled by
//! `1 / sqrt(lambda)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correspond::KemaInputs;
use crate::error::{Error, Result};
use crate::linalg::{solve_generalized_eig_with, EigenMethod};

/// Eigenvalues below this magnitude belong to near-null directions.
pub const NULL_EIGENVALUE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KemaConfig {
    /// Weight of GEO against SIM, in [0, 1].
    pub mu: f64,
    /// Neighbors per sample in the within-domain geometry graph.
    pub knn: usize,
    /// Latent dimension; `None` means `min(20, samples - classes)`.
    pub latent_dim: Option<usize>,
    /// Ridge added to both sides, relative to `trace(K L_dis K) / n`.
    pub eig_regularization: f64,
    /// Per-domain RBF bandwidths; `None` uses the median pairwise distance.
    pub bandwidths: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for KemaConfig {
    fn default() -> Self {
        KemaConfig {
            mu: 0.5,
            knn: 5,
            latent_dim: None,
            eig_regularization: 1e-6,
            bandwidths: None,
            seed: 0,
        }
    }
}

impl KemaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!("mu = {} outside [0, 1]", self.mu)));
        }
        if self.knn == 0 {
            return Err(Error::InvalidConfig("knn must be at least 1".into()));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        if !(self.eig_regularization >= 0.0) {
            return Err(Error::InvalidConfig("eigen regularization must be non-negative".into()));
        }
        if let Some(bw) = self.bandwidths {
            for s in bw {
                if !(s > 0.0) {
                    return Err(Error::NonPositiveBandwidth(s));
                }
            }
        }
        Ok(())
    }
}

/// `K_ij = exp(-||x_i - y_j||^2 / (2 sigma^2))`.
pub fn rbf_kernel_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveBandwidth(sigma));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::dims("kernel feature width", x.ncols(), y.ncols()));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    Ok(DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        let d2: f64 = x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        (-gamma * d2).exp()
    }))
}

fn sq_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Median pairwise Euclidean distance, or 1.0 when it is zero or undefined.
pub fn median_bandwidth(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let d2 = sq_distances(x);
    let mut dists: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|ij| d2[ij].sqrt()).collect();
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Unnormalized graph Laplacians over all `n1 + n2` samples (domain 1
/// first).
#[derive(Debug, Clone)]
pub struct AlignmentLaplacians {
    pub geo: DMatrix<f64>,
    pub sim: DMatrix<f64>,
    pub dis: DMatrix<f64>,
}

/// `L = D - W` with `D` the degree diagonal.
pub fn laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        l[(i, i)] += w.row(i).sum();
    }
    l
}

/// Symmetric binary k-nearest-neighbor adjacency: `i ~ j` when either is
/// among the other's `k` nearest (ties broken by index).
pub fn knn_adjacency(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let d2 = sq_distances(x);
    let k = k.min(n.saturating_sub(1));
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in &others[..k] {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
    }
    w
}

fn class_indices(inputs: &KemaInputs) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let labels: Vec<usize> = inputs
        .y1
        .iter()
        .chain(&inputs.y2)
        .map(|y| {
            let next = ids.len();
            *ids.entry(y.as_str()).or_insert(next)
        })
        .collect();
    (labels, ids.len())
}

fn check_inputs(inputs: &KemaInputs) -> Result<()> {
    if inputs.x1.nrows() == 0 {
        return Err(Error::EmptyDomain(1));
    }
    if inputs.x2.nrows() == 0 {
        return Err(Error::EmptyDomain(2));
    }
    if inputs.x1.nrows() != inputs.y1.len() {
        return Err(Error::dims("domain 1 labels", inputs.x1.nrows(), inputs.y1.len()));
    }
    if inputs.x2.nrows() != inputs.y2.len() {
        return Err(Error::dims("domain 2 labels", inputs.x2.nrows(), inputs.y2.len()));
    }
    let (_, classes) = class_indices(inputs);
    if classes < 2 {
        return Err(Error::DegenerateLabels(
            "a single class leaves the dissimilarity graph empty".into(),
        ));
    }
    Ok(())
}

pub fn build_alignment_laplacians(inputs: &KemaInputs, config: &KemaConfig) -> Result<AlignmentLaplacians> {
    config.validate()?;
    check_inputs(inputs)?;
    let n1 = inputs.x1.nrows();
    let n2 = inputs.x2.nrows();
    let n = n1 + n2;

    let mut w_geo = DMatrix::zeros(n, n);
    w_geo.view_mut((0, 0), (n1, n1)).copy_from(&knn_adjacency(&inputs.x1, config.knn));
    w_geo.view_mut((n1, n1), (n2, n2)).copy_from(&knn_adjacency(&inputs.x2, config.knn));

    let (labels, _) = class_indices(inputs);
    let w_sim = DMatrix::from_fn(n, n, |i, j| if i != j && labels[i] == labels[j] { 1.0 } else { 0.0 });
    let w_dis = DMatrix::from_fn(n, n, |i, j| if labels[i] != labels[j] { 1.0 } else { 0.0 });

    Ok(AlignmentLaplacians {
        geo: laplacian(&w_geo),
        sim: laplacian(&w_sim),
        dis: laplacian(&w_dis),
    })
}

/// A fitted alignment: anchors and coefficient blocks for both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KemaModel {
    pub anchors1: DMatrix<f64>,
    pub anchors2: DMatrix<f64>,
    /// `n1 x latent_dim`.
    pub coef1: DMatrix<f64>,
    /// `n2 x latent_dim`.
    pub coef2: DMatrix<f64>,
    pub bandwidths: [f64; 2],
    /// Retained eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Set when fewer valid directions than requested were available.
    pub insufficient_directions: bool,
    pub config: KemaConfig,
}

/// Block-diagonal product `diag(K1, K2) * M * diag(K1, K2)`.
fn sandwich(k1: &DMatrix<f64>, k2: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n1 = k1.nrows();
    let n2 = k2.nrows();
    let n = n1 + n2;
    let mut left = DMatrix::zeros(n, n);
    left.view_mut((0, 0), (n1, n)).copy_from(&(k1 * m.rows(0, n1)));
    left.view_mut((n1, 0), (n2, n)).copy_from(&(k2 * m.rows(n1, n2)));
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (n, n1)).copy_from(&(left.columns(0, n1) * k1));
    out.view_mut((0, n1), (n, n2)).copy_from(&(left.columns(n1, n2) * k2));
    (&out + out.transpose()) * 0.5
}

pub fn fit_kema(inputs: &KemaInputs, config: &KemaConfig) -> Result<KemaModel> {
    fit_kema_with(inputs, config, EigenMethod::Auto)
}

pub fn fit_kema_with(inputs: &KemaInputs, config: &KemaConfig, method: EigenMethod) -> Result<KemaModel> {
    let laps = build_alignment_laplacians(inputs, config)?;
    let n1 = inputs.x1.nrows();
    let n = n1 + inputs.x2.nrows();
    let (_, classes) = class_indices(inputs);

    let bandwidths = config
        .bandwidths
        .unwrap_or_else(|| [median_bandwidth(&inputs.x1), median_bandwidth(&inputs.x2)]);
    let k1 = rbf_kernel_matrix(&inputs.x1, &inputs.x1, bandwidths[0])?;
    let k2 = rbf_kernel_matrix(&inputs.x2, &inputs.x2, bandwidths[1])?;

    let cost = &laps.geo * config.mu + &laps.sim * (1.0 - config.mu);
    let mut a = sandwich(&k1, &k2, &cost);
    let b = sandwich(&k1, &k2, &laps.dis);
    let scale = b.trace() / n as f64;
    let eps = config.eig_regularization * if scale > 0.0 { scale } else { 1.0 };
    for i in 0..n {
        a[(i, i)] += eps;
    }
    let eig = solve_generalized_eig_with(&a, &b, eps, method)?;

    let wanted = config.latent_dim.unwrap_or_else(|| 20.min(n.saturating_sub(classes)).max(1));
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.values[i].is_finite() && eig.values[i].abs() >= NULL_EIGENVALUE)
        .take(wanted)
        .collect();
    if keep.is_empty() {
        return Err(Error::NoDirections);
    }
    if keep.len() < wanted {
        log::warn!("kema: only {} of {} requested directions available", keep.len(), wanted);
    }
    let mut coef = eig.vectors.select_columns(&keep);
    // B-normalized directions all have unit dissimilarity spread, so the
    // weakly aligned ones would dominate distances in the latent space.
    // Rescaling by 1/sqrt(lambda) gives each direction unit alignment cost.
    for (c, &i) in keep.iter().enumerate() {
        coef.column_mut(c).scale_mut(1.0 / eig.values[i].abs().sqrt());
    }
    Ok(KemaModel {
        anchors1: inputs.x1.clone(),
        anchors2: inputs.x2.clone(),
        coef1: coef.rows(0, n1).into_owned(),
        coef2: coef.rows(n1, n - n1).into_owned(),
        bandwidths,
        eigenvalues: keep.iter().map(|&i| eig.values[i]).collect(),
        insufficient_directions: keep.len() < wanted,
        config: config.clone(),
    })
}

impl KemaModel {
    pub fn latent_dim(&self) -> usize {
        self.coef1.ncols()
    }

    fn domain(&self, domain: usize) -> Result<(&DMatrix<f64>, &DMatrix<f64>, f64)> {
        match domain {
            1 => Ok((&self.anchors1, &self.coef1, self.bandwidths[0])),
            2 => Ok((&self.anchors2, &self.coef2, self.bandwidths[1])),
            d => Err(Error::UnknownDomain(d)),
        }
    }

    /// Projects each row of `x` (features of `domain`) into the latent space.
    pub fn project_matrix(&self, x: &DMatrix<f64>, domain: usize) -> Result<DMatrix<f64>> {
        let (anchors, coef, sigma) = self.domain(domain)?;
        if x.ncols() != anchors.ncols() {
            return Err(Error::dims(format!("domain {domain} feature"), anchors.ncols(), x.ncols()));
        }
        Ok(rbf_kernel_matrix(x, anchors, sigma)? * coef)
    }

    /// `z = A_dᵀ k_d(x)`.
    pub fn project_to_latent(&self, x: &[f64], domain: usize) -> Result<Vec<f64>> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.project_matrix(&row, domain)?.iter().copied().collect())
    }
}
