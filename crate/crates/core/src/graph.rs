//! Symmetric-normalized bipartite adjacency over training edges, with
//! stochastic edge pruning for the perturbed propagation path.

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;
use crate::rng::Rng;

/// The propagation operator: a (num_users+num_items)² sparse matrix with the
/// user block first and entries 1/√(deg(a)·deg(b)) per training edge (a,b).
/// Degrees are counted on training edges only; zero-degree nodes have empty
/// rows. The undirected edge list is kept alongside so pruning can drop both
/// symmetric entries as one unit.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    matrix: SparseMatrix,
    degrees: Vec<usize>,
    num_users: usize,
    num_items: usize,
    // (user node, item node, normalized value), item nodes offset by num_users
    edges: Vec<(usize, usize, f64)>,
}

pub fn build_normalized_adjacency(dataset: &InteractionDataset) -> Result<NormalizedAdjacency> {
    if dataset.train.is_empty() {
        return Err(Error::InvalidParameter(
            "adjacency needs at least one training pair".into(),
        ));
    }
    let n = dataset.num_users + dataset.num_items;
    let mut degrees = vec![0usize; n];
    for rec in &dataset.train {
        degrees[rec.user] += 1;
        degrees[dataset.num_users + rec.item] += 1;
    }

    let mut edges = Vec::with_capacity(dataset.train.len());
    let mut triplets = Vec::with_capacity(dataset.train.len() * 2);
    for rec in &dataset.train {
        let a = rec.user;
        let b = dataset.num_users + rec.item;
        let value = 1.0 / ((degrees[a] * degrees[b]) as f64).sqrt();
        edges.push((a, b, value));
        triplets.push((a, b, value));
        triplets.push((b, a, value));
    }
    let matrix = SparseMatrix::from_triplets(n, n, &triplets)?;
    Ok(NormalizedAdjacency {
        matrix,
        degrees,
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        edges,
    })
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Training degree of a node (users first, then items).
    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Drops each undirected edge independently with probability `rho` and
    /// rescales survivors by 1/(1−rho), keeping the original degree
    /// normalization. Unbiased in expectation; deterministic per seed.
    pub fn prune_edges(&self, rho: f64, seed: u64) -> Result<SparseMatrix> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "prune ratio must be in [0, 1), got {rho}"
            )));
        }
        if rho == 0.0 {
            return Ok(self.matrix.clone());
        }
        let scale = 1.0 / (1.0 - rho);
        let mut rng = Rng::new(seed);
        let mut triplets = Vec::with_capacity(self.edges.len() * 2);
        for &(a, b, value) in &self.edges {
            if rng.bernoulli(rho) {
                continue;
            }
            let v = value * scale;
            triplets.push((a, b, v));
            triplets.push((b, a, v));
        }
        SparseMatrix::from_triplets(self.dim(), self.dim(), &triplets)
    }
}
