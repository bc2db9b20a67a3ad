use nalgebra::DMatrix;

use crate::edm::SymMatrix;
use crate::error::{Result, SnlError};

/// Known squared distances of a sensor network, stored as sorted adjacency
/// lists. The last `m` of the `n` nodes are anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialEdm {
    n: usize,
    m: usize,
    adj: Vec<Vec<(usize, f64)>>,
}

impl PartialEdm {
    /// Build from unordered pairs `(i, j, d2)`. Duplicates keep the last
    /// value; self pairs and negative values are rejected.
    pub fn from_pairs<I>(n: usize, m: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if m > n {
            return Err(SnlError::InvalidConfig(format!(
                "anchor count {m} exceeds node count {n}"
            )));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, d2) in pairs {
            if i >= n || j >= n {
                return Err(SnlError::InvalidConfig(format!(
                    "pair ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(SnlError::InvalidConfig(format!("self pair ({i}, {i})")));
            }
            if !d2.is_finite() || d2 < 0.0 {
                return Err(SnlError::InvalidConfig(format!(
                    "pair ({i}, {j}) has invalid squared distance {d2}"
                )));
            }
            adj[i].push((j, d2));
            adj[j].push((i, d2));
        }
        for list in &mut adj {
            // stable sort then keep the last entry of each run of equal ids
            list.sort_by_key(|&(j, _)| j);
            let mut dedup: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(j, d) in list.iter() {
                match dedup.last_mut() {
                    Some(last) if last.0 == j => last.1 = d,
                    _ => dedup.push((j, d)),
                }
            }
            *list = dedup;
        }
        Ok(Self { n, m, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sensors(&self) -> usize {
        self.n - self.m
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        i >= self.n - self.m
    }

    pub fn anchor_indices(&self) -> std::ops::Range<usize> {
        self.n - self.m..self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        let list = &self.adj[i];
        list.binary_search_by_key(&j, |&(k, _)| k)
            .ok()
            .map(|pos| list[pos].1)
    }

    pub fn is_known(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    /// Neighbors of `j` with their squared distances, sorted by node id.
    pub fn neighbors(&self, j: usize) -> &[(usize, f64)] {
        &self.adj[j]
    }

    /// All `i` with `(i, j)` known, ascending.
    pub fn neighbor_set(&self, j: usize) -> Vec<usize> {
        self.adj[j].iter().map(|&(i, _)| i).collect()
    }

    pub fn degree(&self, j: usize) -> usize {
        self.adj[j].len()
    }

    pub fn known_pairs(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Known pairs `(i, j, d2)` with `i < j`, in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, d)| (i, j, d))
        })
    }

    /// Mean node degree, counting every known pair including the anchor block.
    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        2.0 * self.known_pairs() as f64 / self.n as f64
    }

    pub fn is_clique(&self, nodes: &[usize]) -> bool {
        nodes.iter().enumerate().all(|(a, &i)| {
            nodes[a + 1..].iter().all(|&j| self.is_known(i, j))
        })
    }

    /// Dense squared-distance matrix on `nodes` (in the given order).
    pub fn sub_edm(&self, nodes: &[usize]) -> Result<SymMatrix> {
        let k = nodes.len();
        let mut d = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a + 1..k {
                let v = self
                    .get(nodes[a], nodes[b])
                    .ok_or(SnlError::NotAClique(nodes[a], nodes[b]))?;
                d[(a, b)] = v;
                d[(b, a)] = v;
            }
        }
        Ok(SymMatrix::new(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> PartialEdm {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0)));
        PartialEdm::from_pairs(n, 0, pairs).unwrap()
    }

    #[test]
    fn neighbor_sets() {
        let empty = PartialEdm::from_pairs(3, 0, []).unwrap();
        assert!(empty.neighbor_set(1).is_empty());
        assert_eq!(complete(4).neighbor_set(0), vec![1, 2, 3]);
    }

    #[test]
    fn average_degree_cases() {
        assert_eq!(complete(4).average_degree(), 3.0);
        let path = PartialEdm::from_pairs(3, 0, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!((path.average_degree() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_lookup_and_rejections() {
        let p = PartialEdm::from_pairs(3, 1, [(2, 0, 4.0)]).unwrap();
        assert_eq!(p.get(0, 2), Some(4.0));
        assert_eq!(p.get(2, 0), Some(4.0));
        assert_eq!(p.get(0, 1), None);
        assert!(p.is_anchor(2) && !p.is_anchor(1));
        assert!(PartialEdm::from_pairs(3, 0, [(1, 1, 0.0)]).is_err());
        assert!(PartialEdm::from_pairs(3, 0, [(0, 1, -1.0)]).is_err());
        assert!(matches!(p.sub_edm(&[0, 1]), Err(SnlError::NotAClique(0, 1))));
    }
}
