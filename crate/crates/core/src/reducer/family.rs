use nalgebra::DMatrix;

use crate::error::{Result, SnlError};
use crate::faces::{face_from_clique, FaceRep};
use crate::instance::{CliqueSeed, PartialEdm};
use crate::recovery::{seed_quality, seed_transform, Completion};
use crate::tolerance::Tolerances;

/// A measured clique inside a (possibly merged) clique, used to fix the
/// Gram block when turning the face into coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Seed {
    pub nodes: Vec<usize>,
    /// `r`-th eigenvalue of the seed's Gram matrix; larger is better.
    pub quality: f64,
}

#[derive(Clone, Debug)]
pub(crate) enum FaceState {
    /// Not computed yet; the node set is still a measured clique.
    Pending,
    Ready(FaceRep),
    Degenerate,
}

#[derive(Clone, Debug)]
pub struct Clique {
    /// Sorted ascending.
    pub nodes: Vec<usize>,
    pub(crate) face: FaceState,
    pub(crate) seed: Option<Seed>,
    /// Bumped whenever the node set or face changes.
    pub(crate) version: u64,
    /// `r x r` coordinate map for the current face, with its `Z` residual.
    pub(crate) transform: Option<(DMatrix<f64>, f64)>,
}

impl Clique {
    fn new(nodes: Vec<usize>) -> Self {
        Self {
            nodes,
            face: FaceState::Pending,
            seed: None,
            version: 0,
            transform: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    pub fn face(&self) -> Option<&FaceRep> {
        match &self.face {
            FaceState::Ready(f) => Some(f),
            _ => None,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.face, FaceState::Degenerate)
    }

    pub fn seed(&self) -> Option<&Seed> {
        self.seed.as_ref()
    }
}

/// The active cliques and the node-to-clique index.
#[derive(Clone, Debug)]
pub struct CliqueFamily {
    pub(crate) cliques: Vec<Option<Clique>>,
    pub(crate) membership: Vec<Vec<usize>>,
    pub(crate) anchor_clique: Option<usize>,
    pub(crate) r: usize,
}

/// One clique per seed plus, when there are anchors, the anchor clique with
/// the next id.
pub fn init_family(pedm: &PartialEdm, seeds: &[CliqueSeed], r: usize) -> CliqueFamily {
    let n = pedm.n();
    let mut cliques: Vec<Option<Clique>> = seeds
        .iter()
        .map(|s| Some(Clique::new(s.members.clone())))
        .collect();
    let anchor_clique = (pedm.m() > 0).then(|| {
        cliques.push(Some(Clique::new(pedm.anchor_indices().collect())));
        cliques.len() - 1
    });
    let mut membership = vec![Vec::new(); n];
    for (id, c) in cliques.iter().enumerate() {
        for &v in &c.as_ref().unwrap().nodes {
            membership[v].push(id);
        }
    }
    CliqueFamily {
        cliques,
        membership,
        anchor_clique,
        r,
    }
}

/// Extend every clique with nodes adjacent to all of its members, preferring
/// the candidate with the smallest sum of squared distances to the members
/// (ties by node id), until it has `max_size` nodes or no candidate is left.
pub fn grow_cliques(family: &mut CliqueFamily, pedm: &PartialEdm, max_size: usize) {
    for id in 0..family.cliques.len() {
        let Some(clique) = family.cliques[id].as_mut() else {
            continue;
        };
        if clique.nodes.is_empty() || clique.nodes.len() >= max_size {
            continue;
        }
        let members = clique.nodes.clone();
        // candidates with their running sum of squared distances
        let mut cands: Vec<(usize, f64)> = pedm
            .neighbors(members[0])
            .iter()
            .copied()
            .filter(|&(v, _)| members.binary_search(&v).is_err())
            .collect();
        for &u in &members[1..] {
            cands.retain_mut(|(v, sum)| match pedm.get(u, *v) {
                Some(d2) => {
                    *sum += d2;
                    true
                }
                None => false,
            });
        }
        let mut added = Vec::new();
        while members.len() + added.len() < max_size && !cands.is_empty() {
            let best = cands
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.1 .0.cmp(&b.1 .0)))
                .map(|(pos, _)| pos)
                .unwrap();
            let (x, _) = cands.swap_remove(best);
            cands.retain_mut(|(v, sum)| match pedm.get(x, *v) {
                Some(d2) => {
                    *sum += d2;
                    true
                }
                None => false,
            });
            added.push(x);
        }
        if added.is_empty() {
            continue;
        }
        for &x in &added {
            let list = &mut family.membership[x];
            let pos = list.binary_search(&id).unwrap_err();
            list.insert(pos, id);
        }
        let clique = family.cliques[id].as_mut().unwrap();
        clique.nodes.extend(added);
        clique.nodes.sort_unstable();
    }
}

impl CliqueFamily {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn anchor_clique_id(&self) -> Option<usize> {
        self.anchor_clique
    }

    pub fn clique(&self, id: usize) -> Option<&Clique> {
        self.cliques.get(id).and_then(Option::as_ref)
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.clique(id).is_some()
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.cliques
            .iter()
            .enumerate()
            .filter_map(|(id, c)| c.as_ref().map(|_| id))
    }

    pub fn active_count(&self) -> usize {
        self.cliques.iter().filter(|c| c.is_some()).count()
    }

    /// Active cliques containing `node`, ascending.
    pub fn membership(&self, node: usize) -> &[usize] {
        &self.membership[node]
    }

    pub(crate) fn clique_mut(&mut self, id: usize) -> &mut Clique {
        self.cliques[id].as_mut().expect("active clique")
    }

    /// Compute the face of a clique if needed. Returns false if the clique
    /// is degenerate.
    pub(crate) fn ensure_face(&mut self, id: usize, pedm: &PartialEdm, tol: &Tolerances) -> bool {
        let r = self.r;
        let clique = self.clique_mut(id);
        match clique.face {
            FaceState::Ready(_) => return true,
            FaceState::Degenerate => return false,
            FaceState::Pending => {}
        }
        if clique.nodes.len() < r + 1 {
            clique.face = FaceState::Degenerate;
            return false;
        }
        let computed = face_from_clique(pedm, &clique.nodes, r, tol).and_then(|f| {
            let d = pedm.sub_edm(&clique.nodes)?;
            let q = seed_quality(&d, r, tol).ok_or(SnlError::RankDeficient { needed: r, found: 0 })?;
            Ok((f, q))
        });
        match computed {
            Ok((face, quality)) => {
                clique.seed = Some(Seed {
                    nodes: clique.nodes.clone(),
                    quality,
                });
                clique.face = FaceState::Ready(face);
                true
            }
            Err(_) => {
                clique.face = FaceState::Degenerate;
                false
            }
        }
    }

    /// Coordinate map of a clique with a ready face, cached per version.
    pub(crate) fn transform(&mut self, id: usize, pedm: &PartialEdm, tol: &Tolerances) -> Result<&(DMatrix<f64>, f64)> {
        let r = self.r;
        let clique = self.clique_mut(id);
        if clique.transform.is_none() {
            let face = clique.face().ok_or(SnlError::NoRigidSeed { r })?;
            let seed = clique.seed.as_ref().ok_or(SnlError::NoRigidSeed { r })?;
            let d = pedm.sub_edm(&seed.nodes)?;
            clique.transform = Some(seed_transform(face, &seed.nodes, &d, tol)?);
        }
        Ok(clique.transform.as_ref().unwrap())
    }

    /// Coordinates (up to a rigid motion) of the given rows of a clique's face.
    pub(crate) fn points_at(&mut self, id: usize, rows: &[usize], pedm: &PartialEdm, tol: &Tolerances) -> Result<DMatrix<f64>> {
        let r = self.r;
        let t = self.transform(id, pedm, tol)?.0.clone();
        let face = self.clique(id).unwrap().face().unwrap();
        let sel = DMatrix::from_fn(rows.len(), r, |i, j| face.basis[(rows[i], j)]);
        Ok(sel * t)
    }

    /// Coordinates of every node of a clique, up to a rigid motion, with the
    /// relative residual of the seed solve.
    pub fn completion(&mut self, id: usize, pedm: &PartialEdm, tol: &Tolerances) -> Result<(Completion, f64)> {
        if !self.ensure_face(id, pedm, tol) {
            return Err(SnlError::NoRigidSeed { r: self.r });
        }
        let (t, resid) = self.transform(id, pedm, tol)?.clone();
        let face = self.clique(id).unwrap().face().unwrap();
        Ok((
            Completion {
                nodes: face.nodes.clone(),
                coords: face.centered_part() * t,
            },
            resid,
        ))
    }

    /// Membership index equals the inverse of the clique map.
    pub fn is_consistent(&self) -> bool {
        let mut expect = vec![Vec::new(); self.membership.len()];
        for id in self.active_ids() {
            let c = self.clique(id).unwrap();
            if !c.nodes.windows(2).all(|w| w[0] < w[1]) {
                return false;
            }
            if let Some(f) = c.face() {
                if f.nodes != c.nodes {
                    return false;
                }
            }
            for &v in &c.nodes {
                expect[v].push(id);
            }
        }
        expect == self.membership
            && self.anchor_clique.is_none_or(|a| self.is_active(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{build_partial_edm, generate_instance, half_range_cliques};

    fn singletons(n: usize) -> Vec<CliqueSeed> {
        (0..n)
            .map(|i| CliqueSeed {
                center: i,
                members: vec![i],
            })
            .collect()
    }

    fn complete(n: usize) -> PartialEdm {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, (j - i) as f64)));
        PartialEdm::from_pairs(n, 0, pairs).unwrap()
    }

    #[test]
    fn init_singletons_and_anchor_clique() {
        let p = PartialEdm::from_pairs(3, 0, []).unwrap();
        let fam = init_family(&p, &singletons(3), 2);
        assert_eq!(fam.active_count(), 3);
        assert_eq!(fam.anchor_clique_id(), None);

        let p = PartialEdm::from_pairs(5, 2, [(3, 4, 1.0)]).unwrap();
        let fam = init_family(&p, &singletons(5), 2);
        let a = fam.anchor_clique_id().unwrap();
        assert_eq!(fam.clique(a).unwrap().nodes, vec![3, 4]);
        assert!(fam.is_consistent());
    }

    #[test]
    fn growth_on_complete_graph_reaches_cap() {
        let p = complete(8);
        let mut fam = init_family(&p, &singletons(8), 2);
        grow_cliques(&mut fam, &p, 5);
        for id in fam.active_ids().collect::<Vec<_>>() {
            assert_eq!(fam.clique(id).unwrap().len(), 5);
        }
        assert!(fam.is_consistent());
    }

    #[test]
    fn growth_on_empty_graph_does_nothing() {
        let p = PartialEdm::from_pairs(4, 0, []).unwrap();
        let mut fam = init_family(&p, &singletons(4), 2);
        grow_cliques(&mut fam, &p, 9);
        assert!(fam.active_ids().all(|id| fam.clique(id).unwrap().len() == 1));
    }

    #[test]
    fn grown_sets_are_measured_cliques() {
        let inst = generate_instance(400, 4, 2, 0.15, 0.0, 2).unwrap();
        let p = build_partial_edm(&inst);
        let mut fam = init_family(&p, &half_range_cliques(&p, 0.15), 2);
        grow_cliques(&mut fam, &p, 9);
        for id in fam.active_ids() {
            let nodes = &fam.clique(id).unwrap().nodes;
            for (a, &i) in nodes.iter().enumerate() {
                for &j in &nodes[a + 1..] {
                    assert!(p.is_known(i, j));
                }
            }
        }
        assert!(fam.is_consistent());
    }
}
