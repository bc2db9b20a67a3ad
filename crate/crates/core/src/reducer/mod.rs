//! The clique reduction loop.
//!
//! Cliques of the measurement graph are merged while possible. The four step
//! types are tried in a fixed priority: rigid clique union, rigid node
//! absorption, non-rigid clique union, non-rigid node absorption. A step of a
//! lower priority only runs when no clique has a higher priority step left.
//!
//! Each step type keeps a set of cliques still to be scanned. Within a step
//! type the smallest clique id is scanned first; its candidate partners are
//! tried by descending overlap, ties by ascending id. A successful step puts
//! the surviving clique back into every set. Failed attempts are remembered
//! and only retried once the overlap (or, for the non-rigid steps, either
//! clique) has changed.

mod family;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;

use crate::edm::{best_psd_rank_r, center_columns, kappa_pinv, thin_svd, SymMatrix};
use crate::error::{Result, SnlError};
use crate::faces::{
    face_from_points, face_from_sub_edm, intersect_faces_nonrigid, intersect_faces_rigid, ExtendedFaceRep, FaceRep,
};
use crate::instance::PartialEdm;
use crate::recovery::{select_completion, two_completions, CrossChecks};
use crate::tolerance::Tolerances;

use family::FaceState;
pub use family::{grow_cliques, init_family, Clique, CliqueFamily, Seed};

/// Which step types are enabled; each level adds one to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepLevel {
    /// Rigid clique union only.
    L1,
    /// Adds rigid node absorption.
    L2,
    /// Adds non-rigid clique union.
    L3,
    /// Adds non-rigid node absorption.
    L4,
}

impl StepLevel {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Self::L1),
            2 => Ok(Self::L2),
            3 => Ok(Self::L3),
            4 => Ok(Self::L4),
            _ => Err(SnlError::InvalidConfig(format!("level must be 1..=4, got {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn enables(self, step: Step) -> bool {
        step as usize <= self as usize
    }
}

impl fmt::Display for StepLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    RigidUnion,
    RigidAbsorb,
    NonrigidUnion,
    NonrigidAbsorb,
}

impl Step {
    pub const ALL: [Step; 4] = [
        Step::RigidUnion,
        Step::RigidAbsorb,
        Step::NonrigidUnion,
        Step::NonrigidAbsorb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::RigidUnion => "rigid_clique_union",
            Step::RigidAbsorb => "rigid_node_absorption",
            Step::NonrigidUnion => "nonrigid_clique_union",
            Step::NonrigidAbsorb => "nonrigid_node_absorption",
        }
    }
}

/// Successful steps per type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub rigid_union: usize,
    pub rigid_absorb: usize,
    pub nonrigid_union: usize,
    pub nonrigid_absorb: usize,
}

impl StepCounters {
    pub fn get(&self, step: Step) -> usize {
        match step {
            Step::RigidUnion => self.rigid_union,
            Step::RigidAbsorb => self.rigid_absorb,
            Step::NonrigidUnion => self.nonrigid_union,
            Step::NonrigidAbsorb => self.nonrigid_absorb,
        }
    }

    fn bump(&mut self, step: Step) {
        match step {
            Step::RigidUnion => self.rigid_union += 1,
            Step::RigidAbsorb => self.rigid_absorb += 1,
            Step::NonrigidUnion => self.nonrigid_union += 1,
            Step::NonrigidAbsorb => self.nonrigid_absorb += 1,
        }
    }

    pub fn total(&self) -> usize {
        Step::ALL.iter().map(|&s| self.get(s)).sum()
    }
}

type PairKey = (usize, usize);

fn pair_key(a: usize, b: usize) -> PairKey {
    (a.min(b), a.max(b))
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    out
}

fn sorted_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|v| b.binary_search(v).is_err()).collect()
}

fn better_seed(a: Option<Seed>, b: Option<Seed>) -> Option<Seed> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.quality > x.quality { y } else { x }),
        (x, y) => x.or(y),
    }
}

/// State of the reduction loop over one family.
/// Spread floors of the successive passes of `Reducer::run`.
const SPREAD_PASSES: [f64; 3] = [0.1, 0.03, 0.01];

type TraceSink<'a> = Box<dyn FnMut(&str) + 'a>;

pub struct Reducer<'a> {
    family: CliqueFamily,
    pedm: &'a PartialEdm,
    tol: Tolerances,
    level: StepLevel,
    /// Per clique: other active clique -> number of shared nodes.
    overlap: Vec<HashMap<usize, usize>>,
    /// Per clique, built on demand: outside node -> measured neighbors inside.
    frontier: Vec<Option<HashMap<usize, usize>>>,
    failed_rigid: HashMap<PairKey, usize>,
    failed_nonrigid: HashMap<PairKey, (usize, u64, u64)>,
    failed_absorb: HashMap<PairKey, usize>,
    failed_nonrigid_absorb: HashMap<PairKey, (usize, u64)>,
    pending: [BTreeSet<usize>; 4],
    counters: StepCounters,
    active: usize,
    trace: Option<TraceSink<'a>>,
}

impl<'a> Reducer<'a> {
    pub fn new(family: CliqueFamily, pedm: &'a PartialEdm, tol: Tolerances, level: StepLevel) -> Self {
        let ids = family.cliques.len();
        let mut overlap: Vec<HashMap<usize, usize>> = vec![HashMap::new(); ids];
        for list in &family.membership {
            for (a, &c) in list.iter().enumerate() {
                for &d in &list[a + 1..] {
                    *overlap[c].entry(d).or_insert(0) += 1;
                    *overlap[d].entry(c).or_insert(0) += 1;
                }
            }
        }
        let active_ids: BTreeSet<usize> = family.active_ids().collect();
        let pending = std::array::from_fn(|k| {
            if level.enables(Step::ALL[k]) {
                active_ids.clone()
            } else {
                BTreeSet::new()
            }
        });
        Self {
            active: active_ids.len(),
            family,
            pedm,
            tol,
            level,
            overlap,
            frontier: vec![None; ids],
            failed_rigid: HashMap::new(),
            failed_nonrigid: HashMap::new(),
            failed_absorb: HashMap::new(),
            failed_nonrigid_absorb: HashMap::new(),
            pending,
            counters: StepCounters::default(),
            trace: None,
        }
    }

    /// Receive one line per successful step.
    pub fn with_trace(mut self, sink: impl FnMut(&str) + 'a) -> Self {
        self.trace = Some(Box::new(sink));
        self
    }

    pub fn family(&self) -> &CliqueFamily {
        &self.family
    }

    pub fn counters(&self) -> StepCounters {
        self.counters
    }

    pub fn into_parts(self) -> (CliqueFamily, StepCounters) {
        (self.family, self.counters)
    }

    /// Apply steps until none applies.
    /// Reduce until no enabled step applies. Merges through well spread
    /// shared nodes go first; flatter overlaps are admitted pass by pass,
    /// so their error amplification acts on faces that are still accurate.
    pub fn run(mut self) -> (CliqueFamily, StepCounters) {
        let floor = self.tol.min_overlap_spread;
        let mut passes: Vec<f64> = SPREAD_PASSES.iter().copied().filter(|&f| f > floor).collect();
        passes.push(floor);
        for (n, &spread) in passes.iter().enumerate() {
            self.tol.min_overlap_spread = spread;
            if n > 0 {
                self.requeue_all();
            }
            self.drain();
        }
        self.tol.min_overlap_spread = floor;
        self.into_parts()
    }

    fn drain(&mut self) {
        while let Some((k, c)) = self.next_pending() {
            if !self.family.is_active(c) {
                continue;
            }
            match Step::ALL[k] {
                Step::RigidUnion => self.scan_rigid_union(c),
                Step::RigidAbsorb => self.scan_rigid_absorb(c),
                Step::NonrigidUnion => self.scan_nonrigid_union(c),
                Step::NonrigidAbsorb => self.scan_nonrigid_absorb(c),
            };
        }
    }

    /// Forget failures (they may have been caused by the spread floor) and
    /// schedule every active clique again.
    fn requeue_all(&mut self) {
        self.failed_rigid.clear();
        self.failed_nonrigid.clear();
        self.failed_absorb.clear();
        self.failed_nonrigid_absorb.clear();
        let ids: Vec<usize> = self.family.active_ids().collect();
        for k in 0..4 {
            if self.level.enables(Step::ALL[k]) {
                self.pending[k].extend(ids.iter().copied());
            }
        }
    }

    fn next_pending(&mut self) -> Option<(usize, usize)> {
        (0..4).find_map(|k| self.pending[k].pop_first().map(|c| (k, c)))
    }

    fn r(&self) -> usize {
        self.family.r
    }

    fn in_clique(&self, c: usize, v: usize) -> bool {
        self.family.membership[v].binary_search(&c).is_ok()
    }

    fn nodes(&self, c: usize) -> &[usize] {
        &self.family.clique(c).unwrap().nodes
    }

    fn version(&self, c: usize) -> u64 {
        self.family.clique(c).unwrap().version
    }

    fn overlap_of(&self, a: usize, b: usize) -> usize {
        self.overlap[a].get(&b).copied().unwrap_or(0)
    }

    fn ensure_face(&mut self, c: usize) -> bool {
        self.family.ensure_face(c, self.pedm, &self.tol)
    }

    fn face(&self, c: usize) -> &FaceRep {
        self.family.clique(c).unwrap().face().expect("face computed")
    }

    fn positioned_count(&self) -> usize {
        self.family
            .anchor_clique
            .and_then(|a| self.family.clique(a))
            .map_or(0, |c| c.nodes.iter().filter(|&&v| !self.pedm.is_anchor(v)).count())
    }

    fn record(&mut self, step: Step, i: usize, j: usize) {
        self.counters.bump(step);
        if self.trace.is_none() {
            return;
        }
        let line = format!(
            "step={} i={} j={} |C|={} positioned={}",
            step.name(),
            i,
            j,
            self.active,
            self.positioned_count()
        );
        if let Some(sink) = self.trace.as_mut() {
            sink(&line);
        }
    }

    /// Pick which of two cliques keeps its id: the anchor clique if present,
    /// else the larger one, else `first`.
    fn survivor(&self, first: usize, second: usize) -> (usize, usize) {
        if self.family.anchor_clique == Some(second) {
            return (second, first);
        }
        if self.family.anchor_clique == Some(first) {
            return (first, second);
        }
        if self.nodes(second).len() > self.nodes(first).len() {
            (second, first)
        } else {
            (first, second)
        }
    }

    /// Replace clique `s` by its union with `absorbed` (if any) and the extra
    /// nodes, keeping every index in sync.
    fn apply(&mut self, s: usize, absorbed: Option<usize>, new_nodes: Vec<usize>, face: Option<FaceRep>, seed: Option<Seed>) {
        if let Some(a) = absorbed {
            let gone = self.family.cliques[a].take().expect("active clique");
            for &x in &gone.nodes {
                let list = &mut self.family.membership[x];
                if let Ok(pos) = list.binary_search(&a) {
                    list.remove(pos);
                }
            }
            for (c, _) in std::mem::take(&mut self.overlap[a]) {
                self.overlap[c].remove(&a);
            }
            self.frontier[a] = None;
            for set in &mut self.pending {
                set.remove(&a);
            }
            self.active -= 1;
        }
        for &x in &new_nodes {
            for &c in &self.family.membership[x] {
                if c != s {
                    *self.overlap[s].entry(c).or_insert(0) += 1;
                    *self.overlap[c].entry(s).or_insert(0) += 1;
                }
            }
        }
        for &x in &new_nodes {
            let list = &mut self.family.membership[x];
            let pos = list.binary_search(&s).unwrap_err();
            list.insert(pos, s);
        }
        if let Some(mut fr) = self.frontier[s].take() {
            for &x in &new_nodes {
                fr.remove(&x);
            }
            for &x in &new_nodes {
                for &(y, _) in self.pedm.neighbors(x) {
                    if !self.in_clique(s, y) {
                        *fr.entry(y).or_insert(0) += 1;
                    }
                }
            }
            self.frontier[s] = Some(fr);
        }
        let clique = self.family.clique_mut(s);
        if !new_nodes.is_empty() {
            clique.nodes = sorted_union(&clique.nodes, &new_nodes);
        }
        if let Some(f) = face {
            debug_assert_eq!(f.nodes, clique.nodes);
            clique.face = FaceState::Ready(f);
        }
        if seed.is_some() {
            clique.seed = seed;
        }
        clique.version += 1;
        clique.transform = None;
        for k in 0..4 {
            if self.level.enables(Step::ALL[k]) {
                self.pending[k].insert(s);
            }
        }
    }

    fn take_seed(&mut self, c: usize) -> Option<Seed> {
        self.family.clique_mut(c).seed.take()
    }

    // ---- rigid clique union ----------------------------------------------

    /// Merge clique `j` into clique `i` if their shared nodes fix a rigid
    /// motion. The anchor clique always keeps its id.
    pub fn rigid_clique_union(&mut self, i: usize, j: usize) -> bool {
        if i == j || !self.family.is_active(i) || !self.family.is_active(j) {
            return false;
        }
        let (s, a) = if self.family.anchor_clique == Some(j) { (j, i) } else { (i, j) };
        if self.try_rigid_union(s, a) {
            self.record(Step::RigidUnion, s, a);
            true
        } else {
            false
        }
    }

    fn try_rigid_union(&mut self, s: usize, a: usize) -> bool {
        let shared = self.overlap_of(s, a);
        let (len_s, len_a) = (self.nodes(s).len(), self.nodes(a).len());
        if shared == len_a && self.ensure_face(s) {
            // `a` adds nothing
            let seed = better_seed(self.take_seed(s), self.take_seed(a));
            self.apply(s, Some(a), Vec::new(), None, seed);
            return true;
        }
        if shared == len_s && self.ensure_face(a) {
            let face = match std::mem::replace(&mut self.family.clique_mut(a).face, FaceState::Pending) {
                FaceState::Ready(f) => f,
                _ => unreachable!(),
            };
            let new_nodes = sorted_difference(&face.nodes, self.nodes(s));
            let seed = better_seed(self.take_seed(s), self.take_seed(a));
            self.apply(s, Some(a), new_nodes, Some(face), seed);
            return true;
        }
        if shared < self.r() + 1 || !self.ensure_face(s) || !self.ensure_face(a) {
            return false;
        }
        match intersect_faces_rigid(self.face(s), self.face(a), &self.tol) {
            Ok(face) => {
                let new_nodes = sorted_difference(&face.nodes, self.nodes(s));
                let seed = better_seed(self.take_seed(s), self.take_seed(a));
                self.apply(s, Some(a), new_nodes, Some(face), seed);
                true
            }
            Err(_) => false,
        }
    }

    fn scan_rigid_union(&mut self, c: usize) -> bool {
        let r = self.r();
        let len_c = self.nodes(c).len();
        let mut cands: Vec<(usize, usize)> = self.overlap[c]
            .iter()
            .filter(|&(&p, &k)| k > r || k == len_c || k == self.nodes(p).len())
            .map(|(&p, &k)| (k, p))
            .collect();
        cands.sort_unstable_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        for (k, p) in cands {
            let key = pair_key(c, p);
            if self.failed_rigid.get(&key) == Some(&k) {
                continue;
            }
            let (s, a) = self.survivor(c, p);
            if self.try_rigid_union(s, a) {
                self.record(Step::RigidUnion, s, a);
                return true;
            }
            self.failed_rigid.insert(key, k);
        }
        false
    }

    // ---- node absorption helpers -----------------------------------------

    fn inside_neighbors(&self, c: usize, j: usize) -> Vec<usize> {
        self.pedm
            .neighbors(j)
            .iter()
            .map(|&(v, _)| v)
            .filter(|&v| self.in_clique(c, v))
            .collect()
    }

    /// Squared distances on `beta + {j}` (sorted), measured where `beta` is a
    /// measured clique, otherwise taken from the clique's coordinates.
    fn absorption_edm(&mut self, c: usize, beta: &[usize], j: usize) -> Result<(Vec<usize>, SymMatrix)> {
        let nodes = sorted_union(beta, &[j]);
        if self.pedm.is_clique(beta) {
            return Ok((nodes.clone(), self.pedm.sub_edm(&nodes)?));
        }
        let rows: Vec<usize> = beta.iter().map(|&v| self.face(c).row_of(v).unwrap()).collect();
        let pts = self.family.points_at(c, &rows, self.pedm, &self.tol)?;
        let synth = SymMatrix::edm_of_points(&pts);
        let k = nodes.len();
        let jpos = nodes.binary_search(&j).unwrap();
        let bpos = |a: usize| if a < jpos { a } else { a - 1 };
        let mut d = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a + 1..k {
                let v = if a == jpos || b == jpos {
                    let other = nodes[if a == jpos { b } else { a }];
                    self.pedm.get(j, other).ok_or(SnlError::NotAClique(j, other))?
                } else {
                    synth[(bpos(a), bpos(b))]
                };
                d[(a, b)] = v;
                d[(b, a)] = v;
            }
        }
        Ok((nodes, SymMatrix::new(d)))
    }

    fn ensure_frontier(&mut self, c: usize) {
        if self.frontier[c].is_some() {
            return;
        }
        let mut fr: HashMap<usize, usize> = HashMap::new();
        for &x in self.nodes(c) {
            for &(y, _) in self.pedm.neighbors(x) {
                if !self.in_clique(c, y) {
                    *fr.entry(y).or_insert(0) += 1;
                }
            }
        }
        self.frontier[c] = Some(fr);
    }

    fn frontier_candidates(&mut self, c: usize, min_count: usize) -> Vec<(usize, usize)> {
        self.ensure_frontier(c);
        let mut cands: Vec<(usize, usize)> = self.frontier[c]
            .as_ref()
            .unwrap()
            .iter()
            .filter(|&(_, &k)| k >= min_count)
            .map(|(&v, &k)| (k, v))
            .collect();
        cands.sort_unstable_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        cands
    }

    // ---- rigid node absorption -------------------------------------------

    /// Add node `j` to clique `i` if `j` has enough measured neighbors in `i`
    /// to be placed uniquely.
    pub fn rigid_node_absorption(&mut self, i: usize, j: usize) -> bool {
        if !self.family.is_active(i) || self.in_clique(i, j) {
            return false;
        }
        if self.try_rigid_absorb(i, j) {
            self.record(Step::RigidAbsorb, i, j);
            true
        } else {
            false
        }
    }

    fn try_rigid_absorb(&mut self, c: usize, j: usize) -> bool {
        let r = self.r();
        let beta = self.inside_neighbors(c, j);
        if beta.len() < r + 1 || !self.ensure_face(c) {
            return false;
        }
        let merged = self.absorption_edm(c, &beta, j).and_then(|(nodes, d)| {
            let temp = face_from_sub_edm(&nodes, &d, r, &self.tol)?;
            intersect_faces_rigid(self.face(c), &temp, &self.tol)
        });
        match merged {
            Ok(face) => {
                self.apply(c, None, vec![j], Some(face), None);
                true
            }
            Err(_) => false,
        }
    }

    fn scan_rigid_absorb(&mut self, c: usize) -> bool {
        let r = self.r();
        if !self.ensure_face(c) {
            return false;
        }
        for (k, j) in self.frontier_candidates(c, r + 1) {
            let key = (c, j);
            if self.failed_absorb.get(&key) == Some(&k) {
                continue;
            }
            if self.try_rigid_absorb(c, j) {
                self.record(Step::RigidAbsorb, c, j);
                return true;
            }
            self.failed_absorb.insert(key, k);
        }
        false
    }

    // ---- non-rigid steps ---------------------------------------------------

    /// `beta` plus up to `r + 1` nodes of clique `c` farthest from the affine
    /// hull of `beta`, with the centered Gram matrix of their coordinates.
    fn gram_block(&mut self, c: usize, beta: &[usize]) -> Result<(Vec<usize>, SymMatrix)> {
        let r = self.r();
        let face_nodes = self.face(c).nodes.clone();
        let all_rows: Vec<usize> = (0..face_nodes.len()).collect();
        let pts = self.family.points_at(c, &all_rows, self.pedm, &self.tol)?;
        let beta_rows: Vec<usize> = beta.iter().map(|v| face_nodes.binary_search(v).unwrap()).collect();
        let bpts = DMatrix::from_fn(beta_rows.len(), r, |i, j| pts[(beta_rows[i], j)]);
        let mean = bpts.row_mean();
        let centered = center_columns(&bpts);
        let (_, _, vt) = thin_svd(&centered);
        let hull_dim = (r - 1).min(vt.nrows());
        let dirs = vt.rows(0, hull_dim).transpose();
        let mut far: Vec<(f64, usize)> = (0..face_nodes.len())
            .filter(|row| beta_rows.binary_search(row).is_err())
            .map(|row| {
                let off = pts.row(row) - &mean;
                let proj = (&off * &dirs) * dirs.transpose();
                ((off - proj).norm(), row)
            })
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rows = beta_rows;
        rows.extend(far.iter().take(r + 1).map(|&(_, row)| row));
        let sel = DMatrix::from_fn(rows.len(), r, |i, j| pts[(rows[i], j)]);
        let sel = center_columns(&sel);
        let nodes = rows.iter().map(|&row| face_nodes[row]).collect();
        Ok((nodes, SymMatrix::new(&sel * sel.transpose())))
    }

    fn cross_checks(&self, ext: &ExtendedFaceRep, s: usize, a: usize) -> CrossChecks {
        let side_s = sorted_difference(self.nodes(s), self.nodes(a));
        let side_a = sorted_difference(self.nodes(a), self.nodes(s));
        let (small, small_id, large_id) = if side_s.len() <= side_a.len() {
            (&side_s, s, a)
        } else {
            (&side_a, a, s)
        };
        let mut checks = CrossChecks::default();
        for &x in small.iter() {
            for &(y, d2) in self.pedm.neighbors(x) {
                if self.in_clique(large_id, y) && !self.in_clique(small_id, y) {
                    checks.known.push((ext.row_of(x).unwrap(), ext.row_of(y).unwrap(), d2));
                }
            }
        }
        if self.tol.lower_bounds {
            for &x in &side_s {
                for &y in &side_a {
                    if !self.pedm.is_known(x, y) {
                        checks.unknown.push((ext.row_of(x).unwrap(), ext.row_of(y).unwrap()));
                    }
                }
            }
        }
        checks
    }

    /// Merge clique `j` into clique `i` when their shared nodes span one
    /// dimension less than needed and exactly one of the two resulting
    /// completions agrees with the measured distances across the cliques.
    pub fn nonrigid_clique_union(&mut self, i: usize, j: usize) -> bool {
        if i == j || !self.family.is_active(i) || !self.family.is_active(j) {
            return false;
        }
        let (s, a) = if self.family.anchor_clique == Some(j) { (j, i) } else { (i, j) };
        if self.try_nonrigid_union(s, a) {
            self.record(Step::NonrigidUnion, s, a);
            true
        } else {
            false
        }
    }

    fn try_nonrigid_union(&mut self, s: usize, a: usize) -> bool {
        if self.overlap_of(s, a) < self.r() || !self.ensure_face(s) || !self.ensure_face(a) {
            return false;
        }
        self.nonrigid_union_face(s, a)
            .map(|face| {
                let new_nodes = sorted_difference(&face.nodes, self.nodes(s));
                let seed = better_seed(self.take_seed(s), self.take_seed(a));
                self.apply(s, Some(a), new_nodes, Some(face), seed);
            })
            .is_some()
    }

    fn nonrigid_union_face(&mut self, s: usize, a: usize) -> Option<FaceRep> {
        let ext = intersect_faces_nonrigid(self.face(s), self.face(a), &self.tol).ok()?;
        let checks = self.cross_checks(&ext, s, a);
        if !checks.is_informative(&self.tol) {
            return None;
        }
        let common: Vec<usize> = self
            .nodes(s)
            .iter()
            .copied()
            .filter(|&v| self.in_clique(a, v))
            .collect();
        let (d1, b1) = self.gram_block(s, &common).ok()?;
        let (d2, b2) = self.gram_block(a, &common).ok()?;
        let cands = two_completions(&ext, [(&d1, &b1), (&d2, &b2)], &self.tol).ok()?;
        let pick = select_completion(&cands, &checks, &self.tol)?;
        face_from_points(&ext.nodes, &cands[pick].coords, &self.tol).ok()
    }

    fn scan_nonrigid_union(&mut self, c: usize) -> bool {
        let r = self.r();
        let len_c = self.nodes(c).len();
        let mut cands: Vec<(usize, usize)> = self.overlap[c]
            .iter()
            .filter(|&(&p, &k)| k >= r && k < len_c && k < self.nodes(p).len())
            .map(|(&p, &k)| (k, p))
            .collect();
        cands.sort_unstable_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        for (k, p) in cands {
            let key = pair_key(c, p);
            let stamp = (k, self.version(key.0), self.version(key.1));
            if self.failed_nonrigid.get(&key) == Some(&stamp) {
                continue;
            }
            let (s, a) = self.survivor(c, p);
            if self.try_nonrigid_union(s, a) {
                self.record(Step::NonrigidUnion, s, a);
                return true;
            }
            self.failed_nonrigid.insert(key, stamp);
        }
        false
    }

    /// Add node `j` to clique `i` when `j`'s measured neighbors in `i` span
    /// one dimension less than needed and exactly one of the two mirror
    /// positions is consistent. Without lower bounds there is nothing to
    /// check the mirror position against, so this needs `lower_bounds`.
    pub fn nonrigid_node_absorption(&mut self, i: usize, j: usize) -> bool {
        if !self.family.is_active(i) || self.in_clique(i, j) {
            return false;
        }
        if self.try_nonrigid_absorb(i, j) {
            self.record(Step::NonrigidAbsorb, i, j);
            true
        } else {
            false
        }
    }

    fn try_nonrigid_absorb(&mut self, c: usize, j: usize) -> bool {
        let r = self.r();
        let beta = self.inside_neighbors(c, j);
        if beta.len() < r || !self.ensure_face(c) {
            return false;
        }
        match self.nonrigid_absorb_face(c, &beta, j) {
            Some(face) => {
                self.apply(c, None, vec![j], Some(face), None);
                true
            }
            None => false,
        }
    }

    fn nonrigid_absorb_face(&mut self, c: usize, beta: &[usize], j: usize) -> Option<FaceRep> {
        let r = self.r();
        let (nodes, d) = self.absorption_edm(c, beta, j).ok()?;
        let temp = face_from_sub_edm(&nodes, &d, r, &self.tol).ok()?;
        let ext = intersect_faces_nonrigid(self.face(c), &temp, &self.tol).ok()?;
        let jrow = ext.row_of(j)?;
        let mut checks = CrossChecks::default();
        if self.tol.lower_bounds {
            for &v in self.nodes(c) {
                if beta.binary_search(&v).is_err() {
                    checks.unknown.push((jrow, ext.row_of(v)?));
                }
            }
        }
        if !checks.is_informative(&self.tol) {
            return None;
        }
        let (d1, b1) = self.gram_block(c, beta).ok()?;
        let (_, b2) = best_psd_rank_r(&kappa_pinv(&d), r, self.tol.rank);
        let cands = two_completions(&ext, [(&d1, &b1), (&nodes, &b2)], &self.tol).ok()?;
        let pick = select_completion(&cands, &checks, &self.tol)?;
        face_from_points(&ext.nodes, &cands[pick].coords, &self.tol).ok()
    }

    fn scan_nonrigid_absorb(&mut self, c: usize) -> bool {
        let r = self.r();
        if !self.ensure_face(c) {
            return false;
        }
        let version = self.version(c);
        for (k, j) in self.frontier_candidates(c, r) {
            let key = (c, j);
            if self.failed_nonrigid_absorb.get(&key) == Some(&(k, version)) {
                continue;
            }
            if self.try_nonrigid_absorb(c, j) {
                self.record(Step::NonrigidAbsorb, c, j);
                return true;
            }
            self.failed_nonrigid_absorb.insert(key, (k, version));
        }
        false
    }
}

/// Run the reduction loop to its fixed point.
pub fn run(family: CliqueFamily, pedm: &PartialEdm, level: StepLevel, tol: &Tolerances) -> (CliqueFamily, StepCounters) {
    Reducer::new(family, pedm, *tol, level).run()
}

/// The largest active clique containing every anchor, or the largest clique
/// overall when there are no anchors.
pub fn final_clique(family: &CliqueFamily, pedm: &PartialEdm) -> Option<usize> {
    let anchors: Vec<usize> = pedm.anchor_indices().collect();
    family
        .active_ids()
        .filter(|&id| {
            let c = family.clique(id).unwrap();
            anchors.iter().all(|&v| c.contains(v))
        })
        .max_by(|&a, &b| {
            let (ca, cb) = (family.clique(a).unwrap(), family.clique(b).unwrap());
            ca.len().cmp(&cb.len()).then(b.cmp(&a))
        })
}

#[cfg(test)]
mod tests;
