use super::*;
use crate::instance::{build_partial_edm, generate_instance, half_range_cliques, CliqueSeed, Instance};

fn instance_from(points: &[f64], r: usize, m: usize, range: f64) -> Instance {
    let n = points.len() / r;
    Instance {
        n,
        m,
        r,
        points: DMatrix::from_row_slice(n, r, points),
        radio_range: range,
        noise_factor: 0.0,
        seed: 0,
    }
}

fn seeds(sets: &[&[usize]]) -> Vec<CliqueSeed> {
    sets.iter()
        .map(|s| CliqueSeed {
            center: s[0],
            members: s.to_vec(),
        })
        .collect()
}

fn reproduces_known(fam: &mut CliqueFamily, id: usize, pedm: &PartialEdm) -> bool {
    let (comp, _) = fam.completion(id, pedm, &Tolerances::noiseless()).unwrap();
    let d = comp.edm();
    for (a, &i) in comp.nodes.iter().enumerate() {
        for (b, &j) in comp.nodes.iter().enumerate() {
            if let Some(v) = pedm.get(i, j) {
                if (d[(a, b)] - v).abs() > 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn level_ordering() {
    assert!(StepLevel::L1 < StepLevel::L4);
    assert!(StepLevel::L2.enables(Step::RigidAbsorb));
    assert!(!StepLevel::L2.enables(Step::NonrigidUnion));
    assert_eq!(StepLevel::from_number(3).unwrap(), StepLevel::L3);
    assert!(StepLevel::from_number(5).is_err());
}

#[test]
fn two_cliques_sharing_three_nodes_merge() {
    let inst = instance_from(&[0.1, 0.2, 0.5, 0.1, 0.3, 0.5, 0.6, 0.45, 0.2, 0.7, 0.8, 0.3], 2, 0, 10.0);
    let pedm = build_partial_edm(&inst);
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3], &[1, 2, 3, 4], &[5]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L1);
    assert!(red.rigid_clique_union(0, 1));
    assert_eq!(red.family().active_count(), 2);
    assert!(red.family().is_consistent());
    let (mut fam, counters) = red.into_parts();
    assert_eq!(counters.rigid_union, 1);
    assert_eq!(fam.clique(0).unwrap().nodes, vec![0, 1, 2, 3, 4]);
    assert!(reproduces_known(&mut fam, 0, &pedm));
}

#[test]
fn identical_cliques_merge_trivially() {
    let inst = instance_from(&[0.1, 0.2, 0.5, 0.1, 0.3, 0.5, 0.6, 0.45], 2, 0, 10.0);
    let pedm = build_partial_edm(&inst);
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3], &[0, 1, 2, 3]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L1);
    assert!(red.rigid_clique_union(0, 1));
    assert_eq!(red.family().active_count(), 1);
}

#[test]
fn collinear_overlap_keeps_both_cliques() {
    // nodes 0, 1, 2 on a line
    let inst = instance_from(&[0.0, 0.0, 0.2, 0.2, 0.4, 0.4, 0.5, 0.1, 0.1, 0.5], 2, 0, 10.0);
    let pedm = build_partial_edm(&inst);
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3], &[0, 1, 2, 4]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L1);
    assert!(!red.rigid_clique_union(0, 1));
    assert_eq!(red.family().active_count(), 2);
    assert!(red.family().is_consistent());
}

#[test]
fn node_with_three_generic_neighbors_is_absorbed() {
    // node 4 only measures 0, 1, 2
    let pts = [0.1, 0.2, 0.5, 0.1, 0.3, 0.5, 0.6, 0.45, 0.35, 0.3];
    let inst = instance_from(&pts, 2, 0, 10.0);
    let full = build_partial_edm(&inst);
    let pairs = full.pairs().filter(|&(i, j, _)| !(i == 3 && j == 4));
    let pedm = PartialEdm::from_pairs(5, 0, pairs.collect::<Vec<_>>()).unwrap();
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3], &[4]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L2);
    assert!(red.rigid_node_absorption(0, 4));
    assert!(!red.rigid_node_absorption(0, 4));
    let (mut fam, _) = red.into_parts();
    let (comp, _) = fam.completion(0, &pedm, &Tolerances::noiseless()).unwrap();
    // distance 3-4 is not measured but must come out right
    let truth = crate::edm::SymMatrix::edm_of_points(&inst.points);
    assert!((comp.edm()[(3, 4)] - truth[(3, 4)]).abs() < 1e-9);
}

#[test]
fn node_with_collinear_neighbors_is_not_absorbed() {
    let pts = [0.0, 0.0, 0.2, 0.2, 0.4, 0.4, 0.5, 0.1, 0.3, 0.1];
    let inst = instance_from(&pts, 2, 0, 10.0);
    let full = build_partial_edm(&inst);
    let pairs = full.pairs().filter(|&(i, j, _)| !(i == 3 && j == 4));
    let pedm = PartialEdm::from_pairs(5, 0, pairs.collect::<Vec<_>>()).unwrap();
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3], &[4]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L2);
    assert!(!red.rigid_node_absorption(0, 4));
}

#[test]
fn butterfly_union_uses_the_cross_distance() {
    // triangles {0,1,2} and {0,1,3,4} share the edge 0-1; the pair 2-3 is
    // measured, 2-4 is not
    let pts = [0.0, 0.0, 1.0, 0.1, 0.3, 0.8, 0.6, -0.7, 0.9, -0.4];
    let inst = instance_from(&pts, 2, 0, 10.0);
    let full = build_partial_edm(&inst);
    let pairs = full.pairs().filter(|&(i, j, _)| !(i == 2 && j == 4));
    let pedm = PartialEdm::from_pairs(5, 0, pairs.collect::<Vec<_>>()).unwrap();
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2], &[0, 1, 3, 4]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L3);
    assert!(red.nonrigid_clique_union(1, 0));
    let (mut fam, counters) = red.into_parts();
    assert_eq!(counters.nonrigid_union, 1);
    let (comp, _) = fam.completion(1, &pedm, &Tolerances::noiseless()).unwrap();
    let truth = crate::edm::SymMatrix::edm_of_points(&inst.points);
    assert!((comp.edm().matrix() - truth.matrix()).norm() < 1e-8);
}

#[test]
fn butterfly_without_cross_distance_is_left_alone() {
    let pts = [0.0, 0.0, 1.0, 0.1, 0.3, 0.8, 0.6, -0.7, 0.9, -0.4];
    let inst = instance_from(&pts, 2, 0, 10.0);
    let full = build_partial_edm(&inst);
    let pairs = full.pairs().filter(|&(i, j, _)| !(i == 2 && (j == 3 || j == 4)));
    let pedm = PartialEdm::from_pairs(5, 0, pairs.collect::<Vec<_>>()).unwrap();
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2], &[0, 1, 3, 4]]), 2);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L3);
    assert!(!red.nonrigid_clique_union(1, 0));
    // a rigid-rank overlap is not a non-rigid candidate
    assert_eq!(red.family().active_count(), 2);
}

#[test]
fn single_covering_clique_stops_immediately() {
    let inst = instance_from(&[0.1, 0.2, 0.5, 0.1, 0.3, 0.5, 0.6, 0.45], 2, 0, 10.0);
    let pedm = build_partial_edm(&inst);
    let fam = init_family(&pedm, &seeds(&[&[0, 1, 2, 3]]), 2);
    let (fam, counters) = run(fam, &pedm, StepLevel::L4, &Tolerances::noiseless());
    assert_eq!(counters.total(), 0);
    assert_eq!(fam.active_count(), 1);
}

#[test]
fn trilateration_chain_collapses_to_one_clique() {
    // each node sees the three before it
    let n = 12;
    let pts: Vec<f64> = (0..n)
        .flat_map(|i| {
            let t = i as f64;
            [0.1 * t, 0.3 * (t * 1.7).sin()]
        })
        .collect();
    let inst = instance_from(&pts, 2, 0, 10.0);
    let full = build_partial_edm(&inst);
    let pairs = full.pairs().filter(|&(i, j, _)| j - i <= 3);
    let pedm = PartialEdm::from_pairs(n, 0, pairs.collect::<Vec<_>>()).unwrap();
    let sets: Vec<Vec<usize>> = (0..n - 3).map(|i| (i..i + 4).collect()).collect();
    let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
    let fam = init_family(&pedm, &seeds(&refs), 2);
    let (mut fam, _) = run(fam, &pedm, StepLevel::L1, &Tolerances::noiseless());
    assert_eq!(fam.active_count(), 1);
    let id = fam.active_ids().next().unwrap();
    assert_eq!(fam.clique(id).unwrap().len(), n);
    assert!(reproduces_known(&mut fam, id, &pedm));
}

#[test]
fn disconnected_component_stays_separate() {
    // two far apart squares, anchors in the first
    let pts = [
        0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.1, 0.1, 0.05, 0.05, //
        0.9, 0.9, 0.95, 0.9, 0.9, 0.95, 0.95, 0.95, 0.92, 0.93, //
        0.02, 0.08, 0.08, 0.02, 0.07, 0.09,
    ];
    let inst = instance_from(&pts, 2, 3, 0.2);
    let pedm = build_partial_edm(&inst);
    let fam = init_family(&pedm, &half_range_cliques(&pedm, 0.2), 2);
    let mut fam = fam;
    grow_cliques(&mut fam, &pedm, 9);
    let (fam, _) = run(fam, &pedm, StepLevel::L2, &Tolerances::noiseless());
    let id = final_clique(&fam, &pedm).unwrap();
    let nodes = &fam.clique(id).unwrap().nodes;
    assert!(nodes.iter().all(|&v| !(5..10).contains(&v)));
    assert!((0..5).all(|v| nodes.contains(&v)));
}

#[test]
fn family_stays_consistent_on_random_instance() {
    let inst = generate_instance(300, 4, 2, 0.18, 0.0, 4).unwrap();
    let pedm = build_partial_edm(&inst);
    let mut fam = init_family(&pedm, &half_range_cliques(&pedm, inst.radio_range), 2);
    grow_cliques(&mut fam, &pedm, 9);
    let mut red = Reducer::new(fam, &pedm, Tolerances::noiseless(), StepLevel::L2);
    let mut steps = 0;
    while let Some((k, c)) = red.next_pending() {
        if !red.family.is_active(c) {
            continue;
        }
        let done = match Step::ALL[k] {
            Step::RigidUnion => red.scan_rigid_union(c),
            Step::RigidAbsorb => red.scan_rigid_absorb(c),
            _ => false,
        };
        if done {
            steps += 1;
            if steps % 25 == 0 {
                assert!(red.family.is_consistent());
                for id in red.family.active_ids().collect::<Vec<_>>() {
                    if let Some(f) = red.family.clique(id).unwrap().face() {
                        let t = f.basis.ncols();
                        let g = f.basis.transpose() * &f.basis;
                        assert!((g - DMatrix::<f64>::identity(t, t)).norm() < 1e-9);
                    }
                }
            }
        }
    }
    assert!(red.family.is_consistent());
    let (mut fam, _) = red.into_parts();
    let id = final_clique(&fam, &pedm).unwrap();
    assert!(reproduces_known(&mut fam, id, &pedm));
}


