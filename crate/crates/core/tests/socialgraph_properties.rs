use std::collections::{BTreeMap, BTreeSet};

use crowdpatrol::clock::SimClock;
use crowdpatrol::rng::SimRng;
use crowdpatrol::socialgraph::{
    classify_edge, extract_crowds, EdgeClass, SocialEdge, SocialGraph, SocialNode, SocialParams,
};
use crowdpatrol::Vec2;
use proptest::prelude::*;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let p = self.parent[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.parent[x] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Groups of at least two points joined by chains of pairwise distances
/// below `d_yellow`, computed straight from coordinates.
fn oracle_groups(points: &[Vec2], d_yellow: f64) -> BTreeSet<BTreeSet<u32>> {
    let mut uf = UnionFind::new(points.len());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = ((points[i].x - points[j].x).powi(2) + (points[i].y - points[j].y).powi(2)).sqrt();
            if d < d_yellow {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    for i in 0..points.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().insert(i as u32);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

fn random_points(rng: &mut SimRng, n: usize, side: f64) -> Vec<Vec2> {
    (0..n)
        .map(|_| Vec2::new(rng.uniform_range(0.0, side), rng.uniform_range(0.0, side)))
        .collect()
}

fn graph_of(points: &[Vec2], params: &SocialParams) -> SocialGraph {
    let nodes = points
        .iter()
        .enumerate()
        .map(|(i, &position)| SocialNode { id: i as u32, position })
        .collect();
    SocialGraph::from_nodes(nodes, params)
}

#[test]
fn crowds_match_union_find_on_random_layouts() {
    let params = SocialParams::default();
    let mut rng = SimRng::new(404);
    for case in 0..100 {
        let n = (rng.next_u64() % 31) as usize;
        let side = rng.uniform_range(4.0, 20.0);
        let points = random_points(&mut rng, n, side);
        let g = graph_of(&points, &params);
        let crowds = extract_crowds(&g, &SimClock::at(0, 0.1), &params, &[], &mut 1);
        let got: BTreeSet<BTreeSet<u32>> = crowds.iter().map(|c| c.member_ids.clone()).collect();
        assert_eq!(got.len(), crowds.len());
        assert_eq!(got, oracle_groups(&points, params.d_yellow), "case {case}");
        for c in &crowds {
            assert_eq!(c.weight as usize, c.member_ids.len());
        }
    }
}

#[test]
fn edge_count_matches_pair_scan() {
    let params = SocialParams::default();
    let mut rng = SimRng::new(405);
    for _ in 0..50 {
        let points = random_points(&mut rng, 25, 12.0);
        let g = graph_of(&points, &params);
        let mut expected = 0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i].distance(points[j]) <= params.edge_max {
                    expected += 1;
                }
            }
        }
        assert_eq!(g.edges.len(), expected);
        for e in &g.edges {
            assert!(e.a < e.b);
            assert_eq!(e.klass, classify_edge(e.distance, &params));
        }
    }
}

fn all_components(g: &SocialGraph) -> usize {
    let crowded: usize = g.close_components().iter().map(BTreeSet::len).sum();
    g.close_components().len() + g.nodes.len() - crowded
}

proptest! {
    #[test]
    fn adding_a_close_edge_never_splits(seed in 0u64..10_000, a in 0u32..15, b in 0u32..15) {
        prop_assume!(a != b);
        let params = SocialParams::default();
        let mut rng = SimRng::new(seed);
        let points = random_points(&mut rng, 15, 12.0);
        let g = graph_of(&points, &params);
        let (lo, hi) = (a.min(b), a.max(b));
        let mut h = g.clone();
        h.edges.retain(|e| (e.a, e.b) != (lo, hi));
        h.edges.push(SocialEdge { a: lo, b: hi, distance: 1.5, klass: EdgeClass::Warning });
        let before = g.close_components();
        let after = h.close_components();
        prop_assert!(all_components(&h) <= all_components(&g));
        let in_crowd = |id: u32| before.iter().any(|c| c.contains(&id));
        if after.len() > before.len() {
            // only possible when the edge joins two loners into a new pair
            prop_assert!(!in_crowd(lo) && !in_crowd(hi));
            prop_assert_eq!(after.len(), before.len() + 1);
        }
    }

    #[test]
    fn bounded_position_error_keeps_structure(seed in 0u64..100_000) {
        let params = SocialParams::default();
        let max_err = (params.d_yellow - params.d_red) / 4.0;
        let band = 2.0 * max_err;
        let mut rng = SimRng::new(seed);
        // keep only layouts whose pair distances avoid the ambiguous band
        let mut points: Vec<Vec2> = Vec::new();
        for _ in 0..200 {
            let p = Vec2::new(rng.uniform_range(0.0, 15.0), rng.uniform_range(0.0, 15.0));
            let ok = points.iter().all(|q| {
                let d = p.distance(*q);
                d < params.d_red - band || d > params.d_yellow + band
            });
            if ok {
                points.push(p);
            }
            if points.len() == 20 {
                break;
            }
        }
        let clean = graph_of(&points, &params).close_components();
        let noisy: Vec<Vec2> = points
            .iter()
            .map(|p| *p + Vec2::polar(max_err * rng.uniform(), rng.uniform_range(-3.2, 3.2)))
            .collect();
        prop_assert_eq!(graph_of(&noisy, &params).close_components(), clean);
    }
}
