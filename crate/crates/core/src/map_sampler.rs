//! Bounded partial maps around ground-truth nodes.
//!
//! The submap starts from the target nodes and grows by repeatedly adding a
//! uniformly chosen node adjacent (undirected) to what is already included.
//! Growth stops at the node budget or when the connected closure of the
//! targets is exhausted.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::topo_graph::{MapError, NodeId, TopoMap};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("target node {0} is not in the map ({1} nodes)")]
    MissingTarget(usize, usize),
    #[error("budget {budget} is smaller than the {required} distinct targets")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone)]
pub struct SubmapResult {
    pub submap: TopoMap,
    /// Original node for each submap node, in insertion order.
    pub original: Vec<NodeId>,
    /// Original id → submap id.
    pub node_mapping: Vec<Option<NodeId>>,
    /// How many leading entries of `original` are the distinct targets.
    pub seed_count: usize,
}

impl SubmapResult {
    pub fn to_submap(&self, id: NodeId) -> Option<NodeId> {
        self.node_mapping.get(id.0).copied().flatten()
    }

    pub fn remap_targets(&self, targets: &[NodeId]) -> Option<Vec<NodeId>> {
        targets.iter().map(|&t| self.to_submap(t)).collect()
    }
}

/// Samples a submap of at most `n_prime` nodes containing every node of `targets`.
pub fn sample_submap(map: &TopoMap, targets: &[NodeId], n_prime: usize, seed: u64) -> Result<SubmapResult, SamplerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_submap_with(map, targets, n_prime, &mut rng)
}

pub fn sample_submap_with<R: Rng>(
    map: &TopoMap,
    targets: &[NodeId],
    n_prime: usize,
    rng: &mut R,
) -> Result<SubmapResult, SamplerError> {
    let n = map.len();
    let mut included = vec![false; n];
    let mut original = Vec::new();
    for &t in targets {
        if t.0 >= n {
            return Err(SamplerError::MissingTarget(t.0, n));
        }
        if !included[t.0] {
            included[t.0] = true;
            original.push(t);
        }
    }
    if n_prime < original.len() {
        return Err(SamplerError::BudgetTooSmall {
            budget: n_prime,
            required: original.len(),
        });
    }
    let seed_count = original.len();

    let adj = map.adjacency();
    let mut frontier = BTreeSet::new();
    for id in &original {
        frontier.extend(adj[id.0].iter().copied().filter(|&j| !included[j]));
    }
    while original.len() < n_prime && !frontier.is_empty() {
        let k = rng.gen_range(0..frontier.len());
        let pick = *frontier.iter().nth(k).expect("index within frontier");
        frontier.remove(&pick);
        included[pick] = true;
        original.push(NodeId(pick));
        frontier.extend(adj[pick].iter().copied().filter(|&j| !included[j]));
    }

    let submap = map.induced(&original)?;
    let mut node_mapping = vec![None; n];
    for (new, old) in original.iter().enumerate() {
        node_mapping[old.0] = Some(NodeId(new));
    }
    Ok(SubmapResult {
        submap,
        original,
        node_mapping,
        seed_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo_graph::{MapConfig, MapNode};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn graph(n: usize, edges: &[(usize, usize)]) -> TopoMap {
        let nodes = (0..n)
            .map(|i| MapNode {
                descriptor: vec![i as f64],
                pose: None,
            })
            .collect();
        let edges = edges.iter().map(|&(s, t)| (NodeId(s), NodeId(t))).collect();
        TopoMap::new(nodes, edges, MapConfig::default()).unwrap()
    }

    fn chain(n: usize) -> TopoMap {
        let e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        graph(n, &e)
    }

    #[test]
    fn budget_equal_to_targets_gives_induced_targets() {
        let g = chain(6);
        let r = sample_submap(&g, &[NodeId(4), NodeId(1), NodeId(2), NodeId(4)], 3, 7).unwrap();
        assert_eq!(r.original, vec![NodeId(4), NodeId(1), NodeId(2)]);
        // only 1-2 survives, as submap 1→2
        assert_eq!(r.submap.edges(), &[(NodeId(1), NodeId(2))]);
    }

    /// Every trace the growth rule allows on a chain, enumerated exhaustively.
    fn chain_traces(adj: &[Vec<usize>], inc: &mut Vec<usize>, budget: usize, out: &mut HashSet<Vec<usize>>) {
        if inc.len() == budget {
            out.insert(inc.clone());
            return;
        }
        let frontier: BTreeSet<usize> = inc
            .iter()
            .flat_map(|&i| adj[i].iter().copied())
            .filter(|j| !inc.contains(j))
            .collect();
        for f in frontier {
            inc.push(f);
            chain_traces(adj, inc, budget, out);
            inc.pop();
        }
    }

    #[test]
    fn chain_traces_match_enumeration() {
        let g = chain(5);
        let mut allowed = HashSet::new();
        chain_traces(g.adjacency(), &mut vec![2], 3, &mut allowed);
        // from node 2 the frontier is {1,3}; then one more neighbour of the pair
        assert_eq!(allowed.len(), 4);
        let mut seen = HashSet::new();
        for seed in 0..200 {
            let r = sample_submap(&g, &[NodeId(2)], 3, seed).unwrap();
            let trace: Vec<usize> = r.original.iter().map(|n| n.0).collect();
            assert!(allowed.contains(&trace), "{trace:?}");
            seen.insert(trace);
        }
        assert_eq!(seen, allowed);
    }

    #[test]
    fn different_seeds_vary_structure() {
        let g = chain(30);
        let a = sample_submap(&g, &[NodeId(15)], 8, 1).unwrap();
        let distinct = (2..20).any(|s| sample_submap(&g, &[NodeId(15)], 8, s).unwrap().original != a.original);
        assert!(distinct);
    }

    #[test]
    fn stops_at_closure() {
        let g = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]);
        let r = sample_submap(&g, &[NodeId(1)], 5, 0).unwrap();
        assert_eq!(r.original.len(), 3);
        assert!(r.original.iter().all(|n| n.0 < 3));
    }

    #[test]
    fn precondition_errors() {
        let g = chain(4);
        assert!(matches!(
            sample_submap(&g, &[NodeId(9)], 3, 0),
            Err(SamplerError::MissingTarget(9, 4))
        ));
        assert!(matches!(
            sample_submap(&g, &[NodeId(0), NodeId(3)], 1, 0),
            Err(SamplerError::BudgetTooSmall { .. })
        ));
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..14).prop_flat_map(|n| {
            let pairs = proptest::collection::vec((0..n, 0..n), 0..3 * n);
            (Just(n), pairs)
        })
    }

    proptest! {
        #[test]
        fn sampler_invariants((n, raw) in arb_graph(), targets in proptest::collection::vec(0usize..100, 1..5), extra in 0usize..8, seed in any::<u64>()) {
            let mut seen = HashSet::new();
            let edges: Vec<_> = raw.into_iter().filter(|&(s, t)| s != t && seen.insert((s, t))).collect();
            let g = graph(n, &edges);
            let y: Vec<NodeId> = targets.iter().map(|t| NodeId(t % n)).collect();
            let unique: BTreeSet<usize> = y.iter().map(|t| t.0).collect();
            let budget = unique.len() + extra;
            let r = sample_submap(&g, &y, budget, seed).unwrap();
            prop_assert!(r.submap.len() <= budget);
            prop_assert!(r.remap_targets(&y).is_some());
            let adj = g.adjacency();
            for k in r.seed_count..r.original.len() {
                let node = r.original[k].0;
                prop_assert!(r.original[..k].iter().any(|p| adj[node].contains(&p.0)));
            }
            // closure size decides whether the budget is filled
            let mut closure: BTreeSet<usize> = unique.clone();
            let mut stack: Vec<usize> = unique.iter().copied().collect();
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if closure.insert(w) {
                        stack.push(w);
                    }
                }
            }
            prop_assert_eq!(r.submap.len(), budget.min(closure.len()));
            let kept: HashSet<usize> = r.original.iter().map(|n| n.0).collect();
            let expected: HashSet<(usize, usize)> = edges.iter().copied().filter(|(s, t)| kept.contains(s) && kept.contains(t)).collect();
            let got: HashSet<(usize, usize)> = r.submap.edges().iter().map(|(s, t)| (r.original[s.0].0, r.original[t.0].0)).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
