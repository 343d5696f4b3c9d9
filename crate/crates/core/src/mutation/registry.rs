use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::genome::{EdgeId, NodeId};

/// Master-side record of every structural innovation.
///
/// Edge ids are keyed by their `(in, out)` node pair, so the same
/// connection always carries the same id in every genome. Nodes created by
/// splitting an edge are keyed by the split edge's id; all other new nodes
/// get fresh ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RegistryState", into = "RegistryState")]
pub struct InnovationRegistry {
    edges: BTreeMap<(NodeId, NodeId), EdgeId>,
    split_nodes: BTreeMap<EdgeId, NodeId>,
    next_node: u64,
    next_edge: u64,
}

impl InnovationRegistry {
    /// Registry matching `Genome::minimal(_, num_classes)`.
    pub fn for_minimal(num_classes: usize) -> Self {
        let mut edges = BTreeMap::new();
        for c in 0..num_classes as u64 {
            edges.insert((NodeId(0), NodeId(c + 1)), EdgeId(c));
        }
        InnovationRegistry {
            edges,
            split_nodes: BTreeMap::new(),
            next_node: num_classes as u64 + 1,
            next_edge: num_classes as u64,
        }
    }

    /// Id for the edge `from -> to`, minting one the first time the pair is seen.
    pub fn edge_id(&mut self, from: NodeId, to: NodeId) -> EdgeId {
        if let Some(&id) = self.edges.get(&(from, to)) {
            return id;
        }
        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        self.edges.insert((from, to), id);
        id
    }

    pub fn lookup_edge(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.edges.get(&(from, to)).copied()
    }

    /// Node id for the node created by splitting `edge`.
    pub fn split_node_id(&mut self, edge: EdgeId) -> NodeId {
        if let Some(&id) = self.split_nodes.get(&edge) {
            return id;
        }
        let id = self.fresh_node();
        self.split_nodes.insert(edge, id);
        id
    }

    pub fn fresh_node(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        id
    }

    pub fn node_count(&self) -> u64 {
        self.next_node
    }

    pub fn edge_count(&self) -> u64 {
        self.next_edge
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryState {
    next_node: u64,
    next_edge: u64,
    /// `[in, out, edge]`
    edges: Vec<[u64; 3]>,
    /// `[split edge, node]`
    split_nodes: Vec<[u64; 2]>,
}

impl From<RegistryState> for InnovationRegistry {
    fn from(s: RegistryState) -> Self {
        InnovationRegistry {
            edges: s
                .edges
                .into_iter()
                .map(|[a, b, e]| ((NodeId(a), NodeId(b)), EdgeId(e)))
                .collect(),
            split_nodes: s.split_nodes.into_iter().map(|[e, n]| (EdgeId(e), NodeId(n))).collect(),
            next_node: s.next_node,
            next_edge: s.next_edge,
        }
    }
}

impl From<InnovationRegistry> for RegistryState {
    fn from(r: InnovationRegistry) -> Self {
        RegistryState {
            next_node: r.next_node,
            next_edge: r.next_edge,
            edges: r.edges.iter().map(|(&(a, b), &e)| [a.0, b.0, e.0]).collect(),
            split_nodes: r.split_nodes.iter().map(|(&e, &n)| [e.0, n.0]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_id() {
        let mut r = InnovationRegistry::for_minimal(10);
        assert_eq!(r.edge_id(NodeId(0), NodeId(3)), EdgeId(2));
        let a = r.edge_id(NodeId(11), NodeId(4));
        let b = r.edge_id(NodeId(11), NodeId(4));
        assert_eq!(a, b);
        assert_eq!(a, EdgeId(10));
        let n1 = r.split_node_id(EdgeId(4));
        assert_eq!(r.split_node_id(EdgeId(4)), n1);
        assert_ne!(r.fresh_node(), n1);
    }

    #[test]
    fn ids_never_reused() {
        let mut r = InnovationRegistry::for_minimal(3);
        let mut seen = std::collections::HashSet::new();
        for i in 0..50 {
            assert!(seen.insert(r.edge_id(NodeId(100 + i), NodeId(200 + i))));
        }
        let mut nodes = std::collections::HashSet::new();
        for i in 0..50 {
            assert!(nodes.insert(r.split_node_id(EdgeId(1000 + i))));
            assert!(nodes.insert(r.fresh_node()));
        }
    }

    #[test]
    fn serde_round_trip() {
        let mut r = InnovationRegistry::for_minimal(4);
        r.edge_id(NodeId(7), NodeId(2));
        r.split_node_id(EdgeId(1));
        let json = serde_json::to_string(&r).unwrap();
        let back: InnovationRegistry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
