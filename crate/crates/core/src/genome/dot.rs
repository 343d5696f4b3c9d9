use std::fmt::Write;

use super::{EdgeWeights, Genome, NodeKind};

/// Renders a genome as a Graphviz digraph. Nodes are labeled with their
/// feature-map size and depth; convolutional edges are black, pooling
/// edges blue; disabled elements are dashed.
pub fn export_dot(genome: &Genome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph genome_{} {{", genome.generation_id.0);
    let _ = writeln!(out, "  rankdir=LR;");
    for n in &genome.nodes {
        let shape = match n.kind {
            NodeKind::Input => "invhouse",
            NodeKind::Hidden => "box",
            NodeKind::Output => "house",
        };
        let style = if n.enabled { "solid" } else { "dashed" };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\n{}x{}\\nd={:.4}\", shape={shape}, style={style}];",
            n.id.0, n.id.0, n.size_x, n.size_y, n.depth
        );
    }
    for e in &genome.edges {
        let (color, label) = match &e.weights {
            EdgeWeights::Convolutional { filter_x, filter_y, .. } => ("black", format!("conv {filter_x}x{filter_y}")),
            EdgeWeights::Pooling { .. } => ("blue", "pool".to_owned()),
        };
        let style = if e.enabled { "solid" } else { "dashed" };
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{label}\", color={color}, style={style}];",
            e.in_node.0, e.out_node.0
        );
    }
    out.push_str("}\n");
    out
}
