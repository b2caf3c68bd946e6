//! Pairwise occlusion order and per-instance layer order.
//!
//! Instances are indexed in stack order (index `i` is hidden by every
//! `j > i`). An occluder `i` of `j` is *direct* when it alone hides at
//! least one pixel of `j`, i.e. removing `i` would reveal part of `j`;
//! otherwise the amodal overlap is recorded as *indirect*.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionKind {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OcclusionEdge {
    pub occluder: usize,
    pub occludee: usize,
    pub kind: OcclusionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OcclusionGraph {
    pub n: usize,
    /// Sorted by `(occluder, occludee)`.
    pub edges: Vec<OcclusionEdge>,
}

impl OcclusionGraph {
    pub fn direct_edges(&self) -> impl Iterator<Item = &OcclusionEdge> {
        self.edges.iter().filter(|e| e.kind == OcclusionKind::Direct)
    }

    pub fn edge(&self, occluder: usize, occludee: usize) -> Option<OcclusionKind> {
        self.edges
            .iter()
            .find(|e| e.occluder == occluder && e.occludee == occludee)
            .map(|e| e.kind)
    }
}

pub fn build_occlusion_graph(amodal: &[Mask]) -> OcclusionGraph {
    let n = amodal.len();
    let mut overlap = vec![vec![false; n]; n];
    let mut direct = vec![vec![false; n]; n];
    for j in 0..n {
        let (w, h) = amodal[j].size();
        for y in 0..h {
            for x in 0..w {
                if !amodal[j].get(x, y) {
                    continue;
                }
                let mut count = 0;
                let mut sole = 0;
                for (k, above) in amodal.iter().enumerate().skip(j + 1) {
                    if above.get(x, y) {
                        overlap[k][j] = true;
                        count += 1;
                        sole = k;
                    }
                }
                if count == 1 {
                    direct[sole][j] = true;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if overlap[i][j] {
                edges.push(OcclusionEdge {
                    occluder: i,
                    occludee: j,
                    kind: if direct[i][j] {
                        OcclusionKind::Direct
                    } else {
                        OcclusionKind::Indirect
                    },
                });
            }
        }
    }
    OcclusionGraph { n, edges }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerAssignment {
    pub layers: Vec<u32>,
}

impl LayerAssignment {
    pub fn max_layer(&self) -> Option<u32> {
        self.layers.iter().copied().max()
    }
}

/// Layer 0 for instances without a direct occluder, otherwise one more than
/// the deepest direct occluder. Indirect edges are ignored.
pub fn assign_layers(graph: &OcclusionGraph) -> Result<LayerAssignment> {
    let n = graph.n;
    let mut occluders: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut occludees: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in graph.direct_edges() {
        if e.occluder >= n || e.occludee >= n {
            return Err(Error::Config(format!(
                "edge ({}, {}) out of range for {n} instances",
                e.occluder, e.occludee
            )));
        }
        occluders[e.occludee].push(e.occluder);
        occludees[e.occluder].push(e.occludee);
    }
    // Kahn's algorithm from the unoccluded instances downwards
    let mut pending: Vec<usize> = occluders.iter().map(Vec::len).collect();
    let mut layers = vec![0u32; n];
    let mut queue: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut done = 0;
    while let Some(i) = queue.pop() {
        done += 1;
        for &j in &occludees[i] {
            layers[j] = layers[j].max(layers[i] + 1);
            pending[j] -= 1;
            if pending[j] == 0 {
                queue.push(j);
            }
        }
    }
    if done != n {
        return Err(Error::Cycle);
    }
    Ok(LayerAssignment { layers })
}

/// Instance count at each layer value `0..=max`.
pub fn layer_histogram<'a>(assignments: impl IntoIterator<Item = &'a LayerAssignment>) -> Vec<u64> {
    let mut hist = Vec::new();
    for a in assignments {
        for &l in &a.layers {
            if hist.len() <= l as usize {
                hist.resize(l as usize + 1, 0);
            }
            hist[l as usize] += 1;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(40, 40, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    fn edge(occluder: usize, occludee: usize, kind: OcclusionKind) -> OcclusionEdge {
        OcclusionEdge {
            occluder,
            occludee,
            kind,
        }
    }

    #[test]
    fn disjoint_has_no_edges() {
        let g = build_occlusion_graph(&[rect(0, 0, 5, 5), rect(10, 10, 15, 15)]);
        assert!(g.edges.is_empty());
        assert_eq!(assign_layers(&g).unwrap().layers, vec![0, 0]);
    }

    #[test]
    fn two_overlapping() {
        // index 1 (A) above index 0 (B)
        let g = build_occlusion_graph(&[rect(0, 0, 10, 10), rect(5, 0, 15, 10)]);
        assert_eq!(g.edges, vec![edge(1, 0, OcclusionKind::Direct)]);
    }

    /// Per-pixel oracle: i directly occludes j iff some pixel of j is covered
    /// by i and by no other instance above j.
    fn oracle(masks: &[Mask]) -> Vec<OcclusionEdge> {
        let mut out = Vec::new();
        for i in 0..masks.len() {
            for j in 0..i {
                let (mut overlap, mut direct) = (false, false);
                for y in 0..40 {
                    for x in 0..40 {
                        if masks[i].get(x, y) && masks[j].get(x, y) {
                            overlap = true;
                            let others = (j + 1..masks.len()).filter(|&k| k != i).any(|k| masks[k].get(x, y));
                            direct |= !others;
                        }
                    }
                }
                if overlap {
                    let kind = if direct { OcclusionKind::Direct } else { OcclusionKind::Indirect };
                    out.push(edge(i, j, kind));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn indirect_through_middle_layer() {
        // stack bottom to top: C, B, A
        let c = rect(0, 0, 20, 10);
        let b = rect(10, 0, 30, 10);
        // A overlaps B, and overlaps C only inside B's cover (x 10..15)
        let a = rect(12, 0, 35, 10);
        let masks = [c, b, a];
        let g = build_occlusion_graph(&masks);
        assert_eq!(
            g.edges,
            vec![
                edge(1, 0, OcclusionKind::Direct),
                edge(2, 0, OcclusionKind::Indirect),
                edge(2, 1, OcclusionKind::Direct),
            ]
        );
        assert_eq!(g.edges, oracle(&masks));
        assert_eq!(assign_layers(&g).unwrap().layers, vec![2, 1, 0]);
    }

    #[test]
    fn chain_and_diamond_layers() {
        let chain = OcclusionGraph {
            n: 3,
            edges: vec![edge(0, 1, OcclusionKind::Direct), edge(1, 2, OcclusionKind::Direct)],
        };
        assert_eq!(assign_layers(&chain).unwrap().layers, vec![0, 1, 2]);
        let diamond = OcclusionGraph {
            n: 4,
            edges: vec![
                edge(0, 1, OcclusionKind::Direct),
                edge(0, 2, OcclusionKind::Direct),
                edge(1, 3, OcclusionKind::Direct),
                edge(2, 3, OcclusionKind::Direct),
            ],
        };
        assert_eq!(assign_layers(&diamond).unwrap().layers, vec![0, 1, 1, 2]);
    }

    #[test]
    fn indirect_edges_do_not_affect_layers() {
        let g = OcclusionGraph {
            n: 2,
            edges: vec![edge(0, 1, OcclusionKind::Indirect)],
        };
        assert_eq!(assign_layers(&g).unwrap().layers, vec![0, 0]);
    }

    #[test]
    fn cycle_is_an_error() {
        let g = OcclusionGraph {
            n: 2,
            edges: vec![edge(0, 1, OcclusionKind::Direct), edge(1, 0, OcclusionKind::Direct)],
        };
        assert!(matches!(assign_layers(&g), Err(Error::Cycle)));
    }

    #[test]
    fn histogram_counts() {
        let a = LayerAssignment { layers: vec![0, 1, 2] };
        let b = LayerAssignment { layers: vec![0] };
        assert_eq!(layer_histogram([&a, &b]), vec![2, 1, 1]);
        assert!(layer_histogram(std::iter::empty()).is_empty());
    }
}
