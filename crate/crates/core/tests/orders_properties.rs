mod common;

use amodal_forge::orders::{assign_layers, build_occlusion_graph, OcclusionKind};
use amodal_forge::raster::Mask;
use proptest::prelude::*;

use common::{pixel_relations, recurrence_layers};

fn rect_masks(rects: &[(usize, usize, usize, usize)]) -> Vec<Mask> {
    rects
        .iter()
        .map(|&(x0, y0, w, h)| Mask::from_fn(24, 24, |x, y| (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)))
        .collect()
}

fn stack() -> impl Strategy<Value = Vec<(usize, usize, usize, usize)>> {
    prop::collection::vec((0usize..16, 0usize..16, 1usize..10, 1usize..10), 1..7)
}

proptest! {
    #[test]
    fn graph_matches_pixel_oracle(rects in stack()) {
        let amodal = rect_masks(&rects);
        let graph = build_occlusion_graph(&amodal);
        let (direct, overlap) = pixel_relations(&amodal);
        let n = amodal.len();
        prop_assert!(graph.edges.len() <= n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..n {
                let expected = if direct[i][j] {
                    Some(OcclusionKind::Direct)
                } else if overlap[i][j] {
                    Some(OcclusionKind::Indirect)
                } else {
                    None
                };
                prop_assert_eq!(graph.edge(i, j), expected, "pair ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn layers_follow_recurrence(rects in stack()) {
        let amodal = rect_masks(&rects);
        let graph = build_occlusion_graph(&amodal);
        let layers = assign_layers(&graph).unwrap();
        let (direct, _) = pixel_relations(&amodal);
        prop_assert_eq!(&layers.layers, &recurrence_layers(&direct));
        prop_assert!(layers.max_layer().unwrap_or(0) < amodal.len() as u32);
    }

    #[test]
    fn removing_a_direct_occluder_only_promotes_edges(rects in stack(), pick in any::<prop::sample::Index>()) {
        let amodal = rect_masks(&rects);
        let graph = build_occlusion_graph(&amodal);
        let direct: Vec<usize> = graph.direct_edges().map(|e| e.occluder).collect();
        if direct.is_empty() {
            return Ok(());
        }
        let removed = direct[pick.index(direct.len())];
        let before = assign_layers(&graph).unwrap().layers;
        let keep: Vec<usize> = (0..amodal.len()).filter(|&k| k != removed).collect();
        let rest: Vec<Mask> = keep.iter().map(|&k| amodal[k].clone()).collect();
        let reduced = build_occlusion_graph(&rest);
        let after = assign_layers(&reduced).unwrap().layers;

        // Pairs survive, direct stays direct, and only indirect -> direct can change.
        let mut promoted = false;
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                let (old, new) = (graph.edge(i, j), reduced.edge(a, b));
                prop_assert_eq!(old.is_some(), new.is_some(), "pair ({}, {})", i, j);
                prop_assert!(old != Some(OcclusionKind::Direct) || new == Some(OcclusionKind::Direct));
                promoted |= old == Some(OcclusionKind::Indirect) && new == Some(OcclusionKind::Direct);
            }
        }

        // Layers never exceed the recurrence over every overlap edge.
        let (_, overlap) = pixel_relations(&rest);
        for (a, b) in after.iter().zip(recurrence_layers(&overlap)) {
            prop_assert!(*a <= b);
        }
        if !promoted {
            for (a, &k) in after.iter().zip(&keep) {
                prop_assert!(*a <= before[k]);
            }
        }
    }
}

// Removing the top instance turns 1 into the sole cover of 0's row 10, so 0 drops a layer deeper.
#[test]
fn removal_can_promote_an_indirect_occluder() {
    let amodal = rect_masks(&[(5, 4, 3, 8), (4, 10, 9, 1), (8, 7, 1, 4), (0, 2, 8, 9)]);
    let graph = build_occlusion_graph(&amodal);
    assert_eq!(graph.edge(1, 0), Some(OcclusionKind::Indirect));
    assert_eq!(assign_layers(&graph).unwrap().layers, vec![1, 1, 0, 0]);

    let reduced = build_occlusion_graph(&amodal[..3]);
    assert_eq!(reduced.edge(1, 0), Some(OcclusionKind::Direct));
    assert_eq!(assign_layers(&reduced).unwrap().layers, vec![2, 1, 0]);
}
