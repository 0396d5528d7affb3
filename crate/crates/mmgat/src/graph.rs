//! Directed KNN frame graphs with six mutual edge features per edge,
//! plus batching with a frame-membership index for pooling.
//!
//! Each target node receives edges from its K nearest neighbors
//! (Euclidean distance, ties broken by smaller point index) plus one
//! self-loop whose edge features are identically zero — the distance,
//! the zero-denominator direction rule and the feature differences all
//! vanish for a point paired with itself.

use thiserror::Error;

use crate::data::{RadarFrame, RadarPoint};
use crate::Real;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("frame {0} has no ground-truth keypoints")]
    UnlabeledFrame(u64),
    #[error("mixed joint counts in batch: {0} vs {1}")]
    MixedJointCounts(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
}

/// Graph construction configuration. `k_neighbors = 0` together with
/// `include_edge_features = false` is the no-mutual-feature ablation:
/// every node sees only itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub k_neighbors: usize,
    pub include_edge_features: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_neighbors: 20,
            include_edge_features: true,
        }
    }
}

/// Directed KNN graph of one frame. Edge `e` runs from neighbor
/// `edge_src[e]` to target `edge_dst[e]`; edges are grouped by target,
/// neighbors in (distance, index) order, self-loop last.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGraph<T> {
    pub n_nodes: usize,
    /// `n_nodes × 5` rows of (x, y, z, v, intensity).
    pub node_features: Vec<T>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// `n_edges × 6` mutual features.
    pub edge_features: Vec<T>,
}

impl<T> FrameGraph<T> {
    pub fn n_edges(&self) -> usize {
        self.edge_src.len()
    }
}

/// Concatenated frame graphs with node indices offset per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch<T> {
    pub n_nodes: usize,
    pub n_frames: usize,
    pub joint_count: usize,
    pub node_features: Vec<T>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_features: Vec<T>,
    /// Frame index of every node, non-decreasing.
    pub frame_of_node: Vec<usize>,
    /// `n_frames × 3J` flattened ground-truth keypoints.
    pub targets: Vec<T>,
}

impl<T> GraphBatch<T> {
    pub fn n_edges(&self) -> usize {
        self.edge_src.len()
    }
}

/// K nearest other points per target, by Euclidean distance, ties broken
/// by smaller point index. Output lists are (distance, index) ascending.
pub fn knn_neighbors<T: Real>(positions: &[[T; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut cand: Vec<(T, usize)> = (0..n)
            .filter(|&i| i != j)
            .map(|i| {
                let mut d2 = T::zero();
                for a in 0..3 {
                    let d = positions[i][a] - positions[j][a];
                    d2 = d2 + d * d;
                }
                (d2, i)
            })
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.truncate(k);
        out.push(cand.into_iter().map(|(_, i)| i).collect());
    }
    out
}

/// Six mutual features of the directed edge from neighbor `src` (p_k) to
/// target `dst` (p_j): distance, unit direction (p_k − p_j)/‖·‖ with the
/// zero-denominator rule mapping to zero, relative Doppler v_k − v_j and
/// relative intensity I_k − I_j.
pub fn edge_feature<T: Real>(src: &RadarPoint<T>, dst: &RadarPoint<T>) -> [T; 6] {
    let d = [src.x - dst.x, src.y - dst.y, src.z - dst.z];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dir = if dist > T::zero() {
        [d[0] / dist, d[1] / dist, d[2] / dist]
    } else {
        [T::zero(); 3]
    };
    [
        dist,
        dir[0],
        dir[1],
        dir[2],
        src.v - dst.v,
        src.intensity - dst.intensity,
    ]
}

/// Build the directed KNN graph of one frame. With
/// `include_edge_features = false` the edge-feature matrix is all-zero.
pub fn build_graph<T: Real>(frame: &RadarFrame<T>, cfg: &GraphConfig) -> FrameGraph<T> {
    assert!(!frame.points.is_empty(), "frame must be nonempty");
    let n = frame.points.len();
    let positions: Vec<[T; 3]> = frame.points.iter().map(|p| p.position()).collect();
    let neighbors = knn_neighbors(&positions, cfg.k_neighbors);

    let mut node_features = Vec::with_capacity(n * 5);
    for p in &frame.points {
        node_features.extend_from_slice(&[p.x, p.y, p.z, p.v, p.intensity]);
    }

    let mut edge_src = Vec::new();
    let mut edge_dst = Vec::new();
    let mut edge_features = Vec::new();
    for (j, ns) in neighbors.iter().enumerate() {
        for &k in ns {
            edge_src.push(k);
            edge_dst.push(j);
            if cfg.include_edge_features {
                edge_features.extend_from_slice(&edge_feature(
                    &frame.points[k],
                    &frame.points[j],
                ));
            } else {
                edge_features.extend_from_slice(&[T::zero(); 6]);
            }
        }
        // Self-loop: zero mutual features by the zero-denominator rule.
        edge_src.push(j);
        edge_dst.push(j);
        edge_features.extend_from_slice(&[T::zero(); 6]);
    }
    FrameGraph {
        n_nodes: n,
        node_features,
        edge_src,
        edge_dst,
        edge_features,
    }
}

/// Concatenate per-frame graphs with node-index offsets and collect the
/// flattened ground-truth keypoints. All frames must be labeled with the
/// same joint count.
pub fn build_batch<T: Real>(
    frames: &[&RadarFrame<T>],
    cfg: &GraphConfig,
) -> Result<GraphBatch<T>, GraphError> {
    if frames.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let mut joint_count = None;
    for f in frames {
        let sk = f
            .keypoints
            .as_ref()
            .ok_or(GraphError::UnlabeledFrame(f.frame_id))?;
        match joint_count {
            None => joint_count = Some(sk.joint_count()),
            Some(j) if j != sk.joint_count() => {
                return Err(GraphError::MixedJointCounts(j, sk.joint_count()))
            }
            _ => {}
        }
    }
    let joint_count = joint_count.unwrap();

    let mut batch = GraphBatch {
        n_nodes: 0,
        n_frames: frames.len(),
        joint_count,
        node_features: Vec::new(),
        edge_src: Vec::new(),
        edge_dst: Vec::new(),
        edge_features: Vec::new(),
        frame_of_node: Vec::new(),
        targets: Vec::new(),
    };
    for (b, f) in frames.iter().enumerate() {
        let g = build_graph(f, cfg);
        let off = batch.n_nodes;
        batch.node_features.extend_from_slice(&g.node_features);
        batch.edge_src.extend(g.edge_src.iter().map(|&s| s + off));
        batch.edge_dst.extend(g.edge_dst.iter().map(|&d| d + off));
        batch.edge_features.extend_from_slice(&g.edge_features);
        batch.frame_of_node.extend(std::iter::repeat(b).take(g.n_nodes));
        batch.n_nodes += g.n_nodes;
        batch
            .targets
            .extend(f.keypoints.as_ref().unwrap().flatten());
    }
    Ok(batch)
}
