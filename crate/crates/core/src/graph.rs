//! Spatio-temporal region graph.
//!
//! Node `i` is region `i % R` of frame `i / R`. Every region is connected to
//! all regions of its own frame (self included) and of the frames within
//! `window` of it. The structure depends on `(T, R)` only.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Frames on either side of a node's frame that it attends to.
pub const TEMPORAL_WINDOW: usize = 1;

/// Default cap on `T * R`; larger videos are rejected rather than truncated.
pub const DEFAULT_MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGraph {
    frames: usize,
    regions: usize,
    window: usize,
    /// CSR offsets into `neighbors`, length `N + 1`.
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl RegionGraph {
    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn node_frame(&self, node: usize) -> usize {
        node / self.regions
    }

    /// Sorted neighbours of `node`, including `node` itself.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Total directed adjacency entries (self-loops counted once).
    pub fn edge_entries(&self) -> usize {
        self.neighbors.len()
    }

    /// Start offset of each node's neighbour list in the flattened edge array.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Degree -> number of nodes with that degree.
    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for i in 0..self.nodes() {
            *hist.entry(self.degree(i)).or_insert(0) += 1;
        }
        hist
    }
}

pub fn build_region_graph(frames: usize, regions: usize) -> Result<RegionGraph> {
    build_region_graph_with(frames, regions, TEMPORAL_WINDOW, DEFAULT_MAX_NODES)
}

pub fn build_region_graph_with(
    frames: usize,
    regions: usize,
    window: usize,
    max_nodes: usize,
) -> Result<RegionGraph> {
    if frames == 0 || regions == 0 {
        return Err(Error::InvalidInput(format!(
            "graph needs at least one frame and region, got {frames}x{regions}"
        )));
    }
    let nodes = frames.checked_mul(regions).ok_or(Error::GraphTooLarge {
        nodes: usize::MAX,
        limit: max_nodes,
    })?;
    if nodes > max_nodes {
        return Err(Error::GraphTooLarge {
            nodes,
            limit: max_nodes,
        });
    }

    let mut offsets = Vec::with_capacity(nodes + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for t in 0..frames {
        let lo = t.saturating_sub(window) * regions;
        let hi = (t + window).min(frames - 1) * regions + regions;
        for _ in 0..regions {
            neighbors.extend(lo..hi);
            offsets.push(neighbors.len());
        }
    }
    Ok(RegionGraph {
        frames,
        regions,
        window,
        offsets,
        neighbors,
    })
}
