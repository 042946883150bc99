//! Directed road-network graphs tied to traffic-matrix rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One directed road segment. `segment_row` is the row of the traffic
/// matrix carrying this segment's travel times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub edge_id: usize,
    pub from: usize,
    pub to: usize,
    pub segment_row: usize,
}

/// An origin-destination routing query departing at `departure` (Unix
/// seconds, may be fractional).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ODQuery {
    pub origin: usize,
    pub destination: usize,
    pub departure: f64,
}

/// A directed multigraph whose edges map one-to-one onto the rows of an
/// `m`-row traffic matrix: every edge carries a distinct `segment_row`,
/// and together they cover `0..m` exactly.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    segments: Vec<Segment>,
    /// Out-edge indices per vertex, ascending by `edge_id`.
    adjacency: Vec<Vec<usize>>,
    n_vertices: usize,
}

impl RoadNetwork {
    /// Build a network and validate the segment-row bijection.
    ///
    /// Vertex ids are dense: `n_vertices` is one past the largest id that
    /// appears. Parallel edges and self-loops are allowed; duplicate
    /// `edge_id`s or `segment_row`s are not.
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("network has no segments".into()));
        }
        segments.sort_by_key(|s| s.edge_id);
        for pair in segments.windows(2) {
            if pair[0].edge_id == pair[1].edge_id {
                return Err(Error::InvalidInput(format!("duplicate edge_id {}", pair[0].edge_id)));
            }
        }
        // segment_row must be a bijection onto 0..m.
        let m = segments.len();
        let mut seen = vec![false; m];
        for s in &segments {
            if s.segment_row >= m {
                return Err(Error::InvalidInput(format!(
                    "edge {}: segment_row {} out of range 0..{m}",
                    s.edge_id, s.segment_row
                )));
            }
            if seen[s.segment_row] {
                return Err(Error::InvalidInput(format!(
                    "segment_row {} assigned to more than one edge",
                    s.segment_row
                )));
            }
            seen[s.segment_row] = true;
        }

        let n_vertices = segments.iter().map(|s| s.from.max(s.to)).max().unwrap() + 1;
        let mut adjacency = vec![Vec::new(); n_vertices];
        for (idx, s) in segments.iter().enumerate() {
            adjacency[s.from].push(idx);
        }
        // `segments` is sorted by edge_id, so each adjacency list already
        // ascends by edge_id — the order routing relies on for ties.
        Ok(RoadNetwork { segments, adjacency, n_vertices })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Number of segments, equal to the row count `m` of an aligned matrix.
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// All segments, ascending by `edge_id`.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, idx: usize) -> &Segment {
        &self.segments[idx]
    }

    /// Indices (into [`segments`](Self::segments)) of the out-edges of `v`,
    /// ascending by `edge_id`.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Index of the segment with the given `edge_id`, if present.
    pub fn index_of_edge(&self, edge_id: usize) -> Option<usize> {
        self.segments.binary_search_by_key(&edge_id, |s| s.edge_id).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(edge_id: usize, from: usize, to: usize, row: usize) -> Segment {
        Segment { edge_id, from, to, segment_row: row }
    }

    #[test]
    fn builds_and_orders_adjacency_by_edge_id() {
        let net =
            RoadNetwork::new(vec![seg(7, 0, 1, 2), seg(3, 0, 2, 0), seg(5, 1, 2, 1)]).unwrap();
        assert_eq!(net.n_vertices(), 3);
        assert_eq!(net.n_segments(), 3);
        let out: Vec<usize> = net.out_edges(0).iter().map(|&i| net.segment(i).edge_id).collect();
        assert_eq!(out, vec![3, 7]);
    }

    #[test]
    fn rejects_duplicate_edge_ids() {
        let err = RoadNetwork::new(vec![seg(1, 0, 1, 0), seg(1, 1, 0, 1)]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_broken_row_bijection() {
        // Row repeated.
        assert!(RoadNetwork::new(vec![seg(0, 0, 1, 0), seg(1, 1, 0, 0)]).is_err());
        // Row out of range (m = 2, rows must be {0, 1}).
        assert!(RoadNetwork::new(vec![seg(0, 0, 1, 0), seg(1, 1, 0, 2)]).is_err());
    }

    #[test]
    fn allows_parallel_edges() {
        let net = RoadNetwork::new(vec![seg(0, 0, 1, 0), seg(1, 0, 1, 1)]).unwrap();
        assert_eq!(net.out_edges(0).len(), 2);
    }
}
