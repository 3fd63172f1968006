//! Edge graph of a mesh with Euclidean edge lengths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::laplacian::unique_edges;
use super::TriMesh;

#[derive(Debug, Clone)]
pub struct EdgeGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
}

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then on vertex index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl EdgeGraph {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let edges = unique_edges(mesh.faces());
        let mut adjacency = vec![Vec::new(); mesh.vertex_count()];
        for &(i, j) in &edges {
            let w = (mesh.vertices()[i] - mesh.vertices()[j]).norm();
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        Self {
            adjacency,
            edge_count: edges.len(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    /// Connected-component label per vertex, labels numbered in order of
    /// their smallest vertex. Returns (labels, component count).
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.adjacency.len();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Single-source shortest-path distances; unreachable vertices are `inf`.
    pub fn shortest_paths(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        self.relax_from(source, &mut dist);
        dist
    }

    /// Lowers `dist` to the distance from `source` wherever that is smaller,
    /// exploring only vertices whose distance improves. Used to maintain
    /// distance-to-set incrementally.
    pub(crate) fn relax_from(&self, source: usize, dist: &mut [f64]) {
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry {
            dist: 0.0,
            vertex: source,
        });
        while let Some(Entry { dist: d, vertex }) = heap.pop() {
            if d > dist[vertex] {
                continue;
            }
            for &(u, w) in &self.adjacency[vertex] {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Entry { dist: nd, vertex: u });
                }
            }
        }
    }
}
