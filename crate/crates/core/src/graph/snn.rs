use super::AttributedGraph;

/// Shared-nearest-neighbor counts over the edges of a graph, and each
/// node's most similar neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnnTable {
    nearest_neighbor: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    /// `similarity[i][p]` pairs with `neighbors[i][p]`.
    similarity: Vec<Vec<u32>>,
}

impl SnnTable {
    pub fn num_nodes(&self) -> usize {
        self.nearest_neighbor.len()
    }

    /// Neighbor with the largest shared-neighbor count (lowest index on
    /// ties); an isolated node is its own nearest neighbor.
    pub fn nearest_neighbor(&self, node: usize) -> usize {
        self.nearest_neighbor[node]
    }

    pub fn nearest_neighbors(&self) -> &[usize] {
        &self.nearest_neighbor
    }

    /// `|N(i) ∩ N(j)|` for adjacent `i, j`; zero otherwise.
    pub fn similarity(&self, i: usize, j: usize) -> u32 {
        match self.neighbors[i].binary_search(&j) {
            Ok(p) => self.similarity[i][p],
            Err(_) => 0,
        }
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> u32 {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

pub fn compute_snn(graph: &AttributedGraph) -> SnnTable {
    let adj = graph.adjacency();
    let n = adj.num_nodes();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| adj.neighbors(i).to_vec()).collect();
    let similarity: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            neighbors[i]
                .iter()
                .map(|&j| sorted_intersection_len(&neighbors[i], &neighbors[j]))
                .collect()
        })
        .collect();
    let nearest_neighbor = (0..n)
        .map(|i| {
            // Neighbor lists are ascending, so a strict comparison keeps
            // the lowest index among equal counts.
            let mut best: Option<(usize, u32)> = None;
            for (&j, &s) in neighbors[i].iter().zip(&similarity[i]) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            best.map_or(i, |(j, _)| j)
        })
        .collect();
    SnnTable {
        nearest_neighbor,
        neighbors,
        similarity,
    }
}
