use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::store::GuidanceMatrix;

/// Pairwise guidance similarity `S = YᵀY` and the thresholded adjacency
/// `A_ij = [S_ij > p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub similarity: Matrix,
    pub adjacency: Vec<Vec<bool>>,
    pub threshold: f64,
}

impl SimilarityGraph {
    /// Wraps an explicit adjacency (used by tests and oracles).
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let k = adjacency.len();
        if adjacency.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("adjacency is not square".into()));
        }
        Ok(SimilarityGraph {
            similarity: Matrix::zeros(k, k),
            adjacency,
            threshold: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

pub fn similarity_graph(guidance: &GuidanceMatrix, p: f64) -> Result<SimilarityGraph> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::BadThreshold(p));
    }
    let similarity = guidance.matrix().gram();
    let k = similarity.rows();
    let adjacency = (0..k)
        .map(|i| (0..k).map(|j| similarity[(i, j)] > p).collect())
        .collect();
    Ok(SimilarityGraph {
        similarity,
        adjacency,
        threshold: p,
    })
}

/// A partition of the classes into groups.
///
/// Groups are ordered by their smallest member and members ascend, so the
/// same adjacency always yields the same grouping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    class_to_group: Vec<(usize, usize)>,
}

impl Grouping {
    /// Validates and canonicalizes an explicit partition of `0..k`.
    pub fn from_groups(mut groups: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        let mut slot: Vec<Option<(usize, usize)>> = vec![None; k];
        for g in &mut groups {
            if g.is_empty() {
                return Err(Error::Shape("empty group".into()));
            }
            g.sort_unstable();
        }
        groups.sort_by_key(|g| g[0]);
        for (gi, g) in groups.iter().enumerate() {
            for (m, &c) in g.iter().enumerate() {
                if c >= k {
                    return Err(Error::Shape(format!("class {c} outside 0..{k}")));
                }
                if slot[c].replace((gi, m)).is_some() {
                    return Err(Error::Shape(format!("class {c} in two groups")));
                }
            }
        }
        let class_to_group = slot
            .into_iter()
            .enumerate()
            .map(|(c, s)| s.ok_or_else(|| Error::Shape(format!("class {c} in no group"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Grouping {
            groups,
            class_to_group,
        })
    }

    pub fn singletons(k: usize) -> Self {
        Grouping {
            groups: (0..k).map(|c| vec![c]).collect(),
            class_to_group: (0..k).map(|c| (c, 0)).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_group.len()
    }

    /// `(group, position within group)` of a class.
    pub fn locate(&self, class: usize) -> (usize, usize) {
        self.class_to_group[class]
    }

    /// Global class index of member `member` of group `group`.
    pub fn class_of(&self, group: usize, member: usize) -> usize {
        self.groups[group][member]
    }
}

/// Connected components of the adjacency by depth-first search. A path
/// between two classes puts them in the same group.
pub fn connected_groups(graph: &SimilarityGraph) -> Grouping {
    let k = graph.len();
    let mut visited = vec![false; k];
    let mut groups = Vec::new();
    let mut stack = Vec::new();
    for start in 0..k {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut group = Vec::new();
        while let Some(n) = stack.pop() {
            group.push(n);
            for (m, &linked) in graph.adjacency[n].iter().enumerate() {
                if linked && !visited[m] {
                    visited[m] = true;
                    stack.push(m);
                }
            }
        }
        groups.push(group);
    }
    Grouping::from_groups(groups, k).expect("DFS visits every node exactly once")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(k: usize, edges: &[(usize, usize)]) -> SimilarityGraph {
        let mut a = vec![vec![false; k]; k];
        for &(i, j) in edges {
            a[i][j] = true;
            a[j][i] = true;
        }
        SimilarityGraph::from_adjacency(a).unwrap()
    }

    #[test]
    fn orthogonal_guidance_only_self_loops() {
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let y =
            GuidanceMatrix::from_columns(&cols, (0..4).map(|i| format!("c{i}")).collect()).unwrap();
        let g = similarity_graph(&y, 0.85).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.adjacency[i][j], i == j);
            }
        }
    }

    #[test]
    fn threshold_is_strict() {
        // cos = 0.85 exactly: (0.85, sqrt(1 - 0.85^2)) against (1, 0)
        let s = (1.0f64 - 0.85 * 0.85).sqrt();
        let y = GuidanceMatrix::from_columns(
            &[vec![1.0, 0.0], vec![0.85, s]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let g = similarity_graph(&y, 0.85).unwrap();
        let sim = g.similarity[(0, 1)];
        assert_eq!(g.adjacency[0][1], sim > 0.85);
        let at = similarity_graph(&y, sim).unwrap();
        assert!(!at.adjacency[0][1]);
    }

    #[test]
    fn bad_thresholds() {
        let y = GuidanceMatrix::from_columns(&[vec![1.0, 0.0]], vec!["a".into()]).unwrap();
        for p in [0.0, -0.5, 1.0001, f64::NAN] {
            assert!(matches!(
                similarity_graph(&y, p),
                Err(Error::BadThreshold(_))
            ));
        }
        assert!(similarity_graph(&y, 1.0).is_ok());
    }

    #[test]
    fn no_edges_gives_singletons() {
        let g = connected_groups(&graph(5, &[]));
        assert_eq!(g, Grouping::singletons(5));
    }

    #[test]
    fn complete_graph_gives_one_group() {
        let edges: Vec<_> = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).collect();
        let g = connected_groups(&graph(6, &edges));
        assert_eq!(g.groups(), &[vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn chain_is_transitive_and_ordered() {
        let g = connected_groups(&graph(7, &[(5, 1), (1, 3), (2, 6)]));
        assert_eq!(g.groups(), &[vec![0], vec![1, 3, 5], vec![2, 6], vec![4]]);
        assert_eq!(g.locate(5), (1, 2));
        assert_eq!(g.class_of(2, 1), 6);
    }

    #[test]
    fn from_groups_rejects_overlap_and_gaps() {
        assert!(Grouping::from_groups(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(Grouping::from_groups(vec![vec![0]], 2).is_err());
    }
}
