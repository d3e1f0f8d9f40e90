//! Euclidean distance and exact nearest-neighbour search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::backend::Embedding;
use crate::{Error, Result};

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::argument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// A labeled instance's context and its embedding.
#[derive(Debug, Clone)]
pub struct LabeledContext {
    pub id: String,
    pub context: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// Neighbours of a query, ascending by `(distance, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

/// Heap entry ordered by `(distance, id)`; the max-heap keeps the current
/// worst of the best k on top.
struct Ranked<'a> {
    distance: f64,
    index: usize,
    id: &'a str,
}

impl Ranked<'_> {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// The `k` corpus entries closest to `query` whose context differs from
/// `excluded_context`. Returns every eligible entry when fewer than `k`
/// remain.
pub fn knn(
    query_id: &str,
    query: &Embedding,
    corpus: &[LabeledContext],
    k: usize,
    excluded_context: &str,
) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::argument("k must be >= 1"));
    }
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (index, entry) in corpus.iter().enumerate() {
        if entry.context == excluded_context {
            continue;
        }
        let ranked = Ranked {
            distance: euclidean(query.as_slice(), entry.embedding.as_slice())?,
            index,
            id: &entry.id,
        };
        if heap.len() < k {
            heap.push(ranked);
        } else if heap.peek().is_some_and(|worst| ranked < *worst) {
            heap.pop();
            heap.push(ranked);
        }
    }
    if heap.is_empty() {
        return Err(Error::NoEligibleNeighbors);
    }
    let neighbors = heap
        .into_sorted_vec()
        .into_iter()
        .map(|r| Neighbor {
            id: corpus[r.index].id.clone(),
            distance: r.distance,
        })
        .collect();
    Ok(NeighborSet {
        query_id: query_id.to_string(),
        neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, ctx: &str, v: Vec<f64>) -> LabeledContext {
        LabeledContext {
            id: id.into(),
            context: ctx.into(),
            embedding: Embedding::new(v).unwrap(),
        }
    }

    #[test]
    fn euclidean_basics() {
        assert_eq!(euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn excludes_same_context() {
        let corpus = vec![
            entry("dup", "query ctx", vec![0.0, 0.0]),
            entry("near", "other", vec![1.0, 0.0]),
            entry("far", "third", vec![5.0, 0.0]),
        ];
        let q = Embedding::new(vec![0.0, 0.0]).unwrap();
        let n = knn("q", &q, &corpus, 1, "query ctx").unwrap();
        assert_eq!(n.neighbors.len(), 1);
        assert_eq!(n.neighbors[0].id, "near");

        let all = knn("q", &q, &corpus, 10, "query ctx").unwrap();
        let ids: Vec<_> = all.neighbors.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["near", "far"]);

        let only_dup = &corpus[..1];
        assert!(matches!(
            knn("q", &q, only_dup, 3, "query ctx"),
            Err(Error::NoEligibleNeighbors)
        ));
    }

    #[test]
    fn ties_broken_by_id() {
        let corpus = vec![
            entry("b", "1", vec![1.0]),
            entry("a", "2", vec![-1.0]),
            entry("c", "3", vec![1.0]),
        ];
        let q = Embedding::new(vec![0.0]).unwrap();
        let n = knn("q", &q, &corpus, 2, "").unwrap();
        let ids: Vec<_> = n.neighbors.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    proptest! {
        #[test]
        fn euclidean_symmetric_nonnegative(
            a in prop::collection::vec(-10.0f64..10.0, 8),
            b in prop::collection::vec(-10.0f64..10.0, 8),
        ) {
            let d1 = euclidean(&a, &b).unwrap();
            prop_assert!(d1 >= 0.0);
            prop_assert_eq!(d1, euclidean(&b, &a).unwrap());
        }
    }
}
