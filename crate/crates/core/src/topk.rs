//! Top-k selection producing ranked [`ScoredHit`] lists.
//!
//! Ordering everywhere: higher score first, ties broken by ascending doc id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::types::ScoredHit;

#[derive(Debug, Clone, Copy)]
struct Entry {
    doc_id: u64,
    score: f64,
}

impl Entry {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.doc_id.cmp(&other.doc_id))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
// Max-heap top = worst ranked entry.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Bounded collector keeping the best `k` entries seen so far.
#[derive(Debug)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, doc_id: u64, score: f64) {
        if self.k == 0 {
            return;
        }
        let entry = Entry { doc_id, score };
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if let Some(worst) = self.heap.peek() {
            if entry.rank_cmp(worst) == Ordering::Less {
                self.heap.pop();
                self.heap.push(entry);
            }
        }
    }

    pub fn into_hits(self) -> Vec<ScoredHit> {
        let mut entries = self.heap.into_vec();
        entries.sort_unstable_by(Entry::rank_cmp);
        to_hits(entries)
    }
}

fn to_hits(entries: Vec<Entry>) -> Vec<ScoredHit> {
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| ScoredHit {
            doc_id: e.doc_id,
            score: e.score,
            rank: i + 1,
        })
        .collect()
}

/// Ranks `(doc_id, score)` candidates and keeps the best `k`.
///
/// Candidates must have distinct ids. Uses a bounded heap when `k` is small
/// relative to the candidate count and a full sort otherwise.
pub fn select_top_k<I>(candidates: I, k: usize) -> Vec<ScoredHit>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let iter = candidates.into_iter();
    let (lower, _) = iter.size_hint();
    if k.saturating_mul(4) > lower {
        let mut entries: Vec<Entry> = iter.map(|(doc_id, score)| Entry { doc_id, score }).collect();
        entries.sort_unstable_by(Entry::rank_cmp);
        entries.truncate(k);
        to_hits(entries)
    } else {
        let mut top = TopK::new(k);
        for (doc_id, score) in iter {
            top.push(doc_id, score);
        }
        top.into_hits()
    }
}

/// Like [`select_top_k`] but tolerates repeated ids, keeping each id's best score.
pub fn select_top_k_dedup<I>(candidates: I, k: usize) -> Vec<ScoredHit>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let mut entries: Vec<Entry> = candidates
        .into_iter()
        .map(|(doc_id, score)| Entry { doc_id, score })
        .collect();
    entries.sort_unstable_by(Entry::rank_cmp);
    let mut seen = HashSet::new();
    entries.retain(|e| seen.insert(e.doc_id));
    entries.truncate(k);
    to_hits(entries)
}

/// Checks the shared result-list postcondition: ranks `1..=len`, scores
/// non-increasing, equal scores ordered by ascending id, no repeated ids.
pub fn is_well_ordered(hits: &[ScoredHit]) -> bool {
    let mut seen = HashSet::new();
    for (i, hit) in hits.iter().enumerate() {
        if hit.rank != i + 1 || !seen.insert(hit.doc_id) {
            return false;
        }
        if i > 0 {
            let prev = &hits[i - 1];
            if prev.score < hit.score || (prev.score == hit.score && prev.doc_id > hit.doc_id) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_by_ascending_id() {
        let hits = select_top_k(vec![(5, 1.0), (2, 1.0), (9, 3.0), (1, -1.0)], 3);
        let ids: Vec<u64> = hits.iter().map(|h| h.doc_id).collect();
        assert_eq!(ids, vec![9, 2, 5]);
        assert!(is_well_ordered(&hits));
    }

    #[test]
    fn dedup_keeps_best_score() {
        let hits = select_top_k_dedup(vec![(1, 0.5), (1, 2.0), (3, 1.0)], 10);
        assert_eq!(hits.len(), 2);
        assert_eq!((hits[0].doc_id, hits[0].score), (1, 2.0));
    }

    proptest! {
        #[test]
        fn heap_and_sort_paths_agree(scores in prop::collection::vec(-5i32..5, 1..200), k in 1usize..60) {
            let cands: Vec<(u64, f64)> = scores.iter().enumerate().map(|(i, s)| (i as u64, *s as f64)).collect();
            let mut heap = TopK::new(k);
            for (id, s) in &cands {
                heap.push(*id, *s);
            }
            let heap_hits = heap.into_hits();
            let sorted = select_top_k(cands.clone(), k);
            prop_assert_eq!(&heap_hits, &sorted);
            prop_assert!(is_well_ordered(&sorted));
            prop_assert_eq!(sorted.len(), k.min(cands.len()));
        }
    }
}
