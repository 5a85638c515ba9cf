//! Word-order shuffling of the content between CLS and SEP.

use rand::seq::SliceRandom;

pub const DEFAULT_SHUFFLE_SETS: usize = 10;

/// Source of permutations of `0..n`.
pub trait PermutationSource {
    fn permutation(&mut self, n: usize) -> Vec<usize>;
}

impl<R: rand::Rng> PermutationSource for R {
    fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(self);
        p
    }
}

/// Always returns the identity; useful to pin downstream behaviour.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPermutation;

impl PermutationSource for IdentityPermutation {
    fn permutation(&mut self, n: usize) -> Vec<usize> {
        (0..n).collect()
    }
}

/// Permutes positions `1..len-1` of one `CLS … SEP` row.
pub fn shuffle_content<P: PermutationSource + ?Sized>(ids: &[u32], src: &mut P) -> Vec<u32> {
    if ids.len() <= 3 {
        return ids.to_vec();
    }
    let content = &ids[1..ids.len() - 1];
    let perm = src.permutation(content.len());
    let mut out = Vec::with_capacity(ids.len());
    out.push(ids[0]);
    out.extend(perm.iter().map(|&k| content[k]));
    out.push(ids[ids.len() - 1]);
    out
}

/// `n_sets` independently shuffled copies of `rows`.
pub fn shuffle_words<P: PermutationSource + ?Sized>(rows: &[Vec<u32>], src: &mut P, n_sets: usize) -> Vec<Vec<Vec<u32>>> {
    (0..n_sets)
        .map(|_| rows.iter().map(|r| shuffle_content(r, src)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CLS, SEP};
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn single_content_token_unchanged() {
        let mut r = rng::seeded(0);
        assert_eq!(shuffle_content(&[CLS, 9, SEP], &mut r), vec![CLS, 9, SEP]);
    }

    #[test]
    fn identity_source_keeps_order() {
        let rows = vec![vec![CLS, 5, 6, 7, SEP]];
        let sets = shuffle_words(&rows, &mut IdentityPermutation, 3);
        assert_eq!(sets.len(), 3);
        assert!(sets.iter().all(|s| s == &rows));
    }

    proptest! {
        #[test]
        fn preserves_frame_and_multiset(content in proptest::collection::vec(5u32..50, 0..12), seed: u64) {
            let mut ids = vec![CLS];
            ids.extend(&content);
            ids.push(SEP);
            let mut r = rng::seeded(seed);
            let out = shuffle_content(&ids, &mut r);
            prop_assert_eq!(out[0], CLS);
            prop_assert_eq!(*out.last().unwrap(), SEP);
            let mut a = ids.clone();
            let mut b = out.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
