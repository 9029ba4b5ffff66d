//! Small-k permutation helpers shared by the order generators and checkers.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

/// Enumeration is factorial; order questions never exceed six items.
pub const MAX_ITEMS: usize = 8;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("only {available} non-identity permutations of {k} items, {needed} requested")]
pub struct PermutationExhausted {
    pub k: usize,
    pub available: usize,
    pub needed: usize,
}

/// All permutations of `0..k` in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    assert!(k <= MAX_ITEMS, "refusing to enumerate {k}! permutations");
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
    }
    out
}

pub fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &x)| i == x)
}

pub fn is_permutation(p: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    p.len() == k && p.iter().all(|&x| x < k && !std::mem::replace(&mut seen[x], true))
}

/// `m` distinct permutations of `0..k` other than the identity, sampled uniformly.
pub fn sample_wrong_orders<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, PermutationExhausted> {
    let wrong: Vec<Vec<usize>> = all_permutations(k).into_iter().filter(|p| !is_identity(p)).collect();
    if wrong.len() < m {
        return Err(PermutationExhausted {
            k,
            available: wrong.len(),
            needed: m,
        });
    }
    Ok(index::sample(rng, wrong.len(), m)
        .into_iter()
        .map(|i| wrong[i].clone())
        .collect())
}

pub fn apply<T: Clone>(order: &[usize], items: &[T]) -> Vec<T> {
    order.iter().map(|&i| items[i].clone()).collect()
}
