use crate::corpus::tokenize_keep_stop_words;
use crate::error::{Error, Result};

fn check_ranks(ranks: &[Option<usize>]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::param("no ranks to aggregate"));
    }
    if ranks.contains(&Some(0)) {
        return Err(Error::param("ranks start at 1"));
    }
    Ok(())
}

/// Mean reciprocal rank; a missing gold item contributes 0.
pub fn mrr(ranks: &[Option<usize>]) -> Result<f64> {
    check_ranks(ranks)?;
    let sum: f64 = ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum();
    Ok(sum / ranks.len() as f64)
}

/// Percentage of cases whose gold item is ranked within the top `k`.
pub fn hit_at_k(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    if k < 1 {
        return Err(Error::param("k must be at least 1"));
    }
    let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over token sequences.
pub fn rouge_l_tokens<T: PartialEq>(reference: &[T], candidate: &[T]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let l = lcs_len(reference, candidate) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let r = l / reference.len() as f64;
    let p = l / candidate.len() as f64;
    2.0 * r * p / (r + p)
}

/// ROUGE-L F1 over corpus tokens with stop words kept.
pub fn rouge_l(reference: &str, candidate: &str) -> f64 {
    rouge_l_tokens(&tokenize_keep_stop_words(reference), &tokenize_keep_stop_words(candidate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[Some(1), Some(1), Some(1)]).unwrap(), 1.0);
        assert!((mrr(&[Some(1), Some(2), Some(4)]).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&[None]).unwrap(), 0.0);
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[Some(0)]).is_err());
    }

    #[test]
    fn hit_examples() {
        assert_eq!(hit_at_k(&[Some(3), Some(10)], 10).unwrap(), 100.0);
        assert_eq!(hit_at_k(&[Some(1), Some(11)], 10).unwrap(), 50.0);
        assert_eq!(hit_at_k(&[None, None], 10).unwrap(), 0.0);
        assert!(hit_at_k(&[], 10).is_err());
        assert!(hit_at_k(&[Some(1)], 0).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("The bill becomes law.", "the bill becomes law"), 1.0);
        assert!((rouge_l("the cat sat", "cat the sat") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_l("the cat sat", ""), 0.0);
        assert_eq!(rouge_l("", "x"), 0.0);
        assert_eq!(rouge_l("alpha", "beta"), 0.0);
    }

    #[test]
    fn lcs_small_cases() {
        assert_eq!(lcs_len(b"ABCBDAB", b"BDCABA"), 4);
        assert_eq!(lcs_len::<u8>(b"", b"abc"), 0);
    }
}
