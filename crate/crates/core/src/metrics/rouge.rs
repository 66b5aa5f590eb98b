use super::tokenize::tokenize;

pub const DEFAULT_BETA: f64 = 1.2;

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1+b^2)PR / (R + b^2 P)`, maximized over references.
pub fn rouge_l_tokens(candidate: &[String], references: &[Vec<String>], beta: f64) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let lcs = lcs_len(candidate, r) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / candidate.len() as f64;
            let rec = lcs / r.len() as f64;
            let b2 = beta * beta;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l(candidate: &str, references: &[&str]) -> f64 {
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    rouge_l_tokens(&tokenize(candidate), &refs, DEFAULT_BETA)
}
