use std::collections::HashMap;

/// BLEU with uniform weights over orders `1..=n` and the standard brevity
/// penalty. Zero when the candidate is empty, `n == 0`, or any order has no
/// clipped match.
pub fn bleu_n(candidate: &[String], reference: &[String], n: usize) -> f64 {
    if candidate.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let p = modified_precision(candidate, reference, order);
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / n as f64;
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for g in tokens.windows(order) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn modified_precision(candidate: &[String], reference: &[String], order: usize) -> f64 {
    let cand = ngram_counts(candidate, order);
    let total: usize = cand.values().sum();
    if total == 0 {
        return 0.0;
    }
    let refc = ngram_counts(reference, order);
    let clipped: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    clipped as f64 / total as f64
}

/// Longest common subsequence length.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with beta = 1.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let r = l as f64 / reference.len() as f64;
    let p = l as f64 / candidate.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact-match METEOR: `F = 10PR / (R + 9P)` scaled by `1 - 0.5 (ch/m)^3`.
pub fn meteor(candidate: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = meteor_chunks(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Beyond this many memoized states the chunk search falls back to a greedy alignment.
const CHUNK_SEARCH_BUDGET: usize = 500_000;

/// `(m, ch)`: the maximum number of exact unigram matches, and the fewest
/// contiguous chunks over all alignments achieving that maximum.
pub fn meteor_chunks(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let mut cand_count: HashMap<&str, usize> = HashMap::new();
    let mut ref_count: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_count.entry(t).or_insert(0) += 1;
    }
    for t in reference {
        *ref_count.entry(t).or_insert(0) += 1;
    }
    let m: usize = cand_count
        .iter()
        .map(|(w, &c)| c.min(ref_count.get(w).copied().unwrap_or(0)))
        .sum();
    if m == 0 {
        return (0, 0);
    }
    if reference.len() <= 128 {
        let mut search = ChunkSearch::new(candidate, reference, &cand_count, &ref_count);
        if let Some(ch) = search.run() {
            return (m, ch);
        }
    }
    (m, greedy_chunks(candidate, reference, &cand_count, &ref_count))
}

struct ChunkSearch<'a> {
    cand: &'a [String],
    refs: &'a [String],
    /// Unmatched candidate occurrences each word may still afford.
    skip_budget: HashMap<&'a str, usize>,
    /// Reference positions per word.
    positions: HashMap<&'a str, Vec<usize>>,
    /// Occurrences of `cand[i]` within `cand[..i]`.
    seen_before: Vec<usize>,
    memo: HashMap<(usize, usize, u128), usize>,
    exhausted: bool,
}

const NO_PREV: usize = usize::MAX;
const INFEASIBLE: usize = usize::MAX / 2;

impl<'a> ChunkSearch<'a> {
    fn new(
        cand: &'a [String],
        refs: &'a [String],
        cand_count: &HashMap<&'a str, usize>,
        ref_count: &HashMap<&'a str, usize>,
    ) -> Self {
        let skip_budget = cand_count
            .iter()
            .map(|(&w, &c)| (w, c - c.min(ref_count.get(w).copied().unwrap_or(0))))
            .collect();
        let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
        for (j, t) in refs.iter().enumerate() {
            positions.entry(t.as_str()).or_default().push(j);
        }
        let mut running: HashMap<&str, usize> = HashMap::new();
        let seen_before = cand
            .iter()
            .map(|t| {
                let e = running.entry(t.as_str()).or_insert(0);
                let before = *e;
                *e += 1;
                before
            })
            .collect();
        Self {
            cand,
            refs,
            skip_budget,
            positions,
            seen_before,
            memo: HashMap::new(),
            exhausted: false,
        }
    }

    fn run(&mut self) -> Option<usize> {
        let best = self.min_chunks(0, NO_PREV, 0);
        if self.exhausted || best >= INFEASIBLE {
            None
        } else {
            Some(best)
        }
    }

    /// Fewest chunks for `cand[i..]`, given the reference position matched by
    /// `cand[i-1]` (or `NO_PREV`) and the set of used reference positions.
    fn min_chunks(&mut self, i: usize, prev: usize, used: u128) -> usize {
        if i == self.cand.len() {
            return 0;
        }
        if self.exhausted {
            return INFEASIBLE;
        }
        let key = (i, prev, used);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        if self.memo.len() >= CHUNK_SEARCH_BUDGET {
            self.exhausted = true;
            return INFEASIBLE;
        }
        let cand = self.cand;
        let w = cand[i].as_str();
        let mut best = INFEASIBLE;
        let ref_positions = self.positions.get(w).cloned().unwrap_or_default();

        let matched_so_far = ref_positions.iter().filter(|&&j| used & (1u128 << j) != 0).count();
        let skipped_so_far = self.seen_before[i] - matched_so_far;
        if skipped_so_far < self.skip_budget.get(w).copied().unwrap_or(0) {
            best = best.min(self.min_chunks(i + 1, NO_PREV, used));
        }
        for j in ref_positions {
            if used & (1u128 << j) != 0 {
                continue;
            }
            let cost = usize::from(!(prev != NO_PREV && prev + 1 == j));
            let rest = self.min_chunks(i + 1, j, used | (1u128 << j));
            best = best.min(rest.saturating_add(cost));
        }
        debug_assert!(self.refs.len() <= 128);
        self.memo.insert(key, best);
        best
    }
}

/// Left-to-right alignment preferring the position that extends the current chunk.
fn greedy_chunks(
    candidate: &[String],
    reference: &[String],
    cand_count: &HashMap<&str, usize>,
    ref_count: &HashMap<&str, usize>,
) -> usize {
    let mut quota: HashMap<&str, usize> = cand_count
        .iter()
        .map(|(&w, &c)| (w, c.min(ref_count.get(w).copied().unwrap_or(0))))
        .collect();
    let mut used = vec![false; reference.len()];
    let mut prev: Option<usize> = None;
    let mut chunks = 0;
    for t in candidate {
        let q = quota.get_mut(t.as_str()).expect("every candidate word has a quota");
        if *q == 0 {
            prev = None;
            continue;
        }
        let extend = prev
            .map(|p| p + 1)
            .filter(|&j| j < reference.len() && !used[j] && reference[j] == *t);
        let pick = extend.or_else(|| (0..reference.len()).find(|&j| !used[j] && reference[j] == *t));
        match pick {
            Some(j) => {
                if extend.is_none() {
                    chunks += 1;
                }
                used[j] = true;
                *q -= 1;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}
