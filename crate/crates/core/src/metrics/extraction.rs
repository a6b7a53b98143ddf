use serde::Serialize;

use super::tokenize::tokenize;
use crate::corpus::PrivacyItem;
use crate::taxonomy::Taxonomy;

/// Maps a type label to a dense vector; similarity is the cosine.
pub trait TypeEmbedder: Send + Sync {
    fn embed(&self, label: &str) -> Vec<f64>;

    /// Cosine similarity clamped to `[0, 1]`.
    fn similarity(&self, a: &str, b: &str) -> f64 {
        cosine_similarity(&self.embed(a), &self.embed(b)).clamp(0.0, 1.0)
    }
}

/// Cosine of two vectors; 0 when either is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Character-trigram term frequencies of the case-folded label, padded with
/// `##` on both sides and hashed (FNV-1a) into a fixed number of buckets.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dims: usize,
}

impl TrigramEmbedder {
    pub const DEFAULT_DIMS: usize = 4096;

    pub fn new(dims: usize) -> Self {
        assert!(dims > 0);
        Self { dims }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMS)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TypeEmbedder for TrigramEmbedder {
    fn embed(&self, label: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        let folded = label.trim().to_lowercase();
        if folded.is_empty() {
            return v;
        }
        let chars: Vec<char> = "##".chars().chain(folded.chars()).chain("##".chars()).collect();
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            v[(fnv1a(buf.as_bytes()) % self.dims as u64) as usize] += 1.0;
        }
        v
    }
}

/// Length of the longest run of consecutive tokens shared by `a` and `b`.
pub fn longest_common_token_run(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Span text score: 1 on exact match, 0 for other strict mismatches,
/// otherwise the token F1 built from the longest common contiguous run.
pub fn text_score(pred: &str, gold: &str, strict: bool) -> f64 {
    if pred == gold {
        return 1.0;
    }
    if strict {
        return 0.0;
    }
    let p = tokenize(pred);
    let g = tokenize(gold);
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let l = longest_common_token_run(&p, &g);
    if l == 0 {
        return 0.0;
    }
    let precision = l as f64 / p.len() as f64;
    let recall = l as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub pred_index: usize,
    pub gold_index: usize,
    pub text_score: f64,
    pub level_score: f64,
    pub type_score: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: Vec<PairScore>,
    pub n_pred: usize,
    pub n_gold: usize,
    pub unmatched_pred_count: usize,
    pub unmatched_gold_count: usize,
}

impl ExtractionScore {
    /// Sum of matched pair totals (the shared numerator of P and R).
    pub fn matched_total(&self) -> f64 {
        self.matches.iter().map(|m| m.total).sum()
    }
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn pair_score(
    pred: &PrivacyItem,
    gold: &PrivacyItem,
    embedder: &dyn TypeEmbedder,
    taxonomy: &Taxonomy,
) -> (f64, f64, f64) {
    let text = text_score(
        &pred.original_text,
        &gold.original_text,
        taxonomy.is_strict(&gold.privacy_type),
    );
    let level = if pred.privacy_level == gold.privacy_level {
        1.0
    } else {
        0.0
    };
    let ty = if pred.privacy_type.trim().to_lowercase() == gold.privacy_type.trim().to_lowercase() {
        1.0
    } else {
        embedder.similarity(&pred.privacy_type, &gold.privacy_type)
    };
    (text, level, ty)
}

/// Greedy one-to-one matching of predictions to gold items.
///
/// Pairs are taken in order of decreasing total (ties: lower prediction index,
/// then lower gold index) until no positive pair is left. Precision divides the
/// matched total by the number of predictions, recall by the number of gold
/// items. Two empty sets score 1; an empty side against a non-empty one scores 0.
pub fn score_extraction(
    preds: &[PrivacyItem],
    golds: &[PrivacyItem],
    embedder: &dyn TypeEmbedder,
    taxonomy: &Taxonomy,
) -> ExtractionScore {
    if preds.is_empty() && golds.is_empty() {
        return ExtractionScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            matches: Vec::new(),
            n_pred: 0,
            n_gold: 0,
            unmatched_pred_count: 0,
            unmatched_gold_count: 0,
        };
    }

    let mut candidates = Vec::with_capacity(preds.len() * golds.len());
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in golds.iter().enumerate() {
            let (text, level, ty) = pair_score(p, g, embedder, taxonomy);
            let total = (text + level + ty) / 3.0;
            if total > 0.0 {
                candidates.push(PairScore {
                    pred_index: pi,
                    gold_index: gi,
                    text_score: text,
                    level_score: level,
                    type_score: ty,
                    total,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then(a.pred_index.cmp(&b.pred_index))
            .then(a.gold_index.cmp(&b.gold_index))
    });

    let mut pred_used = vec![false; preds.len()];
    let mut gold_used = vec![false; golds.len()];
    let mut matches = Vec::new();
    for c in candidates {
        if pred_used[c.pred_index] || gold_used[c.gold_index] {
            continue;
        }
        pred_used[c.pred_index] = true;
        gold_used[c.gold_index] = true;
        matches.push(c);
    }

    let sum: f64 = matches.iter().map(|m| m.total).sum();
    let precision = if preds.is_empty() {
        0.0
    } else {
        sum / preds.len() as f64
    };
    let recall = if golds.is_empty() {
        0.0
    } else {
        sum / golds.len() as f64
    };
    ExtractionScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
        n_pred: preds.len(),
        n_gold: golds.len(),
        unmatched_pred_count: preds.len() - matches.len(),
        unmatched_gold_count: golds.len() - matches.len(),
        matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::PrivacyLevel::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Brute force: every pair of start offsets, extend while equal.
    fn brute_run(a: &[String], b: &[String]) -> usize {
        let mut best = 0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                let mut k = 0;
                while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                    k += 1;
                }
                best = best.max(k);
            }
        }
        best
    }

    #[test]
    fn text_score_examples() {
        assert_eq!(text_score("89757", "89757", true), 1.0);
        assert_eq!(text_score("89758", "89757", true), 0.0);
        let s = text_score(
            "Haidian District Beijing",
            "Zhongguancun Haidian District Beijing",
            false,
        );
        assert!((s - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(text_score("", "abc", false), 0.0);
        assert_eq!(text_score("x y", "z", false), 0.0);
    }

    #[test]
    fn run_matches_brute_force() {
        let alphabet = ["a", "b", "c"];
        let mut seqs: Vec<Vec<String>> = vec![vec![]];
        for len in 1..=4 {
            let mut n = 1;
            for _ in 0..len {
                n *= 3;
            }
            for code in 0..n {
                let mut c = code;
                seqs.push(
                    (0..len)
                        .map(|_| {
                            let t = alphabet[c % 3].to_string();
                            c /= 3;
                            t
                        })
                        .collect(),
                );
            }
        }
        for a in &seqs {
            for b in &seqs {
                assert_eq!(longest_common_token_run(a, b), brute_run(a, b));
            }
        }
        assert_eq!(longest_common_token_run(&toks("x a b c"), &toks("a b c y")), 3);
    }

    #[test]
    fn trigram_embedder() {
        let e = TrigramEmbedder::default();
        assert!((e.similarity("Phone Number", "phone number") - 1.0).abs() < 1e-12);
        let near = e.similarity("Phone Number", "Mobile Phone Number");
        let far = e.similarity("Phone Number", "Medical Health");
        assert!(near > far, "{near} {far}");
        assert!((0.0..=1.0).contains(&far));
        assert_eq!(e.similarity("", "Email"), 0.0);
        assert!(e.embed("Email").iter().any(|&x| x > 0.0));
    }

    fn item(t: &str, ty: &str, l: crate::taxonomy::PrivacyLevel) -> PrivacyItem {
        PrivacyItem::new(t, ty, l)
    }

    fn one_shot() -> Vec<PrivacyItem> {
        vec![
            item("Zhang San", "Real Name", PL2),
            item("13800138000", "Phone Number", PL2),
            item("mild depression", "Medical Health", PL3),
            item("89757", "Verification Code", PL4),
        ]
    }

    #[test]
    fn identity_and_empty_sides() {
        let e = TrigramEmbedder::default();
        let tax = Taxonomy::canonical();
        let s = score_extraction(&one_shot(), &one_shot(), &e, tax);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert_eq!(s.matches.len(), 4);

        let s = score_extraction(&[], &one_shot(), &e, tax);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = score_extraction(&one_shot(), &[], &e, tax);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = score_extraction(&[], &[], &e, tax);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn partial_credit() {
        let e = TrigramEmbedder::default();
        let tax = Taxonomy::canonical();
        // Soft text on a non-strict type, wrong level.
        let preds = [item("depression", "Medical Health", PL2)];
        let golds = [item("mild depression", "Medical Health", PL3)];
        let s = score_extraction(&preds, &golds, &e, tax);
        let text = 2.0 * 1.0 * 0.5 / 1.5;
        let expect = (text + 0.0 + 1.0) / 3.0;
        assert!((s.precision - expect).abs() < 1e-12);
        assert!((s.recall - expect).abs() < 1e-12);

        // Strict gold type: text 0, level and type still count.
        let preds = [item("8975", "Verification Code", PL4)];
        let golds = [item("89757", "Verification Code", PL4)];
        let s = score_extraction(&preds, &golds, &e, tax);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
