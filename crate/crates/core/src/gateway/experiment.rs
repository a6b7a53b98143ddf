//! Strategy comparison over a corpus with QA items, using the mock memory as the cloud side.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::{Corpus, PrivacyItem, QaCategory, UserRecord};
use crate::extraction::Extractor;
use crate::metrics::{bleu_n, format_delta, meteor, residual_leakage, rouge_l, table_delta, tokenize};
use crate::par::parallel_map;
use crate::sanitizer::{mask_token_spans, Strategy};
use crate::store::MappingStore;
use crate::taxonomy::PrivacyLevel;

use super::cloud::EchoCloud;
use super::memory::MockMemorySystem;
use super::Gateway;

#[derive(Clone)]
pub struct ExperimentConfig {
    pub mask_level: PrivacyLevel,
    pub extractor: Arc<dyn Extractor>,
    pub top_k: usize,
    pub workers: usize,
}

impl std::fmt::Debug for ExperimentConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperimentConfig")
            .field("mask_level", &self.mask_level)
            .field("top_k", &self.top_k)
            .field("workers", &self.workers)
            .finish_non_exhaustive()
    }
}

/// Mean answer quality, all as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AnswerScores {
    pub accuracy: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

impl AnswerScores {
    fn add(&mut self, o: &AnswerScores) {
        self.accuracy += o.accuracy;
        self.bleu1 += o.bleu1;
        self.bleu2 += o.bleu2;
        self.meteor += o.meteor;
        self.rouge_l += o.rouge_l;
    }

    fn scaled(mut self, n: usize) -> Self {
        if n > 0 {
            let d = n as f64;
            self.accuracy /= d;
            self.bleu1 /= d;
            self.bleu2 /= d;
            self.meteor /= d;
            self.rouge_l /= d;
        }
        self
    }

    /// Differences against a baseline, in percentage points.
    fn delta_from(&self, base: &AnswerScores) -> AnswerScores {
        let d = |b: f64, v: f64| table_delta(b * 100.0, v * 100.0);
        AnswerScores {
            accuracy: d(base.accuracy, self.accuracy),
            bleu1: d(base.bleu1, self.bleu1),
            bleu2: d(base.bleu2, self.bleu2),
            meteor: d(base.meteor, self.meteor),
            rouge_l: d(base.rouge_l, self.rouge_l),
        }
    }
}

/// True when the reference's token sequence occurs contiguously in the answer's.
pub fn contains_reference(answer: &str, reference: &str) -> bool {
    let (a, r) = (tokenize(answer), tokenize(reference));
    if r.is_empty() {
        return a.is_empty();
    }
    a.windows(r.len()).any(|w| w == r.as_slice())
}

pub fn score_answer(answer: &str, reference: &str) -> AnswerScores {
    let (a, r) = (tokenize(answer), tokenize(reference));
    AnswerScores {
        accuracy: f64::from(u8::from(contains_reference(answer, reference))),
        bleu1: bleu_n(&a, &r, 1),
        bleu2: bleu_n(&a, &r, 2),
        meteor: meteor(&a, &r),
        rouge_l: rouge_l(&a, &r),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemFailure {
    pub user_id: String,
    pub context: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LeakageCounts {
    pub leaked: usize,
    pub total: usize,
}

impl LeakageCounts {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.leaked as f64 / self.total as f64
        }
    }

    fn add(&mut self, sanitized: &str, items: &[PrivacyItem], level: PrivacyLevel) {
        let n = items.iter().filter(|i| i.privacy_level >= level).count();
        if n > 0 {
            self.leaked += (residual_leakage(sanitized, items, level) * n as f64).round() as usize;
            self.total += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub n_qa: usize,
    pub overall: AnswerScores,
    pub privacy_dependent: AnswerScores,
    pub n_privacy_dependent: usize,
    pub other: AnswerScores,
    pub per_category_accuracy: BTreeMap<QaCategory, f64>,
    /// Gold values at or above the threshold still present in forwarded text.
    pub leakage: LeakageCounts,
    /// Same, restricted to gold values the extractor found, minus values that occur inside an emitted mask.
    pub detected_leakage: LeakageCounts,
    /// Percentage-point change against the `none` row, when it was run.
    pub delta_vs_none: Option<AnswerScores>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub mask_level: PrivacyLevel,
    pub n_users: usize,
    pub n_messages: usize,
    pub results: Vec<StrategyResult>,
}

#[derive(Default)]
struct UserOutcome {
    scores: Vec<(QaCategory, bool, AnswerScores)>,
    leakage: LeakageCounts,
    detected_leakage: LeakageCounts,
    failures: Vec<ItemFailure>,
}

/// True when `value` occurs inside one of the mask tokens of `sanitized`, so
/// its presence says nothing about leakage (e.g. the value `1` and `<EMAIL_1>`).
pub fn inside_mask(sanitized: &str, value: &str) -> bool {
    mask_token_spans(sanitized)
        .into_iter()
        .any(|r| sanitized[r].contains(value))
}

fn replay_user(gw: &Gateway, memory: &MockMemorySystem, user: &UserRecord) -> UserOutcome {
    let mut out = UserOutcome::default();
    let uid = &user.user_id;
    let name = user.real_name.as_deref();
    let level = gw.mask_level();
    let fail = |ctx: String, e: super::GatewayError| ItemFailure {
        user_id: uid.clone(),
        context: ctx,
        error: e.to_string(),
    };
    for (d, dialogue) in user.dialogues.iter().enumerate() {
        for (m, msg) in dialogue.iter().enumerate() {
            match gw.sanitize_detailed(uid, &msg.content, name) {
                Ok((masked, detected)) => {
                    out.leakage.add(&masked.text, &msg.annotations, level);
                    let hit: Vec<PrivacyItem> = msg
                        .annotations
                        .iter()
                        .filter(|g| !inside_mask(&masked.text, &g.original_text))
                        .filter(|g| detected.iter().any(|p| p.original_text == g.original_text))
                        .cloned()
                        .collect();
                    out.detected_leakage.add(&masked.text, &hit, level);
                    memory.ingest(uid, &masked.text);
                }
                Err(e) => out.failures.push(fail(format!("dialogue {d} message {m}"), e)),
            }
        }
    }
    for (q, qa) in user.qa_items.iter().enumerate() {
        let answer = match gw.sanitize_detailed(uid, &qa.question, name) {
            Ok((masked, _)) => {
                let reply = memory.answer(uid, &masked.text);
                if gw.strategy().is_reversible() {
                    gw.restore_text(uid, &reply).text
                } else {
                    reply
                }
            }
            Err(e) => {
                out.failures.push(fail(format!("qa {q}"), e));
                String::new()
            }
        };
        out.scores.push((
            qa.category,
            qa.privacy_dependent,
            score_answer(&answer, &qa.reference_answer),
        ));
    }
    out
}

fn run_strategy(corpus: &Corpus, strategy: Strategy, config: &ExperimentConfig) -> StrategyResult {
    let gw = Gateway::new(
        strategy,
        config.mask_level,
        config.extractor.clone(),
        Arc::new(MappingStore::in_memory()),
        Arc::new(EchoCloud),
    );
    let memory = MockMemorySystem::new(config.top_k);
    let outcomes = parallel_map(corpus.users.len(), config.workers, |i| {
        replay_user(&gw, &memory, &corpus.users[i])
    });

    let (mut overall, mut dep, mut other) = (
        AnswerScores::default(),
        AnswerScores::default(),
        AnswerScores::default(),
    );
    let (mut n, mut n_dep) = (0, 0);
    let mut cats: BTreeMap<QaCategory, (f64, usize)> = BTreeMap::new();
    let mut leakage = LeakageCounts::default();
    let mut detected_leakage = LeakageCounts::default();
    let mut failures = Vec::new();
    for o in outcomes {
        for (cat, pd, s) in &o.scores {
            overall.add(s);
            n += 1;
            if *pd {
                dep.add(s);
                n_dep += 1;
            } else {
                other.add(s);
            }
            let c = cats.entry(*cat).or_default();
            c.0 += s.accuracy;
            c.1 += 1;
        }
        leakage.leaked += o.leakage.leaked;
        leakage.total += o.leakage.total;
        detected_leakage.leaked += o.detected_leakage.leaked;
        detected_leakage.total += o.detected_leakage.total;
        failures.extend(o.failures);
    }
    StrategyResult {
        strategy,
        n_qa: n,
        overall: overall.scaled(n),
        privacy_dependent: dep.scaled(n_dep),
        n_privacy_dependent: n_dep,
        other: other.scaled(n - n_dep),
        per_category_accuracy: cats.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        leakage,
        detected_leakage,
        delta_vs_none: None,
        failures,
    }
}

/// Replays every dialogue under each strategy, then answers and scores the QA items.
pub fn run_experiment(corpus: &Corpus, strategies: &[Strategy], config: &ExperimentConfig) -> ExperimentReport {
    let mut results: Vec<StrategyResult> = strategies.iter().map(|&s| run_strategy(corpus, s, config)).collect();
    if let Some(base) = results.iter().find(|r| r.strategy == Strategy::None).map(|r| r.overall) {
        for r in &mut results {
            r.delta_vs_none = Some(r.overall.delta_from(&base));
        }
    }
    ExperimentReport {
        mask_level: config.mask_level,
        n_users: corpus.users.len(),
        n_messages: corpus.messages().count(),
        results,
    }
}

impl ExperimentReport {
    pub fn result(&self, strategy: Strategy) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.strategy == strategy)
    }

    /// One row per strategy; scores in percent with the change against `none` in parentheses.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>16} {:>16} {:>16} {:>16} {:>16} {:>8}\n",
            "Strategy", "Accuracy", "BLEU-1", "BLEU-2", "METEOR", "ROUGE-L", "Leak"
        );
        for r in &self.results {
            let cell = |v: f64, d: Option<f64>| match d {
                Some(d) => format!("{:.2} {}", v * 100.0, format_delta(d)),
                None => format!("{:.2}", v * 100.0),
            };
            let d = r.delta_vs_none;
            out.push_str(&format!(
                "{:<20} {:>16} {:>16} {:>16} {:>16} {:>16} {:>8.2}\n",
                r.strategy.to_string(),
                cell(r.overall.accuracy, d.map(|d| d.accuracy)),
                cell(r.overall.bleu1, d.map(|d| d.bleu1)),
                cell(r.overall.bleu2, d.map(|d| d.bleu2)),
                cell(r.overall.meteor, d.map(|d| d.meteor)),
                cell(r.overall.rouge_l, d.map(|d| d.rouge_l)),
                r.leakage.rate() * 100.0,
            ));
        }
        out
    }
}
