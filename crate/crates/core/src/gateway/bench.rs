//! Extraction benchmark over an annotated corpus.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{Corpus, MessageLocation, PrivacyItem};
use crate::extraction::{ExtractError, Extractor};
use crate::metrics::{harmonic, score_extraction, TypeEmbedder};
use crate::par::parallel_map;
use crate::taxonomy::{PrivacyLevel, Taxonomy};

/// Oracle that answers with the gold annotations of a known message.
#[derive(Debug, Default, Clone)]
pub struct GoldExtractor {
    by_content: HashMap<String, Vec<PrivacyItem>>,
}

impl GoldExtractor {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut by_content = HashMap::new();
        for (_, msg) in corpus.messages() {
            by_content
                .entry(msg.content.clone())
                .or_insert_with(|| msg.annotations.clone());
        }
        Self { by_content }
    }
}

impl Extractor for GoldExtractor {
    fn extract(&self, message: &str, _real_name: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        Ok(self.by_content.get(message).cloned().unwrap_or_default())
    }
}

/// Extractor that never finds anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct EmptyExtractor;

impl Extractor for EmptyExtractor {
    fn extract(&self, _: &str, _: Option<&str>) -> Result<Vec<PrivacyItem>, ExtractError> {
        Ok(Vec::new())
    }
}

/// Micro-averaged precision/recall/F1 with their numerators and denominators.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_gold: usize,
    pub pred_credit: f64,
    pub gold_credit: f64,
}

impl ScoreSummary {
    pub fn finish(&mut self) {
        self.precision = match (self.n_pred, self.n_gold) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (n, _) => self.pred_credit / n as f64,
        };
        self.recall = match (self.n_pred, self.n_gold) {
            (0, 0) => 1.0,
            (_, 0) => 0.0,
            (_, n) => self.gold_credit / n as f64,
        };
        self.f1 = harmonic(self.precision, self.recall);
    }
}

/// Micro-averaged scores overall, by privacy level and by type. Precision
/// buckets by the predicted label, recall by the gold label.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub overall: ScoreSummary,
    pub per_level: BTreeMap<PrivacyLevel, ScoreSummary>,
    pub per_type: BTreeMap<String, ScoreSummary>,
}

impl ScoreBreakdown {
    /// Scores one message and accumulates it. Call [`ScoreBreakdown::finish`] afterwards.
    pub fn add(
        &mut self,
        preds: &[PrivacyItem],
        golds: &[PrivacyItem],
        embedder: &dyn TypeEmbedder,
        taxonomy: &Taxonomy,
    ) {
        let score = score_extraction(preds, golds, embedder, taxonomy);
        self.overall.n_pred += preds.len();
        self.overall.n_gold += golds.len();
        self.overall.pred_credit += score.matched_total();
        self.overall.gold_credit += score.matched_total();
        for p in preds {
            self.per_level.entry(p.privacy_level).or_default().n_pred += 1;
            self.per_type.entry(p.privacy_type.clone()).or_default().n_pred += 1;
        }
        for g in golds {
            self.per_level.entry(g.privacy_level).or_default().n_gold += 1;
            self.per_type.entry(g.privacy_type.clone()).or_default().n_gold += 1;
        }
        for m in &score.matches {
            let (p, g) = (&preds[m.pred_index], &golds[m.gold_index]);
            self.per_level.entry(p.privacy_level).or_default().pred_credit += m.total;
            self.per_level.entry(g.privacy_level).or_default().gold_credit += m.total;
            self.per_type.entry(p.privacy_type.clone()).or_default().pred_credit += m.total;
            self.per_type.entry(g.privacy_type.clone()).or_default().gold_credit += m.total;
        }
    }

    pub fn finish(&mut self) {
        self.overall.finish();
        self.per_level.values_mut().for_each(ScoreSummary::finish);
        self.per_type.values_mut().for_each(ScoreSummary::finish);
    }

    /// Rows for overall, each level and each type; values in percent.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>8} {:>8} {:>8} {:>7} {:>7}\n",
            "Scope", "P", "R", "F1", "#pred", "#gold"
        );
        let mut row = |name: &str, s: &ScoreSummary| {
            out.push_str(&format!(
                "{:<28} {:>8.2} {:>8.2} {:>8.2} {:>7} {:>7}\n",
                name,
                s.precision * 100.0,
                s.recall * 100.0,
                s.f1 * 100.0,
                s.n_pred,
                s.n_gold
            ));
        };
        row("overall", &self.overall);
        for (l, s) in &self.per_level {
            row(&l.to_string(), s);
        }
        for (t, s) in &self.per_type {
            row(t, s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedMessage {
    pub location: MessageLocation,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub n_messages: usize,
    pub n_failed: usize,
    pub scores: ScoreBreakdown,
    pub mean_latency_ms: f64,
    pub failures: Vec<FailedMessage>,
}

/// Extracts every message of the corpus, scores it against its annotations,
/// and micro-averages over messages. Failed messages count as empty predictions.
pub fn run_extraction_benchmark(
    corpus: &Corpus,
    extractor: &dyn Extractor,
    embedder: &dyn TypeEmbedder,
    taxonomy: &Taxonomy,
    workers: usize,
) -> BenchmarkReport {
    let messages: Vec<(MessageLocation, &crate::corpus::AnnotatedMessage, Option<&str>)> = corpus
        .messages()
        .map(|(loc, msg)| {
            let name = corpus.user(&loc.user_id).and_then(|u| u.real_name.as_deref());
            (loc, msg, name)
        })
        .collect();
    let runs = parallel_map(messages.len(), workers, |i| {
        let (_, msg, name) = &messages[i];
        let t = Instant::now();
        let r = extractor.extract(&msg.content, *name);
        (r, t.elapsed().as_secs_f64() * 1000.0)
    });

    let mut breakdown = ScoreBreakdown::default();
    let mut failures = Vec::new();
    let mut latency = 0.0;
    for ((loc, msg, _), (result, ms)) in messages.iter().zip(runs) {
        latency += ms;
        let preds = result.unwrap_or_else(|e| {
            failures.push(FailedMessage {
                location: loc.clone(),
                error: e.to_string(),
            });
            Vec::new()
        });
        breakdown.add(&preds, &msg.annotations, embedder, taxonomy);
    }
    breakdown.finish();
    BenchmarkReport {
        n_messages: messages.len(),
        n_failed: failures.len(),
        scores: breakdown,
        mean_latency_ms: if messages.is_empty() {
            0.0
        } else {
            latency / messages.len() as f64
        },
        failures,
    }
}

impl BenchmarkReport {
    /// Text table: one row per level and overall, precision/recall/F1 in percent.
    pub fn render_table(&self, name: &str) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
            "Extractor", "PL2 F1", "PL3 F1", "PL4 F1", "P", "R", "F1", "#pred", "#gold", "Time (ms)"
        );
        let f1 = |l: PrivacyLevel| {
            self.scores
                .per_level
                .get(&l)
                .map_or("-".to_string(), |s| format!("{:.2}", s.f1 * 100.0))
        };
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>8} {:>10.3}\n",
            name,
            f1(PrivacyLevel::PL2),
            f1(PrivacyLevel::PL3),
            f1(PrivacyLevel::PL4),
            self.scores.overall.precision * 100.0,
            self.scores.overall.recall * 100.0,
            self.scores.overall.f1 * 100.0,
            self.scores.overall.n_pred,
            self.scores.overall.n_gold,
            self.mean_latency_ms,
        ));
        if self.n_failed > 0 {
            out.push_str(&format!(
                "{} of {} messages failed extraction\n",
                self.n_failed, self.n_messages
            ));
        }
        out
    }
}
