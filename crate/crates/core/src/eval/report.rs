//! Report types produced by evaluation and their serialized forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Which ground-truth partition is being predicted. Validation masks the
/// training items from the candidate set; test masks training and
/// validation items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPhase {
    Validation,
    Test,
}

/// Metrics for one degree bucket: users whose training interaction count
/// falls in [min_degree, max_degree].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub label: String,
    pub min_degree: usize,
    /// Inclusive; `usize::MAX` for the open-ended last bucket.
    pub max_degree: usize,
    pub users: usize,
    /// Fraction of evaluated users in this bucket.
    pub share: f64,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

/// Mean ranking quality over all users with ground truth in the phase,
/// overall and split by training degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub phase: EvalPhase,
    pub k_values: Vec<usize>,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub evaluated_users: usize,
    pub buckets: Vec<BucketReport>,
    /// Run metadata, filled in by the caller when known.
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.get(&k).copied()
    }

    /// One row per (phase, K, bucket, metric); the overall means appear
    /// under the pseudo-bucket "all".
    pub fn to_csv(&self) -> String {
        let phase = match self.phase {
            EvalPhase::Validation => "validation",
            EvalPhase::Test => "test",
        };
        let mut out = String::from("phase,k,bucket,metric,value\n");
        for &k in &self.k_values {
            let mut push = |bucket: &str, metric: &str, value: f64| {
                out.push_str(&format!("{phase},{k},{bucket},{metric},{value}\n"));
            };
            push("all", "recall", self.recall[&k]);
            push("all", "ndcg", self.ndcg[&k]);
            for b in &self.buckets {
                push(&b.label, "recall", b.recall[&k]);
                push(&b.label, "ndcg", b.ndcg[&k]);
            }
        }
        out
    }
}
