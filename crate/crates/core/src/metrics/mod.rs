//! Answer scoring against gold spans, correctness outcomes and the 2x2
//! factorial summary.

mod report;
mod text;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldAnswer;
use crate::inference::{cosine_similarity, BackendError, Embedder};
use crate::scalar::Scalar;

pub use report::{factorial_report, CellResult, FactorialCell, FactorialReport};
pub use text::{meteor, rouge_1_f1, rouge_l_f1, tokenize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rouge,
    Meteor,
    #[default]
    Cosine,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Rouge => "rouge",
            MetricKind::Meteor => "meteor",
            MetricKind::Cosine => "cosine",
        })
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rouge" => Ok(MetricKind::Rouge),
            "meteor" => Ok(MetricKind::Meteor),
            "cosine" => Ok(MetricKind::Cosine),
            other => Err(format!("unknown metric `{other}` (rouge, meteor, cosine)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RougeVariant {
    #[default]
    RougeL,
    Rouge1,
}

impl fmt::Display for RougeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RougeVariant::RougeL => "rouge-l",
            RougeVariant::Rouge1 => "rouge-1",
        })
    }
}

impl FromStr for RougeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rouge-l" => Ok(RougeVariant::RougeL),
            "rouge-1" => Ok(RougeVariant::Rouge1),
            other => Err(format!(
                "unknown rouge variant `{other}` (rouge-l, rouge-1)"
            )),
        }
    }
}

impl RougeVariant {
    pub fn score<T: Scalar>(self, prediction: &str, reference: &str) -> T {
        match self {
            RougeVariant::RougeL => rouge_l_f1(prediction, reference),
            RougeVariant::Rouge1 => rouge_1_f1(prediction, reference),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Thresholds<T = f64> {
    pub rouge: T,
    pub meteor: T,
    pub cosine: T,
}

impl<T: Scalar> Default for Thresholds<T> {
    fn default() -> Self {
        Self {
            rouge: T::from_f64_lossy(0.60),
            meteor: T::from_f64_lossy(0.68),
            cosine: T::from_f64_lossy(0.79),
        }
    }
}

impl<T: Scalar> Thresholds<T> {
    pub fn get(&self, kind: MetricKind) -> T {
        match kind {
            MetricKind::Rouge => self.rouge,
            MetricKind::Meteor => self.meteor,
            MetricKind::Cosine => self.cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricScore<T = f64> {
    pub rouge: T,
    pub meteor: T,
    pub cosine: T,
    pub correct_by: BTreeSet<MetricKind>,
}

impl<T: Scalar> MetricScore<T> {
    pub fn new(rouge: T, meteor: T, cosine: T, thresholds: &Thresholds<T>) -> Self {
        let mut correct_by = BTreeSet::new();
        for (kind, value) in [
            (MetricKind::Rouge, rouge),
            (MetricKind::Meteor, meteor),
            (MetricKind::Cosine, cosine),
        ] {
            if value >= thresholds.get(kind) {
                correct_by.insert(kind);
            }
        }
        Self {
            rouge,
            meteor,
            cosine,
            correct_by,
        }
    }

    pub fn zero() -> Self {
        Self {
            rouge: T::zero(),
            meteor: T::zero(),
            cosine: T::zero(),
            correct_by: BTreeSet::new(),
        }
    }

    pub fn get(&self, kind: MetricKind) -> T {
        match kind {
            MetricKind::Rouge => self.rouge,
            MetricKind::Meteor => self.meteor,
            MetricKind::Cosine => self.cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    TrueNegative,
    FalsePositiveLike,
    FalseNegativeLike,
    Incorrect,
}

impl Outcome {
    pub fn is_correct(self) -> bool {
        matches!(self, Outcome::TruePositive | Outcome::TrueNegative)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::TruePositive => "true_positive",
            Outcome::TrueNegative => "true_negative",
            Outcome::FalsePositiveLike => "false_positive_like",
            Outcome::FalseNegativeLike => "false_negative_like",
            Outcome::Incorrect => "incorrect",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Outcome::TruePositive,
            Outcome::TrueNegative,
            Outcome::FalsePositiveLike,
            Outcome::FalseNegativeLike,
            Outcome::Incorrect,
        ]
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Cosine of the two embeddings. Blank text on either side scores 0.
pub fn cosine_score<T: Scalar>(
    prediction: &str,
    reference: &str,
    embedder: &dyn Embedder<T>,
) -> Result<T, BackendError> {
    if prediction.trim().is_empty() || reference.trim().is_empty() {
        return Ok(T::zero());
    }
    let a = embedder.embed(prediction)?;
    let b = embedder.embed(reference)?;
    Ok(cosine_similarity(&a, &b))
}

#[derive(Debug, Clone)]
pub struct JudgeConfig<T = f64> {
    pub thresholds: Thresholds<T>,
    pub gate: MetricKind,
    pub rouge_variant: RougeVariant,
}

impl<T: Scalar> Default for JudgeConfig<T> {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            gate: MetricKind::Cosine,
            rouge_variant: RougeVariant::RougeL,
        }
    }
}

/// Each metric is the max over the gold spans, taken independently.
pub fn score_against<T: Scalar>(
    prediction: &str,
    spans: &[&str],
    embedder: &dyn Embedder<T>,
    config: &JudgeConfig<T>,
) -> Result<MetricScore<T>, BackendError> {
    let (mut rouge, mut met, mut cos) = (T::zero(), T::zero(), T::zero());
    for (k, span) in spans.iter().enumerate() {
        let r: T = config.rouge_variant.score(prediction, span);
        let m: T = meteor(prediction, span);
        let c = cosine_score(prediction, span, embedder)?;
        if k == 0 {
            (rouge, met, cos) = (r, m, c);
        } else {
            rouge = rouge.max(r);
            met = met.max(m);
            cos = cos.max(c);
        }
    }
    Ok(MetricScore::new(rouge, met, cos, &config.thresholds))
}

pub fn judge<T: Scalar>(
    prediction: Option<&str>,
    gold: &GoldAnswer,
    embedder: &dyn Embedder<T>,
    config: &JudgeConfig<T>,
) -> Result<(MetricScore<T>, Outcome), BackendError> {
    let positive = !gold.is_negative && !gold.spans.is_empty();
    match (prediction, positive) {
        (None, false) => Ok((MetricScore::zero(), Outcome::TrueNegative)),
        (None, true) => Ok((MetricScore::zero(), Outcome::FalseNegativeLike)),
        (Some(_), false) => Ok((MetricScore::zero(), Outcome::FalsePositiveLike)),
        (Some(p), true) => {
            let spans: Vec<&str> = gold.span_texts().collect();
            let score = score_against(p, &spans, embedder, config)?;
            let outcome = if score.correct_by.contains(&config.gate) {
                Outcome::TruePositive
            } else {
                Outcome::Incorrect
            };
            Ok((score, outcome))
        }
    }
}

/// One row of the judged-outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedPair {
    pub document_id: String,
    pub category_id: usize,
    pub rouge: f64,
    pub meteor: f64,
    pub cosine: f64,
    pub outcome: Outcome,
}
