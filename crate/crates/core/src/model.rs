//! Value types shared by every stage of the pipeline. No I/O lives here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// One selectable option in a scenario.
///
/// The index is positional: it is never written to the canonical JSON and is
/// re-derived from array position whenever a scenario is deserialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(skip)]
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Choice {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Self {
            index,
            text: text.into(),
            meta: None,
        }
    }
}

/// A single decision point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ScenarioRepr")]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub context: String,
    pub question: String,
    pub choices: Vec<Choice>,
    /// Attribute key (`attribute=value`) to the choice indices labelled correct.
    pub labels: BTreeMap<String, BTreeSet<usize>>,
}

#[derive(Deserialize)]
struct ScenarioRepr {
    id: String,
    #[serde(default)]
    domain: String,
    #[serde(default)]
    context: String,
    question: String,
    choices: Vec<Choice>,
    #[serde(default)]
    labels: BTreeMap<String, BTreeSet<usize>>,
}

impl From<ScenarioRepr> for Scenario {
    fn from(repr: ScenarioRepr) -> Self {
        let mut choices = repr.choices;
        for (i, c) in choices.iter_mut().enumerate() {
            c.index = i;
        }
        Scenario {
            id: repr.id,
            domain: repr.domain,
            context: repr.context,
            question: repr.question,
            choices,
            labels: repr.labels,
        }
    }
}

impl Scenario {
    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    /// Choice indices labelled correct for `key`, if the scenario carries that label.
    pub fn label(&self, key: &str) -> Option<&BTreeSet<usize>> {
        self.labels.get(key)
    }
}

/// An alignment target: one attribute and the value to steer toward.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeTarget {
    pub attribute: String,
    pub value: String,
}

impl AttributeTarget {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for AttributeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.attribute, self.value)
    }
}

/// The structured answer extracted from a model: reasoning first, then the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionOutput {
    pub reasoning: String,
    pub choice: usize,
}

/// Why a decision has no output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDescriptor {
    /// Machine-readable category, e.g. `backend`, `exhausted_retries`, `configuration`.
    pub kind: String,
    pub message: String,
    /// Every raw model output seen before giving up.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempts: Vec<String>,
}

impl ErrorDescriptor {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            attempts: Vec::new(),
        }
    }
}

/// Wall-clock measurements. Kept in their own object so determinism checks
/// can drop them wholesale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub latency_ms: f64,
}

/// Relevance and valence of one attribute for one choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaleidoAssessment {
    pub choice_index: usize,
    pub attribute: String,
    pub relevance: f64,
    pub p_supports: f64,
    pub p_opposes: f64,
    pub p_either: f64,
}

/// Full provenance of a single decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub scenario_id: String,
    pub adm_id: String,
    pub adm_kind: String,
    pub backend_id: String,
    pub target: Option<AttributeTarget>,
    pub system_prompt: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prompt_override: bool,
    pub user_prompt: String,
    pub raw_output: String,
    pub decision: Option<DecisionOutput>,
    pub retries: u32,
    pub error: Option<ErrorDescriptor>,
    pub seed: u64,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assessments: Vec<KaleidoAssessment>,
    pub timing: Timing,
}

impl DecisionRecord {
    pub fn chosen(&self) -> Option<usize> {
        self.decision.as_ref().map(|d| d.choice)
    }

    pub fn is_failure(&self) -> bool {
        self.decision.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choice_index_is_positional_on_deserialize() {
        let json = r#"{"id":"s1","question":"q","choices":[{"text":"a"},{"text":"b","meta":{"hr":"120"}}],"labels":{"fairness=high":[1]}}"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert_eq!(s.choices[0].index, 0);
        assert_eq!(s.choices[1].index, 1);
        assert_eq!(s.choices[1].meta.as_ref().unwrap()["hr"], "120");
        assert_eq!(s.label("fairness=high").unwrap().len(), 1);
    }

    #[test]
    fn scenario_json_omits_choice_index() {
        let s = Scenario {
            id: "s".into(),
            domain: "medical-triage".into(),
            context: String::new(),
            question: "q".into(),
            choices: vec![Choice::new(0, "a"), Choice::new(1, "b")],
            labels: BTreeMap::new(),
        };
        let text = serde_json::to_string(&s).unwrap();
        assert!(!text.contains("index"));
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
