//! Skill routing: choose a library skill for a problem from names and
//! descriptions alone.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Skill, SkillError, SkillLibrary};
use crate::archetype::{cosine_distance_raw, ArchetypeRepresentation};
use crate::prompts::{self, PromptTemplate};
use crate::providers::{ChatClient, ChatRequest, EmbeddingClient};
use crate::structured::{ask_with_repair, parse_json_object, reject_extra_keys, RepairError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Always pick one skill (inference).
    Eval,
    /// Recall a candidate or reject retrieval (learning).
    Recall,
    /// Confirm reuse of a recalled candidate or route to a new skill.
    Judge,
}

impl SelectionMode {
    fn template(self) -> PromptTemplate {
        match self {
            SelectionMode::Eval => prompts::SKILL_SELECTION_EVAL,
            SelectionMode::Recall => prompts::SKILL_SELECTION_RECALL,
            SelectionMode::Judge => prompts::SKILL_SELECTION_JUDGE,
        }
    }

    /// `(accepting, declining)` decision words; eval output has no decision field.
    fn vocabulary(self) -> Option<(&'static str, &'static str)> {
        match self {
            SelectionMode::Eval => None,
            SelectionMode::Recall => Some(("recall", "reject")),
            SelectionMode::Judge => Some(("reuse", "new")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Recall,
    Reject,
    Reuse,
    New,
    Select,
}

impl Decision {
    /// True when the decision names a skill.
    pub fn accepts(self) -> bool {
        matches!(self, Decision::Recall | Decision::Reuse | Decision::Select)
    }

    fn from_word(word: &str) -> Option<Self> {
        Some(match word {
            "recall" => Decision::Recall,
            "reject" => Decision::Reject,
            "reuse" => Decision::Reuse,
            "new" => Decision::New,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillDecision {
    pub decision: Decision,
    /// Empty when the decision declines.
    pub skill_id: String,
    pub reason: String,
    pub confidence: f64,
}

/// Limits the candidate list for large libraries by description similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prefilter {
    pub enabled: bool,
    /// Prefilter only when there are more candidates than this.
    pub threshold: usize,
    pub keep: usize,
}

impl Default for Prefilter {
    fn default() -> Self {
        Prefilter { enabled: true, threshold: 40, keep: 20 }
    }
}

pub struct Selector<'a> {
    pub chat: &'a ChatClient,
    /// Needed only when prefiltering kicks in.
    pub embedder: Option<&'a EmbeddingClient>,
    pub prefilter: Prefilter,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Rejection {
    Malformed(String),
    UnknownId(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Malformed(m) => f.write_str(m),
            Rejection::UnknownId(id) => write!(f, "`{id}` is not one of the candidate skill ids"),
        }
    }
}

fn string_field<'m>(map: &'m Map<String, Value>, key: &str) -> Result<&'m str, Rejection> {
    match map.get(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(Rejection::Malformed(format!("`{key}` must be a string"))),
    }
}

fn parse_decision(text: &str, mode: SelectionMode, candidates: &[&Skill]) -> Result<SkillDecision, Rejection> {
    let map = parse_json_object(text).map_err(Rejection::Malformed)?;
    let allowed: &[&str] = match mode {
        SelectionMode::Eval => &["skill_id", "reason", "confidence"],
        _ => &["decision", "skill_id", "reason", "confidence"],
    };
    reject_extra_keys(&map, allowed).map_err(Rejection::Malformed)?;
    let decision = match mode.vocabulary() {
        None => Decision::Select,
        Some((yes, no)) => {
            let word = string_field(&map, "decision")?;
            if word != yes && word != no {
                return Err(Rejection::Malformed(format!("`decision` must be `{yes}` or `{no}`, got `{word}`")));
            }
            Decision::from_word(word).expect("vocabulary words parse")
        }
    };
    let skill_id = string_field(&map, "skill_id")?.trim().to_string();
    let reason = string_field(&map, "reason")?.to_string();
    let confidence = map
        .get("confidence")
        .and_then(Value::as_f64)
        .filter(|c| (0.0..=1.0).contains(c))
        .ok_or_else(|| Rejection::Malformed("`confidence` must be a number in [0, 1]".into()))?;
    if decision.accepts() {
        if !candidates.iter().any(|s| s.skill_id == skill_id) {
            return Err(Rejection::UnknownId(skill_id));
        }
    } else if !skill_id.is_empty() {
        return Err(Rejection::Malformed(format!("`skill_id` must be empty when `decision` is `{}`", word_of(decision))));
    }
    Ok(SkillDecision { decision, skill_id, reason, confidence })
}

fn word_of(d: Decision) -> &'static str {
    match d {
        Decision::Recall => "recall",
        Decision::Reject => "reject",
        Decision::Reuse => "reuse",
        Decision::New => "new",
        Decision::Select => "select",
    }
}

impl Selector<'_> {
    /// Most similar `keep` candidates by cosine between the problem's fused
    /// embedding and each embedded description; ties keep library order.
    fn prefiltered<'s>(&self, repr: &ArchetypeRepresentation, candidates: &[&'s Skill]) -> Result<Vec<&'s Skill>, SkillError> {
        let p = self.prefilter;
        let Some(embedder) = self.embedder.filter(|_| p.enabled && candidates.len() > p.threshold) else {
            return Ok(candidates.to_vec());
        };
        let mut scored = Vec::with_capacity(candidates.len());
        for (i, skill) in candidates.iter().enumerate() {
            let d = embedder.embed_text(&skill.description)?;
            match cosine_distance_raw(repr.e.values(), d.values()) {
                Ok(dist) => scored.push((dist, i)),
                Err(e) => {
                    log::warn!("prefilter disabled: {e}");
                    return Ok(candidates.to_vec());
                }
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(p.keep).map(|(_, i)| candidates[i]).collect())
    }

    /// Asks the selector to route among `candidates`.
    pub fn select(
        &self,
        repr: &ArchetypeRepresentation,
        candidates: &[&Skill],
        mode: SelectionMode,
    ) -> Result<SkillDecision, SkillError> {
        if candidates.is_empty() {
            let declined = match mode {
                SelectionMode::Eval => return Err(SkillError::EmptyLibrary),
                SelectionMode::Recall => Decision::Reject,
                SelectionMode::Judge => Decision::New,
            };
            return Ok(SkillDecision {
                decision: declined,
                skill_id: String::new(),
                reason: "no candidate skills".into(),
                confidence: 1.0,
            });
        }
        let shown = self.prefiltered(repr, candidates)?;
        let listing: Vec<Value> = shown
            .iter()
            .map(|s| json!({"skill_id": s.skill_id, "name": s.name, "description": s.description}))
            .collect();
        let prompt = mode.template().fill(&[
            ("keywords", repr.extraction.ingredients.to_prompt_json()),
            ("edited_problem", repr.extraction.edited_problem.clone()),
            ("skill_candidates_json", serde_json::to_string_pretty(&listing).expect("candidates serialize")),
        ])?;
        let request = ChatRequest::new("", prompt).with_temperature(self.temperature);
        ask_with_repair(self.chat, &request, |t| parse_decision(t, mode, &shown)).map_err(|e| match e {
            RepairError::Provider(p) => SkillError::Provider(p),
            RepairError::Invalid(Rejection::Malformed(m)) => SkillError::MalformedDecision(m),
            RepairError::Invalid(Rejection::UnknownId(id)) => SkillError::UnknownSkillId(id),
        })
    }
}

/// Routes among all library skills.
pub fn select_skill(
    selector: &Selector<'_>,
    repr: &ArchetypeRepresentation,
    library: &SkillLibrary,
    mode: SelectionMode,
) -> Result<SkillDecision, SkillError> {
    let candidates: Vec<&Skill> = library.iter().collect();
    selector.select(repr, &candidates, mode)
}
