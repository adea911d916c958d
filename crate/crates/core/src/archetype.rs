//! Problem archetype representation: ingredient extraction, scenario-neutral
//! editing, and fusion of the two embeddings into one unit vector.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompts;
use crate::providers::{l2_norm, ChatClient, ChatRequest, EmbeddingClient, EmbeddingVector, ProviderError};
use crate::structured::{ask_with_repair, parse_json_object, reject_extra_keys, RepairError};

pub const DEFAULT_ALPHA: f64 = 0.55;

/// Resultants shorter than this are treated as cancelled out.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchetypeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("weighted sum is the zero vector")]
    DegenerateFusion,
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("extractor output unparseable after repair: {0}")]
    MalformedExtraction(String),
    #[error("extractor output violates schema: {0}")]
    SchemaViolation(String),
    #[error("problem text is empty")]
    EmptyProblem,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Scenario-agnostic keyword slots. Keywords are normalized to lowercase
/// snake_case and deduplicated per slot (first occurrence wins).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ingredients {
    pub variable: Vec<String>,
    pub constraint: Vec<String>,
    pub objective: Vec<String>,
}

pub fn normalize_keyword(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            out.push(ch);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn normalize_slot<S: AsRef<str>>(raw: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(raw.len());
    for k in raw {
        let k = normalize_keyword(k.as_ref());
        if !k.is_empty() && !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

impl Ingredients {
    pub fn new<S: AsRef<str>>(variable: &[S], constraint: &[S], objective: &[S]) -> Self {
        Ingredients {
            variable: normalize_slot(variable),
            constraint: normalize_slot(constraint),
            objective: normalize_slot(objective),
        }
    }

    /// Canonical text fed to the embedder:
    /// `variable: a, b | constraint: c | objective: d`, keywords sorted per slot.
    pub fn serialize(&self) -> String {
        fn slot(keys: &[String]) -> String {
            let mut sorted: Vec<&str> = keys.iter().map(String::as_str).collect();
            sorted.sort_unstable();
            sorted.join(", ")
        }
        format!(
            "variable: {} | constraint: {} | objective: {}",
            slot(&self.variable),
            slot(&self.constraint),
            slot(&self.objective)
        )
    }

    /// JSON object used for the `{keywords}` prompt slots.
    pub fn to_prompt_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ingredients serialize")
    }

    pub fn is_empty(&self) -> bool {
        self.variable.is_empty() && self.constraint.is_empty() && self.objective.is_empty()
    }
}

pub fn serialize_ingredients(ing: &Ingredients) -> String {
    ing.serialize()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeExtraction {
    pub ingredients: Ingredients,
    pub edited_problem: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeRepresentation {
    pub extraction: ArchetypeExtraction,
    pub w: EmbeddingVector,
    pub v: EmbeddingVector,
    pub e: EmbeddingVector,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMode<'a> {
    Train,
    Eval { keywords_list: &'a str },
}

#[derive(Debug, Clone, PartialEq)]
enum ParseFailure {
    Malformed(String),
    Schema(String),
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::Malformed(m) | ParseFailure::Schema(m) => f.write_str(m),
        }
    }
}

fn string_array(value: &Value, slot: &str) -> Result<Vec<String>, ParseFailure> {
    let items = value
        .as_array()
        .ok_or_else(|| ParseFailure::Schema(format!("keyword slot `{slot}` is not an array")))?;
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ParseFailure::Schema(format!("keyword slot `{slot}` holds a non-string")))
        })
        .collect()
}

fn parse_extraction(text: &str) -> Result<ArchetypeExtraction, ParseFailure> {
    let map = parse_json_object(text).map_err(ParseFailure::Malformed)?;
    reject_extra_keys(&map, &["keywords", "edited_problem", "confidence"]).map_err(ParseFailure::Schema)?;
    let keywords = map
        .get("keywords")
        .and_then(Value::as_object)
        .ok_or_else(|| ParseFailure::Schema("missing `keywords` object".into()))?;
    reject_extra_keys(keywords, &["variable", "constraint", "objective"]).map_err(ParseFailure::Schema)?;
    let slot = |name: &str| -> Result<Vec<String>, ParseFailure> {
        let v = keywords.get(name).ok_or_else(|| ParseFailure::Schema(format!("missing keyword slot `{name}`")))?;
        string_array(v, name)
    };
    let ingredients = Ingredients::new(&slot("variable")?, &slot("constraint")?, &slot("objective")?);
    let edited_problem = map
        .get("edited_problem")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ParseFailure::Schema("`edited_problem` must be non-empty text".into()))?
        .to_string();
    let confidence = map
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or_else(|| ParseFailure::Schema("`confidence` must be a number".into()))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ParseFailure::Schema(format!("confidence {confidence} outside [0, 1]")));
    }
    Ok(ArchetypeExtraction { ingredients, edited_problem, confidence })
}

/// Runs the extractor prompt and parses its JSON answer, with one repair
/// retry.
pub fn extract_archetype(
    chat: &ChatClient,
    problem_text: &str,
    mode: ExtractionMode<'_>,
    temperature: f64,
) -> Result<ArchetypeExtraction, ArchetypeError> {
    if problem_text.trim().is_empty() {
        return Err(ArchetypeError::EmptyProblem);
    }
    let prompt = match mode {
        ExtractionMode::Train => prompts::EXTRACTOR.fill(&[("problem_description", problem_text.to_string())]),
        ExtractionMode::Eval { keywords_list } => prompts::EXTRACTOR_EVAL.fill(&[
            ("keywords_list", keywords_list.to_string()),
            ("problem_description", problem_text.to_string()),
        ]),
    }
    .expect("extractor slots are static");
    let request = ChatRequest::new("", prompt).with_temperature(temperature);
    ask_with_repair(chat, &request, parse_extraction).map_err(|e| match e {
        RepairError::Provider(p) => ArchetypeError::Provider(p),
        RepairError::Invalid(ParseFailure::Malformed(m)) => ArchetypeError::MalformedExtraction(m),
        RepairError::Invalid(ParseFailure::Schema(m)) => ArchetypeError::SchemaViolation(m),
    })
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), ArchetypeError> {
    if a.len() != b.len() {
        return Err(ArchetypeError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

/// `Norm(alpha * w + (1 - alpha) * v)` over raw slices.
pub fn fuse_raw(w: &[f64], v: &[f64], alpha: f64) -> Result<Vec<f64>, ArchetypeError> {
    check_dims(w, v)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ArchetypeError::InvalidAlpha(alpha));
    }
    let sum: Vec<f64> = w.iter().zip(v).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let norm = l2_norm(&sum);
    if norm.is_nan() || norm <= DEGENERATE_NORM {
        return Err(ArchetypeError::DegenerateFusion);
    }
    Ok(sum.into_iter().map(|x| x / norm).collect())
}

pub fn fuse_embeddings(
    w: &EmbeddingVector,
    v: &EmbeddingVector,
    alpha: f64,
) -> Result<EmbeddingVector, ArchetypeError> {
    let fused = fuse_raw(w.values(), v.values(), alpha)?;
    Ok(EmbeddingVector::from_raw(fused)?)
}

/// `1 - cos(a, b)`, clamped into `[0, 2]` against rounding.
pub fn cosine_distance_raw(a: &[f64], b: &[f64]) -> Result<f64, ArchetypeError> {
    check_dims(a, b)?;
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(ArchetypeError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ArchetypeError> {
    cosine_distance_raw(a.values(), b.values())
}

/// Builds full archetype representations from problem text.
#[derive(Debug, Clone)]
pub struct ArchetypeEncoder {
    pub chat: ChatClient,
    pub embedder: EmbeddingClient,
    pub alpha: f64,
    /// Normalize `w` and `v` before fusion (on by default). When off, the raw
    /// backend magnitudes take part in the weighted sum.
    pub normalize_components: bool,
    pub temperature: f64,
}

impl ArchetypeEncoder {
    pub fn new(chat: ChatClient, embedder: EmbeddingClient) -> Self {
        ArchetypeEncoder { chat, embedder, alpha: DEFAULT_ALPHA, normalize_components: true, temperature: 0.0 }
    }

    pub fn encode(&self, extraction: ArchetypeExtraction) -> Result<ArchetypeRepresentation, ArchetypeError> {
        let w_raw = self.embedder.embed_raw(&extraction.ingredients.serialize())?;
        let v_raw = self.embedder.embed_raw(&extraction.edited_problem)?;
        let e = if self.normalize_components {
            fuse_raw(&EmbeddingVector::from_raw(w_raw.clone())?.into_inner(), &EmbeddingVector::from_raw(v_raw.clone())?.into_inner(), self.alpha)?
        } else {
            fuse_raw(&w_raw, &v_raw, self.alpha)?
        };
        Ok(ArchetypeRepresentation {
            extraction,
            w: EmbeddingVector::from_raw(w_raw)?,
            v: EmbeddingVector::from_raw(v_raw)?,
            e: EmbeddingVector::from_raw(e)?,
            alpha: self.alpha,
        })
    }

    pub fn represent(
        &self,
        problem_text: &str,
        mode: ExtractionMode<'_>,
    ) -> Result<ArchetypeRepresentation, ArchetypeError> {
        let extraction = extract_archetype(&self.chat, problem_text, mode, self.temperature)?;
        self.encode(extraction)
    }
}
