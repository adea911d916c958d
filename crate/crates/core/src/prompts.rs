//! Bundled prompt templates and the slot renderer.
//!
//! Templates are stored verbatim under `assets/prompts/`. Some of them were
//! authored for `str.format`-style rendering (literal braces doubled as `{{`
//! and `}}`), others for plain slot replacement where single braces are
//! literal. [`PromptTemplate::render`] handles both styles.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` has no value for slot `{slot}`")]
    MissingSlot { template: &'static str, slot: &'static str },
}

/// A prompt body plus the names of the `{slot}` placeholders it accepts.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub body: &'static str,
    pub slots: &'static [&'static str],
    /// `{{` / `}}` in the body denote literal braces.
    pub doubled_braces: bool,
}

pub const EXTRACTOR: PromptTemplate = PromptTemplate {
    name: "EXTRACTOR_PROMPT",
    body: include_str!("../assets/prompts/extractor_prompt.txt"),
    slots: &["problem_description"],
    doubled_braces: true,
};

pub const EXTRACTOR_EVAL: PromptTemplate = PromptTemplate {
    name: "EXTRACTOR_PROMPT_EVAL",
    body: include_str!("../assets/prompts/extractor_prompt_eval.txt"),
    slots: &["keywords_list", "problem_description"],
    doubled_braces: true,
};

pub const EXECUTOR_SYSTEM: PromptTemplate = PromptTemplate {
    name: "EXECUTOR_SYSTEM_PROMPT",
    body: include_str!("../assets/prompts/executor_system_prompt.txt"),
    slots: &["keywords", "skill"],
    doubled_braces: false,
};

pub const EXECUTOR_USER: PromptTemplate = PromptTemplate {
    name: "EXECUTOR_USER_PROMPT",
    body: include_str!("../assets/prompts/executor_user_prompt.txt"),
    slots: &["problem_description"],
    doubled_braces: false,
};

pub const SOLVER_SELECTION: PromptTemplate = PromptTemplate {
    name: "SOLVER_SELECTION_PROMPT",
    body: include_str!("../assets/prompts/solver_selection_prompt.txt"),
    slots: &["problem_description", "keywords", "top_k", "solver_catalog"],
    doubled_braces: true,
};

pub const SKILL_SELECTION_EVAL: PromptTemplate = PromptTemplate {
    name: "SKILL_SELECTION_PROMPT_EVAL",
    body: include_str!("../assets/prompts/skill_selection_prompt_eval.txt"),
    slots: &["keywords", "edited_problem", "skill_candidates_json"],
    doubled_braces: true,
};

pub const SKILL_SELECTION_RECALL: PromptTemplate = PromptTemplate {
    name: "SKILL_SELECTION_PROMPT",
    body: include_str!("../assets/prompts/skill_selection_prompt.txt"),
    slots: &["keywords", "edited_problem", "skill_candidates_json"],
    doubled_braces: true,
};

pub const SKILL_SELECTION_JUDGE: PromptTemplate = PromptTemplate {
    name: "SKILL_SELECTION_PROMPT_JUDGE",
    body: include_str!("../assets/prompts/skill_selection_prompt_judge.txt"),
    slots: &["keywords", "edited_problem", "skill_candidates_json"],
    doubled_braces: true,
};

pub const SKILL_ANALYSIS: PromptTemplate = PromptTemplate {
    name: "SKILL_ANALYSIS_PROMPT",
    body: include_str!("../assets/prompts/skill_analysis_prompt.txt"),
    slots: &["keywords", "Indicators", "trajectory"],
    doubled_braces: false,
};

pub const BUILD_SKILL: PromptTemplate = PromptTemplate {
    name: "BUILD_SKILL_PROMPT",
    body: include_str!("../assets/prompts/build_skill_prompt.txt"),
    slots: &["keywords", "candidate_analyses"],
    doubled_braces: false,
};

pub const REFINE_SKILL: PromptTemplate = PromptTemplate {
    name: "REFINE_SKILL_PROMPT",
    body: include_str!("../assets/prompts/refine_skill_prompt.txt"),
    slots: &["skill", "skill_analysis", "label"],
    doubled_braces: false,
};

pub const ALL: &[PromptTemplate] = &[
    EXTRACTOR,
    EXTRACTOR_EVAL,
    EXECUTOR_SYSTEM,
    EXECUTOR_USER,
    SOLVER_SELECTION,
    SKILL_SELECTION_EVAL,
    SKILL_SELECTION_RECALL,
    SKILL_SELECTION_JUDGE,
    SKILL_ANALYSIS,
    BUILD_SKILL,
    REFINE_SKILL,
];

impl PromptTemplate {
    /// Fills every declared slot. Substituted values are inserted as-is and
    /// never rescanned, so braces inside values survive untouched.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        for slot in self.slots {
            if !values.contains_key(slot) {
                return Err(PromptError::MissingSlot { template: self.name, slot });
            }
        }
        let body = self.body;
        let mut out = String::with_capacity(body.len() + 256);
        let mut rest = body;
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if self.doubled_braces && (tail.starts_with("{{") || tail.starts_with("}}")) {
                out.push_str(&tail[..1]);
                rest = &tail[2..];
                continue;
            }
            if tail.starts_with('{') {
                if let Some(end) = tail.find('}') {
                    let key = &tail[1..end];
                    if let Some(value) = self.slots.iter().find(|s| **s == key).and_then(|s| values.get(s)) {
                        out.push_str(value);
                        rest = &tail[end + 1..];
                        continue;
                    }
                }
            }
            out.push_str(&tail[..1]);
            rest = &tail[1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Convenience for call sites that build the slot map inline.
    pub fn fill(&self, pairs: &[(&str, String)]) -> Result<String, PromptError> {
        let values: BTreeMap<&str, String> = pairs.iter().cloned().collect();
        self.render(&values)
    }
}
