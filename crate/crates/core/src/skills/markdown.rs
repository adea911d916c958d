//! Structural validation of skill documents.
//!
//! A skill document is `---`-delimited frontmatter with `name` and
//! `description`, followed by one or more `# Workflow` sections, each with a
//! modeling and a solving stage carrying fixed `###` subsections.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Modeling,
    Solving,
}

impl Stage {
    pub fn heading(self) -> &'static str {
        match self {
            Stage::Modeling => "## Modeling stage",
            Stage::Solving => "## Solving stage",
        }
    }

    /// Required `###` subsections, in checking order.
    pub fn required_sections(self) -> &'static [&'static str] {
        match self {
            Stage::Modeling => &["Strategy Overview", "Formulation Template", "Common Pitfalls"],
            Stage::Solving => &["Strategy Overview", "Code Usage", "Common Pitfalls"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkillDocError {
    MissingFrontmatter,
    UnterminatedFrontmatter,
    MissingName,
    MissingDescription,
    NoWorkflow,
    /// `workflow` is 1-based.
    MissingStage { workflow: usize, stage: Stage },
    MissingSection { workflow: usize, stage: Stage, section: String },
}

impl fmt::Display for SkillDocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkillDocError::MissingFrontmatter => f.write_str("document does not start with `---` frontmatter"),
            SkillDocError::UnterminatedFrontmatter => f.write_str("unterminated frontmatter"),
            SkillDocError::MissingName => f.write_str("frontmatter has no non-empty `name`"),
            SkillDocError::MissingDescription => f.write_str("frontmatter has no non-empty `description`"),
            SkillDocError::NoWorkflow => f.write_str("no `# Workflow` section"),
            SkillDocError::MissingStage { workflow, stage } => {
                write!(f, "workflow {workflow}: missing `{}`", stage.heading())
            }
            SkillDocError::MissingSection { workflow, stage, section } => {
                write!(f, "workflow {workflow}: missing `### {section}` in `{}`", stage.heading())
            }
        }
    }
}

/// Joins errors into one message for repair prompts and logs.
pub fn describe_errors(errors: &[SkillDocError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillOutline {
    pub name: String,
    pub description: String,
    pub workflow_count: usize,
}

/// Splits off the frontmatter, returning its lines and the body.
fn split_frontmatter(text: &str) -> Result<(Vec<&str>, &str), SkillDocError> {
    let text = text.trim_start_matches('\u{feff}').trim_start();
    let Some(after_open) = text.strip_prefix("---") else {
        return Err(SkillDocError::MissingFrontmatter);
    };
    let Some(after_open) = after_open.strip_prefix('\n').or_else(|| after_open.strip_prefix("\r\n")) else {
        return Err(SkillDocError::MissingFrontmatter);
    };
    let mut offset = 0;
    let mut lines = Vec::new();
    for line in after_open.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim_end() == "---" {
            return Ok((lines, &after_open[offset + line.len()..]));
        }
        lines.push(content);
        offset += line.len();
    }
    Err(SkillDocError::UnterminatedFrontmatter)
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

/// Value of a top-level `key:` in simple YAML, supporting `|` and `>` block
/// scalars (joined with spaces).
fn frontmatter_value(lines: &[&str], key: &str) -> Option<String> {
    let idx = lines.iter().position(|l| {
        !l.starts_with([' ', '\t']) && l.split_once(':').is_some_and(|(k, _)| k.trim() == key)
    })?;
    let (_, rest) = lines[idx].split_once(':')?;
    let rest = rest.trim();
    if rest.starts_with('|') || rest.starts_with('>') {
        let block: Vec<&str> = lines[idx + 1..]
            .iter()
            .take_while(|l| l.trim().is_empty() || l.starts_with([' ', '\t']))
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .collect();
        Some(block.join(" "))
    } else {
        Some(unquote(rest).to_string())
    }
}

/// `(level, text)` for every ATX heading outside fenced code blocks.
fn headings(body: &str) -> Vec<(usize, &str)> {
    let mut fence: Option<&str> = None;
    let mut out = Vec::new();
    for line in body.lines() {
        let trimmed = line.trim_start();
        if let Some(open) = fence {
            if trimmed.starts_with(open) {
                fence = None;
            }
            continue;
        }
        if trimmed.starts_with("```") {
            fence = Some("```");
            continue;
        }
        if trimmed.starts_with("~~~") {
            fence = Some("~~~");
            continue;
        }
        let level = line.chars().take_while(|&c| c == '#').count();
        if (1..=6).contains(&level) && line[level..].starts_with([' ', '\t']) {
            out.push((level, line[level..].trim()));
        }
    }
    out
}

fn heading_is(text: &str, expected: &str) -> bool {
    let t = text.to_ascii_lowercase();
    let e = expected.to_ascii_lowercase();
    t == e || t.starts_with(&format!("{e} ")) || t.starts_with(&format!("{e}:"))
}

fn check_workflow(number: usize, sections: &[(usize, &str)]) -> Option<SkillDocError> {
    let stage_start = |stage: Stage| {
        let title = &stage.heading()[3..];
        sections.iter().position(|&(lvl, t)| lvl == 2 && heading_is(t, title))
    };
    for stage in [Stage::Modeling, Stage::Solving] {
        if stage_start(stage).is_none() {
            return Some(SkillDocError::MissingStage { workflow: number, stage });
        }
    }
    for stage in [Stage::Modeling, Stage::Solving] {
        let start = stage_start(stage).expect("checked above") + 1;
        let end = sections[start..].iter().position(|&(lvl, _)| lvl <= 2).map_or(sections.len(), |p| start + p);
        let subsections = &sections[start..end];
        for &required in stage.required_sections() {
            if !subsections.iter().any(|&(lvl, t)| lvl == 3 && heading_is(t, required)) {
                return Some(SkillDocError::MissingSection { workflow: number, stage, section: required.to_string() });
            }
        }
    }
    None
}

/// Checks the document structure. Frontmatter problems are reported alone;
/// otherwise the first missing element of each workflow is reported.
pub fn validate_skill_markdown(text: &str) -> Result<SkillOutline, Vec<SkillDocError>> {
    let (front, body) = split_frontmatter(text).map_err(|e| vec![e])?;
    let name = frontmatter_value(&front, "name").filter(|v| !v.trim().is_empty());
    let description = frontmatter_value(&front, "description").filter(|v| !v.trim().is_empty());
    let mut errors = Vec::new();
    if name.is_none() {
        errors.push(SkillDocError::MissingName);
    }
    if description.is_none() {
        errors.push(SkillDocError::MissingDescription);
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let heads = headings(body);
    let starts: Vec<usize> = heads
        .iter()
        .enumerate()
        .filter(|(_, &(lvl, t))| lvl == 1 && heading_is(t, "Workflow"))
        .map(|(i, _)| i)
        .collect();
    if starts.is_empty() {
        return Err(vec![SkillDocError::NoWorkflow]);
    }
    for (n, &start) in starts.iter().enumerate() {
        let end = heads[start + 1..].iter().position(|&(lvl, _)| lvl == 1).map_or(heads.len(), |p| start + 1 + p);
        if let Some(e) = check_workflow(n + 1, &heads[start + 1..end]) {
            errors.push(e);
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(SkillOutline {
        name: name.expect("checked").trim().to_string(),
        description: description.expect("checked").trim().to_string(),
        workflow_count: starts.len(),
    })
}

/// Bundled example document used by tests and documentation.
pub const EXAMPLE_SKILL: &str = include_str!("../../assets/skills/example_skill.md");
