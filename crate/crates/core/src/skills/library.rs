//! The skill library and its on-disk layout.
//!
//! ```text
//! <dir>/index.json              ids, metadata, version, snapshot history
//! <dir>/skills/<id>.r<rev>.md   one markdown file per skill revision
//! ```
//!
//! Skill files are written before the index, and the index is replaced by
//! rename, so a reader always sees either the old or the new library.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_skill_markdown, Skill, SkillError};
use crate::archetype::Ingredients;

pub const INDEX_FILE: &str = "index.json";
const SKILLS_DIR: &str = "skills";
const INDEX_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u64,
    pub skill_count: usize,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillLibrary {
    skills: BTreeMap<String, Skill>,
    version: u64,
    snapshots: Vec<Snapshot>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn get(&self, skill_id: &str) -> Option<&Skill> {
        self.skills.get(skill_id)
    }

    /// Skills in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Skill> {
        self.skills.values()
    }

    fn bump(&mut self, timestamp: &str) {
        self.version += 1;
        self.snapshots.push(Snapshot { version: self.version, skill_count: self.skills.len(), timestamp: timestamp.to_string() });
    }

    pub fn insert(&mut self, skill: Skill, timestamp: &str) -> Result<(), SkillError> {
        if self.skills.contains_key(&skill.skill_id) {
            return Err(SkillError::DuplicateSkill(skill.skill_id));
        }
        self.skills.insert(skill.skill_id.clone(), skill);
        self.bump(timestamp);
        Ok(())
    }

    /// Swaps in a refined skill with the same id and name.
    pub fn replace(&mut self, skill: Skill, timestamp: &str) -> Result<(), SkillError> {
        let Some(current) = self.skills.get(&skill.skill_id) else {
            return Err(SkillError::MissingSkill(skill.skill_id));
        };
        if current.name != skill.name {
            return Err(SkillError::NameChanged { expected: current.name.clone(), found: skill.name });
        }
        self.skills.insert(skill.skill_id.clone(), skill);
        self.bump(timestamp);
        Ok(())
    }

    /// First 12 hex digits of SHA-256 over `name`, `timestamp` and a
    /// collision counter, skipping ids already in the library.
    pub fn fresh_skill_id(&self, name: &str, timestamp: &str) -> String {
        (0u32..)
            .map(|n| {
                let mut h = Sha256::new();
                h.update(name.as_bytes());
                h.update(b"\n");
                h.update(timestamp.as_bytes());
                if n > 0 {
                    h.update(format!("\n{n}").as_bytes());
                }
                h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect::<String>()
            })
            .find(|id| !self.skills.contains_key(id))
            .expect("an unused id exists")
    }

    /// Union of all skill keywords, slot by slot, in id order.
    pub fn keyword_vocabulary(&self) -> Ingredients {
        let mut v = Vec::new();
        let mut c = Vec::new();
        let mut o = Vec::new();
        for s in self.iter() {
            v.extend(s.keywords.variable.iter().cloned());
            c.extend(s.keywords.constraint.iter().cloned());
            o.extend(s.keywords.objective.iter().cloned());
        }
        Ingredients::new(&v, &c, &o)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    skill_id: String,
    name: String,
    description: String,
    revision: u32,
    cluster_provenance: Option<String>,
    created_at: String,
    keywords: Ingredients,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: u32,
    version: u64,
    skills: Vec<IndexEntry>,
    snapshots: Vec<Snapshot>,
}

fn io_err(path: &Path, e: std::io::Error) -> SkillError {
    SkillError::Io(format!("{}: {e}", path.display()))
}

fn skill_file_name(skill: &Skill) -> String {
    format!("{}.r{}.md", skill.skill_id, skill.revision)
}

/// Writes `bytes` to `path` through a sibling temporary file and rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SkillError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn save_library(library: &SkillLibrary, dir: &Path) -> Result<(), SkillError> {
    let skills_dir = dir.join(SKILLS_DIR);
    fs::create_dir_all(&skills_dir).map_err(|e| io_err(&skills_dir, e))?;
    let mut entries = Vec::with_capacity(library.len());
    for skill in library.iter() {
        let file = skill_file_name(skill);
        let path = skills_dir.join(&file);
        let unchanged = fs::read(&path).is_ok_and(|b| b == skill.document.as_bytes());
        if !unchanged {
            write_atomic(&path, skill.document.as_bytes())?;
        }
        entries.push(IndexEntry {
            skill_id: skill.skill_id.clone(),
            name: skill.name.clone(),
            description: skill.description.clone(),
            revision: skill.revision,
            cluster_provenance: skill.cluster_provenance.clone(),
            created_at: skill.created_at.clone(),
            keywords: skill.keywords.clone(),
            file: format!("{SKILLS_DIR}/{file}"),
        });
    }
    let index = Index { format: INDEX_FORMAT, version: library.version, skills: entries, snapshots: library.snapshots.clone() };
    let mut bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
    bytes.push(b'\n');
    write_atomic(&dir.join(INDEX_FILE), &bytes)
}

pub fn load_library(dir: &Path) -> Result<SkillLibrary, SkillError> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
    let index: Index = serde_json::from_str(&text)
        .map_err(|e| SkillError::CorruptLibrary(format!("{}: {e}", index_path.display())))?;
    if index.format != INDEX_FORMAT {
        return Err(SkillError::CorruptLibrary(format!("unsupported index format {}", index.format)));
    }
    let mut skills = BTreeMap::new();
    for entry in index.skills {
        let path: PathBuf = dir.join(&entry.file);
        let document = fs::read_to_string(&path)
            .map_err(|e| SkillError::CorruptLibrary(format!("skill `{}`: {}: {e}", entry.skill_id, path.display())))?;
        let outline = validate_skill_markdown(&document).map_err(|errs| {
            SkillError::CorruptLibrary(format!("skill `{}`: {}", entry.skill_id, super::markdown::describe_errors(&errs)))
        })?;
        if outline.name != entry.name || outline.description != entry.description {
            return Err(SkillError::CorruptLibrary(format!(
                "skill `{}`: document metadata does not match the index",
                entry.skill_id
            )));
        }
        let skill = Skill {
            skill_id: entry.skill_id.clone(),
            name: entry.name,
            description: entry.description,
            document,
            keywords: entry.keywords,
            cluster_provenance: entry.cluster_provenance,
            revision: entry.revision,
            created_at: entry.created_at,
        };
        if skills.insert(entry.skill_id.clone(), skill).is_some() {
            return Err(SkillError::CorruptLibrary(format!("duplicate skill id `{}`", entry.skill_id)));
        }
    }
    Ok(SkillLibrary { skills, version: index.version, snapshots: index.snapshots })
}

/// Loads the library at `dir`, or returns an empty one when no index exists.
pub fn load_or_empty(dir: &Path) -> Result<SkillLibrary, SkillError> {
    if dir.join(INDEX_FILE).exists() {
        load_library(dir)
    } else {
        Ok(SkillLibrary::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skills::markdown::EXAMPLE_SKILL;

    fn skill(id: &str, name: &str) -> Skill {
        let doc = EXAMPLE_SKILL.replace("name: capacitated_integer_production_planning", &format!("name: {name}"));
        Skill::from_document(id, doc, Ingredients::new(&[name], &[], &[]), None, "t").unwrap()
    }

    #[test]
    fn mutations_bump_version_and_history() {
        let mut lib = SkillLibrary::new();
        lib.insert(skill("a", "one"), "t1").unwrap();
        lib.insert(skill("b", "two"), "t2").unwrap();
        assert_eq!(lib.insert(skill("a", "x"), "t3"), Err(SkillError::DuplicateSkill("a".into())));
        let mut refined = lib.get("a").unwrap().clone();
        refined.revision += 1;
        lib.replace(refined, "t3").unwrap();
        assert_eq!(lib.version(), 3);
        assert_eq!(lib.len(), 2);
        let counts: Vec<usize> = lib.snapshots().iter().map(|s| s.skill_count).collect();
        assert_eq!(counts, vec![1, 2, 2]);
        assert!(matches!(lib.replace(skill("a", "renamed"), "t4"), Err(SkillError::NameChanged { .. })));
        assert!(matches!(lib.replace(skill("zz", "one"), "t4"), Err(SkillError::MissingSkill(_))));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut lib = SkillLibrary::new();
        for (i, n) in ["one", "two", "three"].iter().enumerate() {
            lib.insert(skill(&format!("id{i}"), n), &format!("t{i}")).unwrap();
        }
        save_library(&lib, dir.path()).unwrap();
        let loaded = load_library(dir.path()).unwrap();
        assert_eq!(loaded, lib);
        assert_eq!(loaded.snapshots().iter().map(|s| s.version).collect::<Vec<_>>(), vec![1, 2, 3]);
        let bytes = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        save_library(&loaded, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(INDEX_FILE)).unwrap(), bytes);
    }

    #[test]
    fn missing_or_tampered_files_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut lib = SkillLibrary::new();
        lib.insert(skill("id0", "one"), "t").unwrap();
        save_library(&lib, dir.path()).unwrap();
        let file = dir.path().join("skills/id0.r1.md");
        fs::write(&file, "---\nname: one\n").unwrap();
        assert!(matches!(load_library(dir.path()), Err(SkillError::CorruptLibrary(_))));
        fs::write(&file, EXAMPLE_SKILL).unwrap();
        assert!(matches!(load_library(dir.path()), Err(SkillError::CorruptLibrary(_))));
        fs::remove_file(&file).unwrap();
        assert!(matches!(load_library(dir.path()), Err(SkillError::CorruptLibrary(_))));
    }

    #[test]
    fn fresh_ids_avoid_collisions() {
        let mut lib = SkillLibrary::new();
        let id = lib.fresh_skill_id("one", "t");
        assert_eq!(id, lib.fresh_skill_id("one", "t"));
        lib.insert(skill(&id, "one"), "t").unwrap();
        let next = lib.fresh_skill_id("one", "t");
        assert_ne!(next, id);
        assert_eq!(next.len(), 12);
    }

    #[test]
    fn empty_dir_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_or_empty(dir.path()).unwrap().is_empty());
        assert!(matches!(load_library(dir.path()), Err(SkillError::Io(_))));
    }
}
