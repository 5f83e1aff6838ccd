//! Modular skill library: exemplars of solved tasks, the skills extracted from
//! them, token-set clusters that merge near-duplicate skills across tasks, and
//! retrieval of the clusters relevant to a new task.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{BackendError, ChatBackend};
use crate::metacog::construction_messages;
use crate::plan::parse_plan;
use crate::world::{SceneObject, TaskId};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 4;
/// Exemplars attached to each retrieved cluster.
pub const EXEMPLARS_PER_CLUSTER: usize = 2;

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "both", "by", "each", "for", "from", "in", "into", "is", "it", "its", "of",
    "on", "onto", "or", "so", "that", "the", "then", "this", "to", "with", "while", "before", "after", "when", "than",
    "them", "their", "they", "one", "any", "all",
];

/// Lowercased words split on anything that is not a letter or digit, minus
/// stop words. `synchronized_dual_grasping` gives three tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP_WORDS.contains(t))
        .map(str::to_string)
        .collect()
}

/// |a ∩ b| / |a ∪ b|, with two empty sets scoring 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum SkillsError {
    #[error("the skill library is empty")]
    EmptyLibrary,
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("invalid exemplar: {0}")]
    InvalidExemplar(String),
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error("no SKILL lines in the response: {0:?}")]
    ExtractionParse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
}

/// A solved task kept as a one-shot demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exemplar {
    pub exemplar_id: String,
    pub task_summary: String,
    pub scene_snapshot: Vec<SceneObject>,
    /// Canonical plan text.
    pub demonstration: String,
    pub source_task: TaskId,
    pub outcome: Outcome,
    /// Library version at which the exemplar was stored; orders recency.
    #[serde(default)]
    pub added_version: u64,
}

impl Exemplar {
    /// Exemplar with an id derived from the task and the plan text, so the
    /// same demonstration is never stored twice.
    pub fn new(source_task: TaskId, task_summary: String, scene_snapshot: Vec<SceneObject>, demonstration: String) -> Self {
        let digest = Sha256::digest(format!("{}\n{demonstration}", source_task.as_str()).as_bytes());
        let exemplar_id = format!("ex_{}_{}", source_task.as_str(), &hex::encode(digest)[..12]);
        Exemplar {
            exemplar_id,
            task_summary,
            scene_snapshot,
            demonstration,
            source_task,
            outcome: Outcome::Success,
            added_version: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillDescriptor {
    pub skill_id: String,
    pub name: String,
    pub tokens: BTreeSet<String>,
    pub description: String,
    pub exemplar_ids: Vec<String>,
}

impl SkillDescriptor {
    pub fn new(skill_id: impl Into<String>, name: &str, description: &str, exemplar_ids: Vec<String>) -> Self {
        let mut tokens = tokens(name);
        tokens.extend(self::tokens(description));
        SkillDescriptor { skill_id: skill_id.into(), name: name.to_string(), tokens, description: description.to_string(), exemplar_ids }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillCluster {
    pub cluster_id: String,
    /// Lexicographically smallest member name.
    pub canonical_name: String,
    pub members: Vec<String>,
    pub merged_tokens: BTreeSet<String>,
}

fn cluster_id(n: usize) -> String {
    format!("cluster_{n:03}")
}

/// Greedy single-link assignment of `skill` to the first cluster holding a
/// member at least `threshold` similar, or to a new cluster.
fn assign(
    clusters: &mut Vec<SkillCluster>,
    lookup: &BTreeMap<&str, &SkillDescriptor>,
    skill: &SkillDescriptor,
    threshold: f64,
) {
    let home = clusters
        .iter()
        .position(|c| c.members.iter().any(|m| jaccard(&lookup[m.as_str()].tokens, &skill.tokens) >= threshold));
    match home {
        Some(i) => {
            let c = &mut clusters[i];
            c.members.push(skill.skill_id.clone());
            c.merged_tokens.extend(skill.tokens.iter().cloned());
            if skill.name < c.canonical_name {
                c.canonical_name = skill.name.clone();
            }
        }
        None => clusters.push(SkillCluster {
            cluster_id: cluster_id(clusters.len()),
            canonical_name: skill.name.clone(),
            members: vec![skill.skill_id.clone()],
            merged_tokens: skill.tokens.clone(),
        }),
    }
}

/// Processes skills in id order, so the result does not depend on the input
/// order.
pub fn cluster_skills(skills: &[SkillDescriptor], threshold: f64) -> Vec<SkillCluster> {
    let mut sorted: Vec<&SkillDescriptor> = skills.iter().collect();
    sorted.sort_by(|a, b| a.skill_id.cmp(&b.skill_id));
    let lookup: BTreeMap<&str, &SkillDescriptor> = sorted.iter().map(|s| (s.skill_id.as_str(), *s)).collect();
    let mut clusters = vec![];
    for skill in sorted {
        assign(&mut clusters, &lookup, skill, threshold);
    }
    clusters
}

/// A cluster chosen for a query with its score and supporting exemplars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub cluster: SkillCluster,
    pub score: f64,
    pub exemplars: Vec<Exemplar>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillLibrary {
    pub version: u64,
    pub exemplars: BTreeMap<String, Exemplar>,
    pub skills: BTreeMap<String, SkillDescriptor>,
    pub clusters: Vec<SkillCluster>,
}

/// On-disk form: arrays sorted by id so that files diff cleanly.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    version: u64,
    exemplars: Vec<Exemplar>,
    skills: Vec<SkillDescriptor>,
    clusters: Vec<SkillCluster>,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> SkillsError {
    SkillsError::Schema { path: path.into(), reason: reason.into() }
}

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Stores a successful exemplar with its extracted skills. New skills are
    /// assigned to the existing clusters by the same greedy rule as
    /// [`cluster_skills`], so clusters only ever grow. A known exemplar id is
    /// a no-op and returns `false`.
    pub fn add_exemplar(&mut self, mut exemplar: Exemplar, skills: Vec<SkillDescriptor>) -> Result<bool, SkillsError> {
        if self.exemplars.contains_key(&exemplar.exemplar_id) {
            return Ok(false);
        }
        if let Err(e) = parse_plan(&exemplar.demonstration) {
            return Err(SkillsError::InvalidExemplar(format!("{}: {e}", exemplar.exemplar_id)));
        }
        let mut fresh = BTreeSet::new();
        for skill in &skills {
            if self.skills.contains_key(&skill.skill_id) || !fresh.insert(skill.skill_id.as_str()) {
                return Err(SkillsError::Integrity(format!("duplicate skill id `{}`", skill.skill_id)));
            }
            if skill.tokens.is_empty() {
                return Err(SkillsError::Integrity(format!("skill `{}` has no tokens", skill.skill_id)));
            }
            if skill.exemplar_ids.is_empty() {
                return Err(SkillsError::Integrity(format!("skill `{}` names no exemplar", skill.skill_id)));
            }
            for id in &skill.exemplar_ids {
                if id != &exemplar.exemplar_id && !self.exemplars.contains_key(id) {
                    return Err(SkillsError::Integrity(format!("skill `{}` references unknown exemplar `{id}`", skill.skill_id)));
                }
            }
        }

        self.version += 1;
        exemplar.added_version = self.version;
        self.exemplars.insert(exemplar.exemplar_id.clone(), exemplar);
        let mut skills = skills;
        skills.sort_by(|a, b| a.skill_id.cmp(&b.skill_id));
        for skill in skills {
            self.skills.insert(skill.skill_id.clone(), skill);
        }
        let lookup: BTreeMap<&str, &SkillDescriptor> = self.skills.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut clusters = std::mem::take(&mut self.clusters);
        let clustered: BTreeSet<String> = clusters.iter().flat_map(|c| c.members.iter().cloned()).collect();
        for skill in self.skills.values().filter(|s| !clustered.contains(&s.skill_id)) {
            assign(&mut clusters, &lookup, skill, DEFAULT_THRESHOLD);
        }
        self.clusters = clusters;
        Ok(true)
    }

    /// Exemplars behind a cluster, most recent first.
    pub fn cluster_exemplars(&self, cluster: &SkillCluster) -> Vec<&Exemplar> {
        let ids: BTreeSet<&str> = cluster
            .members
            .iter()
            .filter_map(|m| self.skills.get(m))
            .flat_map(|s| s.exemplar_ids.iter().map(String::as_str))
            .collect();
        let mut out: Vec<&Exemplar> = ids.iter().filter_map(|id| self.exemplars.get(*id)).collect();
        out.sort_by(|a, b| b.added_version.cmp(&a.added_version).then_with(|| a.exemplar_id.cmp(&b.exemplar_id)));
        out
    }

    /// Top `k` clusters by Jaccard score against the query tokens, ties
    /// broken by cluster id.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Retrieved>, SkillsError> {
        if self.clusters.is_empty() {
            return Err(SkillsError::EmptyLibrary);
        }
        let q = tokens(query);
        let mut scored: Vec<(f64, &SkillCluster)> = self.clusters.iter().map(|c| (jaccard(&c.merged_tokens, &q), c)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cluster_id.cmp(&b.1.cluster_id)));
        Ok(scored
            .into_iter()
            .take(k.max(1))
            .map(|(score, c)| Retrieved {
                cluster: c.clone(),
                score,
                exemplars: self.cluster_exemplars(c).into_iter().take(EXEMPLARS_PER_CLUSTER).cloned().collect(),
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let mut clusters = self.clusters.clone();
        clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
        let file = LibraryFile {
            version: self.version,
            exemplars: self.exemplars.values().cloned().collect(),
            skills: self.skills.values().cloned().collect(),
            clusters,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("library always serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, SkillsError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: LibraryFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path.is_empty() { "$".to_string() } else { path }, e.inner().to_string())
        })?;

        let mut lib = SkillLibrary { version: file.version, ..Default::default() };
        for (i, ex) in file.exemplars.into_iter().enumerate() {
            if let Err(e) = parse_plan(&ex.demonstration) {
                return Err(schema(format!("exemplars[{i}].demonstration"), e.to_string()));
            }
            if lib.exemplars.insert(ex.exemplar_id.clone(), ex).is_some() {
                return Err(schema(format!("exemplars[{i}].exemplar_id"), "duplicate id"));
            }
        }
        for (i, skill) in file.skills.into_iter().enumerate() {
            if skill.tokens.is_empty() {
                return Err(schema(format!("skills[{i}].tokens"), "empty token set"));
            }
            if skill.exemplar_ids.is_empty() {
                return Err(schema(format!("skills[{i}].exemplar_ids"), "no exemplar"));
            }
            for (j, id) in skill.exemplar_ids.iter().enumerate() {
                if !lib.exemplars.contains_key(id) {
                    return Err(schema(format!("skills[{i}].exemplar_ids[{j}]"), format!("unknown exemplar `{id}`")));
                }
            }
            if lib.skills.insert(skill.skill_id.clone(), skill).is_some() {
                return Err(schema(format!("skills[{i}].skill_id"), "duplicate id"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, c) in file.clusters.iter().enumerate() {
            if c.members.is_empty() {
                return Err(schema(format!("clusters[{i}].members"), "empty cluster"));
            }
            for (j, m) in c.members.iter().enumerate() {
                if !lib.skills.contains_key(m) {
                    return Err(schema(format!("clusters[{i}].members[{j}]"), format!("unknown skill `{m}`")));
                }
                if !seen.insert(m.clone()) {
                    return Err(schema(format!("clusters[{i}].members[{j}]"), format!("skill `{m}` is in two clusters")));
                }
            }
            let smallest = c.members.iter().map(|m| lib.skills[m].name.as_str()).min().expect("non-empty");
            if c.canonical_name != smallest {
                return Err(schema(format!("clusters[{i}].canonical_name"), format!("expected `{smallest}`")));
            }
        }
        if let Some(orphan) = lib.skills.keys().find(|k| !seen.contains(*k)) {
            return Err(schema("clusters", format!("skill `{orphan}` belongs to no cluster")));
        }
        lib.clusters = file.clusters;
        Ok(lib)
    }

    /// Writes through a temporary file and a rename, so a crash never leaves
    /// a half-written library behind.
    pub fn save(&self, path: &Path) -> Result<(), SkillsError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| SkillsError::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| SkillsError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SkillsError> {
        let text = std::fs::read_to_string(path).map_err(|e| SkillsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn is_snake_case(name: &str) -> bool {
    name.starts_with(|c: char| c.is_ascii_lowercase())
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Reads `SKILL <snake_case_name>: <description>` lines; anything else is
/// ignored, as are repeated names.
pub fn parse_skill_lines(response: &str, exemplar_id: &str) -> Result<Vec<SkillDescriptor>, SkillsError> {
    let mut out: Vec<SkillDescriptor> = vec![];
    for line in response.lines() {
        let Some(rest) = line.trim().strip_prefix("SKILL ") else { continue };
        let Some((name, description)) = rest.split_once(':') else { continue };
        let (name, description) = (name.trim(), description.trim());
        if !is_snake_case(name) || description.is_empty() || out.iter().any(|s| s.name == name) {
            continue;
        }
        let id = format!("{exemplar_id}/{:02}", out.len());
        out.push(SkillDescriptor::new(id, name, description, vec![exemplar_id.to_string()]));
    }
    if out.is_empty() {
        return Err(SkillsError::ExtractionParse(response.chars().take(80).collect()));
    }
    Ok(out)
}

/// Asks the backend to name the skills an exemplar demonstrates.
pub fn extract_skills(exemplar: &Exemplar, backend: &mut dyn ChatBackend) -> Result<Vec<SkillDescriptor>, SkillsError> {
    let response = backend.complete(&construction_messages(exemplar))?;
    parse_skill_lines(&response, &exemplar.exemplar_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokens_split_and_drop_stop_words() {
        assert_eq!(tokens("synchronized_dual_grasping"), set(&["synchronized", "dual", "grasping"]));
        assert_eq!(tokens("Lift the panel, then TWIST it"), set(&["lift", "panel", "twist"]));
        assert!(tokens("the and of").is_empty());
    }

    #[test]
    fn jaccard_cases() {
        let a = set(&["synchronized", "dual", "grasping"]);
        let b = set(&["synchronized", "bimanual", "lifting"]);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &b), 1.0 / 5.0);
        assert_eq!(jaccard(&a, &set(&["x"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn skill_lines() {
        let text = "Here you go.\nSKILL synchronized_lifting: raise it evenly\n- not a skill\nSKILL Bad Name: x\nSKILL synchronized_lifting: again\n";
        let skills = parse_skill_lines(text, "ex").unwrap();
        assert_eq!(skills.len(), 1);
        assert_eq!(skills[0].skill_id, "ex/00");
        assert!(matches!(parse_skill_lines("prose only", "ex"), Err(SkillsError::ExtractionParse(_))));
    }
}
