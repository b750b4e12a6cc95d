//! The two-level task → action hierarchy.
//!
//! Identifiers are strings in files; everywhere else a task or action is its
//! position in the ordered lists, which is also its one-hot/classifier index.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The bundled default taxonomy document.
pub const DEFAULT_TAXONOMY: &str = include_str!("../assets/taxonomy.toml");

/// Index of a task in [`Taxonomy::tasks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub usize);

/// Index of an action in [`Taxonomy::actions`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// A (task, action) pair observed or predicted at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Intention {
    pub task: TaskId,
    pub action: ActionId,
    pub frame_index: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    tasks: Vec<String>,
    actions: Vec<String>,
    admissible: IndexMap<String, Vec<String>>,
}

/// Validated task/action hierarchy. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    tasks: Vec<String>,
    actions: Vec<String>,
    /// Per task, admissible actions sorted by index.
    admissible: Vec<Vec<ActionId>>,
    /// Dense membership table, `member[task * n + action]`.
    member: Vec<bool>,
}

impl Taxonomy {
    /// Builds a taxonomy from identifier lists, validating every invariant.
    pub fn new(
        tasks: Vec<String>,
        actions: Vec<String>,
        admissible: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Validation("taxonomy declares no tasks".into()));
        }
        if actions.is_empty() {
            return Err(Error::Validation("taxonomy declares no actions".into()));
        }
        check_unique("task", &tasks)?;
        check_unique("action", &actions)?;

        let mut sets: Vec<Option<Vec<ActionId>>> = vec![None; tasks.len()];
        for (task, acts) in admissible {
            let t = tasks
                .iter()
                .position(|x| *x == task)
                .ok_or_else(|| Error::Validation(format!("admissible set for undeclared task `{task}`")))?;
            if sets[t].is_some() {
                return Err(Error::Validation(format!("duplicate admissible set for task `{task}`")));
            }
            if acts.is_empty() {
                return Err(Error::Validation(format!("empty admissible set for task `{task}`")));
            }
            let mut ids = Vec::with_capacity(acts.len());
            for a in &acts {
                let idx = actions.iter().position(|x| x == a).ok_or_else(|| {
                    Error::Validation(format!("task `{task}` references undeclared action `{a}`"))
                })?;
                if ids.contains(&ActionId(idx)) {
                    return Err(Error::Validation(format!("task `{task}` lists action `{a}` twice")));
                }
                ids.push(ActionId(idx));
            }
            ids.sort();
            sets[t] = Some(ids);
        }
        let admissible: Vec<Vec<ActionId>> = sets
            .into_iter()
            .zip(&tasks)
            .map(|(s, t)| s.ok_or_else(|| Error::Validation(format!("task `{t}` has no admissible set"))))
            .collect::<Result<_>>()?;

        let n = actions.len();
        let mut member = vec![false; tasks.len() * n];
        for (t, set) in admissible.iter().enumerate() {
            for a in set {
                member[t * n + a.0] = true;
            }
        }
        for (a, name) in actions.iter().enumerate() {
            if !(0..tasks.len()).any(|t| member[t * n + a]) {
                return Err(Error::Validation(format!("action `{name}` belongs to no task")));
            }
        }
        Ok(Taxonomy {
            tasks,
            actions,
            admissible,
            member,
        })
    }

    /// Parses a TOML taxonomy document.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let doc: TaxonomyDoc = toml::from_str(src).map_err(|e| {
            let line = e
                .span()
                .map(|s| src[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        Taxonomy::new(doc.tasks, doc.actions, doc.admissible)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src)
    }

    /// The bundled 6-task / 21-action taxonomy.
    pub fn default_assembly() -> Self {
        Self::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    /// Canonical TOML rendering; loading it back yields an equal taxonomy.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.doc()).expect("taxonomy serializes")
    }

    fn doc(&self) -> TaxonomyDoc {
        TaxonomyDoc {
            tasks: self.tasks.clone(),
            actions: self.actions.clone(),
            admissible: self
                .tasks
                .iter()
                .zip(&self.admissible)
                .map(|(t, set)| (t.clone(), set.iter().map(|a| self.actions[a.0].clone()).collect()))
                .collect(),
        }
    }

    /// SHA-256 of the canonical JSON rendering; independent of file formatting.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.doc()).expect("taxonomy serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn task_names(&self) -> &[String] {
        &self.tasks
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn task_name(&self, task: TaskId) -> &str {
        &self.tasks[task.0]
    }

    pub fn action_name(&self, action: ActionId) -> &str {
        &self.actions[action.0]
    }

    pub fn task_id(&self, name: &str) -> Result<TaskId> {
        self.tasks
            .iter()
            .position(|t| t == name)
            .map(TaskId)
            .ok_or_else(|| Error::Lookup {
                kind: "task",
                id: name.to_string(),
            })
    }

    pub fn action_id(&self, name: &str) -> Result<ActionId> {
        self.actions
            .iter()
            .position(|a| a == name)
            .map(ActionId)
            .ok_or_else(|| Error::Lookup {
                kind: "action",
                id: name.to_string(),
            })
    }

    fn check_task(&self, task: TaskId) -> Result<()> {
        if task.0 < self.tasks.len() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "task",
                id: format!("#{}", task.0),
            })
        }
    }

    fn check_action(&self, action: ActionId) -> Result<()> {
        if action.0 < self.actions.len() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "action",
                id: format!("#{}", action.0),
            })
        }
    }

    /// Admissible actions of `task`, in index order. Never empty.
    pub fn action_set_of(&self, task: TaskId) -> Result<&[ActionId]> {
        self.check_task(task)?;
        Ok(&self.admissible[task.0])
    }

    /// Whether `action` is admissible under `task`.
    pub fn is_consistent(&self, task: TaskId, action: ActionId) -> Result<bool> {
        self.check_task(task)?;
        self.check_action(action)?;
        Ok(self.member[task.0 * self.actions.len() + action.0])
    }
}

fn check_unique(kind: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {kind} identifier `{id}`")));
        }
    }
    Ok(())
}
