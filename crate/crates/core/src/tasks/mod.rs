//! Evaluation tasks: catalogs, constraint matching and seeded
//! information-need generation.

mod catalog;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{
    load_catalog, parse_catalog, AttributeValue, Catalog, CatalogError, CatalogItem,
    UnknownAttribute, CATALOG_COLUMNS, MOVIE_ATTRIBUTES,
};

use crate::protocol::InformationNeed;

pub const MOVIE_TASK: &str = "movie_recommendation";

pub const SUCCESS_RATE: &str = "success_rate";
pub const FED_UNDERSTANDING: &str = "fed_understanding";
pub const FED_CONSISTENCY: &str = "fed_consistency";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    UnknownAttribute(#[from] UnknownAttribute),
    #[error("invalid task manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid generator request: {0}")]
    InvalidRequest(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

/// Ids of the items that satisfy every constraint of `need`.
///
/// List-valued attributes match when they share a value with the accepted
/// list; scalar attributes must be one of the accepted values.
pub fn match_items(
    need: &InformationNeed,
    catalog: &Catalog,
) -> Result<Vec<String>, UnknownAttribute> {
    for attr in need.constraints.keys() {
        if !MOVIE_ATTRIBUTES.contains(&attr.as_str()) {
            return Err(UnknownAttribute(attr.clone()));
        }
    }
    let mut out = Vec::new();
    for item in catalog.items() {
        let mut ok = true;
        for (attr, accepted) in &need.constraints {
            if !item.attribute(attr)?.satisfies(accepted) {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(item.id.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub max_constraints: usize,
    pub max_requested: usize,
    /// Upper bound on accepted values per list-valued constraint.
    pub max_values: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            max_constraints: 3,
            max_requested: 2,
            max_values: 2,
        }
    }
}

/// Generate `n` satisfiable needs. The output is a pure function of
/// `(catalog, n, seed, params)`.
///
/// Each need is built around a pivot item drawn uniformly from the catalog:
/// constraints come from the pivot's own populated attributes, and requested
/// attributes from its remaining populated attributes.
pub fn generate_needs(
    catalog: &Catalog,
    n: usize,
    seed: u64,
    params: GeneratorParams,
) -> Result<Vec<InformationNeed>, TaskError> {
    if n == 0 {
        return Err(TaskError::InvalidRequest("n must be at least 1".into()));
    }
    if catalog.is_empty() {
        return Err(TaskError::InvalidRequest("catalog is empty".into()));
    }
    if params.max_constraints == 0 || params.max_requested == 0 || params.max_values == 0 {
        return Err(TaskError::InvalidRequest(
            "generator bounds must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut needs = Vec::with_capacity(n);
    while needs.len() < n {
        let pivot = &catalog.items()[rng.gen_range(0..catalog.len())];
        let mut attrs = pivot.populated_attributes();
        if attrs.len() < 2 {
            // nothing left to request; draw another pivot
            continue;
        }
        attrs.shuffle(&mut rng);
        let k = rng.gen_range(1..=params.max_constraints.min(attrs.len() - 1));
        let rest = attrs.len() - k;
        let r = rng.gen_range(1..=params.max_requested.min(rest));

        let mut constraints = BTreeMap::new();
        for attr in &attrs[..k] {
            let values = pivot.attribute(attr)?.values();
            let accepted = if values.len() == 1 {
                values
            } else {
                let take = rng.gen_range(1..=params.max_values.min(values.len()));
                let mut picked: Vec<usize> =
                    rand::seq::index::sample(&mut rng, values.len(), take).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| values[i].clone()).collect()
            };
            constraints.insert(attr.to_string(), accepted);
        }
        let mut requested: Vec<&str> = attrs[k..k + r].to_vec();
        requested.sort_by_key(|a| MOVIE_ATTRIBUTES.iter().position(|m| m == a));

        needs.push(InformationNeed {
            constraints,
            requested: requested.into_iter().map(str::to_string).collect(),
            fulfilled: BTreeMap::new(),
        });
    }
    Ok(needs)
}

/// Task manifest file: `{"name", "domain", "metrics", "catalog", "generator"}`.
/// A missing catalog path selects the bundled movie catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub domain: String,
    pub metrics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorParams,
}

impl TaskManifest {
    pub fn movie_recommendation() -> Self {
        Self {
            name: MOVIE_TASK.into(),
            domain: "movies".into(),
            metrics: vec![
                SUCCESS_RATE.into(),
                FED_UNDERSTANDING.into(),
                FED_CONSISTENCY.into(),
            ],
            catalog: None,
            generator: GeneratorParams::default(),
        }
    }
}

/// An instantiated task.
#[derive(Debug, Clone)]
pub struct Task {
    pub manifest: TaskManifest,
    pub catalog: Arc<Catalog>,
    pub vocabulary: BTreeSet<String>,
}

impl Task {
    pub fn movie_recommendation() -> Self {
        Self::with_catalog(
            TaskManifest::movie_recommendation(),
            Catalog::builtin_movies(),
        )
        .expect("builtin task is valid")
    }

    pub fn with_catalog(manifest: TaskManifest, catalog: Catalog) -> Result<Self, TaskError> {
        if manifest.name.trim().is_empty() {
            return Err(TaskError::InvalidManifest("name is empty".into()));
        }
        if manifest.metrics.is_empty() {
            return Err(TaskError::InvalidManifest("metrics list is empty".into()));
        }
        Ok(Self {
            manifest,
            catalog: Arc::new(catalog),
            vocabulary: MOVIE_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Instantiate from a manifest; relative catalog paths resolve against
    /// `base_dir`.
    pub fn from_manifest(manifest: TaskManifest, base_dir: &Path) -> Result<Self, TaskError> {
        let catalog = match &manifest.catalog {
            None => Catalog::builtin_movies(),
            Some(p) if p.is_absolute() => load_catalog(p)?,
            Some(p) => load_catalog(base_dir.join(p))?,
        };
        Self::with_catalog(manifest, catalog)
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn generate_needs(&self, n: usize, seed: u64) -> Result<Vec<InformationNeed>, TaskError> {
        generate_needs(&self.catalog, n, seed, self.manifest.generator)
    }

    /// Every attribute a need mentions must belong to the task vocabulary.
    pub fn check_need(&self, need: &InformationNeed) -> Result<(), UnknownAttribute> {
        match need.attributes().find(|a| !self.vocabulary.contains(*a)) {
            Some(a) => Err(UnknownAttribute(a.to_string())),
            None => Ok(()),
        }
    }
}

/// Known tasks by name.
#[derive(Debug, Default)]
pub struct TaskRegistry {
    tasks: RwLock<BTreeMap<String, Arc<Task>>>,
}

impl TaskRegistry {
    /// Registry holding the bundled movie recommendation task.
    pub fn with_builtin() -> Self {
        let reg = Self::default();
        reg.insert(Task::movie_recommendation());
        reg
    }

    pub fn insert(&self, task: Task) -> Arc<Task> {
        let task = Arc::new(task);
        self.tasks
            .write()
            .expect("task registry lock")
            .insert(task.name().to_string(), Arc::clone(&task));
        task
    }

    pub fn get(&self, name: &str) -> Result<Arc<Task>, TaskError> {
        self.tasks
            .read()
            .expect("task registry lock")
            .get(name)
            .cloned()
            .ok_or_else(|| TaskError::UnknownTask(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks
            .read()
            .expect("task registry lock")
            .keys()
            .cloned()
            .collect()
    }
}
