//! The funder knowledge base: a registry of funding organizations.
//!
//! Each entity carries a stable string id, one or more names (the first is
//! the primary name, the rest are aliases), and a country. The registry is
//! the universe the linker chooses from; a mention that matches no entity is
//! linked to NIL.
//!
//! # File format
//!
//! A registry file is JSONL — one entity per line:
//!
//! ```json
//! {"id": "100000001", "names": ["National Science Foundation", "NSF"], "country": "United States"}
//! ```
//!
//! Extra fields are ignored, except that `parents` (a list of entity ids) is
//! retained on the record for downstream consumers; nothing in this crate
//! uses the hierarchy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// A funding organization: one row of the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunderEntity {
    /// Stable identifier, unique within a registry. Ordering of ids (used
    /// for every deterministic tie-break in the crate) is plain lexicographic
    /// string order.
    pub id: String,
    /// Names for the organization. Never empty; `names[0]` is the primary
    /// name, the remainder are aliases.
    pub names: Vec<String>,
    /// Country of the organization (may be empty when the source omits it).
    #[serde(default)]
    pub country: String,
    /// Parent organization ids, when the source provides a hierarchy.
    /// Parsed and kept, but unused by the linker.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
}

impl FunderEntity {
    /// The primary (first) name.
    pub fn primary_name(&self) -> &str {
        &self.names[0]
    }
}

/// An immutable collection of [`FunderEntity`] records keyed by id.
///
/// Iteration order is always ascending by id, so everything derived from a
/// registry (entity embedding matrices, candidate tie-breaks, serialized
/// artifacts) is reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    entities: BTreeMap<String, FunderEntity>,
}

impl Registry {
    /// Build a registry from records, rejecting duplicate ids and empty name
    /// lists. `origin` only decorates error messages.
    pub fn from_entities(
        origin: &Path,
        records: impl IntoIterator<Item = (usize, FunderEntity)>,
    ) -> Result<Self> {
        let mut entities = BTreeMap::new();
        for (line, entity) in records {
            if entity.names.is_empty() || entity.names.iter().all(|n| n.is_empty()) {
                return Err(Error::EmptyNames {
                    path: origin.to_path_buf(),
                    line,
                    id: entity.id,
                });
            }
            let id = entity.id.clone();
            if entities.insert(id.clone(), entity).is_some() {
                return Err(Error::DuplicateEntity {
                    path: origin.to_path_buf(),
                    line,
                    id,
                });
            }
        }
        Ok(Registry { entities })
    }

    /// Load a registry from a JSONL file (see the module docs for the format).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = Vec::new();
        jsonl::for_each_record::<FunderEntity, _>(path, |line, entity| {
            records.push((line, entity));
            Ok(())
        })?;
        Self::from_entities(path, records)
    }

    /// Write the registry as JSONL, ascending by id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let records: Vec<&FunderEntity> = self.iter().collect();
        jsonl::write_records(path.as_ref(), &records)
    }

    /// Look up an entity by id.
    pub fn get(&self, id: &str) -> Option<&FunderEntity> {
        self.entities.get(id)
    }

    /// Whether the registry contains `id`.
    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Number of entities.
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    /// Whether the registry is empty.
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &FunderEntity> {
        self.entities.values()
    }

    /// Entity ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(|s| s.as_str())
    }
}

impl FromIterator<FunderEntity> for Registry {
    /// Convenience for tests and in-memory construction; panics on the same
    /// conditions `from_entities` rejects.
    fn from_iter<I: IntoIterator<Item = FunderEntity>>(iter: I) -> Self {
        Registry::from_entities(
            Path::new("<memory>"),
            iter.into_iter().enumerate().map(|(i, e)| (i + 1, e)),
        )
        .expect("invalid entity records")
    }
}
