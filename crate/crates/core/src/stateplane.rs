//! Content-addressed shared state with compare-and-swap refs.
//!
//! Objects are stored under their SHA-256 digest. Commits are objects too: a
//! commit id is the digest of the commit's canonical JSON. Refs hold a single
//! head and only move through [`Store::commit`], which refuses to advance a
//! ref whose head is not the caller's expected parent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envelope::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("unknown ref {0:?}")]
    UnknownRef(String),
    #[error("ref {0:?} already exists")]
    RefExists(String),
    #[error("author {0} is not registered")]
    UnknownAuthor(AgentId),
    #[error("object {0} not found")]
    MissingObject(ObjectId),
    #[error("invalid object id {0:?}")]
    InvalidId(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub [u8; 32]);

impl ObjectId {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ObjectId {
    type Err = StateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| StateError::InvalidId(s.to_string()))?;
        Ok(Self(out))
    }
}

impl Serialize for ObjectId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type CommitId = ObjectId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub parents: Vec<CommitId>,
    pub author: AgentId,
    pub timestamp_us: u64,
    pub tree: BTreeMap<String, ObjectId>,
    pub message: String,
}

impl Commit {
    fn canonical(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("commit serializes")
    }
}

/// Pending edits: `Some(bytes)` writes a path, `None` removes it.
pub type Changes = BTreeMap<String, Option<Vec<u8>>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub ref_name: String,
    pub author: AgentId,
    pub expected: Option<CommitId>,
    pub current: Option<CommitId>,
    /// Paths both the attempt and the intervening history touched.
    pub paths: Vec<String>,
    pub time_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed(CommitId),
    Conflict(ConflictReport),
}

impl CommitOutcome {
    pub fn commit_id(&self) -> Option<CommitId> {
        match self {
            CommitOutcome::Committed(id) => Some(*id),
            CommitOutcome::Conflict(_) => None,
        }
    }
}

/// How agents pass shared state around: by reference, never by copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRef {
    pub ref_name: String,
    pub commit: CommitId,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    /// Agents paste full copies of shared documents into messages.
    #[default]
    Embedded,
    StatePlane,
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    objects: BTreeMap<ObjectId, Vec<u8>>,
    refs: BTreeMap<String, Option<CommitId>>,
    authors: BTreeSet<AgentId>,
    conflicts: Vec<ConflictReport>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_object(&mut self, bytes: &[u8]) -> ObjectId {
        let id = ObjectId::of(bytes);
        self.objects.entry(id).or_insert_with(|| bytes.to_vec());
        id
    }

    pub fn get_object(&self, id: &ObjectId) -> Option<&[u8]> {
        self.objects.get(id).map(Vec::as_slice)
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn register_author(&mut self, author: AgentId) {
        self.authors.insert(author);
    }

    /// Creates an empty ref (no commits yet).
    pub fn create_ref(&mut self, name: &str) -> Result<(), StateError> {
        if self.refs.contains_key(name) {
            return Err(StateError::RefExists(name.into()));
        }
        self.refs.insert(name.into(), None);
        Ok(())
    }

    pub fn head(&self, name: &str) -> Result<Option<CommitId>, StateError> {
        self.refs
            .get(name)
            .copied()
            .ok_or_else(|| StateError::UnknownRef(name.into()))
    }

    pub fn get_commit(&self, id: &CommitId) -> Result<Commit, StateError> {
        let bytes = self.get_object(id).ok_or(StateError::MissingObject(*id))?;
        serde_json::from_slice(bytes).map_err(|e| StateError::Corrupt(e.to_string()))
    }

    fn tree_of(&self, commit: Option<CommitId>) -> Result<BTreeMap<String, ObjectId>, StateError> {
        match commit {
            None => Ok(BTreeMap::new()),
            Some(c) => Ok(self.get_commit(&c)?.tree),
        }
    }

    /// Advances `ref_name` iff its head is still `expected_parent`.
    pub fn commit(
        &mut self,
        ref_name: &str,
        expected_parent: Option<CommitId>,
        author: &AgentId,
        timestamp_us: u64,
        changes: &Changes,
        message: &str,
    ) -> Result<CommitOutcome, StateError> {
        if !self.authors.contains(author) {
            return Err(StateError::UnknownAuthor(author.clone()));
        }
        let current = self.head(ref_name)?;
        if current != expected_parent {
            let base = self.tree_of(expected_parent)?;
            let head = self.tree_of(current)?;
            let moved: BTreeSet<&String> = base
                .keys()
                .chain(head.keys())
                .filter(|p| base.get(*p) != head.get(*p))
                .collect();
            let report = ConflictReport {
                ref_name: ref_name.into(),
                author: author.clone(),
                expected: expected_parent,
                current,
                paths: changes.keys().filter(|p| moved.contains(p)).cloned().collect(),
                time_us: timestamp_us,
            };
            self.conflicts.push(report.clone());
            return Ok(CommitOutcome::Conflict(report));
        }

        let mut tree = self.tree_of(current)?;
        for (path, content) in changes {
            match content {
                Some(bytes) => {
                    let id = self.put_object(bytes);
                    tree.insert(path.clone(), id);
                }
                None => {
                    tree.remove(path);
                }
            }
        }
        let commit = Commit {
            parents: current.into_iter().collect(),
            author: author.clone(),
            timestamp_us,
            tree,
            message: message.into(),
        };
        let id = self.put_object(&commit.canonical());
        self.refs.insert(ref_name.into(), Some(id));
        Ok(CommitOutcome::Committed(id))
    }

    /// Content of `path` as of `commit`.
    pub fn read_at(&self, commit: &CommitId, path: &str) -> Result<Option<&[u8]>, StateError> {
        let tree = self.get_commit(commit)?.tree;
        match tree.get(path) {
            None => Ok(None),
            Some(id) => self.get_object(id).map(Some).ok_or(StateError::MissingObject(*id)),
        }
    }

    pub fn resolve(&self, r: &StateRef) -> Result<Option<&[u8]>, StateError> {
        self.read_at(&r.commit, &r.path)
    }

    /// First-parent chain from the head back to the root commit.
    pub fn history(&self, ref_name: &str) -> Result<Vec<CommitId>, StateError> {
        let mut out = Vec::new();
        let mut cur = self.head(ref_name)?;
        while let Some(c) = cur {
            out.push(c);
            cur = self.get_commit(&c)?.parents.first().copied();
        }
        Ok(out)
    }

    pub fn conflicts(&self) -> &[ConflictReport] {
        &self.conflicts
    }

    /// Writes `objects/<hex>` files and a `refs.json` manifest.
    pub fn export(&self, dir: &Path) -> Result<(), StateError> {
        let io = |e: std::io::Error| StateError::Io(e.to_string());
        let objects = dir.join("objects");
        std::fs::create_dir_all(&objects).map_err(io)?;
        for (id, bytes) in &self.objects {
            std::fs::write(objects.join(id.to_hex()), bytes).map_err(io)?;
        }
        let manifest = serde_json::to_vec_pretty(&self.refs).expect("refs serialize");
        std::fs::write(dir.join("refs.json"), manifest).map_err(io)?;
        Ok(())
    }

    /// Reads an exported store back, re-hashing every object.
    pub fn import(dir: &Path) -> Result<Self, StateError> {
        let io = |e: std::io::Error| StateError::Io(e.to_string());
        let mut store = Store::new();
        for entry in std::fs::read_dir(dir.join("objects")).map_err(io)? {
            let entry = entry.map_err(io)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let claimed: ObjectId = name.parse()?;
            let bytes = std::fs::read(entry.path()).map_err(io)?;
            if store.put_object(&bytes) != claimed {
                return Err(StateError::Corrupt(format!("object {name} does not match its digest")));
            }
        }
        let manifest = std::fs::read(dir.join("refs.json")).map_err(io)?;
        store.refs = serde_json::from_slice(&manifest).map_err(|e| StateError::Corrupt(e.to_string()))?;
        for head in store.refs.values().flatten() {
            let c = store.get_commit(head)?;
            store.authors.insert(c.author);
        }
        Ok(store)
    }
}

/// Number of distinct contents among the given views of one document.
pub fn measure_divergence<'a>(views: impl IntoIterator<Item = &'a [u8]>) -> usize {
    views.into_iter().map(ObjectId::of).collect::<BTreeSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn store() -> Store {
        let mut s = Store::new();
        s.register_author(id("rupert"));
        s.register_author(id("percy"));
        s.create_ref("main").unwrap();
        s
    }

    fn set(path: &str, v: &str) -> Changes {
        Changes::from([(path.to_string(), Some(v.as_bytes().to_vec()))])
    }

    #[test]
    fn put_is_idempotent() {
        let mut s = Store::new();
        let a = s.put_object(b"plan");
        assert_eq!(s.put_object(b"plan"), a);
        assert_eq!(s.object_count(), 1);
        assert_eq!(s.get_object(&a), Some(&b"plan"[..]));
    }

    #[test]
    fn empty_object_digest() {
        assert_eq!(
            ObjectId::of(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn second_writer_from_same_parent_conflicts() {
        let mut s = store();
        let base = s.commit("main", None, &id("rupert"), 1, &set("plan", "v0"), "init").unwrap();
        let base = base.commit_id();
        let a = s.commit("main", base, &id("percy"), 2, &set("plan", "percy"), "edit").unwrap();
        assert!(a.commit_id().is_some());
        let b = s.commit("main", base, &id("rupert"), 3, &set("plan", "rupert"), "edit").unwrap();
        let CommitOutcome::Conflict(r) = b else { panic!("expected conflict") };
        assert_eq!(r.expected, base);
        assert_eq!(r.current, a.commit_id());
        assert_eq!(r.paths, vec!["plan".to_string()]);
        assert_eq!(s.history("main").unwrap().len(), 2);
        assert_eq!(s.conflicts().len(), 1);
    }

    #[test]
    fn disjoint_paths_still_conflict_but_name_no_paths() {
        let mut s = store();
        s.commit("main", None, &id("rupert"), 1, &set("a", "1"), "").unwrap();
        let r = s.commit("main", None, &id("percy"), 2, &set("b", "2"), "").unwrap();
        let CommitOutcome::Conflict(r) = r else { panic!() };
        assert!(r.paths.is_empty());
    }

    #[test]
    fn errors() {
        let mut s = store();
        assert_eq!(
            s.commit("nope", None, &id("rupert"), 0, &Changes::new(), ""),
            Err(StateError::UnknownRef("nope".into()))
        );
        assert!(matches!(
            s.commit("main", None, &id("mallory"), 0, &Changes::new(), ""),
            Err(StateError::UnknownAuthor(_))
        ));
        assert!(s.create_ref("main").is_err());
    }

    #[test]
    fn removal_and_resolution() {
        let mut s = store();
        let c1 = s.commit("main", None, &id("rupert"), 1, &set("x", "1"), "").unwrap().commit_id().unwrap();
        let c2 = s
            .commit("main", Some(c1), &id("rupert"), 2, &Changes::from([("x".to_string(), None)]), "")
            .unwrap()
            .commit_id()
            .unwrap();
        assert_eq!(s.read_at(&c1, "x").unwrap(), Some(&b"1"[..]));
        assert_eq!(s.read_at(&c2, "x").unwrap(), None);
    }

    #[test]
    fn export_import_roundtrip() {
        let mut s = store();
        s.commit("main", None, &id("rupert"), 1, &set("plan", "v0"), "init").unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path()).unwrap();
        let back = Store::import(dir.path()).unwrap();
        assert_eq!(back.head("main").unwrap(), s.head("main").unwrap());
        assert_eq!(back.object_count(), s.object_count());

        let victim = dir.path().join("objects").join(ObjectId::of(b"v0").to_hex());
        std::fs::write(victim, b"tampered").unwrap();
        assert!(matches!(Store::import(dir.path()), Err(StateError::Corrupt(_))));
    }

    #[test]
    fn divergence_counts_distinct_contents() {
        assert_eq!(measure_divergence([&b"a"[..], b"a"]), 1);
        assert_eq!(measure_divergence([&b"a"[..], b"b", b"a"]), 2);
        assert_eq!(measure_divergence(std::iter::empty()), 0);
    }
}
