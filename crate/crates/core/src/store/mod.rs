//! Per-user bijective mapping between private values and typed placeholders.
//!
//! Mappings live in memory, indexed both ways, and are persisted to an
//! append-only JSON-lines log (`mappings.log`). Deleting a user rewrites the
//! log without that user's records, so nothing of them remains on disk and
//! their counters restart at 1.

mod log;
mod seal;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::placeholder::{within_placeholder_alphabet, GrammarError, Placeholder};
use crate::taxonomy::{slug_or_fallback, PrivacyLevel};

#[doc(hidden)]
pub use log::Fault;
pub use log::{LOG_FILE, TMP_FILE};
pub use seal::{ChaChaSealer, ValueSealer, SEALED_PREFIX, STORE_KEY_ENV};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("user id must be non-empty")]
    EmptyUser,
    #[error("original value must be non-empty")]
    EmptyValue,
    #[error("user {0:?} already has mappings; import needs an empty namespace")]
    Conflict(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("sealing error: {0}")]
    Seal(String),
    #[error("store is unusable after an interrupted write; reopen it to recover")]
    Poisoned,
}

/// One stored mapping; also the on-disk record and snapshot line shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceholderMapping {
    pub user_id: String,
    pub placeholder: Placeholder,
    pub original_value: String,
    pub type_slug: String,
    pub privacy_level: PrivacyLevel,
    #[serde(with = "rfc3339_millis")]
    pub created_at: DateTime<Utc>,
}

mod rfc3339_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

fn now_millis() -> DateTime<Utc> {
    let now = Utc::now();
    DateTime::parse_from_rfc3339(&now.to_rfc3339_opts(SecondsFormat::Millis, true))
        .map(|t| t.with_timezone(&Utc))
        .unwrap_or(now)
}

#[derive(Debug, Default)]
struct Namespace {
    entries: Vec<PlaceholderMapping>,
    by_placeholder: HashMap<Placeholder, usize>,
    by_value: HashMap<String, usize>,
    counters: HashMap<String, u64>,
    deleted: bool,
}

impl Namespace {
    fn check_insert(&self, m: &PlaceholderMapping) -> Result<(), String> {
        if m.placeholder.slug() != m.type_slug {
            return Err(format!(
                "placeholder {} does not carry slug {}",
                m.placeholder, m.type_slug
            ));
        }
        if m.original_value.is_empty() {
            return Err("empty original value".into());
        }
        if self.by_placeholder.contains_key(&m.placeholder) {
            return Err(format!("duplicate placeholder {}", m.placeholder));
        }
        if self.by_value.contains_key(&m.original_value) {
            return Err(format!("value mapped twice (second time to {})", m.placeholder));
        }
        Ok(())
    }

    fn insert(&mut self, m: PlaceholderMapping) {
        let i = self.entries.len();
        let counter = self.counters.entry(m.type_slug.clone()).or_insert(0);
        *counter = (*counter).max(m.placeholder.index());
        self.by_placeholder.insert(m.placeholder.clone(), i);
        self.by_value.insert(m.original_value.clone(), i);
        self.entries.push(m);
    }

    /// Per slug, the allocated indices are exactly 1..=counter.
    fn check_contiguous(&self) -> Result<(), String> {
        let mut seen: HashMap<&str, Vec<u64>> = HashMap::new();
        for m in &self.entries {
            seen.entry(m.type_slug.as_str())
                .or_default()
                .push(m.placeholder.index());
        }
        for (slug, mut idx) in seen {
            idx.sort_unstable();
            let expected: Vec<u64> = (1..=idx.len() as u64).collect();
            if idx != expected {
                return Err(format!("indices for {slug} are not 1..{}: {idx:?}", idx.len()));
            }
            if self.counters.get(slug) != Some(&(idx.len() as u64)) {
                return Err(format!("counter for {slug} out of step"));
            }
        }
        Ok(())
    }
}

/// Thread-safe mapping store. Different users proceed in parallel; writes to
/// one user are serialized.
pub struct MappingStore {
    users: RwLock<HashMap<String, Arc<RwLock<Namespace>>>>,
    log: Option<Mutex<log::LogFile>>,
    sealer: Option<Box<dyn ValueSealer>>,
    lookups: AtomicU64,
}

impl std::fmt::Debug for MappingStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MappingStore")
            .field("users", &self.users.read().len())
            .field("persistent", &self.log.is_some())
            .field("sealed", &self.sealer.is_some())
            .finish()
    }
}

impl MappingStore {
    /// A store with no persistence.
    pub fn in_memory() -> Self {
        Self {
            users: RwLock::new(HashMap::new()),
            log: None,
            sealer: None,
            lookups: AtomicU64::new(0),
        }
    }

    /// Opens the store in `dir`, sealing values if `VEILGATE_STORE_KEY` is set.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let sealer = ChaChaSealer::from_env()?.map(|s| Box::new(s) as Box<dyn ValueSealer>);
        Self::open_with(dir, sealer)
    }

    pub fn open_with(dir: impl AsRef<Path>, sealer: Option<Box<dyn ValueSealer>>) -> Result<Self, StoreError> {
        let (log, lines) = log::LogFile::open(dir.as_ref())?;
        let mut spaces: HashMap<String, Namespace> = HashMap::new();
        for (line, text) in lines {
            let corrupt = |reason: String| StoreError::Corrupt { line, reason };
            let mut m: PlaceholderMapping = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
            if m.user_id.is_empty() {
                return Err(corrupt("empty user id".into()));
            }
            m.original_value = match (&sealer, m.original_value.starts_with(SEALED_PREFIX)) {
                (Some(s), true) => s.open(&m.original_value)?,
                (Some(_), false) => return Err(corrupt("plaintext value in a sealed store".into())),
                (None, _) => m.original_value,
            };
            let ns = spaces.entry(m.user_id.clone()).or_default();
            ns.check_insert(&m).map_err(corrupt)?;
            ns.insert(m);
        }
        for (user, ns) in &spaces {
            ns.check_contiguous().map_err(|reason| StoreError::Corrupt {
                line: 0,
                reason: format!("user {user:?}: {reason}"),
            })?;
        }
        let users = spaces.into_iter().map(|(k, v)| (k, Arc::new(RwLock::new(v)))).collect();
        Ok(Self {
            users: RwLock::new(users),
            log: Some(Mutex::new(log)),
            sealer,
            lookups: AtomicU64::new(0),
        })
    }

    pub fn is_persistent(&self) -> bool {
        self.log.is_some()
    }

    fn namespace(&self, user_id: &str) -> Option<Arc<RwLock<Namespace>>> {
        self.users.read().get(user_id).cloned()
    }

    fn namespace_or_create(&self, user_id: &str) -> Arc<RwLock<Namespace>> {
        if let Some(ns) = self.namespace(user_id) {
            return ns;
        }
        self.users.write().entry(user_id.to_string()).or_default().clone()
    }

    fn encode(&self, records: &[&PlaceholderMapping]) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        for m in records {
            let line = match &self.sealer {
                Some(s) => {
                    let mut sealed = (*m).clone();
                    sealed.original_value = s.seal(&m.original_value)?;
                    serde_json::to_string(&sealed)
                }
                None => serde_json::to_string(m),
            }
            .expect("mapping serializes");
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    fn persist(&self, records: &[&PlaceholderMapping]) -> Result<(), StoreError> {
        if let Some(log) = &self.log {
            let bytes = self.encode(records)?;
            log.lock().append(&bytes)?;
        }
        Ok(())
    }

    /// Returns the user's placeholder for `value`, allocating the next
    /// `<SLUG_k>` if the value is new. An existing mapping wins regardless of
    /// the type passed now.
    pub fn get_or_create(
        &self,
        user_id: &str,
        value: &str,
        type_label: &str,
        level: PrivacyLevel,
    ) -> Result<Placeholder, StoreError> {
        self.get_or_create_mapping(user_id, value, type_label, level)
            .map(|m| m.placeholder)
    }

    /// Like [`get_or_create`](Self::get_or_create) but returns the stored record.
    pub fn get_or_create_mapping(
        &self,
        user_id: &str,
        value: &str,
        type_label: &str,
        level: PrivacyLevel,
    ) -> Result<PlaceholderMapping, StoreError> {
        if user_id.is_empty() {
            return Err(StoreError::EmptyUser);
        }
        if value.is_empty() {
            return Err(StoreError::EmptyValue);
        }
        loop {
            let ns = self.namespace_or_create(user_id);
            {
                let r = ns.read();
                if r.deleted {
                    continue;
                }
                if let Some(&i) = r.by_value.get(value) {
                    return Ok(r.entries[i].clone());
                }
            }
            let mut w = ns.write();
            if w.deleted {
                continue;
            }
            if let Some(&i) = w.by_value.get(value) {
                return Ok(w.entries[i].clone());
            }
            let slug = slug_or_fallback(type_label);
            let next = w.counters.get(&slug).copied().unwrap_or(0) + 1;
            let mapping = PlaceholderMapping {
                user_id: user_id.to_string(),
                placeholder: Placeholder::new(&slug, next)?,
                original_value: value.to_string(),
                type_slug: slug,
                privacy_level: level,
                created_at: now_millis(),
            };
            if within_placeholder_alphabet(value) {
                tracing::warn!(placeholder = %mapping.placeholder, "value uses only placeholder characters; leakage checks cannot cover it");
            }
            self.persist(&[&mapping])?;
            w.insert(mapping.clone());
            return Ok(mapping);
        }
    }

    /// Validates the grammar, then looks the placeholder up. Absence is not an error.
    pub fn lookup_by_placeholder(&self, user_id: &str, placeholder: &str) -> Result<Option<String>, StoreError> {
        let p: Placeholder = placeholder.parse()?;
        Ok(self.lookup(user_id, &p))
    }

    pub fn lookup(&self, user_id: &str, placeholder: &Placeholder) -> Option<String> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let ns = self.namespace(user_id)?;
        let r = ns.read();
        r.by_placeholder
            .get(placeholder)
            .map(|&i| r.entries[i].original_value.clone())
    }

    pub fn lookup_by_value(&self, user_id: &str, value: &str) -> Option<Placeholder> {
        let ns = self.namespace(user_id)?;
        let r = ns.read();
        r.by_value.get(value).map(|&i| r.entries[i].placeholder.clone())
    }

    /// Number of placeholder lookups served so far.
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn user_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .users
            .read()
            .iter()
            .filter(|(_, ns)| !ns.read().entries.is_empty())
            .map(|(k, _)| k.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn mapping_count(&self, user_id: &str) -> usize {
        self.namespace(user_id).map_or(0, |ns| ns.read().entries.len())
    }

    /// All records except those of `skip`, users in id order, records in allocation order.
    fn encode_all(
        &self,
        users: &HashMap<String, Arc<RwLock<Namespace>>>,
        skip: Option<&str>,
    ) -> Result<Vec<u8>, StoreError> {
        let ordered: BTreeMap<&String, &Arc<RwLock<Namespace>>> =
            users.iter().filter(|(k, _)| Some(k.as_str()) != skip).collect();
        let mut out = Vec::new();
        for ns in ordered.values() {
            let r = ns.read();
            let refs: Vec<&PlaceholderMapping> = r.entries.iter().collect();
            out.extend(self.encode(&refs)?);
        }
        Ok(out)
    }

    /// Removes every mapping and counter of `user_id` durably. Returns how many mappings went.
    pub fn delete_user(&self, user_id: &str) -> Result<usize, StoreError> {
        let mut users = self.users.write();
        let Some(ns) = users.get(user_id).cloned() else {
            return Ok(0);
        };
        let mut w = ns.write();
        let n = w.entries.len();
        if let Some(log) = &self.log {
            let content = self.encode_all(&users, Some(user_id))?;
            log.lock().rewrite(&content)?;
        }
        *w = Namespace {
            deleted: true,
            ..Namespace::default()
        };
        users.remove(user_id);
        Ok(n)
    }

    /// Rewrites the log from the in-memory state.
    pub fn compact(&self) -> Result<(), StoreError> {
        let users = self.users.write();
        if let Some(log) = &self.log {
            let content = self.encode_all(&users, None)?;
            log.lock().rewrite(&content)?;
        }
        Ok(())
    }

    /// Point-in-time copy of a user's mappings in allocation order.
    pub fn export_user(&self, user_id: &str) -> Vec<PlaceholderMapping> {
        self.namespace(user_id)
            .map_or_else(Vec::new, |ns| ns.read().entries.clone())
    }

    /// Loads a snapshot into an empty namespace. Returns the number of mappings imported.
    pub fn import_user(&self, snapshot: &[PlaceholderMapping]) -> Result<usize, StoreError> {
        let Some(first) = snapshot.first() else {
            return Ok(0);
        };
        let user_id = first.user_id.as_str();
        if user_id.is_empty() {
            return Err(StoreError::EmptyUser);
        }
        let mut staged = Namespace::default();
        for (i, m) in snapshot.iter().enumerate() {
            if m.user_id != user_id {
                return Err(StoreError::InvalidSnapshot(format!(
                    "record {i} belongs to {:?}, not {user_id:?}",
                    m.user_id
                )));
            }
            staged
                .check_insert(m)
                .map_err(|e| StoreError::InvalidSnapshot(format!("record {i}: {e}")))?;
            staged.insert(m.clone());
        }
        staged.check_contiguous().map_err(StoreError::InvalidSnapshot)?;
        loop {
            let ns = self.namespace_or_create(user_id);
            let mut w = ns.write();
            if w.deleted {
                continue;
            }
            if !w.entries.is_empty() {
                return Err(StoreError::Conflict(user_id.to_string()));
            }
            let refs: Vec<&PlaceholderMapping> = snapshot.iter().collect();
            self.persist(&refs)?;
            for m in snapshot {
                w.insert(m.clone());
            }
            return Ok(snapshot.len());
        }
    }

    /// Checks the bijection and counter invariants for every user.
    pub fn verify(&self) -> Result<(), String> {
        let users = self.users.read();
        for (user, ns) in users.iter() {
            let r = ns.read();
            let mut ps = HashSet::new();
            let mut vs = HashSet::new();
            for (i, m) in r.entries.iter().enumerate() {
                if &m.user_id != user || m.placeholder.slug() != m.type_slug {
                    return Err(format!("{user}: malformed record {i}"));
                }
                if !ps.insert(&m.placeholder) || !vs.insert(&m.original_value) {
                    return Err(format!("{user}: bijection broken at record {i}"));
                }
                if r.by_placeholder.get(&m.placeholder) != Some(&i) || r.by_value.get(&m.original_value) != Some(&i) {
                    return Err(format!("{user}: index out of step at record {i}"));
                }
            }
            if r.by_placeholder.len() != r.entries.len() || r.by_value.len() != r.entries.len() {
                return Err(format!("{user}: stale index entries"));
            }
            r.check_contiguous().map_err(|e| format!("{user}: {e}"))?;
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn inject_fault(&self, fault: Fault) {
        if let Some(log) = &self.log {
            log.lock().inject(fault);
        }
    }
}

/// Writes a snapshot as JSON lines.
pub fn write_snapshot<W: std::io::Write>(mut w: W, snapshot: &[PlaceholderMapping]) -> std::io::Result<()> {
    for m in snapshot {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines snapshot.
pub fn read_snapshot(text: &str) -> Result<Vec<PlaceholderMapping>, StoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| StoreError::InvalidSnapshot(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PrivacyLevel::*;

    fn p(s: &str) -> Placeholder {
        s.parse().unwrap()
    }

    #[test]
    fn allocation_and_reuse() {
        let s = MappingStore::in_memory();
        assert_eq!(
            s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap(),
            p("<EMAIL_1>")
        );
        assert_eq!(s.get_or_create("u", "bob@y.com", "Email", PL2).unwrap(), p("<EMAIL_2>"));
        assert_eq!(
            s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap(),
            p("<EMAIL_1>")
        );
        assert_eq!(
            s.get_or_create("u", "alice@x.com", "Phone Number", PL3).unwrap(),
            p("<EMAIL_1>")
        );
        assert_eq!(
            s.get_or_create("u", "13800138000", "Phone Number", PL2).unwrap(),
            p("<PHONE_NUMBER_1>")
        );
        assert_eq!(s.get_or_create("v", "bob@y.com", "Email", PL2).unwrap(), p("<EMAIL_1>"));
        assert_eq!(s.get_or_create("u", "密码值", "密码", PL4).unwrap(), p("<PRIVATE_1>"));
        assert!(matches!(
            s.get_or_create("", "x", "Email", PL2),
            Err(StoreError::EmptyUser)
        ));
        assert!(matches!(
            s.get_or_create("u", "", "Email", PL2),
            Err(StoreError::EmptyValue)
        ));
        s.verify().unwrap();
    }

    #[test]
    fn lookups() {
        let s = MappingStore::in_memory();
        s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap();
        assert_eq!(
            s.lookup_by_placeholder("u", "<EMAIL_1>").unwrap().as_deref(),
            Some("alice@x.com")
        );
        assert_eq!(s.lookup_by_placeholder("u", "<EMAIL_99>").unwrap(), None);
        assert!(matches!(
            s.lookup_by_placeholder("u", "<email_1>"),
            Err(StoreError::Grammar(_))
        ));
        assert_eq!(s.lookup_by_placeholder("other", "<EMAIL_1>").unwrap(), None);
        assert_eq!(s.lookup_by_value("u", "alice@x.com"), Some(p("<EMAIL_1>")));
        assert_eq!(s.lookup_by_value("u", "nobody"), None);
        assert_eq!(s.lookup_count(), 3);
    }

    #[test]
    fn delete_resets_counters() {
        let dir = tempfile::tempdir().unwrap();
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        for v in ["a@x.io", "b@x.io", "c@x.io"] {
            s.get_or_create("u", v, "Email", PL2).unwrap();
        }
        s.get_or_create("w", "keep@x.io", "Email", PL2).unwrap();
        assert_eq!(s.delete_user("u").unwrap(), 3);
        assert_eq!(s.delete_user("nobody").unwrap(), 0);
        assert_eq!(s.lookup_by_value("u", "a@x.io"), None);
        assert_eq!(s.get_or_create("u", "c@x.io", "Email", PL2).unwrap(), p("<EMAIL_1>"));
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(!log.contains("a@x.io") && !log.contains("b@x.io"));
        assert!(log.contains("keep@x.io"));
        drop(s);
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.lookup_by_value("u", "c@x.io"), Some(p("<EMAIL_1>")));
        assert_eq!(s.lookup_by_value("w", "keep@x.io"), Some(p("<EMAIL_1>")));
        s.verify().unwrap();
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = MappingStore::open_with(dir.path(), None).unwrap();
            s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap();
            s.get_or_create("u", "13800138000", "Phone Number", PL2).unwrap();
        }
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(
            s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap(),
            p("<EMAIL_1>")
        );
        assert_eq!(s.get_or_create("u", "bob@y.com", "Email", PL2).unwrap(), p("<EMAIL_2>"));
    }

    #[test]
    fn record_format() {
        let dir = tempfile::tempdir().unwrap();
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        s.get_or_create("u1", "alice@x.com", "Email", PL2).unwrap();
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        let line = log.lines().next().unwrap();
        assert!(line.starts_with(
            r#"{"user_id":"u1","placeholder":"<EMAIL_1>","original_value":"alice@x.com","type_slug":"EMAIL","privacy_level":"PL2","created_at":""#
        ));
        assert!(line.ends_with("Z\"}"));
    }

    #[test]
    fn export_import() {
        let a = MappingStore::in_memory();
        a.get_or_create("u", "alice@x.com", "Email", PL2).unwrap();
        a.get_or_create("u", "13800138000", "Phone Number", PL2).unwrap();
        let snap = a.export_user("u");
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        let snap2 = read_snapshot(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(snap, snap2);

        let b = MappingStore::in_memory();
        assert_eq!(b.import_user(&snap2).unwrap(), 2);
        for ph in ["<EMAIL_1>", "<PHONE_NUMBER_1>", "<EMAIL_2>"] {
            assert_eq!(
                a.lookup_by_placeholder("u", ph).unwrap(),
                b.lookup_by_placeholder("u", ph).unwrap()
            );
        }
        assert_eq!(b.get_or_create("u", "new@x.io", "Email", PL2).unwrap(), p("<EMAIL_2>"));
        assert!(matches!(b.import_user(&snap2), Err(StoreError::Conflict(_))));
        assert!(a.export_user("ghost").is_empty());

        let mut dup = snap.clone();
        dup[1].placeholder = dup[0].placeholder.clone();
        dup[1].type_slug = "EMAIL".into();
        assert!(matches!(
            MappingStore::in_memory().import_user(&dup),
            Err(StoreError::InvalidSnapshot(_))
        ));
        let mut gap = snap.clone();
        gap[0].placeholder = p("<EMAIL_2>");
        assert!(matches!(
            MappingStore::in_memory().import_user(&gap),
            Err(StoreError::InvalidSnapshot(_))
        ));
    }

    #[test]
    fn torn_tail_and_stray_tmp_recover() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = MappingStore::open_with(dir.path(), None).unwrap();
            s.get_or_create("u", "a@x.io", "Email", PL2).unwrap();
            s.get_or_create("u", "b@x.io", "Email", PL2).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 10]).unwrap();
        std::fs::write(dir.path().join(TMP_FILE), b"{\"garbage").unwrap();
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.mapping_count("u"), 1);
        assert!(!dir.path().join(TMP_FILE).exists());
        assert_eq!(s.get_or_create("u", "b@x.io", "Email", PL2).unwrap(), p("<EMAIL_2>"));
        s.verify().unwrap();
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = MappingStore::open_with(dir.path(), None).unwrap();
            s.get_or_create("u", "a@x.io", "Email", PL2).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let good = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("not json\n{good}")).unwrap();
        assert!(matches!(
            MappingStore::open_with(dir.path(), None),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn failed_append_leaves_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        s.get_or_create("u", "a@x.io", "Email", PL2).unwrap();
        s.inject_fault(Fault::FailAppend { keep: 20 });
        assert!(s.get_or_create("u", "b@x.io", "Email", PL2).is_err());
        assert_eq!(s.lookup_by_value("u", "b@x.io"), None);
        assert_eq!(s.get_or_create("u", "c@x.io", "Email", PL2).unwrap(), p("<EMAIL_2>"));
        drop(s);
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.mapping_count("u"), 2);
        s.verify().unwrap();
    }

    #[test]
    fn crashes_recover_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        s.get_or_create("u", "a@x.io", "Email", PL2).unwrap();
        s.get_or_create("v", "z@x.io", "Email", PL2).unwrap();
        s.inject_fault(Fault::CrashAppend { keep: 30 });
        assert!(s.get_or_create("u", "b@x.io", "Email", PL2).is_err());
        assert!(matches!(
            s.get_or_create("u", "c@x.io", "Email", PL2),
            Err(StoreError::Poisoned)
        ));
        drop(s);
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.mapping_count("u"), 1);
        s.inject_fault(Fault::CrashCompaction { keep: 15 });
        assert!(s.delete_user("u").is_err());
        drop(s);
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.mapping_count("u"), 1);
        s.inject_fault(Fault::CrashAfterRename);
        assert!(s.delete_user("u").is_err());
        drop(s);
        let s = MappingStore::open_with(dir.path(), None).unwrap();
        assert_eq!(s.mapping_count("u"), 0);
        assert_eq!(s.mapping_count("v"), 1);
        s.verify().unwrap();
    }

    #[test]
    fn sealed_store() {
        let dir = tempfile::tempdir().unwrap();
        let key = [3u8; 32];
        {
            let s = MappingStore::open_with(dir.path(), Some(Box::new(ChaChaSealer::new(key)))).unwrap();
            s.get_or_create("u", "alice@x.com", "Email", PL2).unwrap();
        }
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(!log.contains("alice") && log.contains(SEALED_PREFIX));
        let s = MappingStore::open_with(dir.path(), Some(Box::new(ChaChaSealer::new(key)))).unwrap();
        assert_eq!(s.lookup_by_value("u", "alice@x.com"), Some(p("<EMAIL_1>")));
        assert!(MappingStore::open_with(dir.path(), Some(Box::new(ChaChaSealer::new([4u8; 32])))).is_err());
    }

    #[test]
    fn concurrent_same_value_allocates_once() {
        let s = Arc::new(MappingStore::in_memory());
        let results: Vec<Placeholder> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..16)
                .map(|_| {
                    let s = s.clone();
                    scope.spawn(move || s.get_or_create("u", "same@x.io", "Email", PL2).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.iter().all(|r| *r == p("<EMAIL_1>")));
        assert_eq!(s.mapping_count("u"), 1);
    }

    proptest! {
        #[test]
        fn forward_and_reverse_are_inverse(ops in prop::collection::vec((0usize..3, 0usize..12, 0usize..4), 1..60)) {
            let s = MappingStore::in_memory();
            let types = ["Email", "Phone Number", "Key", "Medical Health"];
            for (u, v, t) in ops {
                let user = format!("u{u}");
                let value = format!("value-{v}");
                let ph = s.get_or_create(&user, &value, types[t], PL3).unwrap();
                prop_assert_eq!(s.lookup(&user, &ph), Some(value.clone()));
                prop_assert_eq!(s.lookup_by_value(&user, &value), Some(ph));
            }
            prop_assert!(s.verify().is_ok());
        }
    }
}
