//! The view engine: generation, caching, triggers, fallbacks, sync-group
//! exposure and hot reload.
//!
//! Readers go through a published map of `Arc<ViewContent>` that is swapped
//! under a short write lock, so a read never waits on a running adapter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use indexmap::IndexMap;
use parking_lot::{Mutex, MutexGuard, RwLock};
use serde::Serialize;
use thiserror::Error;

use crate::adapters::{
    Adapter, AdapterContext, AdapterError, AdapterSpec, ErrorClass, ProviderRegistry, ViewSource,
};
use crate::clock::{format_timestamp, SharedClock, Timestamp};
use crate::config::{
    format_seconds, select_fallback, CacheType, ConfigError, ConfigSet, FallbackAction,
    TriggerKind, TriggerRule, Validation, ViewConfig, INTROSPECTION_VIEW,
};
use crate::document::{is_valid_name, Element, ViewDocument};
use crate::query::PathQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViewStatus {
    Empty,
    Fresh,
    Stale,
    Suspended,
    Failed,
}

impl ViewStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewStatus::Empty => "EMPTY",
            ViewStatus::Fresh => "FRESH",
            ViewStatus::Stale => "STALE",
            ViewStatus::Suspended => "SUSPENDED",
            ViewStatus::Failed => "FAILED",
        }
    }
}

impl fmt::Display for ViewStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Format {
    #[default]
    Xml,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Ok(Format::Xml),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefreshCause {
    Manual,
    Trigger(TriggerKind),
    Retry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RefreshOutcome {
    Exposed { version: u64 },
    /// Generated and validated, waiting for the rest of its sync group.
    Deferred,
    Ignored { error: AdapterError },
    Failed { error: AdapterError },
    Retrying { attempt: u32, error: AdapterError },
    /// The view has no cache; it is generated on every read instead.
    Uncached,
}

impl RefreshOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RefreshOutcome::Exposed { .. } | RefreshOutcome::Deferred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtlStatus {
    Servable,
    Outdated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    Tick,
    Notification(String),
    Read(String),
    Write(String),
    CacheExpired(String),
    CacheUpdated(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("VIEW_NOT_FOUND: no view named `{0}`")]
    ViewNotFound(String),
    #[error("VIEW_SUSPENDED: `{0}` is being reconfigured")]
    ViewSuspended(String),
    #[error("CONTENT_OUTDATED: `{view}` was generated {age_seconds}s ago, ttl is {ttl_seconds}s")]
    ContentOutdated {
        view: String,
        age_seconds: f64,
        ttl_seconds: f64,
    },
    #[error("VIEW_EMPTY: `{0}` has not been generated yet")]
    ViewEmpty(String),
    #[error("QUERY_PARSE_ERROR: {0}")]
    Query(#[from] crate::query::QueryParseError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::ViewNotFound(_) => "VIEW_NOT_FOUND",
            EngineError::ViewSuspended(_) => "VIEW_SUSPENDED",
            EngineError::ContentOutdated { .. } => "CONTENT_OUTDATED",
            EngineError::ViewEmpty(_) => "VIEW_EMPTY",
            EngineError::Query(_) => "QUERY_PARSE_ERROR",
            EngineError::Adapter(e) => e.class.code(),
            EngineError::Config(e) => e.code(),
        }
    }
}

/// One exposed version of a view.
#[derive(Debug, Clone)]
pub struct ViewContent {
    pub version: u64,
    pub generated_at: Timestamp,
    pub document: Arc<ViewDocument>,
}

impl ViewContent {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Xml => self.document.to_xml(),
            Format::Json => self.document.to_json(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewStateSnapshot {
    pub view: String,
    pub status: ViewStatus,
    pub content_version: u64,
    pub generated_at: Option<Timestamp>,
    pub consecutive_failures: u32,
    pub last_error: Option<AdapterError>,
    pub cache_type: &'static str,
    pub sync_group: Option<String>,
    pub adapter_invocations: u64,
    pub retry_attempt: Option<u32>,
    pub pending: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReloadReport {
    pub suspended: BTreeSet<String>,
    pub unchanged: BTreeSet<String>,
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Staged {
    document: Arc<ViewDocument>,
    generated_at: Timestamp,
}

#[derive(Debug, Clone, Copy)]
struct RetryState {
    attempt: u32,
    due: Timestamp,
}

#[derive(Debug)]
struct SlotState {
    status: ViewStatus,
    version: u64,
    generated_at: Option<Timestamp>,
    failures: u32,
    last_error: Option<AdapterError>,
    pending: Option<Staged>,
    retry: Option<RetryState>,
    /// Last firing time of each trigger rule, by index.
    last_fired: Vec<Timestamp>,
    disk_file: Option<PathBuf>,
}

struct Slot {
    config: ViewConfig,
    adapter: Arc<dyn Adapter>,
    digest: String,
    state: Mutex<SlotState>,
    refresh: Mutex<()>,
    invocations: AtomicU64,
    suspended: AtomicBool,
    retired: AtomicBool,
}

impl Slot {
    fn new(config: ViewConfig, providers: &ProviderRegistry, now: Timestamp) -> Self {
        let adapter = config.adapter.instantiate(providers);
        let digest = config.digest();
        let state = SlotState {
            status: ViewStatus::Empty,
            version: 0,
            generated_at: None,
            failures: 0,
            last_error: None,
            pending: None,
            retry: None,
            last_fired: vec![now; config.triggers.len()],
            disk_file: None,
        };
        Self {
            config,
            adapter,
            digest,
            state: Mutex::new(state),
            refresh: Mutex::new(()),
            invocations: AtomicU64::new(0),
            suspended: AtomicBool::new(false),
            retired: AtomicBool::new(false),
        }
    }

    fn has_trigger(&self, kind: TriggerKind) -> bool {
        self.config.triggers.iter().any(|t| t.kind() == kind)
    }

    fn is_unavailable(&self) -> bool {
        self.suspended.load(Ordering::SeqCst) || self.retired.load(Ordering::SeqCst)
    }

    fn status(&self, st: &SlotState) -> ViewStatus {
        if self.suspended.load(Ordering::SeqCst) {
            ViewStatus::Suspended
        } else {
            st.status
        }
    }

    fn snapshot(&self) -> ViewStateSnapshot {
        let st = self.state.lock();
        ViewStateSnapshot {
            view: self.config.name.clone(),
            status: self.status(&st),
            content_version: st.version,
            generated_at: st.generated_at,
            consecutive_failures: st.failures,
            last_error: st.last_error.clone(),
            cache_type: self.config.cache.as_str(),
            sync_group: self.config.sync_group.clone(),
            adapter_invocations: self.invocations.load(Ordering::SeqCst),
            retry_attempt: st.retry.map(|r| r.attempt),
            pending: st.pending.is_some(),
        }
    }

    fn describe(&self) -> Element {
        let snap = self.snapshot();
        let mut el = Element::new("view")
            .with_attr("name", &snap.view)
            .with_attr("adapter", self.config.adapter.kind())
            .with_attr("cache", snap.cache_type)
            .with_attr("digest", &self.digest)
            .with_attr("status", snap.status.as_str())
            .with_attr("version", snap.content_version.to_string())
            .with_attr("failures", snap.consecutive_failures.to_string())
            .with_attr("invocations", snap.adapter_invocations.to_string())
            .with_attr("ttl", format_seconds(self.config.ttl));
        if let Some(at) = snap.generated_at {
            el.set_attr("generated-at", format_timestamp(at));
        }
        if let Some(g) = &snap.sync_group {
            el.set_attr("sync-group", g);
        }
        for dep in self.config.effective_dependencies() {
            el.push(Element::new("dependency").with_attr("view", dep));
        }
        if let Some(err) = &snap.last_error {
            el.push(
                Element::new("last-error")
                    .with_attr("class", err.class.code())
                    .with_text(&err.message),
            );
        }
        el
    }
}

struct Loaded {
    config: ConfigSet,
    slots: BTreeMap<String, Arc<Slot>>,
    /// Every view, dependencies first, ties by name.
    order: Vec<String>,
    groups: BTreeMap<String, Vec<String>>,
}

impl Loaded {
    fn build(config: ConfigSet, slots: BTreeMap<String, Arc<Slot>>) -> Self {
        let order = canonical_order(&config.views);
        let groups = config
            .sync_groups
            .iter()
            .map(|g| (g.name.clone(), g.members.iter().cloned().collect()))
            .collect();
        Self {
            config,
            slots,
            order,
            groups,
        }
    }

    fn slot(&self, name: &str) -> Result<&Arc<Slot>, EngineError> {
        self.slots
            .get(name)
            .ok_or_else(|| EngineError::ViewNotFound(name.to_string()))
    }

    fn same_group(&self, a: &str, b: &str) -> bool {
        match (self.slots.get(a), self.slots.get(b)) {
            (Some(a), Some(b)) => {
                a.config.sync_group.is_some() && a.config.sync_group == b.config.sync_group
            }
            _ => false,
        }
    }

    /// Views `name` depends on, directly or not.
    fn ancestors(&self, name: &str) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![name];
        while let Some(v) = stack.pop() {
            if let Some(slot) = self.slots.get(v) {
                for dep in slot.config.effective_dependencies() {
                    if seen.insert(dep) {
                        stack.push(dep);
                    }
                }
            }
        }
        seen
    }
}

fn canonical_order(views: &[ViewConfig]) -> Vec<String> {
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for v in views {
        let deps = v.effective_dependencies();
        remaining.insert(&v.name, deps.len());
        for d in deps {
            dependents.entry(d).or_default().push(&v.name);
        }
    }
    let mut ready: BTreeSet<&str> = remaining
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(v, _)| *v)
        .collect();
    let mut order = Vec::with_capacity(views.len());
    while let Some(v) = ready.pop_first() {
        order.push(v.to_string());
        for d in dependents.get(v).into_iter().flatten() {
            let n = remaining.get_mut(d).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.insert(d);
            }
        }
    }
    order
}

fn time_due(rule: &TriggerRule, last: Timestamp, now: Timestamp) -> bool {
    match rule {
        TriggerRule::Periodic { period } => {
            (now - last).to_std().is_ok_and(|elapsed| elapsed >= *period)
        }
        TriggerRule::CronLike { every, offset } => {
            let every = every.as_millis() as i64;
            let offset = offset.as_millis() as i64;
            let slot = |t: Timestamp| (t.timestamp_millis() - offset).div_euclid(every);
            slot(now) > slot(last)
        }
        _ => false,
    }
}

fn older_than(generated_at: Timestamp, now: Timestamp, limit: Duration) -> bool {
    match chrono::Duration::from_std(limit) {
        Ok(limit) => now - generated_at > limit,
        Err(_) => false,
    }
}

fn well_formed(el: &Element, path: &mut String) -> Result<(), String> {
    if !is_valid_name(&el.label) {
        return Err(format!("{path}: invalid element name `{}`", el.label));
    }
    for name in el.attributes.keys() {
        if !is_valid_name(name) {
            return Err(format!("{path}/{}: invalid attribute name `{name}`", el.label));
        }
    }
    let text = el.text();
    if let Some(c) = text
        .chars()
        .find(|c| c.is_control() && !matches!(c, '\t' | '\n' | '\r'))
    {
        return Err(format!("{path}/{}: character U+{:04X} not allowed", el.label, c as u32));
    }
    let len = path.len();
    path.push('/');
    path.push_str(&el.label);
    for child in el.elements() {
        well_formed(child, path)?;
    }
    path.truncate(len);
    Ok(())
}

fn validate(validation: &Validation, doc: &ViewDocument) -> Result<(), AdapterError> {
    let result = match validation {
        Validation::None => Ok(()),
        Validation::WellFormed => well_formed(&doc.root, &mut String::new()),
        Validation::Schema { schema, .. } => schema.validate(doc),
    };
    result.map_err(|m| AdapterError::new(ErrorClass::ValidationFailed, m))
}

/// Runs `adapter` on its own thread. The call times out when either wall time
/// or the engine clock advances past `timeout`.
fn run_adapter(
    adapter: Arc<dyn Adapter>,
    ctx: AdapterContext,
    timeout: Duration,
) -> Result<ViewDocument, AdapterError> {
    let clock = ctx.clock.clone();
    let view = ctx.view.clone();
    let started = clock.now();
    let (tx, rx) = mpsc::sync_channel(1);
    thread::Builder::new()
        .name(format!("refresh-{view}"))
        .spawn(move || {
            let _ = tx.send(adapter.generate(&ctx));
        })
        .map_err(|e| AdapterError::unreachable(format!("cannot start adapter: {e}")))?;
    let timed_out = || {
        AdapterError::new(
            ErrorClass::Timeout,
            format!(
                "`{view}` exceeded its update timeout of {}s",
                format_seconds(timeout)
            ),
        )
    };
    match rx.recv_timeout(timeout) {
        Ok(result) => {
            if older_than(started, clock.now(), timeout) {
                return Err(timed_out());
            }
            result
        }
        Err(mpsc::RecvTimeoutError::Timeout) => Err(timed_out()),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(AdapterError::unreachable(format!(
            "adapter for `{view}` panicked"
        ))),
    }
}

fn disk_name(view: &str, version: u64) -> String {
    format!("{view}.v{version}.xml")
}

fn write_disk(dir: &Path, view: &str, version: u64, doc: &ViewDocument) -> Result<PathBuf, AdapterError> {
    let fail = |e: std::io::Error| {
        AdapterError::new(
            ErrorClass::CacheWrite,
            format!("writing cache for `{view}` in {}: {e}", dir.display()),
        )
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let path = dir.join(disk_name(view, version));
    let tmp = dir.join(format!(".{}.tmp", disk_name(view, version)));
    std::fs::write(&tmp, doc.to_xml()).map_err(fail)?;
    std::fs::rename(&tmp, &path).map_err(fail)?;
    Ok(path)
}

type Published = HashMap<String, Arc<ViewContent>>;

/// Which views became visible (or staged) during a refresh.
#[derive(Default)]
struct Step {
    staged: Vec<String>,
    exposed: Vec<String>,
}

struct Inner {
    clock: SharedClock,
    providers: ProviderRegistry,
    loaded: RwLock<Arc<Loaded>>,
    published: RwLock<Arc<Published>>,
    queue: Mutex<IndexMap<String, RefreshCause>>,
    reload_lock: Mutex<()>,
    introspections: AtomicU64,
}

/// Source access handed to adapters. Staged content is only visible to
/// views of the same sync group.
struct SourceView {
    inner: Arc<Inner>,
    loaded: Arc<Loaded>,
    group: Option<String>,
}

impl ViewSource for SourceView {
    fn read_source(&self, name: &str) -> Option<Arc<ViewDocument>> {
        let slot = self.loaded.slots.get(name)?;
        if slot.config.cache == CacheType::None {
            return self
                .inner
                .generate_uncached(&self.loaded, slot)
                .ok()
                .map(|c| c.document.clone());
        }
        if self.group.is_some() && slot.config.sync_group == self.group {
            if let Some(staged) = &slot.state.lock().pending {
                return Some(staged.document.clone());
            }
        }
        self.inner
            .published
            .read()
            .get(name)
            .map(|c| c.document.clone())
    }

    fn introspect(&self) -> ViewDocument {
        self.inner.introspect_doc(&self.loaded)
    }
}

impl Inner {
    fn current(&self) -> Arc<Loaded> {
        self.loaded.read().clone()
    }

    fn enqueue(&self, name: &str, cause: RefreshCause) {
        let mut queue = self.queue.lock();
        // a retry replaces whatever cause is already queued
        if cause == RefreshCause::Retry || !queue.contains_key(name) {
            queue.insert(name.to_string(), cause);
        }
    }

    fn context(self: &Arc<Self>, loaded: &Arc<Loaded>, slot: &Slot) -> AdapterContext {
        AdapterContext {
            view: slot.config.name.clone(),
            clock: self.clock.clone(),
            views: Arc::new(SourceView {
                inner: self.clone(),
                loaded: loaded.clone(),
                group: slot.config.sync_group.clone(),
            }),
        }
    }

    fn generate(self: &Arc<Self>, loaded: &Arc<Loaded>, slot: &Slot) -> Result<ViewDocument, AdapterError> {
        slot.invocations.fetch_add(1, Ordering::SeqCst);
        let ctx = self.context(loaded, slot);
        let doc = run_adapter(slot.adapter.clone(), ctx, slot.config.update_timeout)?;
        validate(&slot.config.validation, &doc)?;
        Ok(doc)
    }

    fn generate_uncached(
        self: &Arc<Self>,
        loaded: &Arc<Loaded>,
        slot: &Slot,
    ) -> Result<Arc<ViewContent>, AdapterError> {
        let result = self.generate(loaded, slot);
        let now = self.clock.now();
        let mut st = slot.state.lock();
        match result {
            Ok(doc) => {
                st.version += 1;
                st.generated_at = Some(now);
                st.status = ViewStatus::Fresh;
                st.failures = 0;
                st.last_error = None;
                Ok(Arc::new(ViewContent {
                    version: st.version,
                    generated_at: now,
                    document: Arc::new(doc),
                }))
            }
            Err(e) => {
                st.failures += 1;
                st.status = ViewStatus::Failed;
                st.last_error = Some(e.clone());
                Err(e)
            }
        }
    }

    fn check_age(&self, cfg: &ViewConfig, content: &ViewContent, now: Timestamp) -> Result<(), EngineError> {
        if cfg.has_ttl() && older_than(content.generated_at, now, cfg.ttl) {
            return Err(EngineError::ContentOutdated {
                view: cfg.name.clone(),
                age_seconds: (now - content.generated_at).num_milliseconds() as f64 / 1000.0,
                ttl_seconds: cfg.ttl.as_secs_f64(),
            });
        }
        Ok(())
    }

    fn serve_introspection(&self) -> Arc<ViewContent> {
        let version = self.introspections.fetch_add(1, Ordering::SeqCst) + 1;
        let loaded = self.current();
        Arc::new(ViewContent {
            version,
            generated_at: self.clock.now(),
            document: Arc::new(self.introspect_doc(&loaded)),
        })
    }

    fn introspect_doc(&self, loaded: &Loaded) -> ViewDocument {
        let now = self.clock.now();
        let mut root = Element::new("introspection")
            .with_attr("generated-at", format_timestamp(now))
            .with_attr("views", (loaded.slots.len() + 1).to_string());
        for slot in loaded.slots.values() {
            root.push(slot.describe());
        }
        let served = self.introspections.load(Ordering::SeqCst);
        let own = ViewConfig::new(INTROSPECTION_VIEW, AdapterSpec::Introspection, CacheType::None);
        let mut own_el = Element::new("view")
            .with_attr("name", INTROSPECTION_VIEW)
            .with_attr("adapter", own.adapter.kind())
            .with_attr("cache", CacheType::None.as_str())
            .with_attr("digest", own.digest())
            .with_attr(
                "status",
                if served == 0 { ViewStatus::Empty } else { ViewStatus::Fresh }.as_str(),
            )
            .with_attr("version", served.to_string())
            .with_attr("failures", "0")
            .with_attr("invocations", served.to_string())
            .with_attr("ttl", "0");
        if served > 0 {
            own_el.set_attr("generated-at", format_timestamp(now));
        }
        root.push(own_el);
        ViewDocument::new(root)
    }

    /// Publishes new content for already-locked slots in one swap. Disk
    /// files are written first so a write failure exposes nothing.
    fn publish(
        &self,
        loaded: &Loaded,
        items: &mut [(&Arc<Slot>, MutexGuard<'_, SlotState>, Arc<ViewDocument>, Timestamp)],
    ) -> Result<(), AdapterError> {
        let mut written: Vec<Option<PathBuf>> = Vec::with_capacity(items.len());
        for (slot, st, doc, _) in items.iter() {
            if slot.config.cache != CacheType::Disk {
                written.push(None);
                continue;
            }
            let dir = loaded.config.cache_dir.as_deref().unwrap_or(Path::new("."));
            match write_disk(dir, &slot.config.name, st.version + 1, doc) {
                Ok(path) => written.push(Some(path)),
                Err(e) => {
                    for path in written.into_iter().flatten() {
                        let _ = std::fs::remove_file(path);
                    }
                    return Err(e);
                }
            }
        }
        {
            let mut published = self.published.write();
            let map = Arc::make_mut(&mut published);
            for (slot, st, doc, at) in items.iter() {
                map.insert(
                    slot.config.name.clone(),
                    Arc::new(ViewContent {
                        version: st.version + 1,
                        generated_at: *at,
                        document: doc.clone(),
                    }),
                );
            }
        }
        for ((_, st, _, at), path) in items.iter_mut().zip(written) {
            st.version += 1;
            st.generated_at = Some(*at);
            st.status = ViewStatus::Fresh;
            st.pending = None;
            st.failures = 0;
            st.last_error = None;
            st.retry = None;
            if let Some(path) = path {
                if let Some(old) = st.disk_file.replace(path) {
                    let _ = std::fs::remove_file(old);
                }
            }
        }
        Ok(())
    }

    /// Exposes a sync group if every member has staged content.
    fn expose_group(&self, loaded: &Loaded, group: &str) -> Result<Vec<String>, AdapterError> {
        let members = &loaded.groups[group];
        let slots: Vec<&Arc<Slot>> = members.iter().map(|m| &loaded.slots[m]).collect();
        let guards: Vec<MutexGuard<'_, SlotState>> = slots.iter().map(|s| s.state.lock()).collect();
        if guards.iter().any(|g| g.pending.is_none()) {
            return Ok(Vec::new());
        }
        let mut items: Vec<_> = slots
            .into_iter()
            .zip(guards)
            .map(|(slot, st)| {
                let staged = st.pending.clone().expect("checked above");
                (slot, st, staged.document, staged.generated_at)
            })
            .collect();
        self.publish(loaded, &mut items)?;
        Ok(members.clone())
    }

    fn fail(&self, slot: &Slot, error: AdapterError, now: Timestamp) -> RefreshOutcome {
        tracing::warn!(view = %slot.config.name, %error, "refresh failed");
        let mut st = slot.state.lock();
        st.failures += 1;
        st.last_error = Some(error.clone());
        let quiet = if st.generated_at.is_some() {
            ViewStatus::Stale
        } else {
            ViewStatus::Empty
        };
        let action = select_fallback(&slot.config.fallbacks, error.class)
            .map(|r| r.action)
            .unwrap_or(FallbackAction::Raise);
        match action {
            FallbackAction::Ignore => {
                st.retry = None;
                st.status = quiet;
                RefreshOutcome::Ignored { error }
            }
            FallbackAction::Raise => {
                st.retry = None;
                st.status = ViewStatus::Failed;
                RefreshOutcome::Failed { error }
            }
            FallbackAction::Retry { limit, delay } => {
                let attempt = st.retry.map_or(0, |r| r.attempt);
                if attempt < limit {
                    let due = now + chrono::Duration::from_std(delay).unwrap_or_default();
                    st.retry = Some(RetryState {
                        attempt: attempt + 1,
                        due,
                    });
                    st.status = quiet;
                    RefreshOutcome::Retrying {
                        attempt: attempt + 1,
                        error,
                    }
                } else {
                    st.retry = None;
                    st.status = ViewStatus::Failed;
                    RefreshOutcome::Failed { error }
                }
            }
        }
    }

    fn refresh_one(
        self: &Arc<Self>,
        loaded: &Arc<Loaded>,
        name: &str,
        _cause: RefreshCause,
    ) -> Result<(RefreshOutcome, Step), EngineError> {
        let slot = loaded.slot(name)?;
        if slot.config.cache == CacheType::None {
            return Ok((RefreshOutcome::Uncached, Step::default()));
        }
        if slot.is_unavailable() {
            return Err(EngineError::ViewSuspended(name.to_string()));
        }
        let _running = slot.refresh.lock();
        if slot.is_unavailable() {
            return Err(EngineError::ViewSuspended(name.to_string()));
        }
        let result = self.generate(loaded, slot);
        let now = self.clock.now();
        let doc = match result {
            Ok(doc) => Arc::new(doc),
            Err(e) => return Ok((self.fail(slot, e, now), Step::default())),
        };
        let Some(group) = &slot.config.sync_group else {
            let st = slot.state.lock();
            let mut items = [(slot, st, doc, now)];
            return match self.publish(loaded, &mut items) {
                Ok(()) => {
                    let version = items[0].1.version;
                    drop(items);
                    Ok((
                        RefreshOutcome::Exposed { version },
                        Step {
                            staged: Vec::new(),
                            exposed: vec![name.to_string()],
                        },
                    ))
                }
                Err(e) => {
                    drop(items);
                    Ok((self.fail(slot, e, now), Step::default()))
                }
            };
        };
        {
            let mut st = slot.state.lock();
            st.pending = Some(Staged {
                document: doc,
                generated_at: now,
            });
            st.failures = 0;
            st.last_error = None;
            st.retry = None;
        }
        match self.expose_group(loaded, group) {
            Ok(exposed) if exposed.is_empty() => Ok((
                RefreshOutcome::Deferred,
                Step {
                    staged: vec![name.to_string()],
                    exposed,
                },
            )),
            Ok(exposed) => Ok((
                RefreshOutcome::Exposed {
                    version: slot.state.lock().version,
                },
                Step {
                    staged: Vec::new(),
                    exposed,
                },
            )),
            Err(e) => Ok((self.fail(slot, e, now), Step::default())),
        }
    }

    /// Refreshes `name`, then every view whose DEPENDENCY_UPDATED trigger
    /// names a view that changed during this call, in dependency order. Each
    /// view runs at most once per call.
    fn refresh_cascade(
        self: &Arc<Self>,
        name: &str,
        cause: RefreshCause,
    ) -> Result<RefreshOutcome, EngineError> {
        let loaded = self.current();
        let (mut outcome, step) = self.refresh_one(&loaded, name, cause)?;
        let mut staged: BTreeSet<String> = step.staged.into_iter().collect();
        let mut exposed: BTreeSet<String> = step.exposed.into_iter().collect();
        let mut done: BTreeSet<&str> = BTreeSet::from([name]);
        loop {
            let mut progressed = false;
            for w in &loaded.order {
                if done.contains(w.as_str()) {
                    continue;
                }
                let slot = &loaded.slots[w];
                let fire = slot.config.triggers.iter().any(|t| match t {
                    TriggerRule::DependencyUpdated { view } => {
                        exposed.contains(view)
                            || (staged.contains(view) && loaded.same_group(view, w))
                    }
                    _ => false,
                });
                if !fire {
                    continue;
                }
                done.insert(w);
                progressed = true;
                match self.refresh_one(&loaded, w, RefreshCause::Trigger(TriggerKind::DependencyUpdated)) {
                    Ok((_, s)) => {
                        staged.extend(s.staged);
                        exposed.extend(s.exposed);
                    }
                    Err(e) => tracing::debug!(view = %w, error = %e, "cascade refresh skipped"),
                }
            }
            if !progressed {
                break;
            }
        }
        if outcome == RefreshOutcome::Deferred && exposed.contains(name) {
            outcome = RefreshOutcome::Exposed {
                version: loaded.slots[name].state.lock().version,
            };
        }
        Ok(outcome)
    }

    fn matched(&self, loaded: &Loaded, event: &Event, now: Timestamp) -> BTreeSet<String> {
        let owners = |pred: &dyn Fn(&TriggerRule) -> bool| -> BTreeSet<String> {
            loaded
                .slots
                .iter()
                .filter(|(_, s)| s.config.triggers.iter().any(pred))
                .map(|(n, _)| n.clone())
                .collect()
        };
        let only = |view: &str, kind: TriggerKind| -> BTreeSet<String> {
            match loaded.slots.get(view) {
                Some(s) if s.has_trigger(kind) => BTreeSet::from([view.to_string()]),
                _ => BTreeSet::new(),
            }
        };
        match event {
            Event::Tick => loaded
                .slots
                .iter()
                .filter(|(_, s)| {
                    let st = s.state.lock();
                    s.config
                        .triggers
                        .iter()
                        .zip(&st.last_fired)
                        .any(|(rule, last)| time_due(rule, *last, now))
                })
                .map(|(n, _)| n.clone())
                .collect(),
            Event::Notification(topic) => owners(&|t: &TriggerRule| {
                matches!(t, TriggerRule::Notification { topic: x } if x == topic)
            }),
            Event::Read(v) => only(v, TriggerKind::OnRead),
            Event::Write(v) => only(v, TriggerKind::OnWrite),
            Event::CacheExpired(v) => only(v, TriggerKind::CacheExpired),
            Event::CacheUpdated(v) => {
                let mut updated: BTreeSet<String> = BTreeSet::from([v.clone()]);
                loop {
                    let more: Vec<String> = loaded
                        .slots
                        .iter()
                        .filter(|(n, _)| !updated.contains(*n))
                        .filter(|(_, s)| {
                            s.config.triggers.iter().any(|t| {
                                matches!(t, TriggerRule::DependencyUpdated { view } if updated.contains(view))
                            })
                        })
                        .map(|(n, _)| n.clone())
                        .collect();
                    if more.is_empty() {
                        break;
                    }
                    updated.extend(more);
                }
                updated.remove(v);
                updated
            }
        }
    }

    /// Orders `matched` so dependencies come first, ties broken by name.
    fn order_matched(&self, loaded: &Loaded, matched: BTreeSet<String>) -> Vec<String> {
        let mut blockers: BTreeMap<String, BTreeSet<String>> = matched
            .iter()
            .map(|m| {
                let anc = loaded
                    .ancestors(m)
                    .into_iter()
                    .filter(|a| matched.contains(*a))
                    .map(str::to_string)
                    .collect();
                (m.clone(), anc)
            })
            .collect();
        let mut order = Vec::with_capacity(blockers.len());
        while let Some(next) = blockers
            .iter()
            .find(|(_, b)| b.is_empty())
            .map(|(n, _)| n.clone())
        {
            blockers.remove(&next);
            for b in blockers.values_mut() {
                b.remove(&next);
            }
            order.push(next);
        }
        order
    }

    fn run_pending(self: &Arc<Self>) -> Vec<(String, Result<RefreshOutcome, EngineError>)> {
        let mut results = Vec::new();
        loop {
            let next = self.queue.lock().shift_remove_index(0);
            let Some((name, cause)) = next else { break };
            let outcome = self.refresh_cascade(&name, cause);
            results.push((name, outcome));
        }
        results
    }
}

/// Handle to a running engine. Cheap to clone; all methods are thread-safe.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("views", &self.view_names())
            .finish()
    }
}

impl Engine {
    /// Validates `config` and starts with every view EMPTY and time triggers
    /// armed at the current clock time.
    pub fn load(config: ConfigSet, clock: SharedClock) -> Result<Self, ConfigError> {
        Self::load_with(config, clock, ProviderRegistry::new())
    }

    pub fn load_with(
        mut config: ConfigSet,
        clock: SharedClock,
        providers: ProviderRegistry,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let now = clock.now();
        let slots = config
            .views
            .iter()
            .map(|v| (v.name.clone(), Arc::new(Slot::new(v.clone(), &providers, now))))
            .collect();
        let loaded = Loaded::build(config, slots);
        Ok(Self {
            inner: Arc::new(Inner {
                clock,
                providers,
                loaded: RwLock::new(Arc::new(loaded)),
                published: RwLock::new(Arc::new(HashMap::new())),
                queue: Mutex::new(IndexMap::new()),
                reload_lock: Mutex::new(()),
                introspections: AtomicU64::new(0),
            }),
        })
    }

    pub fn clock(&self) -> &SharedClock {
        &self.inner.clock
    }

    pub fn providers(&self) -> &ProviderRegistry {
        &self.inner.providers
    }

    pub fn config(&self) -> ConfigSet {
        self.inner.current().config.clone()
    }

    /// Configured view names, without `_introspection`.
    pub fn view_names(&self) -> Vec<String> {
        self.inner.current().slots.keys().cloned().collect()
    }

    pub fn view_config(&self, name: &str) -> Result<ViewConfig, EngineError> {
        Ok(self.inner.current().slot(name)?.config.clone())
    }

    /// Current content of `name`. NONE-cache views are generated on the spot.
    pub fn get_view(&self, name: &str) -> Result<Arc<ViewContent>, EngineError> {
        if name == INTROSPECTION_VIEW {
            return Ok(self.inner.serve_introspection());
        }
        let loaded = self.inner.current();
        let slot = loaded.slot(name)?;
        if slot.is_unavailable() {
            return Err(EngineError::ViewSuspended(name.to_string()));
        }
        let content = if slot.config.cache == CacheType::None {
            self.inner.generate_uncached(&loaded, slot)?
        } else {
            let content = self
                .inner
                .published
                .read()
                .get(name)
                .cloned()
                .ok_or_else(|| EngineError::ViewEmpty(name.to_string()))?;
            self.inner
                .check_age(&slot.config, &content, self.inner.clock.now())?;
            content
        };
        if slot.has_trigger(TriggerKind::OnRead) {
            self.inner
                .enqueue(name, RefreshCause::Trigger(TriggerKind::OnRead));
        }
        Ok(content)
    }

    pub fn get_view_as(&self, name: &str, format: Format) -> Result<String, EngineError> {
        Ok(self.get_view(name)?.render(format))
    }

    /// Reads several cached views from one published snapshot, so members of
    /// a sync group are always seen at versions that were exposed together.
    pub fn read_consistent(&self, names: &[&str]) -> Result<Vec<Arc<ViewContent>>, EngineError> {
        let loaded = self.inner.current();
        let published = self.inner.published.read().clone();
        let now = self.inner.clock.now();
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let slot = loaded.slot(name)?;
            if slot.is_unavailable() {
                return Err(EngineError::ViewSuspended(name.to_string()));
            }
            let content = if slot.config.cache == CacheType::None {
                self.inner.generate_uncached(&loaded, slot)?
            } else {
                let c = published
                    .get(*name)
                    .cloned()
                    .ok_or_else(|| EngineError::ViewEmpty(name.to_string()))?;
                self.inner.check_age(&slot.config, &c, now)?;
                c
            };
            out.push(content);
        }
        Ok(out)
    }

    pub fn query_view(&self, name: &str, query: &str) -> Result<ViewDocument, EngineError> {
        let query = PathQuery::parse(query)?;
        let content = self.get_view(name)?;
        Ok(query.evaluate(&content.document))
    }

    pub fn refresh_view(&self, name: &str, cause: RefreshCause) -> Result<RefreshOutcome, EngineError> {
        if name == INTROSPECTION_VIEW {
            return Ok(RefreshOutcome::Uncached);
        }
        self.inner.refresh_cascade(name, cause)
    }

    /// Views whose triggers match `event` at the current clock time.
    pub fn evaluate_triggers(&self, event: &Event) -> Vec<String> {
        self.evaluate_triggers_at(event, self.inner.clock.now())
    }

    pub fn evaluate_triggers_at(&self, event: &Event, now: Timestamp) -> Vec<String> {
        let loaded = self.inner.current();
        let matched = self.inner.matched(&loaded, event, now);
        self.inner.order_matched(&loaded, matched)
    }

    pub fn check_ttl(&self, name: &str, now: Timestamp) -> Result<TtlStatus, EngineError> {
        let loaded = self.inner.current();
        let slot = loaded.slot(name)?;
        let content = self
            .inner
            .published
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::ViewEmpty(name.to_string()))?;
        Ok(match self.inner.check_age(&slot.config, &content, now) {
            Ok(()) => TtlStatus::Servable,
            Err(_) => TtlStatus::Outdated,
        })
    }

    /// The introspection document, without counting as a read of
    /// `_introspection`.
    pub fn introspect(&self) -> ViewDocument {
        self.inner.introspect_doc(&self.inner.current())
    }

    pub fn view_state(&self, name: &str) -> Result<ViewStateSnapshot, EngineError> {
        Ok(self.inner.current().slot(name)?.snapshot())
    }

    pub fn view_states(&self) -> Vec<ViewStateSnapshot> {
        self.inner
            .current()
            .slots
            .values()
            .map(|s| s.snapshot())
            .collect()
    }

    pub fn adapter_invocations(&self, name: &str) -> Result<u64, EngineError> {
        if name == INTROSPECTION_VIEW {
            return Ok(self.inner.introspections.load(Ordering::SeqCst));
        }
        Ok(self
            .inner
            .current()
            .slot(name)?
            .invocations
            .load(Ordering::SeqCst))
    }

    /// Queues views subscribed to `topic`; returns them.
    pub fn notify(&self, topic: &str) -> Vec<String> {
        let views = self.evaluate_triggers(&Event::Notification(topic.to_string()));
        for v in &views {
            self.inner
                .enqueue(v, RefreshCause::Trigger(TriggerKind::NotificationEvent));
        }
        views
    }

    /// Records a client write to `name`, queueing its ON_WRITE refresh.
    pub fn notify_write(&self, name: &str) -> Result<Vec<String>, EngineError> {
        self.inner.current().slot(name)?;
        let views = self.evaluate_triggers(&Event::Write(name.to_string()));
        for v in &views {
            self.inner
                .enqueue(v, RefreshCause::Trigger(TriggerKind::OnWrite));
        }
        Ok(views)
    }

    pub fn pending(&self) -> Vec<String> {
        self.inner.queue.lock().keys().cloned().collect()
    }

    /// Refreshes everything queued, in queue order.
    pub fn run_pending(&self) -> Vec<(String, Result<RefreshOutcome, EngineError>)> {
        self.inner.run_pending()
    }

    /// Fires due time triggers, expired caches and due retries, then drains
    /// the queue.
    pub fn tick(&self) -> Vec<(String, Result<RefreshOutcome, EngineError>)> {
        let inner = &self.inner;
        let now = inner.clock.now();
        let loaded = inner.current();
        let published = inner.published.read().clone();
        for (name, slot) in &loaded.slots {
            if slot.is_unavailable() {
                continue;
            }
            let mut st = slot.state.lock();
            let mut fired = None;
            for (i, rule) in slot.config.triggers.iter().enumerate() {
                if time_due(rule, st.last_fired[i], now) {
                    st.last_fired[i] = now;
                    fired.get_or_insert(rule.kind());
                }
            }
            let retry_due = st.retry.is_some_and(|r| r.due <= now);
            let retrying = st.retry.is_some();
            drop(st);
            if let Some(kind) = fired {
                inner.enqueue(name, RefreshCause::Trigger(kind));
            }
            if retry_due {
                inner.enqueue(name, RefreshCause::Retry);
            } else if !retrying {
                for rule in &slot.config.triggers {
                    if let TriggerRule::CacheExpired { max_age } = rule {
                        let limit = max_age.unwrap_or(slot.config.ttl);
                        let expired = match published.get(name) {
                            None => true,
                            Some(c) => older_than(c.generated_at, now, limit),
                        };
                        if expired {
                            inner.enqueue(name, RefreshCause::Trigger(TriggerKind::CacheExpired));
                        }
                    }
                }
            }
        }
        inner.run_pending()
    }

    /// Loads the newest `<view>.v<N>.xml` of every DISK view whose content is
    /// older than the file. Returns the number of views restored.
    pub fn restore_disk_caches(&self) -> usize {
        let loaded = self.inner.current();
        let Some(dir) = loaded.config.cache_dir.clone() else {
            return 0;
        };
        let Ok(entries) = std::fs::read_dir(&dir) else {
            return 0;
        };
        let mut newest: BTreeMap<String, (u64, PathBuf)> = BTreeMap::new();
        for entry in entries.flatten() {
            let file = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = file.strip_suffix(".xml") else { continue };
            let Some((view, version)) = stem.rsplit_once(".v") else { continue };
            let Ok(version) = version.parse::<u64>() else { continue };
            if newest.get(view).is_none_or(|(v, _)| *v < version) {
                newest.insert(view.to_string(), (version, entry.path()));
            }
        }
        let mut restored = 0;
        for (view, (version, path)) in newest {
            let Some(slot) = loaded.slots.get(&view) else { continue };
            if slot.config.cache != CacheType::Disk {
                continue;
            }
            let doc = match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| ViewDocument::from_xml(&t).map_err(|e| e.to_string()))
            {
                Ok(doc) => Arc::new(doc),
                Err(e) => {
                    tracing::warn!(view = %view, error = %e, "ignoring unreadable cache file");
                    continue;
                }
            };
            let generated_at = std::fs::metadata(&path)
                .and_then(|m| m.modified())
                .map(Timestamp::from)
                .unwrap_or_else(|_| self.inner.clock.now());
            let mut st = slot.state.lock();
            if st.version >= version {
                continue;
            }
            st.version = version;
            st.generated_at = Some(generated_at);
            st.status = ViewStatus::Stale;
            st.disk_file = Some(path);
            Arc::make_mut(&mut self.inner.published.write()).insert(
                view.clone(),
                Arc::new(ViewContent {
                    version,
                    generated_at,
                    document: doc,
                }),
            );
            restored += 1;
        }
        restored
    }

    pub fn reload_configuration(&self, config: ConfigSet) -> Result<ReloadReport, ConfigError> {
        self.reload_configuration_observed(config, |_| {})
    }

    /// Like [`Engine::reload_configuration`]; `during` runs while the
    /// affected views are suspended.
    pub fn reload_configuration_observed<F>(
        &self,
        mut config: ConfigSet,
        during: F,
    ) -> Result<ReloadReport, ConfigError>
    where
        F: FnOnce(&Engine),
    {
        config.validate()?;
        let inner = &self.inner;
        let _reloading = inner.reload_lock.lock();
        let old = inner.current();

        let new_names: BTreeSet<String> = config.views.iter().map(|v| v.name.clone()).collect();
        let old_names: BTreeSet<String> = old.slots.keys().cloned().collect();
        let added: BTreeSet<String> = new_names.difference(&old_names).cloned().collect();
        let removed: BTreeSet<String> = old_names.difference(&new_names).cloned().collect();
        let changed: BTreeSet<String> = config
            .views
            .iter()
            .filter(|v| old.slots.get(&v.name).is_some_and(|s| s.config != **v))
            .map(|v| v.name.clone())
            .collect();
        let mut suspended = changed.clone();
        loop {
            let more: Vec<String> = config
                .views
                .iter()
                .filter(|v| old_names.contains(&v.name) && !suspended.contains(&v.name))
                .filter(|v| {
                    v.effective_dependencies()
                        .iter()
                        .any(|d| suspended.contains(*d))
                })
                .map(|v| v.name.clone())
                .collect();
            if more.is_empty() {
                break;
            }
            suspended.extend(more);
        }
        let unchanged: BTreeSet<String> = new_names
            .intersection(&old_names)
            .filter(|n| !suspended.contains(*n))
            .cloned()
            .collect();

        let held: Vec<Arc<Slot>> = suspended
            .iter()
            .chain(&removed)
            .map(|n| old.slots[n].clone())
            .collect();
        for slot in &held {
            slot.suspended.store(true, Ordering::SeqCst);
        }
        let guards: Vec<MutexGuard<'_, ()>> = held.iter().map(|s| s.refresh.lock()).collect();

        during(self);

        let now = inner.clock.now();
        let mut slots = BTreeMap::new();
        let mut uncached = Vec::new();
        for view in &config.views {
            let slot = if changed.contains(&view.name) {
                let previous = &old.slots[&view.name];
                let fresh = Slot::new(view.clone(), &inner.providers, now);
                {
                    let prev = previous.state.lock();
                    let mut st = fresh.state.lock();
                    if view.cache == CacheType::None {
                        uncached.push(view.name.clone());
                    } else {
                        st.generated_at = prev.generated_at;
                        st.disk_file = prev.disk_file.clone();
                        st.status = if prev.generated_at.is_some() {
                            ViewStatus::Stale
                        } else {
                            ViewStatus::Empty
                        };
                    }
                    st.version = prev.version;
                }
                Arc::new(fresh)
            } else if let Some(existing) = old.slots.get(&view.name) {
                existing.clone()
            } else {
                Arc::new(Slot::new(view.clone(), &inner.providers, now))
            };
            slots.insert(view.name.clone(), slot);
        }
        let loaded = Arc::new(Loaded::build(config, slots));
        {
            let mut published = inner.published.write();
            let map = Arc::make_mut(&mut published);
            for name in removed.iter().chain(&uncached) {
                map.remove(name);
            }
            *inner.loaded.write() = loaded;
        }
        for slot in &held {
            if changed.contains(&slot.config.name) || removed.contains(&slot.config.name) {
                slot.retired.store(true, Ordering::SeqCst);
            }
            slot.suspended.store(false, Ordering::SeqCst);
        }
        {
            let mut queue = inner.queue.lock();
            queue.retain(|name, _| !removed.contains(name));
        }
        drop(guards);
        tracing::info!(
            suspended = suspended.len(),
            added = added.len(),
            removed = removed.len(),
            "configuration reloaded"
        );
        Ok(ReloadReport {
            suspended,
            unchanged,
            added,
            removed,
        })
    }

    /// Ticks the engine every `interval` of wall time until the returned
    /// handle is dropped.
    pub fn spawn_scheduler(&self, interval: Duration) -> Scheduler {
        let stop = Arc::new(AtomicBool::new(false));
        let engine = self.clone();
        let flag = stop.clone();
        let handle = thread::Builder::new()
            .name("view-scheduler".into())
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    engine.tick();
                    thread::park_timeout(interval);
                }
            })
            .expect("spawning scheduler thread");
        Scheduler {
            stop,
            handle: Some(handle),
        }
    }
}

pub struct Scheduler {
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            handle.thread().unpark();
            let _ = handle.join();
        }
    }
}
