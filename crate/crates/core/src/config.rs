//! Declarative view configuration and its validator.
//!
//! The same [`ConfigSet::validate`] backs engine loading, hot reload and the
//! `validate-config` command.
//!
//! ```xml
//! <views cache-dir="cache">
//!   <view name="dbView">
//!     <adapter kind="table-source" path="db.tsv"/>
//!     <cache type="disk"/>
//!     <trigger kind="periodic" period="60"/>
//!     <fallback error="source-unreachable" action="retry" limit="3" delay="5"/>
//!     <ttl>3600</ttl>
//!     <timeout>30</timeout>
//!     <validation mode="well-formed"/>
//!   </view>
//!   <view name="derivedView">
//!     <adapter kind="view-transform" source="dbView" query="/rows/row"/>
//!     <dependency view="dbView"/>
//!     <trigger kind="dependency-updated" view="dbView"/>
//!   </view>
//!   <sync-group name="db"><member view="dbView"/><member view="derivedView"/></sync-group>
//! </views>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapters::{AdapterSpec, ErrorClass};
use crate::document::{Element, ViewDocument};
use crate::schema::StructuralSchema;

pub const INTROSPECTION_VIEW: &str = "_introspection";
pub const DEFAULT_UPDATE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
pub const DEFAULT_RETRY_DELAY: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("CONFIG_INVALID: view `{view}`: {reason}")]
    Invalid { view: String, reason: String },
    #[error("CYCLE_DETECTED: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("CONFIG_INVALID: {0}")]
    Syntax(String),
}

impl ConfigError {
    fn invalid(view: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            view: view.to_string(),
            reason: reason.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::CycleDetected(_) => "CYCLE_DETECTED",
            _ => "CONFIG_INVALID",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CacheType {
    Memory,
    Disk,
    None,
}

impl CacheType {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheType::Memory => "memory",
            CacheType::Disk => "disk",
            CacheType::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriggerKind {
    TimePeriodic,
    TimeCronLike,
    NotificationEvent,
    OnRead,
    OnWrite,
    CacheExpired,
    DependencyUpdated,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::TimePeriodic => "periodic",
            TriggerKind::TimeCronLike => "cron",
            TriggerKind::NotificationEvent => "notification",
            TriggerKind::OnRead => "on-read",
            TriggerKind::OnWrite => "on-write",
            TriggerKind::CacheExpired => "cache-expired",
            TriggerKind::DependencyUpdated => "dependency-updated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TriggerRule {
    Periodic { period: Duration },
    /// Fires at every instant `offset + k * every` since the Unix epoch.
    CronLike { every: Duration, offset: Duration },
    Notification { topic: String },
    OnRead,
    OnWrite,
    /// Fires once the content is older than `max_age` (the view ttl when
    /// unset), or when the view has never been generated.
    CacheExpired { max_age: Option<Duration> },
    DependencyUpdated { view: String },
}

impl TriggerRule {
    pub fn kind(&self) -> TriggerKind {
        match self {
            TriggerRule::Periodic { .. } => TriggerKind::TimePeriodic,
            TriggerRule::CronLike { .. } => TriggerKind::TimeCronLike,
            TriggerRule::Notification { .. } => TriggerKind::NotificationEvent,
            TriggerRule::OnRead => TriggerKind::OnRead,
            TriggerRule::OnWrite => TriggerKind::OnWrite,
            TriggerRule::CacheExpired { .. } => TriggerKind::CacheExpired,
            TriggerRule::DependencyUpdated { .. } => TriggerKind::DependencyUpdated,
        }
    }
}

/// Which failures a fallback rule applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorSelector {
    Class(ErrorClass),
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackAction {
    Ignore,
    Raise,
    Retry { limit: u32, delay: Duration },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FallbackRule {
    pub selector: ErrorSelector,
    pub action: FallbackAction,
}

/// The rule for `class`: an exact match, else `ANY`, else `None` (raise).
pub fn select_fallback(rules: &[FallbackRule], class: ErrorClass) -> Option<&FallbackRule> {
    rules
        .iter()
        .find(|r| r.selector == ErrorSelector::Class(class))
        .or_else(|| rules.iter().find(|r| r.selector == ErrorSelector::Any))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    None,
    WellFormed,
    Schema {
        reference: String,
        schema: Arc<StructuralSchema>,
    },
}

impl Eq for Validation {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewConfig {
    pub name: String,
    pub adapter: AdapterSpec,
    pub cache: CacheType,
    pub dependencies: Vec<String>,
    pub triggers: Vec<TriggerRule>,
    pub fallbacks: Vec<FallbackRule>,
    /// Zero means infinite.
    pub ttl: Duration,
    /// Set when the configuration spelled the ttl as `infinite`.
    pub ttl_marked_infinite: bool,
    pub update_timeout: Duration,
    pub sync_group: Option<String>,
    pub validation: Validation,
}

impl ViewConfig {
    pub fn new(name: impl Into<String>, adapter: AdapterSpec, cache: CacheType) -> Self {
        Self {
            name: name.into(),
            adapter,
            cache,
            dependencies: Vec::new(),
            triggers: Vec::new(),
            fallbacks: Vec::new(),
            ttl: Duration::ZERO,
            ttl_marked_infinite: false,
            update_timeout: DEFAULT_UPDATE_TIMEOUT,
            sync_group: None,
            validation: Validation::None,
        }
    }

    pub fn depends_on(mut self, view: impl Into<String>) -> Self {
        self.dependencies.push(view.into());
        self
    }

    pub fn trigger(mut self, rule: TriggerRule) -> Self {
        self.triggers.push(rule);
        self
    }

    pub fn fallback(mut self, selector: ErrorSelector, action: FallbackAction) -> Self {
        self.fallbacks.push(FallbackRule { selector, action });
        self
    }

    pub fn ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.update_timeout = timeout;
        self
    }

    pub fn validation(mut self, validation: Validation) -> Self {
        self.validation = validation;
        self
    }

    /// Declared dependencies plus the adapter's source view.
    pub fn effective_dependencies(&self) -> BTreeSet<&str> {
        let mut deps: BTreeSet<&str> = self.dependencies.iter().map(String::as_str).collect();
        if let Some(src) = self.adapter.source_view() {
            deps.insert(src);
        }
        deps
    }

    pub fn has_ttl(&self) -> bool {
        !self.ttl.is_zero()
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("view").with_attr("name", &self.name);
        el.push(self.adapter.to_element());
        el.push(Element::new("cache").with_attr("type", self.cache.as_str()));
        for dep in &self.dependencies {
            el.push(Element::new("dependency").with_attr("view", dep));
        }
        for rule in &self.triggers {
            let t = Element::new("trigger").with_attr("kind", rule.kind().as_str());
            el.push(match rule {
                TriggerRule::Periodic { period } => t.with_attr("period", format_seconds(*period)),
                TriggerRule::CronLike { every, offset } => t
                    .with_attr("every", format_seconds(*every))
                    .with_attr("offset", format_seconds(*offset)),
                TriggerRule::Notification { topic } => t.with_attr("topic", topic),
                TriggerRule::OnRead | TriggerRule::OnWrite => t,
                TriggerRule::CacheExpired { max_age: Some(a) } => {
                    t.with_attr("max-age", format_seconds(*a))
                }
                TriggerRule::CacheExpired { max_age: None } => t,
                TriggerRule::DependencyUpdated { view } => t.with_attr("view", view),
            });
        }
        for rule in &self.fallbacks {
            let selector = match rule.selector {
                ErrorSelector::Any => "any",
                ErrorSelector::Class(c) => c.as_str(),
            };
            let f = Element::new("fallback").with_attr("error", selector);
            el.push(match rule.action {
                FallbackAction::Ignore => f.with_attr("action", "ignore"),
                FallbackAction::Raise => f.with_attr("action", "raise"),
                FallbackAction::Retry { limit, delay } => f
                    .with_attr("action", "retry")
                    .with_attr("limit", limit.to_string())
                    .with_attr("delay", format_seconds(delay)),
            });
        }
        let ttl = if self.ttl.is_zero() && self.ttl_marked_infinite {
            "infinite".to_string()
        } else {
            format_seconds(self.ttl)
        };
        el.push(Element::new("ttl").with_text(ttl));
        el.push(Element::new("timeout").with_text(format_seconds(self.update_timeout)));
        el.push(match &self.validation {
            Validation::None => Element::new("validation").with_attr("mode", "none"),
            Validation::WellFormed => Element::new("validation").with_attr("mode", "well-formed"),
            Validation::Schema { reference, .. } => Element::new("validation")
                .with_attr("mode", "schema")
                .with_attr("schema", reference),
        });
        el
    }

    /// Short stable digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut cfg = self.clone();
        cfg.sync_group = None;
        let mut text = cfg.to_element().to_string_compact();
        if let Some(g) = &self.sync_group {
            text.push_str("|sync-group=");
            text.push_str(g);
        }
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_element(el: &Element, base: &Path) -> Result<Self, ConfigError> {
        let name = el
            .attr("name")
            .ok_or_else(|| ConfigError::Syntax("`view` needs a `name`".into()))?
            .to_string();
        let bad = |reason: String| ConfigError::invalid(&name, reason);
        let adapter_el = el
            .first_named("adapter")
            .ok_or_else(|| bad("missing `adapter`".into()))?;
        let adapter = AdapterSpec::from_element(adapter_el, base).map_err(&bad)?;
        let cache = match el.first_named("cache").map(|c| c.attr("type")) {
            None => CacheType::Memory,
            Some(Some("memory")) => CacheType::Memory,
            Some(Some("disk")) => CacheType::Disk,
            Some(Some("none")) => CacheType::None,
            Some(other) => return Err(bad(format!("unknown cache type {other:?}"))),
        };
        let mut cfg = ViewConfig::new(name.clone(), adapter, cache);
        for child in el.elements() {
            match child.label.as_str() {
                "adapter" | "cache" => {}
                "dependency" => cfg.dependencies.push(
                    child
                        .attr("view")
                        .ok_or_else(|| bad("`dependency` needs `view`".into()))?
                        .to_string(),
                ),
                "trigger" => cfg.triggers.push(parse_trigger(child).map_err(&bad)?),
                "fallback" => cfg.fallbacks.push(parse_fallback(child).map_err(&bad)?),
                "ttl" => {
                    let text = child.text();
                    if text.trim() == "infinite" {
                        cfg.ttl = Duration::ZERO;
                        cfg.ttl_marked_infinite = true;
                    } else {
                        cfg.ttl = parse_seconds(&text).map_err(&bad)?;
                    }
                }
                "timeout" => cfg.update_timeout = parse_seconds(&child.text()).map_err(&bad)?,
                "validation" => {
                    cfg.validation = match child.attr("mode") {
                        None | Some("none") => Validation::None,
                        Some("well-formed") => Validation::WellFormed,
                        Some("schema") => {
                            let reference = child
                                .attr("schema")
                                .ok_or_else(|| bad("schema validation needs `schema`".into()))?;
                            let path = base.join(reference);
                            let text = std::fs::read_to_string(&path).map_err(|e| {
                                bad(format!("schema {}: {e}", path.display()))
                            })?;
                            let schema =
                                StructuralSchema::parse(&text).map_err(|e| bad(e.to_string()))?;
                            Validation::Schema {
                                reference: reference.to_string(),
                                schema: Arc::new(schema),
                            }
                        }
                        Some(other) => return Err(bad(format!("unknown validation `{other}`"))),
                    }
                }
                other => return Err(bad(format!("unexpected element `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

trait CompactXml {
    fn to_string_compact(&self) -> String;
}

impl CompactXml for Element {
    fn to_string_compact(&self) -> String {
        ViewDocument::new(self.clone()).to_xml()
    }
}

fn parse_trigger(el: &Element) -> Result<TriggerRule, String> {
    let kind = el.attr("kind").ok_or("`trigger` needs `kind`")?;
    let need = |name: &str| {
        el.attr(name)
            .ok_or_else(|| format!("{kind} trigger needs `{name}`"))
    };
    Ok(match kind {
        "periodic" => TriggerRule::Periodic {
            period: parse_seconds(need("period")?)?,
        },
        "cron" => TriggerRule::CronLike {
            every: parse_seconds(need("every")?)?,
            offset: el.attr("offset").map(parse_seconds).transpose()?.unwrap_or_default(),
        },
        "notification" => TriggerRule::Notification {
            topic: need("topic")?.to_string(),
        },
        "on-read" => TriggerRule::OnRead,
        "on-write" => TriggerRule::OnWrite,
        "cache-expired" => TriggerRule::CacheExpired {
            max_age: el.attr("max-age").map(parse_seconds).transpose()?,
        },
        "dependency-updated" => TriggerRule::DependencyUpdated {
            view: need("view")?.to_string(),
        },
        other => return Err(format!("unknown trigger kind `{other}`")),
    })
}

fn parse_fallback(el: &Element) -> Result<FallbackRule, String> {
    let selector = match el.attr("error").ok_or("`fallback` needs `error`")? {
        "any" => ErrorSelector::Any,
        class => ErrorSelector::Class(class.parse()?),
    };
    let action = match el.attr("action").ok_or("`fallback` needs `action`")? {
        "ignore" => FallbackAction::Ignore,
        "raise" => FallbackAction::Raise,
        "retry" => FallbackAction::Retry {
            limit: match el.attr("limit") {
                Some(l) => l.parse().map_err(|_| format!("bad retry limit `{l}`"))?,
                None => DEFAULT_RETRY_LIMIT,
            },
            delay: el
                .attr("delay")
                .map(parse_seconds)
                .transpose()?
                .unwrap_or(DEFAULT_RETRY_DELAY),
        },
        other => return Err(format!("unknown fallback action `{other}`")),
    };
    Ok(FallbackRule { selector, action })
}

/// Parses non-negative decimal seconds, e.g. `30` or `0.25`.
pub fn parse_seconds(text: &str) -> Result<Duration, String> {
    let text = text.trim();
    let secs: f64 = text
        .parse()
        .map_err(|_| format!("expected seconds, found `{text}`"))?;
    if !secs.is_finite() || secs < 0.0 {
        return Err(format!("expected non-negative seconds, found `{text}`"));
    }
    Ok(Duration::from_secs_f64(secs))
}

pub fn format_seconds(d: Duration) -> String {
    if d.subsec_nanos() == 0 {
        d.as_secs().to_string()
    } else {
        let s = format!("{:.3}", d.as_secs_f64());
        s.trim_end_matches('0').to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncGroup {
    pub name: String,
    pub members: BTreeSet<String>,
}

impl SyncGroup {
    pub fn new<I, S>(name: impl Into<String>, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            members: members.into_iter().map(Into::into).collect(),
        }
    }
}

/// A complete configuration: views, sync groups and the disk cache location.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfigSet {
    pub views: Vec<ViewConfig>,
    pub sync_groups: Vec<SyncGroup>,
    pub cache_dir: Option<PathBuf>,
}

impl ConfigSet {
    pub fn new(views: Vec<ViewConfig>, sync_groups: Vec<SyncGroup>) -> Self {
        Self {
            views,
            sync_groups,
            cache_dir: None,
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn view(&self, name: &str) -> Option<&ViewConfig> {
        self.views.iter().find(|v| v.name == name)
    }

    /// Parses a `<views>` element. Relative paths resolve against `base`.
    pub fn from_element(el: &Element, base: &Path) -> Result<Self, ConfigError> {
        if el.label != "views" {
            return Err(ConfigError::Syntax(format!(
                "expected `views`, found `{}`",
                el.label
            )));
        }
        let mut set = ConfigSet {
            cache_dir: el.attr("cache-dir").map(|d| base.join(d)),
            ..Default::default()
        };
        for child in el.elements() {
            match child.label.as_str() {
                "view" => set.views.push(ViewConfig::from_element(child, base)?),
                "sync-group" => {
                    let name = child
                        .attr("name")
                        .ok_or_else(|| ConfigError::Syntax("`sync-group` needs `name`".into()))?;
                    let mut members = BTreeSet::new();
                    for m in child.elements_named("member") {
                        let view = m.attr("view").ok_or_else(|| {
                            ConfigError::Syntax("`member` needs `view`".into())
                        })?;
                        if !members.insert(view.to_string()) {
                            return Err(ConfigError::invalid(
                                view,
                                format!("listed twice in sync group `{name}`"),
                            ));
                        }
                    }
                    set.sync_groups.push(SyncGroup {
                        name: name.to_string(),
                        members,
                    });
                }
                other => {
                    return Err(ConfigError::Syntax(format!("unexpected element `{other}`")))
                }
            }
        }
        Ok(set)
    }

    /// Parses configuration text. The root may be `views` or any element
    /// with a `views` child (the service configuration file).
    pub fn parse(xml: &str, base: &Path) -> Result<Self, ConfigError> {
        let doc = ViewDocument::from_xml(xml).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let views = if doc.root.label == "views" {
            &doc.root
        } else {
            doc.root
                .first_named("views")
                .ok_or_else(|| ConfigError::Syntax("no `views` element".into()))?
        };
        Self::from_element(views, base)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Syntax(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("views");
        if let Some(dir) = &self.cache_dir {
            el.set_attr("cache-dir", dir.display().to_string());
        }
        for view in &self.views {
            el.push(view.to_element());
        }
        for group in &self.sync_groups {
            let mut g = Element::new("sync-group").with_attr("name", &group.name);
            for m in &group.members {
                g.push(Element::new("member").with_attr("view", m));
            }
            el.push(g);
        }
        el
    }

    /// Checks every invariant, reporting the first violation. On success,
    /// fills each view's `sync_group` from the group list.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let mut by_name: BTreeMap<&str, &ViewConfig> = BTreeMap::new();
        for view in &self.views {
            let name = view.name.as_str();
            if name.is_empty()
                || name.starts_with('_')
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            {
                return Err(ConfigError::invalid(
                    name,
                    "names use [A-Za-z0-9._-] and must not start with `_`",
                ));
            }
            if by_name.insert(name, view).is_some() {
                return Err(ConfigError::invalid(name, "duplicate view name"));
            }
        }

        for view in &self.views {
            let name = view.name.as_str();
            let bad = |reason: String| Err(ConfigError::invalid(name, reason));
            view.adapter.check().or_else(&bad)?;
            for dep in view.effective_dependencies() {
                if !by_name.contains_key(dep) {
                    return bad(format!("dependency `{dep}` is not configured"));
                }
            }
            if view.update_timeout.is_zero() {
                return bad("update timeout must be positive".into());
            }
            if view.cache == CacheType::None && !view.triggers.is_empty() {
                return bad("a view without cache has nothing to refresh; remove its triggers".into());
            }
            if view.cache == CacheType::Disk && self.cache_dir.is_none() {
                return bad("disk cache needs a `cache-dir`".into());
            }
            let deps = view.effective_dependencies();
            for rule in &view.triggers {
                match rule {
                    TriggerRule::Periodic { period } if period.is_zero() => {
                        return bad("periodic trigger needs period > 0".into())
                    }
                    TriggerRule::CronLike { every, .. } if every.is_zero() => {
                        return bad("cron trigger needs every > 0".into())
                    }
                    TriggerRule::CacheExpired { max_age: None } if !view.has_ttl() => {
                        return bad("cache-expired trigger needs a ttl or max-age".into())
                    }
                    TriggerRule::DependencyUpdated { view: dep } => {
                        if !deps.contains(dep.as_str()) {
                            return bad(format!(
                                "dependency-updated trigger names `{dep}`, which is not a dependency"
                            ));
                        }
                        if by_name[dep.as_str()].cache == CacheType::None {
                            return bad(format!(
                                "`{dep}` has no cache and never emits cache updates"
                            ));
                        }
                    }
                    _ => {}
                }
            }
            let mut selectors = BTreeSet::new();
            for rule in &view.fallbacks {
                if !selectors.insert(rule.selector) {
                    return bad(format!("more than one fallback rule for {:?}", rule.selector));
                }
                if let FallbackAction::Retry { limit, .. } = rule.action {
                    if limit == 0 {
                        return bad("retry limit must be at least 1".into());
                    }
                }
            }
            let retries = view
                .fallbacks
                .iter()
                .any(|r| matches!(r.action, FallbackAction::Retry { .. }));
            if view.cache != CacheType::None
                && view.ttl.is_zero()
                && retries
                && !view.ttl_marked_infinite
            {
                return bad("retry fallback with ttl 0 needs an explicit `infinite` ttl".into());
            }
        }

        let mut membership: BTreeMap<String, String> = BTreeMap::new();
        let mut group_names = BTreeSet::new();
        for group in &self.sync_groups {
            if !group_names.insert(group.name.as_str()) {
                return Err(ConfigError::Syntax(format!(
                    "sync group `{}` declared twice",
                    group.name
                )));
            }
            for member in &group.members {
                let Some(view) = by_name.get(member.as_str()) else {
                    return Err(ConfigError::invalid(
                        member,
                        format!("sync group `{}` names an unknown view", group.name),
                    ));
                };
                if view.cache == CacheType::None {
                    return Err(ConfigError::invalid(
                        member,
                        "a view without cache cannot join a sync group",
                    ));
                }
                if let Some(other) = membership.insert(member.clone(), group.name.clone()) {
                    return Err(ConfigError::invalid(
                        member,
                        format!("in both sync groups `{other}` and `{}`", group.name),
                    ));
                }
            }
        }
        for view in &self.views {
            if let Some(g) = &view.sync_group {
                if membership.get(&view.name) != Some(g) {
                    return Err(ConfigError::invalid(
                        &view.name,
                        format!("declares sync group `{g}` which does not list it"),
                    ));
                }
            }
        }

        if let Some(cycle) = find_cycle(&self.views) {
            return Err(ConfigError::CycleDetected(cycle));
        }

        for view in &mut self.views {
            view.sync_group = membership.get(&view.name).cloned();
        }
        Ok(())
    }
}

fn find_cycle(views: &[ViewConfig]) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let graph: BTreeMap<&str, BTreeSet<&str>> = views
        .iter()
        .map(|v| (v.name.as_str(), v.effective_dependencies()))
        .collect();
    let mut marks: BTreeMap<&str, Mark> = graph.keys().map(|k| (*k, Mark::New)).collect();

    fn visit<'a>(
        node: &'a str,
        graph: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(node, Mark::Active);
        path.push(node);
        for dep in &graph[node] {
            match marks[dep] {
                Mark::Active => {
                    let start = path.iter().position(|n| n == dep).unwrap();
                    return Some(path[start..].iter().map(|s| s.to_string()).collect());
                }
                Mark::New => {
                    if let Some(c) = visit(dep, graph, marks, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks.insert(node, Mark::Done);
        None
    }

    let names: Vec<&str> = graph.keys().copied().collect();
    for name in names {
        if marks[name] == Mark::New {
            let mut path = Vec::new();
            if let Some(c) = visit(name, &graph, &mut marks, &mut path) {
                return Some(c);
            }
        }
    }
    None
}

impl fmt::Display for ConfigSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&ViewDocument::new(self.to_element()).to_xml_pretty())
    }
}
