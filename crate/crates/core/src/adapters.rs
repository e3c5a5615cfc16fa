//! Adapters turn a data source into a [`ViewDocument`].
//!
//! Source adapters read files, tables and HTTP endpoints. Transform adapters
//! derive a view from another view through a [`PathQuery`] or a per-site
//! split. A provider adapter delegates to a generator registered in-process
//! by the embedding service (alarm and ticket stores, simulated feeds).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::document::{Element, ViewDocument};
use crate::query::PathQuery;

/// Connect/read budget for a single HTTP fetch.
pub const HTTP_BUDGET: Duration = Duration::from_secs(10);

/// Bucket for records that carry no site key.
pub const UNASSIGNED_SITE: &str = "_unassigned";

/// Failure classes used to select a fallback rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorClass {
    SourceUnreachable,
    SourceMalformed,
    ValidationFailed,
    Timeout,
    /// Writing the on-disk cache failed. Only an `ANY` rule matches it.
    CacheWrite,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 5] = [
        ErrorClass::SourceUnreachable,
        ErrorClass::SourceMalformed,
        ErrorClass::ValidationFailed,
        ErrorClass::Timeout,
        ErrorClass::CacheWrite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::SourceUnreachable => "source-unreachable",
            ErrorClass::SourceMalformed => "source-malformed",
            ErrorClass::ValidationFailed => "validation-failed",
            ErrorClass::Timeout => "timeout",
            ErrorClass::CacheWrite => "cache-write",
        }
    }

    /// Upper-case code used in API error bodies.
    pub fn code(self) -> &'static str {
        match self {
            ErrorClass::SourceUnreachable => "SOURCE_UNREACHABLE",
            ErrorClass::SourceMalformed => "SOURCE_MALFORMED",
            ErrorClass::ValidationFailed => "VALIDATION_FAILED",
            ErrorClass::Timeout => "TIMEOUT",
            ErrorClass::CacheWrite => "CACHE_WRITE",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ErrorClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error class `{s}`"))
    }
}

/// A classified adapter failure.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{class}: {message}")]
pub struct AdapterError {
    pub class: ErrorClass,
    pub message: String,
}

impl AdapterError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn unreachable(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::SourceUnreachable, message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::SourceMalformed, message)
    }
}

/// Read access to other views, as seen by an adapter.
pub trait ViewSource: Send + Sync {
    /// Newest generated content of `name`, including content staged for a
    /// sync group but not yet exposed.
    fn read_source(&self, name: &str) -> Option<Arc<ViewDocument>>;

    fn introspect(&self) -> ViewDocument;
}

/// Everything an adapter may consult while generating.
#[derive(Clone)]
pub struct AdapterContext {
    pub view: String,
    pub clock: SharedClock,
    pub views: Arc<dyn ViewSource>,
}

pub trait Adapter: Send + Sync {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError>;
}

impl<F> Adapter for F
where
    F: Fn(&AdapterContext) -> Result<ViewDocument, AdapterError> + Send + Sync,
{
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        self(ctx)
    }
}

/// Named in-process generators available to `provider` adapters.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    inner: Arc<RwLock<HashMap<String, Arc<dyn Adapter>>>>,
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, name: impl Into<String>, adapter: Arc<dyn Adapter>) {
        self.inner.write().insert(name.into(), adapter);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Adapter>> {
        self.inner.read().get(name).cloned()
    }
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.inner.read().keys().cloned().collect();
        names.sort();
        f.debug_struct("ProviderRegistry").field("names", &names).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Xml,
    /// One `<line>` per non-blank line.
    Flat,
}

/// What a scripted step produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptOutcome {
    Document(ViewDocument),
    /// `<label seq="N"/>` where N counts invocations from 1.
    Stamp(String),
    Fail(ErrorClass, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub outcome: ScriptOutcome,
    /// Time spent before answering, on the context clock.
    pub delay: Option<Duration>,
}

impl ScriptStep {
    pub fn document(doc: ViewDocument) -> Self {
        Self {
            outcome: ScriptOutcome::Document(doc),
            delay: None,
        }
    }

    pub fn stamp(label: impl Into<String>) -> Self {
        Self {
            outcome: ScriptOutcome::Stamp(label.into()),
            delay: None,
        }
    }

    pub fn fail(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            outcome: ScriptOutcome::Fail(class, message.into()),
            delay: None,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }
}

/// A programmed sequence of outcomes; the last step repeats once exhausted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
}

/// Declarative adapter configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterSpec {
    LocalFile { path: PathBuf, format: FileFormat },
    HttpFetch { url: String },
    TableSource { path: PathBuf, delimiter: char },
    ViewTransform {
        source: String,
        query: String,
        root: Option<String>,
    },
    SiteSplit {
        source: String,
        key: String,
        site: Option<String>,
    },
    Introspection,
    Scripted(Script),
    Provider { name: String },
}

impl AdapterSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AdapterSpec::LocalFile { .. } => "local-file",
            AdapterSpec::HttpFetch { .. } => "http-fetch",
            AdapterSpec::TableSource { .. } => "table-source",
            AdapterSpec::ViewTransform { .. } => "view-transform",
            AdapterSpec::SiteSplit { .. } => "site-split",
            AdapterSpec::Introspection => "introspection",
            AdapterSpec::Scripted(_) => "scripted",
            AdapterSpec::Provider { .. } => "provider",
        }
    }

    /// The view this adapter reads, which is implicitly a dependency.
    pub fn source_view(&self) -> Option<&str> {
        match self {
            AdapterSpec::ViewTransform { source, .. } | AdapterSpec::SiteSplit { source, .. } => {
                Some(source)
            }
            _ => None,
        }
    }

    /// Checks kind-specific parameters.
    pub fn check(&self) -> Result<(), String> {
        match self {
            AdapterSpec::ViewTransform { query, root, .. } => {
                PathQuery::parse(query).map_err(|e| e.to_string())?;
                if let Some(root) = root {
                    if !crate::document::is_valid_name(root) {
                        return Err(format!("invalid root label `{root}`"));
                    }
                }
                Ok(())
            }
            AdapterSpec::SiteSplit { key, .. } if key.is_empty() => {
                Err("site-split needs a key".into())
            }
            AdapterSpec::HttpFetch { url }
                if !(url.starts_with("http://") || url.starts_with("https://")) =>
            {
                Err(format!("unsupported URL `{url}`"))
            }
            AdapterSpec::Scripted(script) if script.steps.is_empty() => {
                Err("scripted adapter needs at least one step".into())
            }
            AdapterSpec::Provider { name } if name.is_empty() => {
                Err("provider adapter needs a name".into())
            }
            _ => Ok(()),
        }
    }

    pub fn instantiate(&self, providers: &ProviderRegistry) -> Arc<dyn Adapter> {
        match self {
            AdapterSpec::LocalFile { path, format } => Arc::new(LocalFileAdapter {
                path: path.clone(),
                format: *format,
            }),
            AdapterSpec::HttpFetch { url } => Arc::new(HttpFetchAdapter { url: url.clone() }),
            AdapterSpec::TableSource { path, delimiter } => Arc::new(TableSourceAdapter {
                path: path.clone(),
                delimiter: *delimiter,
            }),
            AdapterSpec::ViewTransform {
                source,
                query,
                root,
            } => Arc::new(ViewTransformAdapter {
                source: source.clone(),
                query: PathQuery::parse(query).expect("checked at configuration load"),
                root: root.clone().unwrap_or_else(|| "result".to_string()),
            }),
            AdapterSpec::SiteSplit { source, key, site } => Arc::new(SiteSplitAdapter {
                source: source.clone(),
                key: key.clone(),
                site: site.clone(),
            }),
            AdapterSpec::Introspection => Arc::new(IntrospectionAdapter),
            AdapterSpec::Scripted(script) => Arc::new(ScriptedAdapter::new(script.clone())),
            AdapterSpec::Provider { name } => Arc::new(ProviderAdapter {
                name: name.clone(),
                registry: providers.clone(),
            }),
        }
    }

    /// Reads an `<adapter>` element; relative paths resolve against `base`.
    pub fn from_element(el: &Element, base: &Path) -> Result<Self, String> {
        let kind = el.attr("kind").ok_or("adapter needs a `kind`")?;
        let need = |name: &str| {
            el.attr(name)
                .map(str::to_string)
                .ok_or_else(|| format!("{kind} adapter needs `{name}`"))
        };
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        let spec = match kind {
            "local-file" => {
                let path = resolve(need("path")?);
                let format = match el.attr("format") {
                    Some("xml") => FileFormat::Xml,
                    Some("flat") => FileFormat::Flat,
                    None if path.extension().is_some_and(|e| e == "xml") => FileFormat::Xml,
                    None => FileFormat::Flat,
                    Some(other) => return Err(format!("unknown file format `{other}`")),
                };
                AdapterSpec::LocalFile { path, format }
            }
            "http-fetch" => AdapterSpec::HttpFetch { url: need("url")? },
            "table-source" => {
                let delimiter = match el.attr("delimiter") {
                    None | Some("tab") => '\t',
                    Some(d) if d.chars().count() == 1 => d.chars().next().unwrap(),
                    Some(d) => return Err(format!("bad delimiter `{d}`")),
                };
                AdapterSpec::TableSource {
                    path: resolve(need("path")?),
                    delimiter,
                }
            }
            "view-transform" => AdapterSpec::ViewTransform {
                source: need("source")?,
                query: need("query")?,
                root: el.attr("root").map(str::to_string),
            },
            "site-split" => AdapterSpec::SiteSplit {
                source: need("source")?,
                key: el.attr("key").unwrap_or("site").to_string(),
                site: el.attr("site").map(str::to_string),
            },
            "introspection" => AdapterSpec::Introspection,
            "scripted" => {
                let mut steps = Vec::new();
                for step in el.elements_named("step") {
                    steps.push(parse_script_step(step)?);
                }
                AdapterSpec::Scripted(Script { steps })
            }
            "provider" => AdapterSpec::Provider { name: need("name")? },
            other => return Err(format!("unknown adapter kind `{other}`")),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn to_element(&self) -> Element {
        let el = Element::new("adapter").with_attr("kind", self.kind());
        match self {
            AdapterSpec::LocalFile { path, format } => el
                .with_attr("path", path.display().to_string())
                .with_attr(
                    "format",
                    match format {
                        FileFormat::Xml => "xml",
                        FileFormat::Flat => "flat",
                    },
                ),
            AdapterSpec::HttpFetch { url } => el.with_attr("url", url),
            AdapterSpec::TableSource { path, delimiter } => {
                let el = el.with_attr("path", path.display().to_string());
                if *delimiter == '\t' {
                    el
                } else {
                    el.with_attr("delimiter", delimiter.to_string())
                }
            }
            AdapterSpec::ViewTransform {
                source,
                query,
                root,
            } => {
                let el = el.with_attr("source", source).with_attr("query", query);
                match root {
                    Some(r) => el.with_attr("root", r),
                    None => el,
                }
            }
            AdapterSpec::SiteSplit { source, key, site } => {
                let el = el.with_attr("source", source).with_attr("key", key);
                match site {
                    Some(s) => el.with_attr("site", s),
                    None => el,
                }
            }
            AdapterSpec::Introspection => el,
            AdapterSpec::Scripted(script) => {
                let mut el = el;
                for step in &script.steps {
                    el.push(script_step_element(step));
                }
                el
            }
            AdapterSpec::Provider { name } => el.with_attr("name", name),
        }
    }
}

fn parse_script_step(step: &Element) -> Result<ScriptStep, String> {
    let delay = match step.attr("delay") {
        Some(d) => Some(crate::config::parse_seconds(d)?),
        None => None,
    };
    let outcome = if let Some(class) = step.attr("error") {
        ScriptOutcome::Fail(class.parse()?, step.attr("message").unwrap_or("").to_string())
    } else if let Some(label) = step.attr("stamp") {
        ScriptOutcome::Stamp(label.to_string())
    } else {
        let mut children = step.elements();
        let doc = children.next().ok_or("script step needs a document, `stamp` or `error`")?;
        if children.next().is_some() {
            return Err("script step holds more than one document".into());
        }
        ScriptOutcome::Document(ViewDocument::new(doc.clone()))
    };
    Ok(ScriptStep { outcome, delay })
}

fn script_step_element(step: &ScriptStep) -> Element {
    let mut el = Element::new("step");
    if let Some(d) = step.delay {
        el.set_attr("delay", crate::config::format_seconds(d));
    }
    match &step.outcome {
        ScriptOutcome::Document(doc) => el.push(doc.root.clone()),
        ScriptOutcome::Stamp(label) => el.set_attr("stamp", label),
        ScriptOutcome::Fail(class, message) => {
            el.set_attr("error", class.as_str());
            if !message.is_empty() {
                el.set_attr("message", message);
            }
        }
    }
    el
}

fn read_file(path: &Path) -> Result<String, AdapterError> {
    std::fs::read_to_string(path)
        .map_err(|e| AdapterError::unreachable(format!("{}: {e}", path.display())))
}

struct LocalFileAdapter {
    path: PathBuf,
    format: FileFormat,
}

impl Adapter for LocalFileAdapter {
    fn generate(&self, _ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let text = read_file(&self.path)?;
        match self.format {
            FileFormat::Xml => ViewDocument::from_xml(&text)
                .map_err(|e| AdapterError::malformed(format!("{}: {e}", self.path.display()))),
            FileFormat::Flat => Ok(parse_flat(&text)),
        }
    }
}

/// Flat text files become `<lines><line n="1">…</line></lines>`.
pub fn parse_flat(text: &str) -> ViewDocument {
    let mut root = Element::new("lines");
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        root.push(
            Element::new("line")
                .with_attr("n", (i + 1).to_string())
                .with_text(line),
        );
    }
    ViewDocument::new(root)
}

struct TableSourceAdapter {
    path: PathBuf,
    delimiter: char,
}

impl Adapter for TableSourceAdapter {
    fn generate(&self, _ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let text = read_file(&self.path)?;
        parse_table(&text, self.delimiter)
    }
}

/// Maps a delimiter-separated table to `<rows><row col="…"/></rows>`. The
/// first row names the columns.
pub fn parse_table(text: &str, delimiter: char) -> Result<ViewDocument, AdapterError> {
    let mut delim = [0u8; 4];
    if delimiter.encode_utf8(&mut delim).len() != 1 {
        return Err(AdapterError::malformed("delimiter must be a single byte"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim[0])
        .quoting(false)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AdapterError::malformed(e.to_string()))?
        .clone();
    for h in &headers {
        if !crate::document::is_valid_name(h) {
            return Err(AdapterError::malformed(format!("invalid column name `{h}`")));
        }
    }
    let mut root = Element::new("rows");
    for record in reader.records() {
        let record = record.map_err(|e| AdapterError::malformed(e.to_string()))?;
        let mut row = Element::new("row");
        for (name, value) in headers.iter().zip(record.iter()) {
            row.set_attr(name, value);
        }
        root.push(row);
    }
    Ok(ViewDocument::new(root))
}

struct HttpFetchAdapter {
    url: String,
}

impl Adapter for HttpFetchAdapter {
    fn generate(&self, _ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_connect(Some(HTTP_BUDGET))
            .timeout_global(Some(HTTP_BUDGET))
            .build()
            .into();
        let mut response = agent.get(&self.url).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::new(ErrorClass::Timeout, e.to_string()),
            other => AdapterError::unreachable(format!("{}: {other}", self.url)),
        })?;
        let json = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("json"));
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AdapterError::unreachable(e.to_string()))?;
        let parsed = if json {
            ViewDocument::from_json(&body)
        } else {
            ViewDocument::from_xml(&body)
        };
        parsed.map_err(|e| AdapterError::malformed(format!("{}: {e}", self.url)))
    }
}

fn source_document(ctx: &AdapterContext, source: &str) -> Result<Arc<ViewDocument>, AdapterError> {
    ctx.views
        .read_source(source)
        .ok_or_else(|| AdapterError::unreachable(format!("source view `{source}` has no content")))
}

struct ViewTransformAdapter {
    source: String,
    query: PathQuery,
    root: String,
}

impl Adapter for ViewTransformAdapter {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let doc = source_document(ctx, &self.source)?;
        Ok(self.query.evaluate_as(&doc, &self.root))
    }
}

struct SiteSplitAdapter {
    source: String,
    key: String,
    site: Option<String>,
}

impl Adapter for SiteSplitAdapter {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let doc = source_document(ctx, &self.source)?;
        let mut buckets = split_by_site(&doc, &self.key);
        Ok(match &self.site {
            Some(site) => buckets.remove(site).unwrap_or_else(|| {
                ViewDocument::new(Element::new(doc.root.label.clone()).with_attr("site", site))
            }),
            None => {
                let mut root = Element::new("split").with_attr("key", &self.key);
                for (site, bucket) in buckets {
                    let mut b = Element::new("bucket").with_attr("site", site);
                    b.children = bucket.root.children;
                    root.push(b);
                }
                ViewDocument::new(root)
            }
        })
    }
}

struct IntrospectionAdapter;

impl Adapter for IntrospectionAdapter {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        Ok(ctx.views.introspect())
    }
}

struct ProviderAdapter {
    name: String,
    registry: ProviderRegistry,
}

impl Adapter for ProviderAdapter {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let adapter = self
            .registry
            .get(&self.name)
            .ok_or_else(|| AdapterError::unreachable(format!("no provider `{}`", self.name)))?;
        adapter.generate(ctx)
    }
}

/// Replays a [`Script`]. Safe to share; each call advances one step.
pub struct ScriptedAdapter {
    script: Script,
    cursor: Mutex<u64>,
}

impl ScriptedAdapter {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            cursor: Mutex::new(0),
        }
    }
}

impl Adapter for ScriptedAdapter {
    fn generate(&self, ctx: &AdapterContext) -> Result<ViewDocument, AdapterError> {
        let invocation = {
            let mut cursor = self.cursor.lock();
            *cursor += 1;
            *cursor
        };
        let index = ((invocation - 1) as usize).min(self.script.steps.len() - 1);
        let step = &self.script.steps[index];
        if let Some(delay) = step.delay {
            ctx.clock.sleep(delay);
        }
        match &step.outcome {
            ScriptOutcome::Document(doc) => Ok(doc.clone()),
            ScriptOutcome::Stamp(label) => Ok(ViewDocument::new(
                Element::new(label.clone()).with_attr("seq", invocation.to_string()),
            )),
            ScriptOutcome::Fail(class, message) => Err(AdapterError::new(*class, message.clone())),
        }
    }
}

/// Key of a record: attribute `key`, else the text of child element `key`.
pub fn record_site<'a>(record: &'a Element, key: &str) -> Option<std::borrow::Cow<'a, str>> {
    if let Some(v) = record.attr(key) {
        return Some(v.into());
    }
    record.first_named(key).map(|c| c.text().into())
}

/// Partitions the root's element children by site key. Records without a
/// key go to [`UNASSIGNED_SITE`]. Each bucket keeps the source root label with
/// a `site` attribute, and records keep their source order.
pub fn split_by_site(source: &ViewDocument, site_key: &str) -> BTreeMap<String, ViewDocument> {
    let mut buckets: BTreeMap<String, ViewDocument> = BTreeMap::new();
    for record in source.root.elements() {
        let site = match record_site(record, site_key) {
            Some(s) if !s.is_empty() => s.into_owned(),
            _ => UNASSIGNED_SITE.to_string(),
        };
        buckets
            .entry(site.clone())
            .or_insert_with(|| {
                ViewDocument::new(
                    Element::new(source.root.label.clone()).with_attr("site", site),
                )
            })
            .root
            .push(record.clone());
    }
    buckets
}
