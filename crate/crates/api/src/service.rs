//! Service assembly: view engine, operator desk and identities from one
//! configuration file.
//!
//! ```toml
//! views = "views.xml"        # view configuration, relative to this file
//! topology = "topology.xml"  # optional: <topology>, or <sites> alone
//! alarm_feed = "sam"         # optional: view whose records become alarms
//! ticket_backend = "dual"    # or "direct-insert"
//! outbox = "outbox"          # optional: directory for notification e-mails
//! quiet_period = 86400       # seconds an OFF alarm must stay quiet
//!
//! [[operators]]
//! token = "change-me"
//! name = "cod-duty"
//! role = "OPERATOR"
//! ```
//!
//! A view configuration file may be given instead; the service then has no
//! topology and no operators.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use gridops_core::config::parse_seconds;
use gridops_core::{ConfigSet, Engine, ProviderRegistry, ReloadReport, SharedClock, ViewDocument};
use gridops_workflow::{AlarmStore, Backend, Desk, Outbox, Topology};
use serde::Deserialize;
use thiserror::Error;

use crate::auth::{Identities, OperatorIdentity};
use crate::error::ApiError;

/// Provider name under which the configured alarm feed is ingested.
pub const ALARM_FEED_PROVIDER: &str = "alarm-feed";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Views(#[from] gridops_core::ConfigError),
    #[error(transparent)]
    Topology(#[from] gridops_workflow::TopologyError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config { .. } => "CONFIG_INVALID",
            ServiceError::Views(e) => e.code(),
            ServiceError::Topology(e) => e.code(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceFile {
    views: PathBuf,
    topology: Option<PathBuf>,
    alarm_feed: Option<String>,
    ticket_backend: Option<String>,
    outbox: Option<PathBuf>,
    quiet_period: Option<toml::Value>,
    #[serde(default)]
    operators: Vec<OperatorIdentity>,
}

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    pub views: ConfigSet,
    pub views_path: Option<PathBuf>,
    pub topology: Topology,
    pub topology_path: Option<PathBuf>,
    pub alarm_feed: Option<String>,
    pub backend: Backend,
    pub outbox: Option<PathBuf>,
    pub quiet_period: Duration,
    pub operators: Vec<OperatorIdentity>,
}

impl ServiceSettings {
    pub fn new(views: ConfigSet, topology: Topology) -> Self {
        Self {
            views,
            views_path: None,
            topology,
            topology_path: None,
            alarm_feed: None,
            backend: Backend::Dual,
            outbox: None,
            quiet_period: Duration::from_secs(86_400),
            operators: Vec::new(),
        }
    }

    /// Reads a service file (`.toml`) or a bare view configuration.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let is_service = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if !is_service {
            let mut settings = Self::new(ConfigSet::load(path)?, Topology::empty());
            settings.views_path = Some(path.to_path_buf());
            return Ok(settings);
        }
        let fail = |message: String| ServiceError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let file: ServiceFile = toml::from_str(&text).map_err(|e| fail(e.message().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let views_path = base.join(&file.views);
        let topology_path = file.topology.map(|t| base.join(t));
        let topology = match &topology_path {
            Some(p) => load_topology(p)?,
            None => Topology::empty(),
        };
        let backend = match file.ticket_backend {
            Some(b) => b.parse().map_err(fail)?,
            None => Backend::Dual,
        };
        let quiet_period = match file.quiet_period {
            None => Duration::from_secs(86_400),
            Some(toml::Value::Integer(i)) if i >= 0 => Duration::from_secs(i as u64),
            Some(toml::Value::Float(f)) if f >= 0.0 => Duration::from_secs_f64(f),
            Some(toml::Value::String(s)) => parse_seconds(&s).map_err(fail)?,
            Some(other) => return Err(fail(format!("quiet_period: expected seconds, found {other}"))),
        };
        Ok(Self {
            views: ConfigSet::load(&views_path)?,
            views_path: Some(views_path),
            topology,
            topology_path,
            alarm_feed: file.alarm_feed,
            backend,
            outbox: file.outbox.map(|o| base.join(o)),
            quiet_period,
            operators: file.operators,
        })
    }
}

pub fn load_topology(path: &Path) -> Result<Topology, ServiceError> {
    let text = fs::read_to_string(path).map_err(|e| ServiceError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let doc = ViewDocument::from_xml(&text).map_err(|e| ServiceError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(Topology::load(&doc)?)
}

#[derive(Debug)]
pub struct Service {
    pub engine: Engine,
    pub desk: Arc<Desk>,
    pub identities: Identities,
    views_path: Option<PathBuf>,
    topology_path: Option<PathBuf>,
}

impl Service {
    pub fn build(settings: ServiceSettings, clock: SharedClock) -> Result<Self, ServiceError> {
        let identities = Identities::new(settings.operators).map_err(|message| ServiceError::Config {
            path: "operators".into(),
            message,
        })?;
        let outbox = match settings.outbox {
            Some(dir) => Outbox::in_dir(dir),
            None => Outbox::in_memory(),
        };
        let desk = Arc::new(Desk::with_alarms(
            settings.topology,
            AlarmStore::new(settings.quiet_period),
            settings.backend,
            outbox,
            clock.clone(),
        ));
        let providers = ProviderRegistry::new();
        desk.register_providers(&providers);
        if let Some(feed) = &settings.alarm_feed {
            desk.register_feed_provider(&providers, ALARM_FEED_PROVIDER, feed);
        }
        let engine = Engine::load_with(settings.views, clock, providers)?;
        engine.restore_disk_caches();
        Ok(Self {
            engine,
            desk,
            identities,
            views_path: settings.views_path,
            topology_path: settings.topology_path,
        })
    }

    pub fn load(path: &Path, clock: SharedClock) -> Result<Self, ServiceError> {
        Self::build(ServiceSettings::load(path)?, clock)
    }

    /// Applies `xml` as the new view configuration, or re-reads the
    /// configured files when it is `None`. The topology file, if any, is
    /// re-read as well.
    pub fn reload(&self, xml: Option<&str>) -> Result<ReloadReport, ApiError> {
        let base = self
            .views_path
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let config = match (xml, &self.views_path) {
            (Some(text), _) => ConfigSet::parse(text, &base)?,
            (None, Some(path)) => ConfigSet::load(path)?,
            (None, None) => return Err(ApiError::bad_request("no configuration file to re-read; send one in the body")),
        };
        let topology = match &self.topology_path {
            Some(p) => Some(load_topology(p).map_err(|e| ApiError::new(e.code(), e.to_string()))?),
            None => None,
        };
        let report = self.engine.reload_configuration(config)?;
        if let Some(t) = topology {
            self.desk.replace_topology(t);
        }
        Ok(report)
    }

    /// Fires on-write triggers of `view` if it is configured.
    pub fn written(&self, view: &str) {
        if self.engine.notify_write(view).is_ok() {
            self.engine.run_pending();
        }
    }
}
