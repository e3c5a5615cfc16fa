//! A complete desk on virtual time: simulated monitoring feed and helpdesk,
//! generated topology, the view engine and the operator workflow.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use gridops_core::adapters::AdapterContext;
use gridops_core::clock::Timestamp;
use gridops_core::config::format_seconds;
use gridops_core::{
    AdapterError, AdapterSpec, CacheType, Clock, ConfigSet, Element, Engine, EngineError, ErrorClass, ErrorSelector,
    FallbackAction, ProviderRegistry, RefreshCause, RefreshOutcome, TriggerRule, ViewConfig, ViewDocument,
    VirtualClock,
};
use gridops_workflow::desk::{NODES_PROVIDER, SITES_PROVIDER, TICKETS_PROVIDER};
use gridops_workflow::{Backend, Desk, NewTicket, Outbox, Topology};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fixtures::{failure, generate_topology, SAM_TESTS};
use crate::scenario::{Action, Operation, ScenarioScript, ScriptError};

pub const SAM_VIEW: &str = "sam";
pub const ALARMS_VIEW: &str = "alarms";
pub const ALARMS_BY_SITE_VIEW: &str = "alarms-by-site";
pub const TICKETS_VIEW: &str = "tickets";
pub const SITES_VIEW: &str = "sites";
pub const NODES_VIEW: &str = "nodes";

pub const SAM_SOURCE: &str = "sam";
pub const HELPDESK_SOURCE: &str = "helpdesk";
pub const TOPOLOGY_SOURCE: &str = "topology";
pub const SOURCES: [&str; 3] = [SAM_SOURCE, HELPDESK_SOURCE, TOPOLOGY_SOURCE];

const ALARM_FEED_PROVIDER: &str = "alarm-feed";

/// 2009-12-01T00:00:00Z, the default scenario start.
pub fn default_start() -> Timestamp {
    Timestamp::from_timestamp(1_259_625_600, 0).unwrap()
}

#[derive(Debug, Default)]
pub struct SourceSwitches {
    stopped: Mutex<BTreeSet<String>>,
}

impl SourceSwitches {
    pub fn stop(&self, source: &str) {
        self.stopped.lock().insert(source.to_string());
    }

    pub fn resume(&self, source: &str) {
        self.stopped.lock().remove(source);
    }

    pub fn is_stopped(&self, source: &str) -> bool {
        self.stopped.lock().contains(source)
    }
}

/// The monitoring feed: every failure injected so far.
#[derive(Debug, Default)]
pub struct SamFeed {
    records: Mutex<Vec<Element>>,
}

impl SamFeed {
    pub fn push(&self, record: Element) {
        self.records.lock().push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn document(&self) -> ViewDocument {
        let mut root = Element::new("sam");
        for r in self.records.lock().iter() {
            root.push(r.clone());
        }
        ViewDocument::new(root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    /// Offset from the scenario start.
    pub at: Duration,
    pub kind: String,
    pub detail: String,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}s {} {}", format_seconds(self.at), self.kind, self.detail)
    }
}

pub fn describe_outcome(result: &Result<RefreshOutcome, EngineError>) -> String {
    match result {
        Ok(RefreshOutcome::Exposed { version }) => format!("EXPOSED v{version}"),
        Ok(RefreshOutcome::Deferred) => "DEFERRED".into(),
        Ok(RefreshOutcome::Ignored { error }) => format!("IGNORED {}", error.class.code()),
        Ok(RefreshOutcome::Failed { error }) => format!("FAILED {}", error.class.code()),
        Ok(RefreshOutcome::Retrying { attempt, error }) => {
            format!("RETRYING attempt={attempt} {}", error.class.code())
        }
        Ok(RefreshOutcome::Uncached) => "UNCACHED".into(),
        Err(e) => format!("ERROR {}", e.code()),
    }
}

/// The views the simulated desk runs.
pub fn system_config() -> ConfigSet {
    let provider = |name: &str| AdapterSpec::Provider { name: name.into() };
    let views = vec![
        ViewConfig::new(SAM_VIEW, provider(SAM_VIEW), CacheType::Memory)
            .trigger(TriggerRule::Notification { topic: SAM_SOURCE.into() })
            .trigger(TriggerRule::Periodic { period: Duration::from_secs(600) })
            .fallback(
                ErrorSelector::Class(ErrorClass::SourceUnreachable),
                FallbackAction::Retry {
                    limit: 3,
                    delay: Duration::from_secs(60),
                },
            )
            .fallback(ErrorSelector::Any, FallbackAction::Ignore)
            .ttl(Duration::from_secs(3600)),
        ViewConfig::new(ALARMS_VIEW, provider(ALARM_FEED_PROVIDER), CacheType::Memory)
            .depends_on(SAM_VIEW)
            .trigger(TriggerRule::DependencyUpdated { view: SAM_VIEW.into() })
            .trigger(TriggerRule::Notification { topic: ALARMS_VIEW.into() }),
        ViewConfig::new(
            ALARMS_BY_SITE_VIEW,
            AdapterSpec::SiteSplit {
                source: ALARMS_VIEW.into(),
                key: "site".into(),
                site: None,
            },
            CacheType::Memory,
        )
        .trigger(TriggerRule::DependencyUpdated { view: ALARMS_VIEW.into() }),
        ViewConfig::new(TICKETS_VIEW, provider(TICKETS_PROVIDER), CacheType::Memory)
            .trigger(TriggerRule::OnWrite)
            .trigger(TriggerRule::Periodic { period: Duration::from_secs(300) })
            .fallback(ErrorSelector::Any, FallbackAction::Ignore),
        ViewConfig::new(SITES_VIEW, provider(SITES_PROVIDER), CacheType::Memory)
            .trigger(TriggerRule::Notification { topic: TOPOLOGY_SOURCE.into() })
            .fallback(ErrorSelector::Any, FallbackAction::Ignore),
        ViewConfig::new(NODES_VIEW, provider(NODES_PROVIDER), CacheType::Memory)
            .trigger(TriggerRule::Notification { topic: TOPOLOGY_SOURCE.into() })
            .fallback(ErrorSelector::Any, FallbackAction::Ignore),
    ];
    ConfigSet::new(views, Vec::new())
}

/// Wraps a registered provider so it fails while `source` is stopped.
fn guard(providers: &ProviderRegistry, name: &str, source: &'static str, switches: &Arc<SourceSwitches>) {
    let inner = providers.get(name).expect("provider registered");
    let switches = Arc::clone(switches);
    providers.register(
        name,
        Arc::new(move |ctx: &AdapterContext| {
            if switches.is_stopped(source) {
                return Err(AdapterError::unreachable(format!("{source} source is stopped")));
            }
            inner.generate(ctx)
        }),
    );
}

pub struct SimSystem {
    clock: Arc<VirtualClock>,
    start: Timestamp,
    engine: Engine,
    desk: Arc<Desk>,
    feed: Arc<SamFeed>,
    switches: Arc<SourceSwitches>,
    rng: ChaCha8Rng,
    injected: u64,
}

impl fmt::Debug for SimSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimSystem")
            .field("start", &self.start)
            .field("engine", &self.engine)
            .field("injected", &self.injected)
            .finish()
    }
}

impl SimSystem {
    pub fn new(sites: usize, seed: u64) -> Self {
        Self::with_topology(generate_topology(sites, seed).topology(), seed, default_start())
    }

    pub fn with_topology(topology: Topology, seed: u64, start: Timestamp) -> Self {
        let clock = Arc::new(VirtualClock::new(start));
        let desk = Arc::new(Desk::new(topology, Backend::Dual, Outbox::in_memory(), clock.clone()));
        let feed = Arc::new(SamFeed::default());
        let switches = Arc::new(SourceSwitches::default());
        let providers = ProviderRegistry::new();
        desk.register_providers(&providers);
        desk.register_feed_provider(&providers, ALARM_FEED_PROVIDER, SAM_VIEW);
        let sam = Arc::clone(&feed);
        providers.register(SAM_VIEW, Arc::new(move |_: &AdapterContext| Ok(sam.document())));
        guard(&providers, SAM_VIEW, SAM_SOURCE, &switches);
        guard(&providers, TICKETS_PROVIDER, HELPDESK_SOURCE, &switches);
        guard(&providers, SITES_PROVIDER, TOPOLOGY_SOURCE, &switches);
        guard(&providers, NODES_PROVIDER, TOPOLOGY_SOURCE, &switches);
        let engine = Engine::load_with(system_config(), clock.clone(), providers).expect("system config is valid");
        Self {
            clock,
            start,
            engine,
            desk,
            feed,
            switches,
            rng: ChaCha8Rng::seed_from_u64(seed),
            injected: 0,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn desk(&self) -> &Arc<Desk> {
        &self.desk
    }

    pub fn clock(&self) -> &Arc<VirtualClock> {
        &self.clock
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn feed(&self) -> &SamFeed {
        &self.feed
    }

    pub fn switches(&self) -> &SourceSwitches {
        &self.switches
    }

    /// Adds `count` failures at the current time and notifies the feed.
    pub fn inject_failures(
        &mut self,
        count: usize,
        site: Option<&str>,
        node: Option<&str>,
        test: Option<&str>,
    ) -> Result<Vec<(String, String)>, ScriptError> {
        let topology = self.desk.topology();
        let candidates: Vec<(String, String)> = match (node, site) {
            (Some(n), _) => {
                let ty = topology.node(n).map(|x| x.service_type.clone()).unwrap_or_else(|| "CE".into());
                vec![(n.to_string(), ty)]
            }
            (None, Some(s)) => {
                topology.site(s).map_err(|e| ScriptError(e.to_string()))?;
                topology.nodes_of(s).map(|n| (n.hostname.clone(), n.service_type.clone())).collect()
            }
            (None, None) => topology.nodes().map(|n| (n.hostname.clone(), n.service_type.clone())).collect(),
        };
        if candidates.is_empty() {
            return Err(ScriptError("no node to inject a failure on".into()));
        }
        let now = self.clock.now();
        let mut injected = Vec::with_capacity(count);
        for _ in 0..count {
            let (host, ty) = candidates.choose(&mut self.rng).unwrap().clone();
            let test = match test {
                Some(t) => t.to_string(),
                None => SAM_TESTS.choose(&mut self.rng).unwrap().to_string(),
            };
            // A per-run counter in the milliseconds keeps records distinct.
            self.injected += 1;
            let time = now + chrono::Duration::milliseconds((self.injected % 1000) as i64);
            self.feed.push(failure(&ty, &test, &host, time));
            injected.push((host, test));
        }
        Ok(injected)
    }

    fn log(&self, out: &mut Vec<LogEntry>, kind: &str, detail: impl Into<String>) {
        let at = (self.clock.now() - self.start).to_std().unwrap_or_default();
        out.push(LogEntry {
            at,
            kind: kind.to_string(),
            detail: detail.into(),
        });
    }

    fn log_refreshes(&self, out: &mut Vec<LogEntry>, results: Vec<(String, Result<RefreshOutcome, EngineError>)>) {
        for (view, result) in results {
            self.log(out, "REFRESH", format!("{view} {}", describe_outcome(&result)));
        }
    }

    fn operate(&mut self, operator: &str, operation: &Operation, out: &mut Vec<LogEntry>) {
        let desk = Arc::clone(&self.desk);
        let (detail, ticket_write) = match operation {
            Operation::Alarm { alarm, action } => {
                let what = format!("{} alarm={alarm}", action.kind());
                match desk.transition(*alarm, *action, operator) {
                    Ok(a) => (format!("{what} -> {}", a.status), false),
                    Err(e) => (format!("{what} rejected {}", e.code()), false),
                }
            }
            Operation::CreateTicket { site, subject, node, alarm } => {
                let req = NewTicket {
                    subject: subject.clone(),
                    site: site.clone(),
                    node: node.clone(),
                    author: operator.to_string(),
                    from_alarm: *alarm,
                };
                match desk.create_ticket(&req) {
                    Ok(c) => {
                        let email = match &c.email_error {
                            None => "email=sent".to_string(),
                            Some(code) => format!("email={code}"),
                        };
                        (format!("create-ticket site={site} -> {} {email}", c.ticket.id), true)
                    }
                    Err(e) => (format!("create-ticket site={site} rejected {}", e.code()), false),
                }
            }
            Operation::UpdateTicket { ticket, field, value, store } => {
                match desk.update_ticket(ticket, &[(field.clone(), value.clone())], operator, *store) {
                    Ok(_) => (format!("update-ticket {ticket} {field}={value} store={store}"), true),
                    Err(e) => (format!("update-ticket {ticket} rejected {}", e.code()), false),
                }
            }
            Operation::Escalate { ticket, store } => match desk.escalate(ticket, operator, *store) {
                Ok(t) => (format!("escalate {ticket} -> step {}", t.escalation_step), true),
                Err(e) => (format!("escalate {ticket} rejected {}", e.code()), false),
            },
            Operation::Synchronize => {
                let r = desk.synchronize();
                (
                    format!(
                        "synchronize applied={} superseded={} parked={}",
                        r.applied,
                        r.superseded,
                        r.twin_not_found.len()
                    ),
                    true,
                )
            }
            Operation::AutoClose => {
                let closed = desk.auto_close();
                (format!("auto-close closed={closed:?}"), false)
            }
        };
        self.log(out, "OPERATOR", format!("{operator} {detail}"));
        if ticket_write {
            let _ = self.engine.notify_write(TICKETS_VIEW);
        } else {
            self.engine.notify(ALARMS_VIEW);
        }
        let results = self.engine.run_pending();
        self.log_refreshes(out, results);
    }

    /// Applies every step at its time and returns the ordered log.
    pub fn run(&mut self, script: &ScenarioScript) -> Result<Vec<LogEntry>, ScriptError> {
        script.check_order()?;
        let mut log = Vec::new();
        for step in &script.steps {
            let at = self.start + chrono::Duration::from_std(step.at).map_err(|e| ScriptError(e.to_string()))?;
            if at < self.clock.now() {
                return Err(ScriptError("step is earlier than the system clock".into()));
            }
            self.clock.set(at);
            let due = self.engine.tick();
            self.log_refreshes(&mut log, due);
            match &step.action {
                Action::InjectFailure { count, site, node, test } => {
                    let injected = self.inject_failures(*count, site.as_deref(), node.as_deref(), test.as_deref())?;
                    for (host, test) in injected {
                        self.log(&mut log, "INJECT", format!("{host} {test}"));
                    }
                    self.engine.notify(SAM_SOURCE);
                    let results = self.engine.run_pending();
                    self.log_refreshes(&mut log, results);
                }
                Action::StopSource { source } | Action::ResumeSource { source } => {
                    if !SOURCES.contains(&source.as_str()) {
                        return Err(ScriptError(format!("unknown source `{source}`")));
                    }
                    if matches!(step.action, Action::StopSource { .. }) {
                        self.switches.stop(source);
                        self.log(&mut log, "STOP", source.clone());
                    } else {
                        self.switches.resume(source);
                        self.log(&mut log, "RESUME", source.clone());
                    }
                }
                Action::Refresh { view } => {
                    let result = self.engine.refresh_view(view, RefreshCause::Manual);
                    self.log(&mut log, "REFRESH", format!("{view} {}", describe_outcome(&result)));
                }
                Action::OperatorAction { operator, operation } => self.operate(operator, operation, &mut log),
            }
        }
        Ok(log)
    }
}

/// Builds a fresh system from the script's seed and size, then runs it.
pub fn run_scenario(script: &ScenarioScript) -> Result<(SimSystem, Vec<LogEntry>), ScriptError> {
    let mut system = SimSystem::new(script.sites, script.seed);
    let log = system.run(script)?;
    Ok((system, log))
}
