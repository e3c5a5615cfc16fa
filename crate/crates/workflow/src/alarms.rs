//! Alarm lifecycle: ingest from the monitoring feed, operator transitions,
//! masking and the OFF quiet-period sweep.
//!
//! | from     | ASSIGN   | MASK   | SET_OFF | CLOSE  | UNMASK |
//! |----------|----------|--------|---------|--------|--------|
//! | NEW      | ASSIGNED | MASKED | OFF     | -      | -      |
//! | ASSIGNED | -        | -      | -       | CLOSED | -      |
//! | MASKED   | -        | -      | -       | -      | NEW    |
//! | OFF      | -        | -      | -       | CLOSED | -      |
//! | CLOSED   | -        | -      | -       | -      | -      |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use gridops_core::adapters::UNASSIGNED_SITE;
use gridops_core::clock::{format_timestamp, parse_timestamp, Timestamp};
use gridops_core::{Element, ViewDocument};
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::topology::Topology;

pub type AlarmId = u64;

pub const DEFAULT_QUIET_PERIOD: Duration = Duration::from_secs(24 * 3600);
pub const SYSTEM_OPERATOR: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlarmStatus {
    New,
    Assigned,
    Masked,
    Off,
    Closed,
}

impl AlarmStatus {
    pub const ALL: [AlarmStatus; 5] = [
        AlarmStatus::New,
        AlarmStatus::Assigned,
        AlarmStatus::Masked,
        AlarmStatus::Off,
        AlarmStatus::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlarmStatus::New => "NEW",
            AlarmStatus::Assigned => "ASSIGNED",
            AlarmStatus::Masked => "MASKED",
            AlarmStatus::Off => "OFF",
            AlarmStatus::Closed => "CLOSED",
        }
    }
}

impl fmt::Display for AlarmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlarmStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown alarm status `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Assign,
    Mask,
    SetOff,
    Close,
    Unmask,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Assign,
        ActionKind::Mask,
        ActionKind::SetOff,
        ActionKind::Close,
        ActionKind::Unmask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Assign => "ASSIGN",
            ActionKind::Mask => "MASK",
            ActionKind::SetOff => "SET_OFF",
            ActionKind::Close => "CLOSE",
            ActionKind::Unmask => "UNMASK",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| format!("unknown alarm action `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlarmAction {
    Assign,
    Mask(AlarmId),
    SetOff,
    Close,
    Unmask,
}

impl AlarmAction {
    pub fn kind(self) -> ActionKind {
        match self {
            AlarmAction::Assign => ActionKind::Assign,
            AlarmAction::Mask(_) => ActionKind::Mask,
            AlarmAction::SetOff => ActionKind::SetOff,
            AlarmAction::Close => ActionKind::Close,
            AlarmAction::Unmask => ActionKind::Unmask,
        }
    }
}

/// The transition table; `None` means the pair is illegal.
pub fn transition_target(from: AlarmStatus, action: ActionKind) -> Option<AlarmStatus> {
    use ActionKind as A;
    use AlarmStatus as S;
    match (from, action) {
        (S::New, A::Assign) => Some(S::Assigned),
        (S::New, A::Mask) => Some(S::Masked),
        (S::New, A::SetOff) => Some(S::Off),
        (S::Assigned, A::Close) => Some(S::Closed),
        (S::Masked, A::Unmask) => Some(S::New),
        (S::Off, A::Close) => Some(S::Closed),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlarmError {
    #[error("ALARM_NOT_FOUND: no alarm {0}")]
    AlarmNotFound(AlarmId),
    #[error("ILLEGAL_TRANSITION: {action} is not allowed from {from}")]
    IllegalTransition { from: AlarmStatus, action: ActionKind },
    #[error("MASK_CYCLE: masking {alarm} by {master} would create a cycle")]
    MaskCycle { alarm: AlarmId, master: AlarmId },
    #[error("MASTER_NOT_FOUND: no alarm {0} to mask by")]
    MasterNotFound(AlarmId),
    #[error("MASTER_CLOSED: alarm {0} is closed and cannot mask others")]
    MasterClosed(AlarmId),
    #[error("CROSS_SITE_MASK: alarm {alarm} is at {site}, master {master} at {master_site}")]
    CrossSiteMask {
        alarm: AlarmId,
        site: String,
        master: AlarmId,
        master_site: String,
    },
    #[error("TICKET_NOT_FOUND: no ticket `{0}`")]
    TicketNotFound(String),
    #[error("ALARM_NOT_LINKABLE: alarm {id} is {status}")]
    AlarmNotLinkable { id: AlarmId, status: AlarmStatus },
}

impl AlarmError {
    pub fn code(&self) -> &'static str {
        match self {
            AlarmError::AlarmNotFound(_) => "ALARM_NOT_FOUND",
            AlarmError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            AlarmError::MaskCycle { .. } => "MASK_CYCLE",
            AlarmError::MasterNotFound(_) => "MASTER_NOT_FOUND",
            AlarmError::MasterClosed(_) => "MASTER_CLOSED",
            AlarmError::CrossSiteMask { .. } => "CROSS_SITE_MASK",
            AlarmError::TicketNotFound(_) => "TICKET_NOT_FOUND",
            AlarmError::AlarmNotLinkable { .. } => "ALARM_NOT_LINKABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alarm {
    pub id: AlarmId,
    pub sensor: String,
    pub test: String,
    pub node: String,
    pub site: String,
    pub failure_time: Timestamp,
    pub status: AlarmStatus,
    pub masked_by: Option<AlarmId>,
    pub ticket_id: Option<String>,
    pub set_off_at: Option<Timestamp>,
    /// Latest later failure of the same sensor, test and node.
    pub last_recurrence: Option<Timestamp>,
}

impl Alarm {
    pub fn to_element(&self) -> Element {
        let mut el = Element::new("alarm")
            .with_attr("id", self.id.to_string())
            .with_attr("sensor", &self.sensor)
            .with_attr("test", &self.test)
            .with_attr("node", &self.node)
            .with_attr("site", &self.site)
            .with_attr("failure-time", format_timestamp(self.failure_time))
            .with_attr("status", self.status.as_str());
        if let Some(m) = self.masked_by {
            el.set_attr("masked-by", m.to_string());
        }
        if let Some(t) = &self.ticket_id {
            el.set_attr("ticket", t);
        }
        el
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub alarm: AlarmId,
    pub operator: String,
    pub time: Timestamp,
    pub action: String,
    pub from: AlarmStatus,
    pub to: AlarmStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub new: Vec<AlarmId>,
    pub duplicates: usize,
    pub malformed: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlarmFilter {
    pub site: Option<String>,
    /// Defaults to NEW and ASSIGNED.
    pub statuses: Option<BTreeSet<AlarmStatus>>,
    pub include_masked: bool,
}

impl AlarmFilter {
    pub fn admits(&self, alarm: &Alarm) -> bool {
        if self.site.as_deref().is_some_and(|s| s != alarm.site) {
            return false;
        }
        let listed = match &self.statuses {
            Some(set) => set.contains(&alarm.status),
            None => matches!(alarm.status, AlarmStatus::New | AlarmStatus::Assigned),
        };
        listed || (self.include_masked && alarm.status == AlarmStatus::Masked)
    }
}

type DedupKey = (String, String, String, Timestamp);

#[derive(Debug, Default)]
struct State {
    alarms: BTreeMap<AlarmId, Alarm>,
    seen: HashMap<DedupKey, AlarmId>,
    audit: Vec<AuditRecord>,
    next_id: AlarmId,
}

impl State {
    fn get(&self, id: AlarmId) -> Result<&Alarm, AlarmError> {
        self.alarms.get(&id).ok_or(AlarmError::AlarmNotFound(id))
    }

    fn record(&mut self, alarm: AlarmId, operator: &str, time: Timestamp, action: &str, from: AlarmStatus, to: AlarmStatus) {
        let seq = self.audit.len() as u64 + 1;
        self.audit.push(AuditRecord {
            seq,
            alarm,
            operator: operator.to_string(),
            time,
            action: action.to_string(),
            from,
            to,
        });
    }

    fn set_status(&mut self, id: AlarmId, to: AlarmStatus, operator: &str, time: Timestamp, action: &str) {
        let alarm = self.alarms.get_mut(&id).expect("caller checked");
        let from = alarm.status;
        alarm.status = to;
        if to != AlarmStatus::Masked {
            alarm.masked_by = None;
        }
        if to == AlarmStatus::Off {
            alarm.set_off_at = Some(time);
        }
        self.record(id, operator, time, action, from, to);
        if to == AlarmStatus::Closed {
            let dependents: Vec<AlarmId> = self
                .alarms
                .values()
                .filter(|a| a.masked_by == Some(id))
                .map(|a| a.id)
                .collect();
            for dep in dependents {
                self.set_status(dep, AlarmStatus::New, operator, time, "UNMASK");
            }
        }
    }

    fn check_mask(&self, id: AlarmId, master: AlarmId) -> Result<(), AlarmError> {
        let alarm = self.get(id)?;
        let target = self.alarms.get(&master).ok_or(AlarmError::MasterNotFound(master))?;
        if master == id {
            return Err(AlarmError::MaskCycle { alarm: id, master });
        }
        if target.status == AlarmStatus::Closed {
            return Err(AlarmError::MasterClosed(master));
        }
        if target.site != alarm.site {
            return Err(AlarmError::CrossSiteMask {
                alarm: id,
                site: alarm.site.clone(),
                master,
                master_site: target.site.clone(),
            });
        }
        let mut cursor = target.masked_by;
        while let Some(next) = cursor {
            if next == id {
                return Err(AlarmError::MaskCycle { alarm: id, master });
            }
            cursor = self.alarms.get(&next).and_then(|a| a.masked_by);
        }
        Ok(())
    }
}

fn field(record: &Element, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| {
        record
            .attr(n)
            .map(str::to_string)
            .or_else(|| record.first_named(n).map(|c| c.text()))
            .filter(|v| !v.trim().is_empty())
    })
}

/// All alarms, thread-safe. Transitions are serialized store-wide.
#[derive(Debug)]
pub struct AlarmStore {
    state: Mutex<State>,
    quiet_period: Duration,
}

impl Default for AlarmStore {
    fn default() -> Self {
        Self::new(DEFAULT_QUIET_PERIOD)
    }
}

impl AlarmStore {
    pub fn new(quiet_period: Duration) -> Self {
        Self {
            state: Mutex::new(State {
                next_id: 1,
                ..Default::default()
            }),
            quiet_period,
        }
    }

    pub fn quiet_period(&self) -> Duration {
        self.quiet_period
    }

    /// Creates one NEW alarm per unseen record. Records are any children of
    /// the root carrying `sensor`, `test`, `node` and `failure-time` (or
    /// `time`), as attributes or child elements.
    pub fn ingest(&self, feed: &ViewDocument, topology: &Topology) -> IngestReport {
        let mut report = IngestReport::default();
        let mut st = self.state.lock();
        for (i, record) in feed.root.elements().enumerate() {
            let (Some(sensor), Some(test), Some(node), Some(time)) = (
                field(record, &["sensor"]),
                field(record, &["test"]),
                field(record, &["node"]),
                field(record, &["failure-time", "time"]),
            ) else {
                report
                    .malformed
                    .push(format!("record {}: missing sensor, test, node or time", i + 1));
                continue;
            };
            let Some(failure_time) = parse_timestamp(&time) else {
                report
                    .malformed
                    .push(format!("record {}: bad timestamp `{time}`", i + 1));
                continue;
            };
            let key = (sensor.clone(), test.clone(), node.clone(), failure_time);
            if st.seen.contains_key(&key) {
                report.duplicates += 1;
                continue;
            }
            for alarm in st.alarms.values_mut() {
                if alarm.status == AlarmStatus::Off
                    && alarm.sensor == sensor
                    && alarm.test == test
                    && alarm.node == node
                    && failure_time > alarm.failure_time
                    && alarm.last_recurrence.is_none_or(|r| r < failure_time)
                {
                    alarm.last_recurrence = Some(failure_time);
                }
            }
            let site = topology
                .site_of_node(&node)
                .unwrap_or(UNASSIGNED_SITE)
                .to_string();
            let id = st.next_id;
            st.next_id += 1;
            st.alarms.insert(
                id,
                Alarm {
                    id,
                    sensor,
                    test,
                    node,
                    site,
                    failure_time,
                    status: AlarmStatus::New,
                    masked_by: None,
                    ticket_id: None,
                    set_off_at: None,
                    last_recurrence: None,
                },
            );
            st.seen.insert(key, id);
            report.new.push(id);
        }
        report
    }

    pub fn get(&self, id: AlarmId) -> Result<Alarm, AlarmError> {
        self.state.lock().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.state.lock().alarms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<Alarm> {
        self.state.lock().alarms.values().cloned().collect()
    }

    pub fn transition(&self, id: AlarmId, action: AlarmAction, operator: &str, now: Timestamp) -> Result<Alarm, AlarmError> {
        let mut st = self.state.lock();
        let from = st.get(id)?.status;
        let to = transition_target(from, action.kind()).ok_or(AlarmError::IllegalTransition {
            from,
            action: action.kind(),
        })?;
        if let AlarmAction::Mask(master) = action {
            st.check_mask(id, master)?;
            st.alarms.get_mut(&id).unwrap().masked_by = Some(master);
        }
        st.set_status(id, to, operator, now, action.kind().as_str());
        Ok(st.alarms[&id].clone())
    }

    /// Links a ticket; a NEW alarm becomes ASSIGNED.
    pub fn link_ticket(
        &self,
        id: AlarmId,
        ticket_id: &str,
        operator: &str,
        now: Timestamp,
        ticket_exists: impl FnOnce(&str) -> bool,
    ) -> Result<Alarm, AlarmError> {
        let mut st = self.state.lock();
        let status = st.get(id)?.status;
        if !matches!(status, AlarmStatus::New | AlarmStatus::Assigned) {
            return Err(AlarmError::AlarmNotLinkable { id, status });
        }
        if !ticket_exists(ticket_id) {
            return Err(AlarmError::TicketNotFound(ticket_id.to_string()));
        }
        st.alarms.get_mut(&id).unwrap().ticket_id = Some(ticket_id.to_string());
        if status == AlarmStatus::New {
            st.set_status(id, AlarmStatus::Assigned, operator, now, "LINK_TICKET");
        } else {
            st.record(id, operator, now, "LINK_TICKET", status, status);
        }
        Ok(st.alarms[&id].clone())
    }

    /// Closes OFF alarms quiet for the whole quiet period, counted from the
    /// later of set-off time and last recurrence.
    pub fn auto_close(&self, now: Timestamp) -> Vec<AlarmId> {
        let quiet = chrono::Duration::from_std(self.quiet_period).unwrap_or(chrono::Duration::MAX);
        let mut st = self.state.lock();
        let due: Vec<AlarmId> = st
            .alarms
            .values()
            .filter(|a| a.status == AlarmStatus::Off)
            .filter(|a| {
                let since = a.set_off_at.max(a.last_recurrence).unwrap_or(a.failure_time);
                now - since >= quiet
            })
            .map(|a| a.id)
            .collect();
        for id in &due {
            st.set_status(*id, AlarmStatus::Closed, SYSTEM_OPERATOR, now, "AUTO_CLOSE");
        }
        due
    }

    pub fn list(&self, filter: &AlarmFilter) -> Vec<Alarm> {
        let st = self.state.lock();
        let mut out: Vec<Alarm> = st.alarms.values().filter(|a| filter.admits(a)).cloned().collect();
        out.sort_by(|a, b| b.failure_time.cmp(&a.failure_time).then(a.id.cmp(&b.id)));
        out
    }

    pub fn list_alarms(&self, filter: &AlarmFilter) -> ViewDocument {
        let mut root = Element::new("alarms");
        for alarm in self.list(filter) {
            root.push(alarm.to_element());
        }
        ViewDocument::new(root)
    }

    /// Every alarm in id order, the `alarms` data view.
    pub fn to_view(&self) -> ViewDocument {
        let st = self.state.lock();
        let mut root = Element::new("alarms");
        for alarm in st.alarms.values() {
            root.push(alarm.to_element());
        }
        ViewDocument::new(root)
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.state.lock().audit.clone()
    }

    pub fn audit_for(&self, id: AlarmId) -> Vec<AuditRecord> {
        self.state
            .lock()
            .audit
            .iter()
            .filter(|r| r.alarm == id)
            .cloned()
            .collect()
    }

    /// Checks the masking invariants, returning the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let st = self.state.lock();
        for a in st.alarms.values() {
            match (a.status, a.masked_by) {
                (AlarmStatus::Masked, None) => return Err(format!("{} MASKED without master", a.id)),
                (s, Some(_)) if s != AlarmStatus::Masked => {
                    return Err(format!("{} is {s} but has a master", a.id))
                }
                _ => {}
            }
            if let Some(m) = a.masked_by {
                let master = st.alarms.get(&m).ok_or(format!("{}: master {m} missing", a.id))?;
                if master.status == AlarmStatus::Closed {
                    return Err(format!("{}: master {m} is closed", a.id));
                }
                if master.site != a.site {
                    return Err(format!("{}: master {m} on another site", a.id));
                }
            }
            if a.ticket_id.is_some() && !matches!(a.status, AlarmStatus::Assigned | AlarmStatus::Closed) {
                return Err(format!("{} has a ticket but is {}", a.id, a.status));
            }
            let mut seen = BTreeSet::from([a.id]);
            let mut cursor = a.masked_by;
            while let Some(next) = cursor {
                if !seen.insert(next) {
                    return Err(format!("mask cycle through {}", a.id));
                }
                cursor = st.alarms.get(&next).and_then(|x| x.masked_by);
            }
        }
        Ok(())
    }
}
