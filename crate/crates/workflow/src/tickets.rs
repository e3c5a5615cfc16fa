//! Operations tickets kept in two stores (OPS and CENTRAL) with change
//! propagation between twins, or in a single store for the direct-insert
//! backend.
//!
//! Each mutable field carries a stamp `(time, origin, seq)`; a propagated
//! change wins on the twin only if its stamp is greater. Escalation merges by
//! maximum so it never moves backwards on either side.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use gridops_core::clock::{format_timestamp, Timestamp};
use gridops_core::{Element, ViewDocument};
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub const MAX_STEP: u8 = 3;

pub fn step_label(step: u8) -> &'static str {
    match step {
        0 => "site notified",
        1 => "reminder",
        2 => "region responsible",
        _ => "suspension proposal",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TicketStatus {
    Open,
    InProgress,
    Solved,
    Closed,
}

impl TicketStatus {
    pub const ALL: [TicketStatus; 4] = [
        TicketStatus::Open,
        TicketStatus::InProgress,
        TicketStatus::Solved,
        TicketStatus::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TicketStatus::Open => "OPEN",
            TicketStatus::InProgress => "IN_PROGRESS",
            TicketStatus::Solved => "SOLVED",
            TicketStatus::Closed => "CLOSED",
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, TicketStatus::Open | TicketStatus::InProgress)
    }
}

impl fmt::Display for TicketStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TicketStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| format!("unknown ticket status `{s}`"))
    }
}

/// OPS orders before CENTRAL, which makes CENTRAL win exact time ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StoreId {
    Ops,
    Central,
}

impl StoreId {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreId::Ops => "OPS",
            StoreId::Central => "CENTRAL",
        }
    }

    pub fn twin(self) -> StoreId {
        match self {
            StoreId::Ops => StoreId::Central,
            StoreId::Central => StoreId::Ops,
        }
    }
}

impl fmt::Display for StoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoreId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OPS" => Ok(StoreId::Ops),
            "CENTRAL" => Ok(StoreId::Central),
            _ => Err(format!("unknown store `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// OPS store mirrored into CENTRAL.
    Dual,
    /// One store, written directly.
    DirectInsert,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dual" => Ok(Backend::Dual),
            "direct-insert" | "direct_insert" => Ok(Backend::DirectInsert),
            _ => Err(format!("unknown ticket backend `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Subject,
    Status,
    ImpactedNode,
    Comment,
    EscalationStep,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Subject => "subject",
            Field::Status => "status",
            Field::ImpactedNode => "impacted_node",
            Field::Comment => "comment",
            Field::EscalationStep => "escalation_step",
        }
    }

    /// Resolves a field name accepted by `update`.
    pub fn parse_mutable(name: &str) -> Result<Field, TicketError> {
        match name.replace('-', "_").to_ascii_lowercase().as_str() {
            "subject" => Ok(Field::Subject),
            "status" => Ok(Field::Status),
            "impacted_node" | "node" => Ok(Field::ImpactedNode),
            "comment" => Ok(Field::Comment),
            "id" | "implied_site" | "site" | "escalation_step" | "step" | "origin_store" | "updated_at"
            | "history" => Err(TicketError::ImmutableField(name.to_string())),
            _ => Err(TicketError::InvalidChange(format!("unknown field `{name}`"))),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TicketError {
    #[error("TICKET_NOT_FOUND: no ticket `{id}` in {store}")]
    TicketNotFound { id: String, store: StoreId },
    #[error("IMMUTABLE_FIELD: `{0}` cannot be changed here")]
    ImmutableField(String),
    #[error("INVALID_CHANGE: {0}")]
    InvalidChange(String),
    #[error("MAX_ESCALATION_REACHED: ticket `{0}` is already at the last step")]
    MaxEscalationReached(String),
    #[error("TICKET_CLOSED: ticket `{0}` is closed")]
    TicketClosed(String),
    #[error("TEMPLATE_ERROR: {0}")]
    Template(String),
}

impl TicketError {
    pub fn code(&self) -> &'static str {
        match self {
            TicketError::TicketNotFound { .. } => "TICKET_NOT_FOUND",
            TicketError::ImmutableField(_) => "IMMUTABLE_FIELD",
            TicketError::InvalidChange(_) => "INVALID_CHANGE",
            TicketError::MaxEscalationReached(_) => "MAX_ESCALATION_REACHED",
            TicketError::TicketClosed(_) => "TICKET_CLOSED",
            TicketError::Template(_) => "TEMPLATE_ERROR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Stamp {
    pub time: Timestamp,
    pub origin: StoreId,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChangeEvent {
    pub seq: u64,
    pub field: String,
    pub old: String,
    pub new: String,
    pub author: String,
    pub time: Timestamp,
    pub origin_store: StoreId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ticket {
    pub id: String,
    pub subject: String,
    pub implied_site: String,
    pub impacted_node: Option<String>,
    pub status: TicketStatus,
    pub escalation_step: u8,
    pub comment: Option<String>,
    pub history: Vec<ChangeEvent>,
    pub updated_at: Timestamp,
    pub origin_store: StoreId,
    #[serde(skip)]
    stamps: BTreeMap<Field, Stamp>,
}

/// The replicated field values of a ticket, without history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TicketFields {
    pub id: String,
    pub subject: String,
    pub implied_site: String,
    pub impacted_node: Option<String>,
    pub status: TicketStatus,
    pub escalation_step: u8,
    pub comment: Option<String>,
}

impl Ticket {
    pub fn value(&self, field: Field) -> String {
        match field {
            Field::Subject => self.subject.clone(),
            Field::Status => self.status.as_str().to_string(),
            Field::ImpactedNode => self.impacted_node.clone().unwrap_or_default(),
            Field::Comment => self.comment.clone().unwrap_or_default(),
            Field::EscalationStep => self.escalation_step.to_string(),
        }
    }

    fn set(&mut self, field: Field, value: &str) -> Result<(), TicketError> {
        let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match field {
            Field::Subject => {
                if value.trim().is_empty() {
                    return Err(TicketError::InvalidChange("subject must not be empty".into()));
                }
                self.subject = value.to_string();
            }
            Field::Status => self.status = value.parse().map_err(TicketError::InvalidChange)?,
            Field::ImpactedNode => self.impacted_node = opt(value),
            Field::Comment => self.comment = opt(value),
            Field::EscalationStep => {
                self.escalation_step = value
                    .parse()
                    .map_err(|_| TicketError::InvalidChange(format!("bad step `{value}`")))?
            }
        }
        Ok(())
    }

    pub fn stamp(&self, field: Field) -> Option<Stamp> {
        self.stamps.get(&field).copied()
    }

    pub fn fields(&self) -> TicketFields {
        TicketFields {
            id: self.id.clone(),
            subject: self.subject.clone(),
            implied_site: self.implied_site.clone(),
            impacted_node: self.impacted_node.clone(),
            status: self.status,
            escalation_step: self.escalation_step,
            comment: self.comment.clone(),
        }
    }

    fn append(&mut self, field: &str, old: String, new: String, author: &str, time: Timestamp, origin: StoreId) -> u64 {
        let seq = self.history.len() as u64 + 1;
        self.history.push(ChangeEvent {
            seq,
            field: field.to_string(),
            old,
            new,
            author: author.to_string(),
            time,
            origin_store: origin,
        });
        self.updated_at = time;
        seq
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("ticket")
            .with_attr("id", &self.id)
            .with_attr("subject", &self.subject)
            .with_attr("site", &self.implied_site)
            .with_attr("status", self.status.as_str())
            .with_attr("step", self.escalation_step.to_string())
            .with_attr("updated-at", format_timestamp(self.updated_at))
            .with_attr("origin", self.origin_store.as_str());
        if let Some(node) = &self.impacted_node {
            el.set_attr("node", node);
        }
        el
    }
}

/// One change travelling to the twin store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyncRecord {
    pub ticket: String,
    pub origin: StoreId,
    pub origin_seq: u64,
    pub field: Field,
    pub value: String,
    pub author: String,
    pub stamp: Stamp,
}

impl SyncRecord {
    fn key(&self) -> (String, StoreId, u64) {
        (self.ticket.clone(), self.origin, self.origin_seq)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    pub applied: usize,
    /// Lost to a later change already on the twin.
    pub superseded: usize,
    pub duplicates: usize,
    /// Ids whose twin did not exist; the record is kept for the next drain.
    pub twin_not_found: Vec<String>,
}

impl SyncReport {
    fn absorb(&mut self, other: SyncReport) {
        self.applied += other.applied;
        self.superseded += other.superseded;
        self.duplicates += other.duplicates;
        self.twin_not_found.extend(other.twin_not_found);
    }
}

#[derive(Debug, Default)]
struct StoreState {
    tickets: BTreeMap<String, Ticket>,
    applied: HashSet<(String, StoreId, u64)>,
}

#[derive(Debug)]
pub struct TicketStore {
    id: StoreId,
    state: Mutex<StoreState>,
}

enum Applied {
    Applied,
    Superseded,
    Duplicate,
    Missing,
}

impl TicketStore {
    fn new(id: StoreId) -> Self {
        Self {
            id,
            state: Mutex::new(StoreState::default()),
        }
    }

    pub fn id(&self) -> StoreId {
        self.id
    }

    pub fn get(&self, ticket: &str) -> Result<Ticket, TicketError> {
        self.state
            .lock()
            .tickets
            .get(ticket)
            .cloned()
            .ok_or_else(|| self.not_found(ticket))
    }

    pub fn contains(&self, ticket: &str) -> bool {
        self.state.lock().tickets.contains_key(ticket)
    }

    pub fn tickets(&self) -> Vec<Ticket> {
        self.state.lock().tickets.values().cloned().collect()
    }

    fn not_found(&self, ticket: &str) -> TicketError {
        TicketError::TicketNotFound {
            id: ticket.to_string(),
            store: self.id,
        }
    }

    fn insert(&self, ticket: Ticket) {
        self.state.lock().tickets.insert(ticket.id.clone(), ticket);
    }

    /// Applies local changes atomically and returns the records for the twin.
    /// `plan` sees the current ticket under the store lock and returns the
    /// changes to make.
    fn write(
        &self,
        ticket: &str,
        author: &str,
        now: Timestamp,
        plan: impl FnOnce(&Ticket) -> Result<Vec<(Field, String)>, TicketError>,
    ) -> Result<(Ticket, Vec<SyncRecord>), TicketError> {
        let mut st = self.state.lock();
        let t = st.tickets.get_mut(ticket).ok_or_else(|| self.not_found(ticket))?;
        let changes = plan(t)?;
        // Validate everything before touching the ticket.
        let mut probe = t.clone();
        for (field, value) in &changes {
            probe.set(*field, value)?;
        }
        let mut records = Vec::new();
        for (field, value) in &changes {
            let old = t.value(*field);
            if old == *value {
                continue;
            }
            let seq = t.history.len() as u64 + 1;
            let mut stamp = Stamp {
                time: now,
                origin: self.id,
                seq,
            };
            // A local write must supersede whatever this store already holds.
            if let Some(cur) = t.stamps.get(field).filter(|cur| stamp <= **cur) {
                stamp.time = cur.time + chrono::Duration::milliseconds(1);
            }
            t.set(*field, value)?;
            if *field != Field::EscalationStep {
                t.stamps.insert(*field, stamp);
            }
            t.append(field.as_str(), old, value.clone(), author, stamp.time, self.id);
            records.push(SyncRecord {
                ticket: ticket.to_string(),
                origin: self.id,
                origin_seq: seq,
                field: *field,
                value: value.clone(),
                author: author.to_string(),
                stamp,
            });
        }
        Ok((t.clone(), records))
    }

    fn apply(&self, record: &SyncRecord) -> Applied {
        let mut st = self.state.lock();
        if st.applied.contains(&record.key()) {
            return Applied::Duplicate;
        }
        let Some(t) = st.tickets.get_mut(&record.ticket) else {
            return Applied::Missing;
        };
        let old = t.value(record.field);
        let wins = match record.field {
            Field::EscalationStep => {
                let incoming: u8 = record.value.parse().unwrap_or(0);
                incoming > t.escalation_step
            }
            f => t.stamps.get(&f).is_none_or(|cur| record.stamp > *cur),
        };
        let outcome = if wins && t.set(record.field, &record.value).is_ok() {
            if record.field != Field::EscalationStep {
                t.stamps.insert(record.field, record.stamp);
            }
            t.append(record.field.as_str(), old, record.value.clone(), &record.author, record.stamp.time, record.origin);
            Applied::Applied
        } else {
            Applied::Superseded
        };
        st.applied.insert(record.key());
        outcome
    }
}

/// Both stores and the queues between them.
#[derive(Debug)]
pub struct TicketBridge {
    backend: Backend,
    ops: TicketStore,
    central: TicketStore,
    to_central: Mutex<VecDeque<SyncRecord>>,
    to_ops: Mutex<VecDeque<SyncRecord>>,
    next_id: AtomicU64,
}

impl Default for TicketBridge {
    fn default() -> Self {
        Self::new(Backend::Dual)
    }
}

impl TicketBridge {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            ops: TicketStore::new(StoreId::Ops),
            central: TicketStore::new(StoreId::Central),
            to_central: Mutex::new(VecDeque::new()),
            to_ops: Mutex::new(VecDeque::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn store(&self, id: StoreId) -> &TicketStore {
        match id {
            StoreId::Ops => &self.ops,
            StoreId::Central => &self.central,
        }
    }

    fn queue(&self, to: StoreId) -> &Mutex<VecDeque<SyncRecord>> {
        match to {
            StoreId::Ops => &self.to_ops,
            StoreId::Central => &self.to_central,
        }
    }

    /// Creates an OPEN ticket at step 0 in OPS and, for the dual backend, its
    /// CENTRAL twin with the same id and history.
    pub fn create(&self, subject: &str, site: &str, node: Option<&str>, author: &str, now: Timestamp) -> Result<Ticket, TicketError> {
        if subject.trim().is_empty() {
            return Err(TicketError::InvalidChange("subject must not be empty".into()));
        }
        let id = format!("T{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut ticket = Ticket {
            id: id.clone(),
            subject: subject.to_string(),
            implied_site: site.to_string(),
            impacted_node: node.filter(|n| !n.is_empty()).map(str::to_string),
            status: TicketStatus::Open,
            escalation_step: 0,
            comment: None,
            history: Vec::new(),
            updated_at: now,
            origin_store: StoreId::Ops,
            stamps: BTreeMap::new(),
        };
        ticket.append("created", String::new(), TicketStatus::Open.as_str().into(), author, now, StoreId::Ops);
        if self.backend == Backend::Dual {
            self.central.insert(ticket.clone());
        }
        self.ops.insert(ticket.clone());
        Ok(ticket)
    }

    pub fn get(&self, id: &str, store: StoreId) -> Result<Ticket, TicketError> {
        self.store(store).get(id)
    }

    /// Whether the ticket exists in the store operators work from.
    pub fn exists(&self, id: &str) -> bool {
        self.ops.contains(id)
    }

    pub fn list(&self, store: StoreId, site: Option<&str>, status: Option<TicketStatus>) -> Vec<Ticket> {
        self.store(store)
            .tickets()
            .into_iter()
            .filter(|t| site.is_none_or(|s| s == t.implied_site))
            .filter(|t| status.is_none_or(|s| s == t.status))
            .collect()
    }

    fn enqueue(&self, from: StoreId, records: Vec<SyncRecord>) {
        if self.backend == Backend::Dual && !records.is_empty() {
            self.queue(from.twin()).lock().extend(records);
        }
    }

    pub fn update(
        &self,
        id: &str,
        changes: &[(String, String)],
        author: &str,
        store: StoreId,
        now: Timestamp,
    ) -> Result<Ticket, TicketError> {
        let parsed = changes
            .iter()
            .map(|(name, value)| Ok((Field::parse_mutable(name)?, value.clone())))
            .collect::<Result<Vec<_>, TicketError>>()?;
        let (ticket, records) = self.store(store).write(id, author, now, |_| Ok(parsed))?;
        self.enqueue(store, records);
        Ok(ticket)
    }

    pub fn escalate(&self, id: &str, author: &str, store: StoreId, now: Timestamp) -> Result<Ticket, TicketError> {
        let (ticket, records) = self.store(store).write(id, author, now, |current| {
            if current.status == TicketStatus::Closed {
                return Err(TicketError::TicketClosed(id.to_string()));
            }
            if current.escalation_step >= MAX_STEP {
                return Err(TicketError::MaxEscalationReached(id.to_string()));
            }
            Ok(vec![(Field::EscalationStep, (current.escalation_step + 1).to_string())])
        })?;
        self.enqueue(store, records);
        Ok(ticket)
    }

    /// Records waiting to be applied to `target`, oldest first.
    pub fn queued(&self, target: StoreId) -> Vec<SyncRecord> {
        self.queue(target).lock().iter().cloned().collect()
    }

    pub fn pending_sync(&self) -> usize {
        self.to_ops.lock().len() + self.to_central.lock().len()
    }

    /// Applies records to one store. Replaying an applied record is a no-op.
    pub fn apply_records(&self, target: StoreId, records: &[SyncRecord]) -> SyncReport {
        let store = self.store(target);
        let mut report = SyncReport::default();
        for record in records {
            match store.apply(record) {
                Applied::Applied => report.applied += 1,
                Applied::Superseded => report.superseded += 1,
                Applied::Duplicate => report.duplicates += 1,
                Applied::Missing => report.twin_not_found.push(record.ticket.clone()),
            }
        }
        report
    }

    /// Drains both queues. Records whose twin is missing stay queued.
    pub fn synchronize(&self) -> SyncReport {
        let mut report = SyncReport::default();
        for target in [StoreId::Central, StoreId::Ops] {
            let batch: Vec<SyncRecord> = self.queue(target).lock().drain(..).collect();
            let part = self.apply_records(target, &batch);
            if !part.twin_not_found.is_empty() {
                let mut q = self.queue(target).lock();
                for record in batch.into_iter().filter(|r| part.twin_not_found.contains(&r.ticket)) {
                    q.push_back(record);
                }
            }
            report.absorb(part);
        }
        report
    }

    /// Inserts a copy of a ticket into one store only; the caller is
    /// responsible for its twin. Used to model a lagging mirror.
    pub fn insert_unmirrored(&self, store: StoreId, ticket: Ticket) {
        self.store(store).insert(ticket);
    }

    /// The `tickets` data view, from the OPS store.
    pub fn to_view(&self) -> ViewDocument {
        let mut root = Element::new("tickets");
        for t in self.ops.tickets() {
            root.push(t.to_element());
        }
        ViewDocument::new(root)
    }
}

pub const SUBJECT_TEMPLATE: &str = "[{site}] {subject} (ticket {id})";

pub const BODY_TEMPLATE: &str = "Dear {site} administrators,

the operator on duty opened ticket {id} for your site.

Subject: {subject}
Impacted node: {node}
Escalation step: {step} ({step_label})
Opened by: {author} at {time}

Please acknowledge the ticket and update it once the problem is solved.
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NotificationEmail {
    pub to: String,
    pub subject: String,
    pub body: String,
}

impl NotificationEmail {
    pub fn to_message(&self) -> String {
        format!("To: {}\nSubject: {}\n\n{}", self.to, self.subject, self.body)
    }
}

/// Expands `{name}` placeholders in one pass; substituted text is not
/// rescanned. An unknown or unterminated placeholder is an error.
pub fn render_template(template: &str, values: &BTreeMap<&str, String>) -> Result<String, TicketError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| TicketError::Template("unterminated placeholder".into()))?;
        let name = &after[..close];
        let value = values
            .get(name)
            .ok_or_else(|| TicketError::Template(format!("no value for `{{{name}}}`")))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_notification(ticket: &Ticket, contact: &str, author: &str) -> Result<NotificationEmail, TicketError> {
    let values = BTreeMap::from([
        ("site", ticket.implied_site.clone()),
        ("subject", ticket.subject.clone()),
        ("id", ticket.id.clone()),
        ("node", ticket.impacted_node.clone().unwrap_or_else(|| "(none)".into())),
        ("step", ticket.escalation_step.to_string()),
        ("step_label", step_label(ticket.escalation_step).to_string()),
        ("author", author.to_string()),
        ("time", format_timestamp(ticket.updated_at)),
    ]);
    Ok(NotificationEmail {
        to: contact.to_string(),
        subject: render_template(SUBJECT_TEMPLATE, &values)?,
        body: render_template(BODY_TEMPLATE, &values)?,
    })
}

/// Rendered messages, kept in memory and optionally written one file each.
#[derive(Debug, Default)]
pub struct Outbox {
    dir: Option<PathBuf>,
    messages: Mutex<Vec<NotificationEmail>>,
}

impl Outbox {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            messages: Mutex::new(Vec::new()),
        }
    }

    pub fn dir(&self) -> Option<&std::path::Path> {
        self.dir.as_deref()
    }

    pub fn deliver(&self, ticket_id: &str, email: &NotificationEmail) -> io::Result<Option<PathBuf>> {
        let mut messages = self.messages.lock();
        let path = match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(format!("{:06}-{ticket_id}.eml", messages.len() + 1));
                fs::write(&path, email.to_message())?;
                Some(path)
            }
            None => None,
        };
        messages.push(email.clone());
        Ok(path)
    }

    pub fn messages(&self) -> Vec<NotificationEmail> {
        self.messages.lock().clone()
    }
}
