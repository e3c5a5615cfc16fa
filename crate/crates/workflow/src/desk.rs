//! The operator desk: topology, alarms, tickets and the outbox behind one
//! handle, plus the in-process providers that publish them as data views.

use std::sync::Arc;

use gridops_core::adapters::AdapterContext;
use gridops_core::{AdapterError, ProviderRegistry, SharedClock, ViewDocument};
use serde::Serialize;
use thiserror::Error;

use crate::alarms::{Alarm, AlarmAction, AlarmError, AlarmFilter, AlarmId, AlarmStore, IngestReport};
use crate::tickets::{
    render_notification, Backend, NotificationEmail, Outbox, StoreId, SyncReport, Ticket, TicketBridge, TicketError,
};
use crate::topology::{site_summary, Registry, Section, Topology, TopologyError};

pub const ALARMS_PROVIDER: &str = "alarms";
pub const TICKETS_PROVIDER: &str = "tickets";
pub const SITES_PROVIDER: &str = "sites";
pub const NODES_PROVIDER: &str = "nodes";

#[derive(Debug, Error)]
pub enum DeskError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Alarm(#[from] AlarmError),
    #[error(transparent)]
    Ticket(#[from] TicketError),
}

impl DeskError {
    pub fn code(&self) -> &'static str {
        match self {
            DeskError::Topology(e) => e.code(),
            DeskError::Alarm(e) => e.code(),
            DeskError::Ticket(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewTicket {
    pub subject: String,
    pub site: String,
    pub node: Option<String>,
    pub author: String,
    pub from_alarm: Option<AlarmId>,
}

/// Result of a ticket creation. The ticket exists even when the e-mail step
/// failed; `email_error` then carries the error code.
#[derive(Debug, Clone, Serialize)]
pub struct CreatedTicket {
    pub ticket: Ticket,
    pub email: Option<NotificationEmail>,
    pub email_error: Option<String>,
    pub alarm: Option<Alarm>,
}

#[derive(Debug)]
pub struct Desk {
    topology: Registry,
    alarms: AlarmStore,
    tickets: TicketBridge,
    outbox: Outbox,
    clock: SharedClock,
}

impl Desk {
    pub fn new(topology: Topology, backend: Backend, outbox: Outbox, clock: SharedClock) -> Self {
        Self::with_alarms(topology, AlarmStore::default(), backend, outbox, clock)
    }

    pub fn with_alarms(topology: Topology, alarms: AlarmStore, backend: Backend, outbox: Outbox, clock: SharedClock) -> Self {
        Self {
            topology: Registry::new(topology),
            alarms,
            tickets: TicketBridge::new(backend),
            outbox,
            clock,
        }
    }

    pub fn topology(&self) -> Arc<Topology> {
        self.topology.snapshot()
    }

    pub fn replace_topology(&self, topology: Topology) {
        self.topology.replace(topology);
    }

    pub fn alarms(&self) -> &AlarmStore {
        &self.alarms
    }

    pub fn tickets(&self) -> &TicketBridge {
        &self.tickets
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn ingest(&self, feed: &ViewDocument) -> IngestReport {
        self.alarms.ingest(feed, &self.topology.snapshot())
    }

    pub fn transition(&self, id: AlarmId, action: AlarmAction, operator: &str) -> Result<Alarm, DeskError> {
        Ok(self.alarms.transition(id, action, operator, self.clock.now())?)
    }

    pub fn link(&self, alarm: AlarmId, ticket: &str, operator: &str) -> Result<Alarm, DeskError> {
        Ok(self
            .alarms
            .link_ticket(alarm, ticket, operator, self.clock.now(), |t| self.tickets.exists(t))?)
    }

    pub fn list_alarms(&self, filter: &AlarmFilter) -> Vec<Alarm> {
        self.alarms.list(filter)
    }

    /// Site check, then alarm check, then the ticket; nothing is stored when
    /// either check fails.
    pub fn create_ticket(&self, req: &NewTicket) -> Result<CreatedTicket, DeskError> {
        let topology = self.topology.snapshot();
        topology.site(&req.site)?;
        if let Some(id) = req.from_alarm {
            let alarm = self.alarms.get(id)?;
            if !matches!(alarm.status, crate::alarms::AlarmStatus::New | crate::alarms::AlarmStatus::Assigned) {
                return Err(AlarmError::AlarmNotLinkable {
                    id,
                    status: alarm.status,
                }
                .into());
            }
        }
        let now = self.clock.now();
        let ticket = self
            .tickets
            .create(&req.subject, &req.site, req.node.as_deref(), &req.author, now)?;
        let (email, email_error) = match topology.contact_for(&req.site) {
            Ok(contact) => match render_notification(&ticket, contact, &req.author) {
                Ok(email) => match self.outbox.deliver(&ticket.id, &email) {
                    Ok(_) => (Some(email), None),
                    Err(_) => (Some(email), Some("OUTBOX_WRITE_FAILED".to_string())),
                },
                Err(e) => (None, Some(e.code().to_string())),
            },
            Err(e) => (None, Some(e.code().to_string())),
        };
        let alarm = match req.from_alarm {
            Some(id) => Some(self.link(id, &ticket.id, &req.author)?),
            None => None,
        };
        Ok(CreatedTicket {
            ticket,
            email,
            email_error,
            alarm,
        })
    }

    /// Renders the e-mail a creation would send, without storing anything.
    pub fn preview_email(&self, req: &NewTicket) -> Result<NotificationEmail, DeskError> {
        let topology = self.topology.snapshot();
        let contact = topology.contact_for(&req.site)?;
        let probe = TicketBridge::new(Backend::DirectInsert)
            .create(&req.subject, &req.site, req.node.as_deref(), &req.author, self.clock.now())?;
        let mut email = render_notification(&probe, contact, &req.author)?;
        // The real id is only known at creation.
        email.subject = email.subject.replace(&probe.id, "<new>");
        email.body = email.body.replace(&probe.id, "<new>");
        Ok(email)
    }

    pub fn update_ticket(
        &self,
        id: &str,
        changes: &[(String, String)],
        author: &str,
        store: StoreId,
    ) -> Result<Ticket, DeskError> {
        Ok(self.tickets.update(id, changes, author, store, self.clock.now())?)
    }

    pub fn escalate(&self, id: &str, author: &str, store: StoreId) -> Result<Ticket, DeskError> {
        Ok(self.tickets.escalate(id, author, store, self.clock.now())?)
    }

    pub fn synchronize(&self) -> SyncReport {
        self.tickets.synchronize()
    }

    pub fn auto_close(&self) -> Vec<AlarmId> {
        self.alarms.auto_close(self.clock.now())
    }

    /// Summary straight from the stores, both sections stamped `now`.
    pub fn site_summary(&self, site: &str) -> Result<ViewDocument, DeskError> {
        let now = self.clock.now();
        let alarms = self.alarms.to_view();
        let tickets = self.tickets.to_view();
        Ok(site_summary(
            &self.topology.snapshot(),
            site,
            Section {
                document: &alarms,
                generated_at: now,
            },
            Section {
                document: &tickets,
                generated_at: now,
            },
            now,
        )?)
    }

    /// Publishes `alarms`, `tickets`, `sites` and `nodes` for provider views.
    pub fn register_providers(self: &Arc<Self>, providers: &ProviderRegistry) {
        let desk = Arc::downgrade(self);
        let gone = || AdapterError::unreachable("operator desk is shut down");
        let make = |render: fn(&Desk) -> ViewDocument| {
            let desk = desk.clone();
            Arc::new(move |_: &AdapterContext| desk.upgrade().map(|d| render(&d)).ok_or_else(gone))
        };
        providers.register(ALARMS_PROVIDER, make(|d| d.alarms.to_view()));
        providers.register(TICKETS_PROVIDER, make(|d| d.tickets.to_view()));
        providers.register(SITES_PROVIDER, make(|d| d.topology.snapshot().sites_document()));
        providers.register(NODES_PROVIDER, make(|d| d.topology.snapshot().nodes_document()));
    }

    /// Registers `name` as a provider that first ingests the current content
    /// of `feed_view`, then returns the alarm view.
    pub fn register_feed_provider(self: &Arc<Self>, providers: &ProviderRegistry, name: &str, feed_view: &str) {
        let desk = Arc::downgrade(self);
        let feed_view = feed_view.to_string();
        providers.register(
            name,
            Arc::new(move |ctx: &AdapterContext| {
                let desk = desk
                    .upgrade()
                    .ok_or_else(|| AdapterError::unreachable("operator desk is shut down"))?;
                let feed = ctx
                    .views
                    .read_source(&feed_view)
                    .ok_or_else(|| AdapterError::unreachable(format!("feed view `{feed_view}` has no content")))?;
                desk.ingest(&feed);
                Ok(desk.alarms.to_view())
            }),
        );
    }
}
