//! Operator workflow on top of the view engine: site registry, alarm
//! lifecycle, mirrored operations tickets and the desk that ties them.

pub mod alarms;
pub mod desk;
pub mod tickets;
pub mod topology;

pub use alarms::{
    transition_target, ActionKind, Alarm, AlarmAction, AlarmError, AlarmFilter, AlarmId, AlarmStatus, AlarmStore,
    AuditRecord, IngestReport,
};
pub use desk::{CreatedTicket, Desk, DeskError, NewTicket};
pub use tickets::{
    Backend, ChangeEvent, Field, NotificationEmail, Outbox, Stamp, StoreId, SyncRecord, SyncReport, Ticket,
    TicketBridge, TicketError, TicketFields, TicketStatus, MAX_STEP,
};
pub use topology::{site_overview, site_summary, CertificationStatus, SiteOverview, Registry, Section, Site, Topology, TopologyError};
