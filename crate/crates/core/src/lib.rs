pub mod adapters;
pub mod clock;
pub mod config;
pub mod document;
pub mod engine;
pub mod query;
pub mod schema;

pub use adapters::{
    Adapter, AdapterContext, AdapterError, AdapterSpec, ErrorClass, ProviderRegistry, ViewSource,
};
pub use clock::{Clock, SharedClock, SystemClock, Timestamp, VirtualClock};
pub use config::{
    CacheType, ConfigError, ConfigSet, ErrorSelector, FallbackAction, FallbackRule, SyncGroup,
    TriggerKind, TriggerRule, Validation, ViewConfig,
};
pub use document::{DocumentError, Element, Node, ViewDocument};
pub use query::{PathQuery, QueryParseError};
pub use schema::StructuralSchema;
pub use engine::{
    Engine, EngineError, Event, Format, RefreshCause, RefreshOutcome, ReloadReport, TtlStatus,
    ViewContent, ViewStateSnapshot, ViewStatus,
};
