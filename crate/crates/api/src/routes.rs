//! Route table, privilege checks and handlers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, MatchedPath, Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::{Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Router};
use gridops_core::clock::format_timestamp;
use gridops_core::{EngineError, Format, RefreshCause, RefreshOutcome, Timestamp, ViewDocument};
use gridops_workflow::{
    site_overview, site_summary, ActionKind, AlarmAction, AlarmFilter, AlarmId, AlarmStatus, NewTicket, Section, StoreId,
    TicketStatus,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{OperatorIdentity, Role};
use crate::error::ApiError;
use crate::render::{render_error, respond, Reply};
use crate::service::Service;

/// Minimum role for every route. The router is built from the same paths.
pub const ROUTES: &[(&str, &str, Role)] = &[
    ("GET", "/views/{name}", Role::Readonly),
    ("POST", "/views/{name}/query", Role::Readonly),
    ("POST", "/views/{name}/refresh", Role::Operator),
    ("GET", "/sites", Role::Readonly),
    ("GET", "/sites/{name}/summary", Role::Readonly),
    ("GET", "/alarms", Role::Readonly),
    ("GET", "/alarms/{id}", Role::Readonly),
    ("POST", "/alarms/{id}/transition", Role::Operator),
    ("POST", "/alarms/{id}/link", Role::Operator),
    ("GET", "/tickets", Role::Readonly),
    ("POST", "/tickets", Role::Operator),
    ("POST", "/tickets/preview", Role::Readonly),
    ("GET", "/tickets/{id}", Role::Readonly),
    ("PATCH", "/tickets/{id}", Role::Operator),
    ("POST", "/tickets/{id}/escalate", Role::Operator),
    ("POST", "/events/{topic}", Role::Operator),
    ("POST", "/admin/reload", Role::Admin),
    ("GET", "/admin/introspect", Role::Admin),
    ("POST", "/admin/synchronize", Role::Admin),
    ("POST", "/admin/auto-close", Role::Admin),
];

pub fn required_role(method: &Method, path: &str) -> Option<Role> {
    ROUTES
        .iter()
        .find(|(m, p, _)| *m == method.as_str() && *p == path)
        .map(|(_, _, r)| *r)
}

type AppState = Arc<Service>;

/// `?format=xml|json`; absent means the endpoint's default.
pub struct Fmt(pub Option<Format>);

impl<S: Send + Sync> FromRequestParts<S> for Fmt {
    type Rejection = Response;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let query = parts.uri.query().unwrap_or("");
        let params: Vec<(String, String)> = serde_urlencoded_pairs(query);
        match params.iter().rev().find(|(k, _)| k == "format") {
            None => Ok(Fmt(None)),
            Some((_, v)) => v
                .parse()
                .map(|f| Fmt(Some(f)))
                .map_err(|e: String| render_error(None, ApiError::bad_request(e))),
        }
    }
}

fn serde_urlencoded_pairs(query: &str) -> Vec<(String, String)> {
    Query::<Vec<(String, String)>>::try_from_uri(&format!("/?{query}").parse().unwrap_or_default())
        .map(|q| q.0)
        .unwrap_or_default()
}

async fn authorize(State(svc): State<AppState>, path: MatchedPath, mut req: Request, next: Next) -> Response {
    let Some(required) = required_role(req.method(), path.as_str()) else {
        return render_error(None, ApiError::forbidden("route has no privilege entry"));
    };
    let header = req.headers().get(AUTHORIZATION).and_then(|h| h.to_str().ok());
    match svc.identities.authorize(header, required) {
        Ok(id) => {
            let id = id.clone();
            req.extensions_mut().insert(id);
            next.run(req).await
        }
        Err(e) => {
            let format = req.uri().query().and_then(|q| {
                serde_urlencoded_pairs(q)
                    .into_iter()
                    .find(|(k, _)| k == "format")
                    .and_then(|(_, v)| v.parse().ok())
            });
            render_error(format, e)
        }
    }
}

async fn not_found() -> Response {
    render_error(None, ApiError::new("NOT_FOUND", "no such endpoint"))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/views/{name}", get(get_view))
        .route("/views/{name}/query", post(query_view))
        .route("/views/{name}/refresh", post(refresh_view))
        .route("/sites", get(list_sites))
        .route("/sites/{name}/summary", get(get_site_summary))
        .route("/alarms", get(list_alarms))
        .route("/alarms/{id}", get(get_alarm))
        .route("/alarms/{id}/transition", post(transition_alarm))
        .route("/alarms/{id}/link", post(link_alarm))
        .route("/tickets", get(list_tickets).post(create_ticket))
        .route("/tickets/preview", post(preview_ticket))
        .route("/tickets/{id}", get(get_ticket).patch(update_ticket))
        .route("/tickets/{id}/escalate", post(escalate_ticket))
        .route("/events/{topic}", post(inject_event))
        .route("/admin/reload", post(reload))
        .route("/admin/introspect", get(introspect))
        .route("/admin/synchronize", post(synchronize))
        .route("/admin/auto-close", post(auto_close))
        .route_layer(middleware::from_fn_with_state(service.clone(), authorize))
        .fallback(not_found)
        .with_state(service)
}

/// Runs blocking engine or desk work off the async workers.
async fn blocking<T, F>(svc: AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn parse_alarm_id(raw: &str) -> Result<AlarmId, ApiError> {
    raw.parse().map_err(|_| ApiError::new("ALARM_NOT_FOUND", format!("no alarm `{raw}`")))
}

fn parse_store(params: &BTreeMap<String, String>) -> Result<StoreId, ApiError> {
    match params.get("store") {
        None => Ok(StoreId::Ops),
        Some(s) => s.parse().map_err(ApiError::bad_request),
    }
}

// ------------------------------------------------------------------- views

async fn get_view(State(svc): State<AppState>, Fmt(f): Fmt, Path(name): Path<String>) -> Response {
    let result = blocking(svc, move |s| match s.engine.get_view(&name) {
        Ok(content) => Ok(Reply::View(content)),
        Err(e @ EngineError::ContentOutdated { .. }) => {
            let mut err = ApiError::from(e);
            err.generated_at = s
                .engine
                .view_state(&name)
                .ok()
                .and_then(|st| st.generated_at)
                .map(format_timestamp);
            Err(err)
        }
        Err(e) => Err(e.into()),
    })
    .await;
    respond(f, result)
}

async fn query_view(State(svc): State<AppState>, Fmt(f): Fmt, Path(name): Path<String>, body: String) -> Response {
    respond(f, blocking(svc, move |s| Ok(Reply::Doc(s.engine.query_view(&name, body.trim())?))).await)
}

async fn refresh_view(State(svc): State<AppState>, Fmt(f): Fmt, Path(name): Path<String>) -> Response {
    let result = blocking(svc, move |s| {
        let outcome = s.engine.refresh_view(&name, RefreshCause::Manual)?;
        // a raised failure is the caller's error; ignored and retried ones are reported
        if let RefreshOutcome::Failed { error } = &outcome {
            return Err(ApiError::new(error.class.code(), error.message.clone()));
        }
        Reply::data("refresh", "item", json!({"view": name, "result": outcome}))
    })
    .await;
    respond(f, result)
}

// ------------------------------------------------------------------- sites

/// Alarm and ticket inputs for summaries: the engine's views when they are
/// servable, else the desk's live records.
fn summary_inputs(s: &Service) -> (Arc<ViewDocument>, Timestamp, Arc<ViewDocument>, Timestamp) {
    let now = s.desk.clock().now();
    let pick = |view: &str, live: &dyn Fn() -> ViewDocument| match s.engine.get_view(view) {
        Ok(c) => (c.document.clone(), c.generated_at),
        Err(_) => (Arc::new(live()), now),
    };
    let (a, at) = pick("alarms", &|| s.desk.alarms().to_view());
    let (t, tt) = pick("tickets", &|| s.desk.tickets().to_view());
    (a, at, t, tt)
}

async fn list_sites(State(svc): State<AppState>, Fmt(f): Fmt) -> Response {
    let result = blocking(svc, |s| {
        let (a, at, t, tt) = summary_inputs(s);
        let rows = site_overview(
            &s.desk.topology(),
            Section {
                document: &a,
                generated_at: at,
            },
            Section {
                document: &t,
                generated_at: tt,
            },
            s.desk.clock().now(),
        );
        Reply::data("sites", "site", rows)
    })
    .await;
    respond(f, result)
}

async fn get_site_summary(State(svc): State<AppState>, Fmt(f): Fmt, Path(name): Path<String>) -> Response {
    let result = blocking(svc, move |s| {
        let (a, at, t, tt) = summary_inputs(s);
        let doc = site_summary(
            &s.desk.topology(),
            &name,
            Section {
                document: &a,
                generated_at: at,
            },
            Section {
                document: &t,
                generated_at: tt,
            },
            s.desk.clock().now(),
        )?;
        Ok(Reply::Doc(doc))
    })
    .await;
    respond(f, result)
}

// ------------------------------------------------------------------ alarms

async fn list_alarms(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Query(params): Query<BTreeMap<String, String>>,
) -> Response {
    let result = (|| {
        let statuses = match params.get("status").filter(|s| !s.is_empty()) {
            None => None,
            Some(list) => Some(
                list.split(',')
                    .map(|s| s.trim().parse::<AlarmStatus>())
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(ApiError::bad_request)?,
            ),
        };
        let include_masked = match params.get("include_masked").map(String::as_str) {
            None | Some("") | Some("false") | Some("0") => false,
            Some("true") | Some("1") => true,
            Some(other) => return Err(ApiError::bad_request(format!("include_masked: expected true or false, found `{other}`"))),
        };
        Ok(AlarmFilter {
            site: params.get("site").filter(|s| !s.is_empty()).cloned(),
            statuses,
            include_masked,
        })
    })();
    let result = match result {
        Ok(filter) => Reply::data("alarms", "alarm", svc.desk.list_alarms(&filter)),
        Err(e) => Err(e),
    };
    respond(f, result)
}

#[derive(Serialize)]
struct AlarmDetail {
    alarm: gridops_workflow::Alarm,
    audit: Vec<gridops_workflow::AuditRecord>,
}

async fn get_alarm(State(svc): State<AppState>, Fmt(f): Fmt, Path(id): Path<String>) -> Response {
    let result = parse_alarm_id(&id).and_then(|id| {
        let alarm = svc.desk.alarms().get(id)?;
        Reply::data(
            "alarm-detail",
            "record",
            AlarmDetail {
                alarm,
                audit: svc.desk.alarms().audit_for(id),
            },
        )
    });
    respond(f, result)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionBody {
    action: String,
    master: Option<AlarmId>,
}

async fn transition_alarm(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let result = async {
        let id = parse_alarm_id(&id)?;
        let req: TransitionBody = json_body(&body)?;
        let kind: ActionKind = req.action.parse().map_err(ApiError::bad_request)?;
        let action = match kind {
            ActionKind::Assign => AlarmAction::Assign,
            ActionKind::Mask => AlarmAction::Mask(req.master.ok_or_else(|| ApiError::bad_request("MASK needs `master`"))?),
            ActionKind::SetOff => AlarmAction::SetOff,
            ActionKind::Close => AlarmAction::Close,
            ActionKind::Unmask => AlarmAction::Unmask,
        };
        blocking(svc, move |s| {
            let alarm = s.desk.transition(id, action, &who.name)?;
            s.written("alarms");
            Reply::data("alarm", "item", alarm)
        })
        .await
    }
    .await;
    respond(f, result)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkBody {
    ticket: String,
}

async fn link_alarm(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let result = async {
        let id = parse_alarm_id(&id)?;
        let req: LinkBody = json_body(&body)?;
        blocking(svc, move |s| {
            let alarm = s.desk.link(id, &req.ticket, &who.name)?;
            s.written("alarms");
            Reply::data("alarm", "item", alarm)
        })
        .await
    }
    .await;
    respond(f, result)
}

// ----------------------------------------------------------------- tickets

async fn list_tickets(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Query(params): Query<BTreeMap<String, String>>,
) -> Response {
    let result = (|| {
        let store = parse_store(&params)?;
        let status = match params.get("status").filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(s.parse::<TicketStatus>().map_err(ApiError::bad_request)?),
        };
        let site = params.get("site").filter(|s| !s.is_empty()).map(String::as_str);
        Reply::data("tickets", "ticket", svc.desk.tickets().list(store, site, status))
    })();
    respond(f, result)
}

async fn get_ticket(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Path(id): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Response {
    let result = parse_store(&params).and_then(|store| Reply::data("ticket", "event", svc.desk.tickets().get(&id, store)?));
    respond(f, result)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TicketBody {
    site: String,
    subject: String,
    node: Option<String>,
    from_alarm: Option<AlarmId>,
}

impl TicketBody {
    fn request(self, author: &str) -> Result<NewTicket, ApiError> {
        Ok(NewTicket {
            subject: self.subject,
            site: self.site,
            node: self.node.filter(|n| !n.is_empty()),
            author: author.to_string(),
            from_alarm: self.from_alarm,
        })
    }
}

async fn create_ticket(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    body: Bytes,
) -> Response {
    let result = async {
        let req = json_body::<TicketBody>(&body)?.request(&who.name)?;
        blocking(svc, move |s| {
            let created = s.desk.create_ticket(&req)?;
            s.written("tickets");
            if created.alarm.is_some() {
                s.written("alarms");
            }
            Ok(Reply::data("created", "item", created)?.with_status(StatusCode::CREATED))
        })
        .await
    }
    .await;
    respond(f, result)
}

async fn preview_ticket(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    body: Bytes,
) -> Response {
    let result = json_body::<TicketBody>(&body)
        .and_then(|b| b.request(&who.name))
        .and_then(|req| Reply::data("email", "item", svc.desk.preview_email(&req)?));
    respond(f, result)
}

async fn update_ticket(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    Path(id): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> Response {
    let result = async {
        let store = parse_store(&params)?;
        let fields: serde_json::Map<String, Value> = json_body(&body)?;
        let changes = fields
            .into_iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k, s)),
                Value::Number(n) => Ok((k, n.to_string())),
                other => Err(ApiError::bad_request(format!("`{k}`: expected a string, found {other}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if changes.is_empty() {
            return Err(ApiError::bad_request("no fields to change"));
        }
        blocking(svc, move |s| {
            let ticket = s.desk.update_ticket(&id, &changes, &who.name, store)?;
            s.written("tickets");
            Reply::data("ticket", "event", ticket)
        })
        .await
    }
    .await;
    respond(f, result)
}

async fn escalate_ticket(
    State(svc): State<AppState>,
    Fmt(f): Fmt,
    Extension(who): Extension<OperatorIdentity>,
    Path(id): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Response {
    let result = async {
        let store = parse_store(&params)?;
        blocking(svc, move |s| {
            let ticket = s.desk.escalate(&id, &who.name, store)?;
            s.written("tickets");
            Reply::data("ticket", "event", ticket)
        })
        .await
    }
    .await;
    respond(f, result)
}

// ------------------------------------------------------------ events, admin

#[derive(Serialize)]
struct Refreshed {
    view: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<RefreshOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn inject_event(State(svc): State<AppState>, Fmt(f): Fmt, Path(topic): Path<String>) -> Response {
    let result = blocking(svc, move |s| {
        s.engine.notify(&topic);
        let refreshed: Vec<Refreshed> = s
            .engine
            .run_pending()
            .into_iter()
            .map(|(view, r)| match r {
                Ok(outcome) => Refreshed {
                    view,
                    result: Some(outcome),
                    error: None,
                },
                Err(e) => Refreshed {
                    view,
                    result: None,
                    error: Some(e.code().to_string()),
                },
            })
            .collect();
        Reply::data("event", "view", json!({"topic": topic, "refreshed": refreshed}))
    })
    .await;
    respond(f, result)
}

async fn reload(State(svc): State<AppState>, Fmt(f): Fmt, body: String) -> Response {
    let result = blocking(svc, move |s| {
        let xml = Some(body.as_str()).filter(|b| !b.trim().is_empty());
        Reply::data("reload", "view", s.reload(xml)?)
    })
    .await;
    respond(f, result)
}

async fn introspect(State(svc): State<AppState>, Fmt(f): Fmt) -> Response {
    respond(f, Ok(Reply::Doc(svc.engine.introspect())))
}

async fn synchronize(State(svc): State<AppState>, Fmt(f): Fmt) -> Response {
    let result = blocking(svc, |s| {
        let report = s.desk.synchronize();
        s.written("tickets");
        Reply::data("sync", "ticket", report)
    })
    .await;
    respond(f, result)
}

async fn auto_close(State(svc): State<AppState>, Fmt(f): Fmt) -> Response {
    let result = blocking(svc, |s| {
        let closed = s.desk.auto_close();
        if !closed.is_empty() {
            s.written("alarms");
        }
        Reply::data("auto-close", "alarm", json!({ "closed": closed }))
    })
    .await;
    respond(f, result)
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        render_error(None, self)
    }
}
