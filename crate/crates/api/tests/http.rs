use std::fs;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use gridops_api::{router, status_for, OperatorIdentity, Role, Service, ServiceSettings, ROUTES, STATUS_BY_CODE};
use gridops_core::{Clock, VirtualClock};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const VIEWS: &str = r#"
<views>
  <view name="sam">
    <adapter kind="local-file" path="sam.xml"/>
    <cache type="memory"/>
    <trigger kind="notification" topic="sam"/>
    <fallback error="any" action="ignore"/>
  </view>
  <view name="alarms">
    <adapter kind="provider" name="alarm-feed"/>
    <dependency view="sam"/>
    <trigger kind="dependency-updated" view="sam"/>
    <trigger kind="on-write"/>
    <fallback error="any" action="ignore"/>
  </view>
  <view name="tickets">
    <adapter kind="provider" name="tickets"/>
    <trigger kind="on-write"/>
    <fallback error="any" action="ignore"/>
  </view>
  <view name="sites">
    <adapter kind="provider" name="sites"/>
    <ttl>60</ttl>
  </view>
  <view name="missing">
    <adapter kind="local-file" path="absent.xml"/>
    <fallback error="any" action="raise"/>
  </view>
</views>"#;

const TOPOLOGY: &str = r#"<topology>
  <sites>
    <site name="CBPF" region="BR" contact="ops@cbpf.example" status="CERTIFIED"/>
    <site name="UNIANDES" region="CO" contact="grid@uniandes.example" status="CERTIFIED"/>
    <site name="NOMAIL" region="AR" status="UNCERTIFIED"/>
  </sites>
  <nodes>
    <node hostname="ce01.cbpf.example" type="CE" site="CBPF"/>
    <node hostname="se01.cbpf.example" type="SE" site="CBPF"/>
    <node hostname="ce01.uniandes.example" type="CE" site="UNIANDES"/>
  </nodes>
</topology>"#;

const SAM: &str = r#"<failures>
  <failure sensor="CE" test="js" node="ce01.cbpf.example" failure-time="2009-12-01T00:01:00Z"/>
  <failure sensor="SE" test="put" node="se01.cbpf.example" failure-time="2009-12-01T00:02:00Z"/>
  <failure sensor="CE" test="js" node="ce01.uniandes.example" failure-time="2009-12-01T00:03:00Z"/>
</failures>"#;

const SERVICE: &str = r#"
views = "views.xml"
topology = "topology.xml"
alarm_feed = "sam"
quiet_period = 3600

[[operators]]
token = "tok-r"
name = "viewer"
role = "READONLY"

[[operators]]
token = "tok-o"
name = "cod-duty"
role = "OPERATOR"

[[operators]]
token = "tok-a"
name = "admin"
role = "ADMIN"
"#;

struct Fixture {
    _dir: TempDir,
    clock: Arc<VirtualClock>,
    service: Arc<Service>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("views.xml"), VIEWS).unwrap();
    fs::write(root.join("topology.xml"), TOPOLOGY).unwrap();
    fs::write(root.join("sam.xml"), SAM).unwrap();
    fs::write(root.join("service.toml"), SERVICE).unwrap();
    let clock = Arc::new(VirtualClock::at_epoch());
    let service = Arc::new(Service::load(&root.join("service.toml"), clock.clone()).unwrap());
    let app = router(service.clone());
    Fixture {
        _dir: dir,
        clock,
        service,
        app,
    }
}

fn token(role: Role) -> &'static str {
    match role {
        Role::Readonly => "tok-r",
        Role::Operator => "tok-o",
        Role::Admin => "tok-a",
    }
}

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    text: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text))
    }

    fn code(&self) -> String {
        self.json()["error"].as_str().unwrap_or_default().to_string()
    }
}

async fn call(app: &Router, method: Method, uri: &str, role: Option<Role>, body: &str) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(r) = role {
        req = req.header("authorization", format!("Bearer {}", token(r)));
    }
    let res = app.clone().oneshot(req.body(Body::from(body.to_string())).unwrap()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        headers,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

async fn admin(app: &Router, method: Method, uri: &str, body: &str) -> Reply {
    call(app, method, uri, Some(Role::Admin), body).await
}

fn concrete(path: &str) -> String {
    path.replace("{name}", "sites").replace("{id}", "1").replace("{topic}", "sam")
}

#[tokio::test(flavor = "multi_thread")]
async fn privilege_matrix_covers_every_route() {
    let f = fixture();
    for (method, path, required) in ROUTES {
        let method: Method = method.parse().unwrap();
        let uri = concrete(path);
        let anonymous = call(&f.app, method.clone(), &uri, None, "{}").await;
        assert_eq!(anonymous.status, StatusCode::UNAUTHORIZED, "{method} {uri} without token");
        assert_eq!(anonymous.code(), "UNAUTHENTICATED");
        for role in Role::ALL {
            let reply = call(&f.app, method.clone(), &uri, Some(role), "{}").await;
            if role < *required {
                assert_eq!(reply.status, StatusCode::FORBIDDEN, "{method} {uri} as {role}");
                assert_eq!(reply.code(), "FORBIDDEN");
            } else {
                assert!(
                    !matches!(reply.status.as_u16(), 401 | 403 | 405),
                    "{method} {uri} as {role}: {} {}",
                    reply.status,
                    reply.text
                );
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn route_table_matches_the_router() {
    let f = fixture();
    for (method, path, _) in ROUTES {
        let reply = admin(&f.app, method.parse().unwrap(), &concrete(path), "{}").await;
        assert!(
            reply.status != StatusCode::NOT_FOUND || reply.code() != "NOT_FOUND",
            "{method} {path} is listed but not routed"
        );
    }
    let unknown = admin(&f.app, Method::GET, "/nowhere", "").await;
    assert_eq!((unknown.status, unknown.code().as_str()), (StatusCode::NOT_FOUND, "NOT_FOUND"));
    let bad_token = call(&f.app, Method::GET, "/sites", None, "").await;
    assert_eq!(bad_token.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test(flavor = "multi_thread")]
async fn every_listed_code_has_a_non_success_status() {
    for (code, status) in STATUS_BY_CODE {
        assert_eq!(status_for(code).as_u16(), *status);
        assert!(*status >= 400, "{code}");
    }
    assert_eq!(status_for("SOMETHING_NEW"), StatusCode::INTERNAL_SERVER_ERROR);
}

#[tokio::test(flavor = "multi_thread")]
async fn views_render_in_both_formats() {
    let f = fixture();
    f.service.engine.refresh_view("sites", gridops_core::RefreshCause::Manual).unwrap();
    let xml = call(&f.app, Method::GET, "/views/sites", Some(Role::Readonly), "").await;
    assert_eq!(xml.status, StatusCode::OK);
    assert_eq!(xml.headers["content-type"], "application/xml");
    assert!(xml.text.starts_with("<sites"), "{}", xml.text);
    assert!(xml.headers.contains_key("x-content-version"));
    assert_eq!(xml.headers["x-generated-at"], "2009-12-01T00:00:00Z");

    let json = call(&f.app, Method::GET, "/views/sites?format=json", Some(Role::Readonly), "").await;
    assert_eq!(json.headers["content-type"], "application/json");
    let doc = gridops_core::ViewDocument::from_json(&json.text).unwrap();
    assert_eq!(doc.to_xml(), xml.text);

    let bad = call(&f.app, Method::GET, "/views/sites?format=yaml", Some(Role::Readonly), "").await;
    assert_eq!((bad.status, bad.code().as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));

    let records = call(&f.app, Method::GET, "/sites?format=xml", Some(Role::Readonly), "").await;
    assert_eq!(records.status, StatusCode::OK);
    assert!(records.text.starts_with("<sites><site "), "{}", records.text);
    let err_xml = call(&f.app, Method::GET, "/views/nope?format=xml", Some(Role::Readonly), "").await;
    assert_eq!(err_xml.text, r#"<error error="VIEW_NOT_FOUND" message="no view named `nope`"/>"#);
}

#[tokio::test(flavor = "multi_thread")]
async fn engine_errors_map_to_statuses() {
    let f = fixture();
    let r = call(&f.app, Method::GET, "/views/nope", Some(Role::Readonly), "").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "VIEW_NOT_FOUND"));

    let r = call(&f.app, Method::GET, "/views/missing", Some(Role::Readonly), "").await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE, "{}", r.text);
    assert_eq!(r.code(), "VIEW_EMPTY");

    let r = call(&f.app, Method::POST, "/views/missing/refresh", Some(Role::Operator), "").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_GATEWAY, "SOURCE_UNREACHABLE"), "{}", r.text);

    f.service.engine.refresh_view("sites", gridops_core::RefreshCause::Manual).unwrap();
    let r = call(&f.app, Method::POST, "/views/sites/query", Some(Role::Readonly), "/sites/site[").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_REQUEST, "QUERY_PARSE_ERROR"));
    let r = call(&f.app, Method::POST, "/views/sites/query?format=json", Some(Role::Readonly), "/sites/site[@region='BR']").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert!(r.text.contains("CBPF") && !r.text.contains("UNIANDES"), "{}", r.text);

    // ttl is 60 s
    f.clock.advance(Duration::from_secs(61));
    let r = call(&f.app, Method::GET, "/views/sites", Some(Role::Readonly), "").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::SERVICE_UNAVAILABLE, "CONTENT_OUTDATED"));
    assert_eq!(r.json()["generated_at"], "2009-12-01T00:00:00Z");
}

#[tokio::test(flavor = "multi_thread")]
async fn alarm_workflow_over_http() {
    let f = fixture();
    let ev = call(&f.app, Method::POST, "/events/sam", Some(Role::Operator), "").await;
    assert_eq!(ev.status, StatusCode::OK, "{}", ev.text);
    let refreshed: Vec<String> = ev.json()["refreshed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["view"].as_str().unwrap().to_string())
        .collect();
    // dependents refresh inside the cascade of the notified view
    assert_eq!(refreshed, ["sam"]);
    assert!(f.service.engine.get_view("alarms").is_ok());

    let list = call(&f.app, Method::GET, "/alarms?site=CBPF", Some(Role::Readonly), "").await;
    let alarms = list.json();
    assert_eq!(alarms.as_array().unwrap().len(), 2, "{}", list.text);
    let a = alarms[0]["id"].as_u64().unwrap();
    let b = alarms[1]["id"].as_u64().unwrap();
    let other = call(&f.app, Method::GET, "/alarms?site=UNIANDES", Some(Role::Readonly), "").await.json()[0]["id"]
        .as_u64()
        .unwrap();

    let r = call(&f.app, Method::POST, &format!("/alarms/{a}/transition"), Some(Role::Operator), r#"{"action":"ASSIGN"}"#).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["status"], "ASSIGNED");

    let r = call(&f.app, Method::POST, &format!("/alarms/{a}/transition"), Some(Role::Operator), r#"{"action":"UNMASK"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::CONFLICT, "ILLEGAL_TRANSITION"));

    let r = call(&f.app, Method::POST, &format!("/alarms/{b}/transition"), Some(Role::Operator), &format!(r#"{{"action":"MASK","master":{other}}}"#)).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::CONFLICT, "CROSS_SITE_MASK"));
    let r = call(&f.app, Method::POST, &format!("/alarms/{b}/transition"), Some(Role::Operator), r#"{"action":"MASK","master":999}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "MASTER_NOT_FOUND"));
    let r = call(&f.app, Method::POST, &format!("/alarms/{b}/transition"), Some(Role::Operator), &format!(r#"{{"action":"mask","master":{a}}}"#)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["masked_by"], a);

    let r = call(&f.app, Method::POST, "/alarms/999/transition", Some(Role::Operator), r#"{"action":"ASSIGN"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "ALARM_NOT_FOUND"));
    let r = call(&f.app, Method::POST, &format!("/alarms/{a}/transition"), Some(Role::Operator), r#"{"action":"EXPLODE"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    let r = call(&f.app, Method::POST, &format!("/alarms/{a}/transition"), Some(Role::Operator), "not json").await;
    assert_eq!(r.code(), "BAD_REQUEST");

    let masked_hidden = call(&f.app, Method::GET, "/alarms?site=CBPF", Some(Role::Readonly), "").await.json();
    assert_eq!(masked_hidden.as_array().unwrap().len(), 1);
    let with_masked = call(&f.app, Method::GET, "/alarms?site=CBPF&include_masked=true", Some(Role::Readonly), "").await.json();
    assert_eq!(with_masked.as_array().unwrap().len(), 2);
    let assigned = call(&f.app, Method::GET, "/alarms?status=ASSIGNED", Some(Role::Readonly), "").await.json();
    assert_eq!(assigned.as_array().unwrap().len(), 1);
    let r = call(&f.app, Method::GET, "/alarms?status=SLEEPY", Some(Role::Readonly), "").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let detail = call(&f.app, Method::GET, &format!("/alarms/{a}"), Some(Role::Readonly), "").await.json();
    assert_eq!(detail["audit"][0]["operator"], "cod-duty");
    assert_eq!(detail["audit"][0]["to"], "ASSIGNED");

    // the on-write trigger republishes the alarms view after each change
    let view = call(&f.app, Method::GET, "/views/alarms", Some(Role::Readonly), "").await;
    assert!(view.text.contains(r#"status="ASSIGNED""#), "{}", view.text);

    let sites = call(&f.app, Method::GET, "/sites", Some(Role::Readonly), "").await.json();
    let cbpf = sites.as_array().unwrap().iter().find(|s| s["name"] == "CBPF").unwrap().clone();
    assert_eq!(cbpf["open_alarm_count"], 1, "the masked alarm is not open");
    let summary = call(&f.app, Method::GET, "/sites/CBPF/summary", Some(Role::Readonly), "").await;
    assert_eq!(summary.status, StatusCode::OK);
    assert!(summary.text.contains(r#"<alarms count="1""#), "{}", summary.text);
    let r = call(&f.app, Method::GET, "/sites/ATLANTIS/summary", Some(Role::Readonly), "").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "SITE_NOT_FOUND"));
}

#[tokio::test(flavor = "multi_thread")]
async fn ticket_workflow_over_http() {
    let f = fixture();
    call(&f.app, Method::POST, "/events/sam", Some(Role::Operator), "").await;
    let alarm = call(&f.app, Method::GET, "/alarms?site=CBPF", Some(Role::Readonly), "").await.json()[0]["id"]
        .as_u64()
        .unwrap();

    let preview = call(&f.app, Method::POST, "/tickets/preview", Some(Role::Readonly), r#"{"site":"CBPF","subject":"CE down"}"#).await;
    assert_eq!(preview.status, StatusCode::OK, "{}", preview.text);
    assert_eq!(preview.json()["to"], "ops@cbpf.example");
    assert!(f.service.desk.tickets().list(gridops_workflow::StoreId::Ops, None, None).is_empty());

    let body = json!({"site": "CBPF", "subject": "CE down", "node": "ce01.cbpf.example", "from_alarm": alarm}).to_string();
    let created = call(&f.app, Method::POST, "/tickets", Some(Role::Operator), &body).await;
    assert_eq!(created.status, StatusCode::CREATED, "{}", created.text);
    let created = created.json();
    let id = created["ticket"]["id"].as_str().unwrap().to_string();
    assert_eq!(created["alarm"]["ticket_id"], id.as_str());
    assert_eq!(created["email"]["to"], "ops@cbpf.example");
    assert_eq!(f.service.desk.outbox().messages().len(), 1);

    let r = call(&f.app, Method::POST, "/tickets", Some(Role::Operator), r#"{"site":"ATLANTIS","subject":"x"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "SITE_NOT_FOUND"));
    let r = call(&f.app, Method::POST, "/tickets", Some(Role::Operator), r#"{"site":"CBPF","subject":"x","priority":1}"#).await;
    assert_eq!(r.code(), "BAD_REQUEST");
    let r = call(&f.app, Method::POST, "/tickets", Some(Role::Operator), r#"{"site":"NOMAIL","subject":"x"}"#).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["email_error"], "CONTACT_MISSING");

    let r = call(&f.app, Method::PATCH, &format!("/tickets/{id}"), Some(Role::Operator), r#"{"status":"IN_PROGRESS","comment":"on it"}"#).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["status"], "IN_PROGRESS");
    let r = call(&f.app, Method::PATCH, &format!("/tickets/{id}"), Some(Role::Operator), r#"{"site":"UNIANDES"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "IMMUTABLE_FIELD"));
    let r = call(&f.app, Method::PATCH, "/tickets/T999999", Some(Role::Operator), r#"{"comment":"x"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "TICKET_NOT_FOUND"));

    for step in 1..=3 {
        let r = call(&f.app, Method::POST, &format!("/tickets/{id}/escalate"), Some(Role::Operator), "").await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        assert_eq!(r.json()["escalation_step"], step);
    }
    let r = call(&f.app, Method::POST, &format!("/tickets/{id}/escalate"), Some(Role::Operator), "").await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::CONFLICT, "MAX_ESCALATION_REACHED"));

    // OPS changes reach CENTRAL only after synchronization
    let central = call(&f.app, Method::GET, &format!("/tickets/{id}?store=central"), Some(Role::Readonly), "").await.json();
    assert_eq!(central["status"], "OPEN");
    let sync = admin(&f.app, Method::POST, "/admin/synchronize", "").await;
    assert_eq!(sync.status, StatusCode::OK);
    assert!(sync.json()["applied"].as_u64().unwrap() >= 5, "{}", sync.text);
    let central = call(&f.app, Method::GET, &format!("/tickets/{id}?store=central"), Some(Role::Readonly), "").await.json();
    assert_eq!((central["status"].as_str(), central["escalation_step"].as_u64()), (Some("IN_PROGRESS"), Some(3)));

    let listed = call(&f.app, Method::GET, "/tickets?site=CBPF&status=IN_PROGRESS", Some(Role::Readonly), "").await.json();
    assert_eq!(listed.as_array().unwrap().len(), 1);
    let r = call(&f.app, Method::GET, "/tickets?store=elsewhere", Some(Role::Readonly), "").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let view = call(&f.app, Method::GET, "/views/tickets", Some(Role::Readonly), "").await;
    assert!(view.text.contains(&id), "{}", view.text);

    let r = call(&f.app, Method::POST, &format!("/alarms/{alarm}/link"), Some(Role::Operator), r#"{"ticket":"T999999"}"#).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::NOT_FOUND, "TICKET_NOT_FOUND"));
}

#[tokio::test(flavor = "multi_thread")]
async fn admin_reload_and_introspection() {
    let f = fixture();
    let intro = admin(&f.app, Method::GET, "/admin/introspect", "").await;
    assert_eq!(intro.status, StatusCode::OK);
    assert!(intro.text.contains("sites"), "{}", intro.text);

    let cyclic = r#"<views>
      <view name="a"><adapter kind="view-transform" source="b" query="/x"/><dependency view="b"/></view>
      <view name="b"><adapter kind="view-transform" source="a" query="/x"/><dependency view="a"/></view>
    </views>"#;
    let r = admin(&f.app, Method::POST, "/admin/reload", cyclic).await;
    assert_eq!((r.status, r.code().as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "CYCLE_DETECTED"), "{}", r.text);
    assert!(f.service.engine.view_names().contains(&"sites".to_string()));

    // re-reading unchanged files suspends nothing
    let r = admin(&f.app, Method::POST, "/admin/reload", "").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["suspended"], json!([]));

    let smaller = VIEWS.replace(
        r#"  <view name="missing">
    <adapter kind="local-file" path="absent.xml"/>
    <fallback error="any" action="raise"/>
  </view>
"#,
        "",
    );
    let r = admin(&f.app, Method::POST, "/admin/reload", &smaller).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["removed"], json!(["missing"]));

    let r = admin(&f.app, Method::POST, "/admin/auto-close", "").await;
    assert_eq!(r.json()["closed"], json!([]));
}

#[test]
fn settings_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("views.xml"), VIEWS).unwrap();
    fs::write(root.join("topology.xml"), TOPOLOGY).unwrap();
    fs::write(root.join("service.toml"), SERVICE).unwrap();
    let s = ServiceSettings::load(&root.join("service.toml")).unwrap();
    assert_eq!(s.operators.len(), 3);
    assert_eq!(s.quiet_period, Duration::from_secs(3600));
    assert_eq!(s.topology.sites().count(), 3);
    assert_eq!(s.views_path.as_deref(), Some(root.join("views.xml").as_path()));

    fs::write(root.join("bad.toml"), "views = \"views.xml\"\ncolour = \"red\"\n").unwrap();
    let err = ServiceSettings::load(&root.join("bad.toml")).unwrap_err();
    assert_eq!(err.code(), "CONFIG_INVALID");

    let bare = ServiceSettings::load(&root.join("views.xml")).unwrap();
    assert!(bare.operators.is_empty());
    let dup = OperatorIdentity {
        token: "x".into(),
        name: "n".into(),
        role: Role::Admin,
    };
    let mut settings = bare.clone();
    settings.operators = vec![dup.clone(), dup];
    let clock: Arc<dyn Clock> = Arc::new(VirtualClock::at_epoch());
    assert!(Service::build(settings, clock).is_err());
}
