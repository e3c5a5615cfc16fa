use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridops")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const VIEWS: &str = r#"<views>
  <view name="sites">
    <adapter kind="local-file" path="sites.xml"/>
    <fallback error="any" action="raise"/>
  </view>
  <view name="brazil">
    <adapter kind="view-transform" source="sites" query="/sites/site[@region='BR']"/>
    <dependency view="sites"/>
    <trigger kind="dependency-updated" view="sites"/>
  </view>
  <view name="gone">
    <adapter kind="local-file" path="absent.xml"/>
    <fallback error="any" action="raise"/>
  </view>
</views>"#;

const SITES: &str = r#"<sites><site name="CBPF" region="BR"/><site name="UNIANDES" region="CO"/><site name="UFRJ" region="BR"/></sites>"#;

fn workspace(dir: &Path) -> String {
    fs::write(dir.join("views.xml"), VIEWS).unwrap();
    fs::write(dir.join("sites.xml"), SITES).unwrap();
    dir.join("views.xml").display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(gridops(&[]).status.code(), Some(2));
    assert_eq!(gridops(&["launch"]).status.code(), Some(2));
    assert_eq!(gridops(&["query", "sites"]).status.code(), Some(2));
    assert_eq!(gridops(&["query", "sites", "/x", "--config", "v.xml", "--format", "yaml"]).status.code(), Some(2));
    assert_eq!(gridops(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_config_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let views = workspace(dir.path());
    let ok = gridops(&["validate-config", &views]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("3 views"));

    let cyclic = dir.path().join("cyclic.xml");
    fs::write(
        &cyclic,
        r#"<views>
  <view name="a"><adapter kind="view-transform" source="c" query="/x"/><dependency view="c"/></view>
  <view name="b"><adapter kind="view-transform" source="a" query="/x"/><dependency view="a"/></view>
  <view name="c"><adapter kind="view-transform" source="b" query="/x"/><dependency view="b"/></view>
</views>"#,
    )
    .unwrap();
    let bad = gridops(&["validate-config", cyclic.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    let msg = stderr(&bad);
    assert!(msg.starts_with("CYCLE_DETECTED"), "{msg}");
    for v in ["a", "b", "c"] {
        assert!(msg.contains(v), "{msg}");
    }

    let dangling = dir.path().join("dangling.xml");
    fs::write(&dangling, r#"<views><view name="x"><adapter kind="view-transform" source="y" query="/x"/><dependency view="y"/></view></views>"#).unwrap();
    let bad = gridops(&["validate-config", dangling.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).starts_with("CONFIG_INVALID"), "{}", stderr(&bad));

    let missing = gridops(&["validate-config", dir.path().join("nope.xml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn refresh_reports_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let views = workspace(dir.path());
    let ok = gridops(&["refresh", "brazil", "--config", &views]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let v: Value = serde_json::from_str(stdout(&ok).trim()).unwrap();
    assert_eq!(v["view"], "brazil");
    assert_eq!(v["result"]["outcome"], "EXPOSED");

    let failed = gridops(&["refresh", "gone", "--config", &views]);
    assert_eq!(failed.status.code(), Some(1));
    assert!(stderr(&failed).starts_with("SOURCE_UNREACHABLE"), "{}", stderr(&failed));

    let unknown = gridops(&["refresh", "nothing", "--config", &views]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr(&unknown).starts_with("VIEW_NOT_FOUND"), "{}", stderr(&unknown));
}

#[test]
fn query_prints_matches() {
    let dir = tempfile::tempdir().unwrap();
    let views = workspace(dir.path());
    let out = gridops(&["query", "sites", "/sites/site[@region='BR']", "--config", &views]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("CBPF") && text.contains("UFRJ") && !text.contains("UNIANDES"), "{text}");

    let json = gridops(&["query", "sites", "/sites/site", "--config", &views, "--format", "json"]);
    assert_eq!(json.status.code(), Some(0), "{}", stderr(&json));
    let _: Value = serde_json::from_str(stdout(&json).trim()).unwrap();

    let bad = gridops(&["query", "sites", "/sites/site[", "--config", &views]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).starts_with("QUERY_PARSE_ERROR"), "{}", stderr(&bad));
}

const SCRIPT: &str = r#"
seed = 11
sites = 4

[[steps]]
at = 0
action = "inject-failure"
count = 3

[[steps]]
at = 30
action = "refresh"
view = "alarms"

[[steps]]
at = 60
action = "operator-action"
op = "assign"
alarm = 1
"#;

#[test]
fn scenario_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.toml");
    fs::write(&script, SCRIPT).unwrap();
    let path = script.to_str().unwrap();
    let first = gridops(&["scenario", "run", path]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(stdout(&first), stdout(&gridops(&["scenario", "run", path])));
    assert!(stdout(&first).lines().all(|l| l.starts_with("t=")), "{}", stdout(&first));
    assert!(stdout(&first).contains("OPERATOR"), "{}", stdout(&first));

    let json = gridops(&["scenario", "run", path, "--json"]);
    let lines: Vec<Value> = stdout(&json).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), stdout(&first).lines().count());

    fs::write(&script, "seed = 1\n[[steps]]\nat = 0\naction = \"teleport\"\n").unwrap();
    let bad = gridops(&["scenario", "run", path]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).starts_with("SCRIPT_INVALID"), "{}", stderr(&bad));
}

#[test]
fn four_view_fixture_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = gridops_sim::write_fig2_fixture(dir.path()).unwrap();
    let out = gridops(&["validate-config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 views"), "{}", stdout(&out));
}
