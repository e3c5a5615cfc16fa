//! Scenario scripts: a seed, a topology size and time-ordered steps.
//!
//! ```toml
//! seed = 7
//! sites = 12
//!
//! [[steps]]
//! at = 0
//! action = "inject-failure"
//! count = 3
//!
//! [[steps]]
//! at = 60
//! action = "operator-action"
//! op = "assign"
//! alarm = 1
//! ```

use std::path::Path;
use std::time::Duration;

use gridops_core::config::parse_seconds;
use gridops_workflow::{AlarmAction, AlarmId, StoreId};
use thiserror::Error;
use toml::{Table, Value};

pub const DEFAULT_SITES: usize = 8;
pub const DEFAULT_OPERATOR: &str = "cod";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SCRIPT_INVALID: {0}")]
pub struct ScriptError(pub String);

impl ScriptError {
    pub fn code(&self) -> &'static str {
        "SCRIPT_INVALID"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operation {
    Alarm { alarm: AlarmId, action: AlarmAction },
    CreateTicket { site: String, subject: String, node: Option<String>, alarm: Option<AlarmId> },
    UpdateTicket { ticket: String, field: String, value: String, store: StoreId },
    Escalate { ticket: String, store: StoreId },
    Synchronize,
    AutoClose,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    InjectFailure { count: usize, site: Option<String>, node: Option<String>, test: Option<String> },
    StopSource { source: String },
    ResumeSource { source: String },
    OperatorAction { operator: String, operation: Operation },
    Refresh { view: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// Offset from the scenario start.
    pub at: Duration,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioScript {
    pub seed: u64,
    pub sites: usize,
    pub steps: Vec<Step>,
}

impl Default for ScenarioScript {
    fn default() -> Self {
        Self {
            seed: 0,
            sites: DEFAULT_SITES,
            steps: Vec::new(),
        }
    }
}

struct Fields<'a> {
    index: usize,
    table: &'a Table,
}

impl Fields<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> ScriptError {
        ScriptError(format!("step {}: {msg}", self.index + 1))
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>, ScriptError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Integer(i)) => Ok(Some(i.to_string())),
            Some(_) => Err(self.err(format!("`{key}` must be a string"))),
        }
    }

    fn str(&self, key: &str) -> Result<String, ScriptError> {
        self.opt_str(key)?.ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn opt_uint(&self, key: &str) -> Result<Option<u64>, ScriptError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.err(format!("`{key}` must be a non-negative integer"))),
        }
    }

    fn uint(&self, key: &str) -> Result<u64, ScriptError> {
        self.opt_uint(key)?.ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn store(&self) -> Result<StoreId, ScriptError> {
        match self.opt_str("store")? {
            None => Ok(StoreId::Ops),
            Some(s) => s.parse().map_err(|e| self.err(e)),
        }
    }

    fn at(&self) -> Result<Duration, ScriptError> {
        match self.table.get("at") {
            Some(Value::Integer(i)) if *i >= 0 => Ok(Duration::from_secs(*i as u64)),
            Some(Value::Float(f)) if *f >= 0.0 && f.is_finite() => Ok(Duration::from_secs_f64(*f)),
            Some(Value::String(s)) => parse_seconds(s).map_err(|e| self.err(e)),
            Some(_) => Err(self.err("`at` must be a non-negative number of seconds")),
            None => Err(self.err("missing `at`")),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ScriptError> {
        for key in self.table.keys() {
            if key != "at" && key != "action" && !allowed.contains(&key.as_str()) {
                return Err(self.err(format!("unknown field `{key}`")));
            }
        }
        Ok(())
    }

    fn operation(&self) -> Result<Operation, ScriptError> {
        let op = self.str("op")?;
        let alarm_action = |make: fn(u64) -> AlarmAction, keys: &[&str]| -> Result<Operation, ScriptError> {
            self.check_keys(keys)?;
            let master = self.opt_uint("master")?.unwrap_or(0);
            Ok(Operation::Alarm {
                alarm: self.uint("alarm")?,
                action: make(master),
            })
        };
        let base = ["op", "operator", "alarm"];
        match op.as_str() {
            "assign" => alarm_action(|_| AlarmAction::Assign, &base),
            "set-off" => alarm_action(|_| AlarmAction::SetOff, &base),
            "close" => alarm_action(|_| AlarmAction::Close, &base),
            "unmask" => alarm_action(|_| AlarmAction::Unmask, &base),
            "mask" => {
                self.uint("master")?;
                alarm_action(AlarmAction::Mask, &["op", "operator", "alarm", "master"])
            }
            "create-ticket" => {
                self.check_keys(&["op", "operator", "site", "subject", "node", "alarm"])?;
                Ok(Operation::CreateTicket {
                    site: self.str("site")?,
                    subject: self.str("subject")?,
                    node: self.opt_str("node")?,
                    alarm: self.opt_uint("alarm")?,
                })
            }
            "update-ticket" => {
                self.check_keys(&["op", "operator", "ticket", "field", "value", "store"])?;
                Ok(Operation::UpdateTicket {
                    ticket: self.str("ticket")?,
                    field: self.str("field")?,
                    value: self.str("value")?,
                    store: self.store()?,
                })
            }
            "escalate" => {
                self.check_keys(&["op", "operator", "ticket", "store"])?;
                Ok(Operation::Escalate {
                    ticket: self.str("ticket")?,
                    store: self.store()?,
                })
            }
            "synchronize" => {
                self.check_keys(&["op", "operator"])?;
                Ok(Operation::Synchronize)
            }
            "auto-close" => {
                self.check_keys(&["op", "operator"])?;
                Ok(Operation::AutoClose)
            }
            other => Err(self.err(format!("unknown operator action `{other}`"))),
        }
    }

    fn step(&self) -> Result<Step, ScriptError> {
        let at = self.at()?;
        let action = match self.str("action")?.as_str() {
            "inject-failure" => {
                self.check_keys(&["count", "site", "node", "test"])?;
                let count = self.opt_uint("count")?.unwrap_or(1) as usize;
                if count == 0 {
                    return Err(self.err("`count` must be at least 1"));
                }
                Action::InjectFailure {
                    count,
                    site: self.opt_str("site")?,
                    node: self.opt_str("node")?,
                    test: self.opt_str("test")?,
                }
            }
            "stop-source" => {
                self.check_keys(&["source"])?;
                Action::StopSource { source: self.str("source")? }
            }
            "resume-source" => {
                self.check_keys(&["source"])?;
                Action::ResumeSource { source: self.str("source")? }
            }
            "operator-action" => Action::OperatorAction {
                operation: self.operation()?,
                operator: self.opt_str("operator")?.unwrap_or_else(|| DEFAULT_OPERATOR.to_string()),
            },
            "refresh" => {
                self.check_keys(&["view"])?;
                Action::Refresh { view: self.str("view")? }
            }
            other => return Err(self.err(format!("unknown action `{other}`"))),
        };
        Ok(Step { at, action })
    }
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ScriptError(e.message().to_string()))?;
        let mut script = ScenarioScript::default();
        for (key, value) in &table {
            match (key.as_str(), value) {
                ("seed", Value::Integer(i)) if *i >= 0 => script.seed = *i as u64,
                ("sites", Value::Integer(i)) if *i >= 0 => script.sites = *i as usize,
                ("steps", Value::Array(steps)) => {
                    for (index, step) in steps.iter().enumerate() {
                        let Value::Table(table) = step else {
                            return Err(ScriptError(format!("step {} is not a table", index + 1)));
                        };
                        script.steps.push(Fields { index, table }.step()?);
                    }
                }
                (k @ ("seed" | "sites" | "steps"), _) => {
                    return Err(ScriptError(format!("`{k}` has the wrong type")));
                }
                (other, _) => return Err(ScriptError(format!("unknown top-level key `{other}`"))),
            }
        }
        script.check_order()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn check_order(&self) -> Result<(), ScriptError> {
        for (i, pair) in self.steps.windows(2).enumerate() {
            if pair[1].at < pair[0].at {
                return Err(ScriptError(format!("step {} goes back in time", i + 2)));
            }
        }
        Ok(())
    }
}
