//! Random generators and brute-force oracles shared by the property tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use chrono::{DateTime, Utc};
use gridops_core::{
    AdapterSpec, CacheType, ConfigSet, Element, Event, Node, TriggerRule, ViewConfig, ViewDocument,
};
use rand::seq::SliceRandom;
use rand::Rng;

const LABELS: [&str; 5] = ["site", "node", "alarm", "ticket", "item"];
const ATTRS: [&str; 3] = ["name", "status", "id"];
const VALUES: [&str; 4] = ["a", "b", "OK", "x y"];
const TEXT_CHARS: &[u8] = b"abcXYZ019 <>&\"'-_.";

fn random_text<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(1..8);
    let mut s: String = (0..len)
        .map(|_| TEXT_CHARS[rng.gen_range(0..TEXT_CHARS.len())] as char)
        .collect();
    // Whitespace-only text does not survive XML parsing.
    if s.trim().is_empty() {
        s.push('z');
    }
    s
}

fn random_element<R: Rng>(rng: &mut R, depth: usize) -> Element {
    let mut el = Element::new(*LABELS.choose(rng).unwrap());
    for name in ATTRS {
        if rng.gen_bool(0.4) {
            el.set_attr(name, *VALUES.choose(rng).unwrap());
        }
    }
    let children = if depth == 0 { 0 } else { rng.gen_range(0..5) };
    for _ in 0..children {
        let last_is_text = matches!(el.children.last(), Some(Node::Text(_)));
        if !last_is_text && rng.gen_bool(0.3) {
            el.children.push(Node::Text(random_text(rng)));
        } else {
            el.push(random_element(rng, depth - 1));
        }
    }
    el
}

pub fn random_document<R: Rng>(rng: &mut R) -> ViewDocument {
    let depth = rng.gen_range(0..5);
    ViewDocument::new(random_element(rng, depth))
}

#[derive(Debug, Clone)]
pub enum Pred {
    Attr(String, String),
    ChildText(String, String),
}

#[derive(Debug, Clone)]
pub struct Query {
    pub steps: Vec<(String, Vec<Pred>)>,
    pub text: bool,
}

impl Query {
    pub fn render(&self) -> String {
        if self.steps.is_empty() {
            return "/".to_string();
        }
        let mut out = String::new();
        for (label, preds) in &self.steps {
            out.push('/');
            out.push_str(label);
            for p in preds {
                match p {
                    Pred::Attr(n, v) => out.push_str(&format!("[@{n}='{v}']")),
                    Pred::ChildText(n, v) => out.push_str(&format!("[{n}='{v}']")),
                }
            }
        }
        if self.text {
            out.push_str("/text()");
        }
        out
    }
}

/// Labels and values biased towards what the document contains.
pub fn random_query<R: Rng>(rng: &mut R, doc: &ViewDocument) -> Query {
    if rng.gen_bool(0.05) {
        return Query {
            steps: Vec::new(),
            text: false,
        };
    }
    let n = rng.gen_range(1..5);
    let mut steps = Vec::new();
    let mut path = Some(&doc.root);
    for i in 0..n {
        let label = match path {
            Some(el) if rng.gen_bool(0.85) => el.label.clone(),
            _ => LABELS.choose(rng).unwrap().to_string(),
        };
        let mut preds = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            if rng.gen_bool(0.6) {
                let value = path
                    .and_then(|el| el.attributes.values().next().cloned())
                    .filter(|_| rng.gen_bool(0.5))
                    .unwrap_or_else(|| VALUES.choose(rng).unwrap().to_string());
                preds.push(Pred::Attr(ATTRS.choose(rng).unwrap().to_string(), value));
            } else {
                let child = path.and_then(|el| el.elements().next());
                let (name, value) = match child {
                    Some(c) if rng.gen_bool(0.5) => (c.label.clone(), c.text().replace('\'', "")),
                    _ => (LABELS.choose(rng).unwrap().to_string(), String::new()),
                };
                preds.push(Pred::ChildText(name, value));
            }
        }
        steps.push((label, preds));
        if i + 1 < n {
            path = path.and_then(|el| {
                let kids: Vec<&Element> = el.elements().collect();
                kids.choose(rng).copied()
            });
        }
    }
    Query {
        steps,
        text: rng.gen_bool(0.2),
    }
}

fn child_text(el: &Element) -> String {
    el.children
        .iter()
        .filter_map(|c| match c {
            Node::Text(t) => Some(t.as_str()),
            Node::Element(_) => None,
        })
        .collect()
}

fn pred_holds(p: &Pred, el: &Element) -> bool {
    match p {
        Pred::Attr(n, v) => el.attributes.get(n).is_some_and(|x| x == v),
        Pred::ChildText(n, v) => el.children.iter().any(|c| match c {
            Node::Element(e) => e.label == *n && child_text(e) == *v,
            Node::Text(_) => false,
        }),
    }
}

/// Visits every element with its root-to-node chain, in document order, and
/// keeps the chains that the query's steps match position by position.
pub fn brute_force_query(doc: &ViewDocument, q: &Query) -> Vec<Node> {
    if q.steps.is_empty() {
        return vec![Node::Element(doc.root.clone())];
    }
    fn walk<'a>(el: &'a Element, chain: &mut Vec<&'a Element>, out: &mut Vec<Vec<&'a Element>>) {
        chain.push(el);
        out.push(chain.clone());
        for c in &el.children {
            if let Node::Element(e) = c {
                walk(e, chain, out);
            }
        }
        chain.pop();
    }
    let mut chains = Vec::new();
    walk(&doc.root, &mut Vec::new(), &mut chains);
    let mut result = Vec::new();
    for chain in chains {
        if chain.len() != q.steps.len() {
            continue;
        }
        let ok = chain.iter().zip(&q.steps).all(|(el, (label, preds))| {
            el.label == *label && preds.iter().all(|p| pred_holds(p, el))
        });
        if !ok {
            continue;
        }
        let selected = *chain.last().unwrap();
        if q.text {
            for c in &selected.children {
                if let Node::Text(t) = c {
                    result.push(Node::Text(t.clone()));
                }
            }
        } else {
            result.push(Node::Element(selected.clone()));
        }
    }
    result
}

/// A random acyclic configuration plus the facts the trigger oracle needs.
pub struct RandomDag {
    pub config: ConfigSet,
    pub names: Vec<String>,
    pub deps: BTreeMap<String, BTreeSet<String>>,
    pub triggers: BTreeMap<String, Vec<TriggerRule>>,
}

pub fn random_dag<R: Rng>(rng: &mut R) -> RandomDag {
    let n = rng.gen_range(1..=12);
    let names: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
    let mut views = Vec::new();
    let mut deps = BTreeMap::new();
    let mut triggers = BTreeMap::new();
    let mut cache = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let earlier = &names[..i];
        let adapter = if !earlier.is_empty() && rng.gen_bool(0.4) {
            AdapterSpec::ViewTransform {
                source: earlier.choose(rng).unwrap().clone(),
                query: "/".into(),
                root: None,
            }
        } else {
            AdapterSpec::Provider { name: "none".into() }
        };
        let kind = if rng.gen_bool(0.2) { CacheType::None } else { CacheType::Memory };
        let mut view = ViewConfig::new(name.clone(), adapter, kind);
        for d in earlier {
            if rng.gen_bool(0.25) {
                view = view.depends_on(d.clone());
            }
        }
        let my_deps: BTreeSet<String> = view.effective_dependencies().into_iter().map(str::to_string).collect();
        let mut rules = Vec::new();
        if kind != CacheType::None {
            for _ in 0..rng.gen_range(0..4) {
                let cached_deps: Vec<&String> = my_deps.iter().filter(|d| cache[*d] != CacheType::None).collect();
                let rule = match rng.gen_range(0..7) {
                    0 => TriggerRule::Notification {
                        topic: format!("t{}", rng.gen_range(0..3)),
                    },
                    1 => TriggerRule::OnRead,
                    2 => TriggerRule::OnWrite,
                    3 => TriggerRule::CacheExpired {
                        max_age: Some(Duration::from_secs(60)),
                    },
                    4 => TriggerRule::Periodic {
                        period: Duration::from_secs(rng.gen_range(1..=600)),
                    },
                    5 => TriggerRule::CronLike {
                        every: Duration::from_secs(rng.gen_range(60..=900)),
                        offset: Duration::from_secs(rng.gen_range(0..60)),
                    },
                    _ => match cached_deps.choose(rng) {
                        Some(d) => TriggerRule::DependencyUpdated { view: (*d).clone() },
                        None => TriggerRule::OnRead,
                    },
                };
                if !rules.contains(&rule) {
                    rules.push(rule);
                }
            }
        }
        for r in &rules {
            view = view.trigger(r.clone());
        }
        cache.insert(name.clone(), kind);
        deps.insert(name.clone(), my_deps);
        triggers.insert(name.clone(), rules);
        views.push(view);
    }
    RandomDag {
        config: ConfigSet::new(views, Vec::new()),
        names,
        deps,
        triggers,
    }
}

pub fn random_event<R: Rng>(rng: &mut R, dag: &RandomDag) -> (Event, Duration) {
    let view = dag.names.choose(rng).unwrap().clone();
    let event = match rng.gen_range(0..6) {
        0 => Event::Notification(format!("t{}", rng.gen_range(0..3))),
        1 => Event::Read(view),
        2 => Event::Write(view),
        3 => Event::CacheExpired(view),
        4 => Event::CacheUpdated(view),
        _ => Event::Tick,
    };
    (event, Duration::from_secs(rng.gen_range(0..=1200)))
}

fn cron_slot(t: DateTime<Utc>, every: Duration, offset: Duration) -> i64 {
    (t.timestamp_millis() - offset.as_millis() as i64).div_euclid(every.as_millis() as i64)
}

/// Views whose rules match `event`, `elapsed` after a load at `start`, in
/// dependency order with ties broken by name.
pub fn trigger_oracle(dag: &RandomDag, event: &Event, start: DateTime<Utc>, elapsed: Duration) -> Vec<String> {
    let now = start + chrono::Duration::from_std(elapsed).unwrap();
    let has = |v: &str, pred: &dyn Fn(&TriggerRule) -> bool| dag.triggers[v].iter().any(pred);
    let mut matched: BTreeSet<String> = BTreeSet::new();
    for v in &dag.names {
        let hit = match event {
            Event::Notification(t) => has(v, &|r| matches!(r, TriggerRule::Notification { topic } if topic == t)),
            Event::Read(x) => x == v && has(v, &|r| *r == TriggerRule::OnRead),
            Event::Write(x) => x == v && has(v, &|r| *r == TriggerRule::OnWrite),
            Event::CacheExpired(x) => x == v && has(v, &|r| matches!(r, TriggerRule::CacheExpired { .. })),
            Event::Tick => has(v, &|r| match r {
                TriggerRule::Periodic { period } => elapsed >= *period,
                TriggerRule::CronLike { every, offset } => cron_slot(now, *every, *offset) > cron_slot(start, *every, *offset),
                _ => false,
            }),
            Event::CacheUpdated(_) => false,
        };
        if hit {
            matched.insert(v.clone());
        }
    }
    if let Event::CacheUpdated(source) = event {
        // Fixed point: an update reaches views listening on it, then views
        // listening on those.
        loop {
            let before = matched.len();
            for v in &dag.names {
                if v != source
                    && has(v, &|r| {
                        matches!(r, TriggerRule::DependencyUpdated { view } if view == source || matched.contains(view))
                    })
                {
                    matched.insert(v.clone());
                }
            }
            if matched.len() == before {
                break;
            }
        }
    }
    // Reachability by Floyd-Warshall over direct dependencies.
    let idx: BTreeMap<&str, usize> = dag.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n = dag.names.len();
    let mut reach = vec![vec![false; n]; n];
    for (v, ds) in &dag.deps {
        for d in ds {
            reach[idx[d.as_str()]][idx[v.as_str()]] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut order = Vec::new();
    let mut left = matched;
    while !left.is_empty() {
        let next = left
            .iter()
            .find(|m| !left.iter().any(|o| reach[idx[o.as_str()]][idx[m.as_str()]]))
            .expect("acyclic")
            .clone();
        left.remove(&next);
        order.push(next);
    }
    order
}
