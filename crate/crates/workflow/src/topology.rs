//! Static site and node registry, contact lookup and per-site summaries.
//!
//! ```xml
//! <sites>
//!   <site name="CBPF" region="BR" contact="ops@cbpf.example" status="CERTIFIED">
//!     <downtime start="2009-12-01T00:00:00Z" end="2009-12-01T06:00:00Z"/>
//!   </site>
//! </sites>
//! <nodes><node hostname="ce01.cbpf.example" type="CE" site="CBPF"/></nodes>
//! ```
//!
//! A `<topology>` element holding one `<sites>` and one `<nodes>` is also
//! accepted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use gridops_core::clock::{format_timestamp, parse_timestamp, Timestamp};
use gridops_core::{Element, ViewDocument};
use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("TOPOLOGY_MALFORMED: {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("SITE_NOT_FOUND: no site named `{0}`")]
    SiteNotFound(String),
    #[error("CONTACT_MISSING: site `{0}` has no contact address")]
    ContactMissing(String),
}

impl TopologyError {
    pub fn code(&self) -> &'static str {
        match self {
            TopologyError::Malformed { .. } => "TOPOLOGY_MALFORMED",
            TopologyError::SiteNotFound(_) => "SITE_NOT_FOUND",
            TopologyError::ContactMissing(_) => "CONTACT_MISSING",
        }
    }
}

fn malformed(path: impl Into<String>, message: impl Into<String>) -> TopologyError {
    TopologyError::Malformed {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificationStatus {
    Certified,
    Uncertified,
    Suspended,
}

impl CertificationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertificationStatus::Certified => "CERTIFIED",
            CertificationStatus::Uncertified => "UNCERTIFIED",
            CertificationStatus::Suspended => "SUSPENDED",
        }
    }
}

impl FromStr for CertificationStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CERTIFIED" => Ok(Self::Certified),
            "UNCERTIFIED" => Ok(Self::Uncertified),
            "SUSPENDED" => Ok(Self::Suspended),
            _ => Err(format!("unknown certification status `{s}`")),
        }
    }
}

impl fmt::Display for CertificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Downtime {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Downtime {
    /// Half-open: `start <= now < end`.
    pub fn contains(&self, now: Timestamp) -> bool {
        self.start <= now && now < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Site {
    pub name: String,
    pub region: String,
    pub contact_email: String,
    pub certification_status: CertificationStatus,
    pub scheduled_downtimes: Vec<Downtime>,
}

impl Site {
    pub fn in_downtime(&self, now: Timestamp) -> bool {
        self.scheduled_downtimes.iter().any(|d| d.contains(now))
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("site")
            .with_attr("name", &self.name)
            .with_attr("region", &self.region)
            .with_attr("contact", &self.contact_email)
            .with_attr("status", self.certification_status.as_str());
        for d in &self.scheduled_downtimes {
            el.push(
                Element::new("downtime")
                    .with_attr("start", format_timestamp(d.start))
                    .with_attr("end", format_timestamp(d.end)),
            );
        }
        el
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub hostname: String,
    pub service_type: String,
    pub site: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    sites: BTreeMap<String, Site>,
    nodes: BTreeMap<String, Node>,
}

fn required<'a>(el: &'a Element, attr: &str, path: &str) -> Result<&'a str, TopologyError> {
    el.attr(attr)
        .ok_or_else(|| malformed(path, format!("missing attribute `{attr}`")))
}

fn timestamp(el: &Element, attr: &str, path: &str) -> Result<Timestamp, TopologyError> {
    let text = required(el, attr, path)?;
    parse_timestamp(text).ok_or_else(|| malformed(path, format!("`{attr}` is not a timestamp: `{text}`")))
}

impl Topology {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Loads a `<sites>` document or a `<topology>` wrapper.
    pub fn load(doc: &ViewDocument) -> Result<Self, TopologyError> {
        match doc.root.label.as_str() {
            "sites" => Self::from_elements(&doc.root, None),
            "topology" => {
                let sites = doc
                    .root
                    .first_named("sites")
                    .ok_or_else(|| malformed("/topology", "missing `sites`"))?;
                for child in doc.root.elements() {
                    if child.label != "sites" && child.label != "nodes" {
                        return Err(malformed(
                            format!("/topology/{}", child.label),
                            "unexpected element",
                        ));
                    }
                }
                Self::from_elements(sites, doc.root.first_named("nodes"))
            }
            other => Err(malformed(format!("/{other}"), "expected `sites` or `topology`")),
        }
    }

    pub fn load_parts(sites: &ViewDocument, nodes: Option<&ViewDocument>) -> Result<Self, TopologyError> {
        if sites.root.label != "sites" {
            return Err(malformed(format!("/{}", sites.root.label), "expected `sites`"));
        }
        if let Some(n) = nodes {
            if n.root.label != "nodes" {
                return Err(malformed(format!("/{}", n.root.label), "expected `nodes`"));
            }
        }
        Self::from_elements(&sites.root, nodes.map(|n| &n.root))
    }

    fn from_elements(sites: &Element, nodes: Option<&Element>) -> Result<Self, TopologyError> {
        let mut topo = Topology::default();
        for (i, el) in sites.elements().enumerate() {
            let path = format!("/sites/{}[{}]", el.label, i + 1);
            if el.label != "site" {
                return Err(malformed(path, "expected `site`"));
            }
            let name = required(el, "name", &path)?;
            if name.is_empty() {
                return Err(malformed(path, "empty site name"));
            }
            let status = required(el, "status", &path)?
                .parse()
                .map_err(|e: String| malformed(&path, e))?;
            let mut downtimes = Vec::new();
            for (j, d) in el.elements().enumerate() {
                let dpath = format!("{path}/{}[{}]", d.label, j + 1);
                if d.label != "downtime" {
                    return Err(malformed(dpath, "expected `downtime`"));
                }
                let start = timestamp(d, "start", &dpath)?;
                let end = timestamp(d, "end", &dpath)?;
                if start >= end {
                    return Err(malformed(dpath, "downtime must start before it ends"));
                }
                downtimes.push(Downtime { start, end });
            }
            let site = Site {
                name: name.to_string(),
                region: el.attr("region").unwrap_or_default().to_string(),
                contact_email: el.attr("contact").unwrap_or_default().to_string(),
                certification_status: status,
                scheduled_downtimes: downtimes,
            };
            if topo.sites.insert(site.name.clone(), site).is_some() {
                return Err(malformed(path, format!("duplicate site `{name}`")));
            }
        }
        for (i, el) in nodes.map(|n| n.elements().collect::<Vec<_>>()).unwrap_or_default().into_iter().enumerate() {
            let path = format!("/nodes/{}[{}]", el.label, i + 1);
            if el.label != "node" {
                return Err(malformed(path, "expected `node`"));
            }
            let hostname = required(el, "hostname", &path)?;
            let site = required(el, "site", &path)?;
            if !topo.sites.contains_key(site) {
                return Err(malformed(path, format!("unknown site `{site}`")));
            }
            let node = Node {
                hostname: hostname.to_string(),
                service_type: el.attr("type").unwrap_or_default().to_string(),
                site: site.to_string(),
            };
            if topo.nodes.insert(node.hostname.clone(), node).is_some() {
                return Err(malformed(path, format!("duplicate node `{hostname}`")));
            }
        }
        Ok(topo)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn site(&self, name: &str) -> Result<&Site, TopologyError> {
        self.sites
            .get(name)
            .ok_or_else(|| TopologyError::SiteNotFound(name.to_string()))
    }

    pub fn node(&self, hostname: &str) -> Option<&Node> {
        self.nodes.get(hostname)
    }

    pub fn site_of_node(&self, hostname: &str) -> Option<&str> {
        self.nodes.get(hostname).map(|n| n.site.as_str())
    }

    pub fn nodes_of<'a>(&'a self, site: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.nodes.values().filter(move |n| n.site == site)
    }

    pub fn contact_for(&self, site: &str) -> Result<&str, TopologyError> {
        let site = self.site(site)?;
        if site.contact_email.trim().is_empty() {
            return Err(TopologyError::ContactMissing(site.name.clone()));
        }
        Ok(&site.contact_email)
    }

    pub fn sites_document(&self) -> ViewDocument {
        let mut root = Element::new("sites");
        for site in self.sites.values() {
            root.push(site.to_element());
        }
        ViewDocument::new(root)
    }

    pub fn nodes_document(&self) -> ViewDocument {
        let mut root = Element::new("nodes");
        for node in self.nodes.values() {
            root.push(
                Element::new("node")
                    .with_attr("hostname", &node.hostname)
                    .with_attr("type", &node.service_type)
                    .with_attr("site", &node.site),
            );
        }
        ViewDocument::new(root)
    }
}

/// Shared registry, replaced wholesale on reload.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    current: Arc<RwLock<Arc<Topology>>>,
}

impl Registry {
    pub fn new(topology: Topology) -> Self {
        Self {
            current: Arc::new(RwLock::new(Arc::new(topology))),
        }
    }

    pub fn snapshot(&self) -> Arc<Topology> {
        self.current.read().clone()
    }

    pub fn replace(&self, topology: Topology) {
        *self.current.write() = Arc::new(topology);
    }
}

/// One input view of a summary and the time it was generated.
#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    pub document: &'a ViewDocument,
    pub generated_at: Timestamp,
}

const OPEN_ALARM: [&str; 2] = ["NEW", "ASSIGNED"];
const OPEN_TICKET: [&str; 2] = ["OPEN", "IN_PROGRESS"];

fn open_records(section: Section<'_>, label: &str, site: &str, open: &[&str]) -> Element {
    let mut out = Element::new(label).with_attr("generated-at", format_timestamp(section.generated_at));
    let mut count = 0usize;
    let mut visit = |record: &Element| {
        if record.attr("site") == Some(site)
            && record.attr("status").is_some_and(|s| open.contains(&s))
        {
            out.push(record.clone());
            count += 1;
        }
    };
    // Either a flat list of records or a site-split document of buckets.
    for child in section.document.root.elements() {
        if child.label == "bucket" {
            child.elements().for_each(&mut visit);
        } else {
            visit(child);
        }
    }
    out.set_attr("count", count.to_string());
    out
}

/// Static record, downtime flag, open alarms and open tickets for one site.
pub fn site_summary(
    topology: &Topology,
    site: &str,
    alarms: Section<'_>,
    tickets: Section<'_>,
    now: Timestamp,
) -> Result<ViewDocument, TopologyError> {
    let record = topology.site(site)?;
    let mut root = Element::new("site-summary")
        .with_attr("site", &record.name)
        .with_attr("generated-at", format_timestamp(now))
        .with_attr("downtime", record.in_downtime(now).to_string());
    root.push(record.to_element());
    let mut nodes = Element::new("nodes");
    for node in topology.nodes_of(&record.name) {
        nodes.push(
            Element::new("node")
                .with_attr("hostname", &node.hostname)
                .with_attr("type", &node.service_type),
        );
    }
    root.push(nodes);
    root.push(open_records(alarms, "alarms", &record.name, &OPEN_ALARM));
    root.push(open_records(tickets, "tickets", &record.name, &OPEN_TICKET));
    Ok(ViewDocument::new(root))
}

/// One row of the site grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteOverview {
    pub name: String,
    pub open_alarm_count: usize,
    pub open_ticket_count: usize,
    pub in_downtime: bool,
}

fn open_counts<'a>(section: Section<'a>, open: &[&str]) -> BTreeMap<&'a str, usize> {
    let mut counts = BTreeMap::new();
    let mut visit = |record: &'a Element| {
        if let Some(site) = record.attr("site") {
            if record.attr("status").is_some_and(|s| open.contains(&s)) {
                *counts.entry(site).or_insert(0) += 1;
            }
        }
    };
    for child in section.document.root.elements() {
        if child.label == "bucket" {
            child.elements().for_each(&mut visit);
        } else {
            visit(child);
        }
    }
    counts
}

/// Open alarm and ticket counts for every site, with the same notion of open
/// as [`site_summary`].
pub fn site_overview(topology: &Topology, alarms: Section<'_>, tickets: Section<'_>, now: Timestamp) -> Vec<SiteOverview> {
    let alarm_counts = open_counts(alarms, &OPEN_ALARM);
    let ticket_counts = open_counts(tickets, &OPEN_TICKET);
    topology
        .sites()
        .map(|site| SiteOverview {
            name: site.name.clone(),
            open_alarm_count: alarm_counts.get(site.name.as_str()).copied().unwrap_or(0),
            open_ticket_count: ticket_counts.get(site.name.as_str()).copied().unwrap_or(0),
            in_downtime: site.in_downtime(now),
        })
        .collect()
}
