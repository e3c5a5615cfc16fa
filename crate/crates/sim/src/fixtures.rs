//! Seeded generators for topology files, monitoring feeds and the reference
//! four-view configuration.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Duration as Span;
use gridops_core::adapters::FileFormat;
use gridops_core::clock::{format_timestamp, Timestamp};
use gridops_core::{AdapterSpec, CacheType, ConfigSet, Element, TriggerRule, ViewConfig, ViewDocument};
use gridops_workflow::Topology;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REGIONS: [&str; 6] = ["BR", "AR", "CL", "MX", "CO", "PT"];
const SERVICES: [&str; 5] = ["CE", "SE", "BDII", "WMS", "MON"];
pub const SAM_TESTS: [&str; 6] = ["job-submit", "replica-mgmt", "bdii-sites", "ca-certs", "sw-version", "ping"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyFixture {
    pub sites: ViewDocument,
    pub nodes: ViewDocument,
}

impl TopologyFixture {
    pub fn topology(&self) -> Topology {
        Topology::load_parts(&self.sites, Some(&self.nodes)).expect("generated topology is valid")
    }

    pub fn sites_xml(&self) -> String {
        self.sites.to_xml_pretty()
    }

    pub fn nodes_xml(&self) -> String {
        self.nodes.to_xml_pretty()
    }

    /// Writes `sites.xml` and `nodes.xml` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let sites = dir.join("sites.xml");
        let nodes = dir.join("nodes.xml");
        fs::write(&sites, self.sites_xml())?;
        fs::write(&nodes, self.nodes_xml())?;
        Ok((sites, nodes))
    }
}

pub fn site_name(i: usize) -> String {
    format!("SITE-{i:03}")
}

/// `n_sites` sites with 1 to 4 nodes each. The same seed gives the same bytes.
pub fn generate_topology(n_sites: usize, seed: u64) -> TopologyFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = Element::new("sites");
    let mut nodes = Element::new("nodes");
    let epoch = Timestamp::from_timestamp(1_259_625_600, 0).unwrap();
    for i in 0..n_sites {
        let name = site_name(i);
        let domain = format!("site{i:03}.example.org");
        let status = match rng.gen_range(0..20) {
            0 => "SUSPENDED",
            1 | 2 => "UNCERTIFIED",
            _ => "CERTIFIED",
        };
        let mut site = Element::new("site")
            .with_attr("name", &name)
            .with_attr("region", *REGIONS.choose(&mut rng).unwrap())
            .with_attr("contact", format!("grid-admin@{domain}"))
            .with_attr("status", status);
        if rng.gen_bool(0.1) {
            let start = epoch + Span::hours(rng.gen_range(0..72));
            site.push(
                Element::new("downtime")
                    .with_attr("start", format_timestamp(start))
                    .with_attr("end", format_timestamp(start + Span::hours(rng.gen_range(1..12)))),
            );
        }
        sites.push(site);
        let count = rng.gen_range(1..=4);
        let mut services = SERVICES.to_vec();
        services.shuffle(&mut rng);
        for service in &services[..count] {
            nodes.push(
                Element::new("node")
                    .with_attr("hostname", format!("{}.{domain}", service.to_ascii_lowercase()))
                    .with_attr("type", *service)
                    .with_attr("site", &name),
            );
        }
    }
    TopologyFixture {
        sites: ViewDocument::new(sites),
        nodes: ViewDocument::new(nodes),
    }
}

/// One failure record in the monitoring feed format.
pub fn failure(sensor: &str, test: &str, node: &str, time: Timestamp) -> Element {
    Element::new("failure")
        .with_attr("sensor", sensor)
        .with_attr("test", test)
        .with_attr("node", node)
        .with_attr("time", format_timestamp(time))
}

/// `per_site` distinct failures for every site, all at or before `at`.
pub fn generate_failures(topology: &Topology, per_site: usize, seed: u64, at: Timestamp) -> ViewDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feed = Element::new("sam");
    for site in topology.sites() {
        let nodes: Vec<_> = topology.nodes_of(&site.name).collect();
        for j in 0..per_site {
            let node = nodes.choose(&mut rng).expect("every site has a node");
            let test = SAM_TESTS.choose(&mut rng).unwrap();
            // Distinct minutes keep every record a separate alarm.
            feed.push(failure(&node.service_type, test, &node.hostname, at - Span::minutes(j as i64)));
        }
    }
    ViewDocument::new(feed)
}

/// The four-view reference configuration: a file view in memory, a table
/// view on disk, an uncached remote view and a view derived from the table.
/// Source files are looked up in `dir`.
pub fn fig2_config(dir: &Path) -> ConfigSet {
    let views = vec![
        ViewConfig::new(
            "fileView",
            AdapterSpec::LocalFile {
                path: dir.join("file-source.xml"),
                format: FileFormat::Xml,
            },
            CacheType::Memory,
        ),
        ViewConfig::new(
            "dbView",
            AdapterSpec::TableSource {
                path: dir.join("db-source.tsv"),
                delimiter: '\t',
            },
            CacheType::Disk,
        )
        .ttl(Duration::from_secs(3600)),
        // Stands in for the web-service source; a file keeps the fixture
        // usable offline.
        ViewConfig::new(
            "wsView",
            AdapterSpec::LocalFile {
                path: dir.join("ws-source.txt"),
                format: FileFormat::Flat,
            },
            CacheType::None,
        ),
        ViewConfig::new(
            "derivedView",
            AdapterSpec::ViewTransform {
                source: "dbView".into(),
                query: "/rows/row[@status='DOWN']".into(),
                root: Some("down".into()),
            },
            CacheType::Memory,
        )
        .depends_on("dbView")
        .trigger(TriggerRule::DependencyUpdated { view: "dbView".into() }),
    ];
    ConfigSet::new(views, Vec::new()).with_cache_dir(dir.join("cache"))
}

/// Writes the reference configuration and its source files; returns the
/// configuration path.
pub fn write_fig2_fixture(dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir.join("cache"))?;
    let fixture = generate_topology(4, 1);
    fs::write(dir.join("file-source.xml"), fixture.sites_xml())?;
    fs::write(
        dir.join("db-source.tsv"),
        "site\tnode\tstatus\nSITE-000\tce.site000.example.org\tOK\nSITE-001\tse.site001.example.org\tDOWN\n",
    )?;
    fs::write(dir.join("ws-source.txt"), "service=bdii\nstatus=OK\n")?;
    // Relative paths, so the file can be moved together with its sources.
    let config = fig2_config(Path::new(""));
    let path = dir.join("fig2.xml");
    fs::write(&path, config.to_string())?;
    Ok(path)
}
