//! The TopLink topology language.
//!
//! ```text
//! app GroupTestApp;
//! actor Averager;
//! component Avg;
//! topology custom;            // ring | random(<fanout>) | custom
//! nodes { n1 = 10.0.0.1, n2, n3 }
//! links { n1 -> n2; n2 -> n3 weight 2; n3 -> n1; }
//! leaders on;
//! ```

mod build;
mod manifest;
mod parser;

use std::fmt;

use crate::{cost::Cost, graph::NodeId};

pub use self::{
    build::{build_graph, RANDOM_RETRY_BUDGET},
    manifest::export_manifest,
    parser::{parse_toplink, ParseError, ParseErrorKind},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Ring,
    Random { fanout: u32 },
    Custom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Ring => f.write_str("ring"),
            Preset::Random { fanout } => write!(f, "random({fanout})"),
            Preset::Custom => f.write_str("custom"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Peer {
    pub name: NodeId,
    pub host: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkDef {
    pub from: NodeId,
    pub to: NodeId,
    pub weight: Cost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySpec {
    pub app_name: String,
    pub actor_name: String,
    pub component_name: String,
    pub preset: Preset,
    pub peers: Vec<Peer>,
    pub links: Vec<LinkDef>,
    pub leaders_enabled: bool,
}

impl TopologySpec {
    pub fn peer_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.peers.iter().map(|p| &p.name)
    }

    pub fn host_of(&self, node: &NodeId) -> Option<&str> {
        self.peers
            .iter()
            .find(|p| &p.name == node)
            .and_then(|p| p.host.as_deref())
    }
}

/// Canonical text form; re-parsing it yields an equal spec.
impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (kw, value) in [
            ("app", &self.app_name),
            ("actor", &self.actor_name),
            ("component", &self.component_name),
        ] {
            if !value.is_empty() {
                writeln!(f, "{kw} {value};")?;
            }
        }
        writeln!(f, "topology {};", self.preset)?;
        f.write_str("nodes {")?;
        for (i, p) in self.peers.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{}", p.name)?;
            if let Some(host) = &p.host {
                write!(f, " = {host}")?;
            }
        }
        f.write_str(" }\n")?;
        if !self.links.is_empty() {
            f.write_str("links {\n")?;
            for l in &self.links {
                writeln!(f, "    {} -> {} weight {};", l.from, l.to, l.weight)?;
            }
            f.write_str("}\n")?;
        }
        writeln!(f, "leaders {};", if self.leaders_enabled { "on" } else { "off" })
    }
}
