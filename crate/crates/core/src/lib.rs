//! Group-based virtual topologies for peer-to-peer applications.
//!
//! The crate is organised bottom-up:
//!
//! * [`toplink`] parses the TopLink topology language and expands presets into
//!   a concrete [`DirectedGraph`].
//! * [`overlay`] turns a graph into send/receive groups and back.
//! * [`bpd`] is the bounded path dissemination protocol together with its
//!   fault-tolerance handlers.
//! * [`simnet`] is a deterministic round-based simulator that runs a
//!   [`workloads::Strategy`] over an overlay under a fault schedule.
//! * [`metrics`] and [`scenario`] turn simulation traces into the reported
//!   measurements and CSV files.

pub mod bpd;
pub mod cost;
pub mod graph;
pub mod metrics;
pub mod overlay;
pub mod scenario;
pub mod simnet;
pub mod toplink;
pub mod workloads;

pub use crate::{
    bpd::{default_threshold, Bpd, BpdConfig, BpdError, PathTable},
    cost::Cost,
    graph::{DirectedGraph, GraphError, NodeId},
    overlay::{Group, GroupAssignment, GroupId, MembershipEvent, MembershipKind, OverlayError, Role},
    simnet::{FaultAction, FaultSchedule, RoundStats, SimConfig, World},
    toplink::{LinkDef, ParseError, ParseErrorKind, Preset, TopologySpec},
    workloads::Strategy,
};
