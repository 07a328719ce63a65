use std::fmt::Write;

use super::TopologySpec;
use crate::overlay::GroupAssignment;

/// Renders the deployment manifest: a line-oriented `key = value` document
/// with a fixed field order. Groups and peers are listed in identifier order,
/// so identical inputs always produce identical bytes.
pub fn export_manifest(assignment: &GroupAssignment, spec: &TopologySpec) -> String {
    let mut out = String::new();
    let field = |v: &str| if v.is_empty() { "-".to_owned() } else { v.to_owned() };
    let join = |items: Vec<String>| if items.is_empty() { "-".to_owned() } else { items.join(",") };

    let _ = writeln!(out, "manifest.version = 1");
    let _ = writeln!(out, "app = {}", field(&spec.app_name));
    let _ = writeln!(out, "actor = {}", field(&spec.actor_name));
    let _ = writeln!(out, "component = {}", field(&spec.component_name));
    let _ = writeln!(out, "topology = {}", spec.preset);
    let _ = writeln!(out, "leaders = {}", if spec.leaders_enabled { "on" } else { "off" });
    let _ = writeln!(out, "peers = {}", spec.peers.len());
    let _ = writeln!(out, "groups = {}", assignment.groups().count());
    for g in assignment.groups() {
        let _ = writeln!(out, "group.{}.weight = {}", g.id, g.weight);
        let _ = writeln!(out, "group.{}.senders = {}", g.id, join(g.senders.iter().map(|n| n.to_string()).collect()));
        let _ = writeln!(out, "group.{}.receivers = {}", g.id, join(g.receivers.iter().map(|n| n.to_string()).collect()));
    }
    for peer in &spec.peers {
        let name = &peer.name;
        let _ = writeln!(out, "peer.{name}.host = {}", field(peer.host.as_deref().unwrap_or("")));
        let send: Vec<String> = assignment.send_grps(name).iter().map(|g| g.to_string()).collect();
        let recv: Vec<String> = assignment.recv_grps(name).iter().map(|g| g.to_string()).collect();
        let _ = writeln!(out, "peer.{name}.send = {}", join(send));
        let _ = writeln!(out, "peer.{name}.recv = {}", join(recv));
    }
    out
}
