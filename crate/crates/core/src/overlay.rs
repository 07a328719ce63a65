//! Send/receive groups.
//!
//! A group carries one weight. Messages sent by a sender of a group reach the
//! group's receivers, so every `(sender, receiver)` pair of a group is one
//! directed overlay link with the group's weight.

use std::{
    collections::{BTreeMap, BTreeSet},
    fmt,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    cost::Cost,
    graph::{DirectedGraph, NodeId},
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(String);

impl GroupId {
    pub fn new(id: impl Into<String>) -> Self {
        GroupId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        GroupId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sender,
    Receiver,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Sender => "sender",
            Role::Receiver => "receiver",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("node {0} is not a live member of the overlay")]
    InvalidNode(NodeId),
    #[error("group {0} has no alive members")]
    EmptyGroup(GroupId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub id: GroupId,
    pub weight: Cost,
    pub senders: BTreeSet<NodeId>,
    pub receivers: BTreeSet<NodeId>,
    pub leader: Option<NodeId>,
}

impl Group {
    pub fn new(id: GroupId, weight: Cost) -> Self {
        Group { id, weight, senders: BTreeSet::new(), receivers: BTreeSet::new(), leader: None }
    }

    pub fn members(&self) -> BTreeSet<&NodeId> {
        self.senders.iter().chain(&self.receivers).collect()
    }

    /// Number of distinct member nodes.
    pub fn size(&self) -> usize {
        self.members().len()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.senders.contains(node) || self.receivers.contains(node)
    }

    pub fn alive_members<'a>(&'a self, alive: &'a BTreeSet<NodeId>) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.members().into_iter().filter(move |n| alive.contains(*n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MembershipKind {
    MemberLeft,
    MemberJoined,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MembershipEvent {
    pub kind: MembershipKind,
    pub group: GroupId,
    pub node: NodeId,
    pub round: u64,
}

/// The overlay: groups plus the per-node view of which groups it sends and
/// receives on. Every node of the universe has an entry in both maps, possibly
/// empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupAssignment {
    groups: BTreeMap<GroupId, Group>,
    send_grps: BTreeMap<NodeId, BTreeSet<GroupId>>,
    recv_grps: BTreeMap<NodeId, BTreeSet<GroupId>>,
}

static EMPTY: BTreeSet<GroupId> = BTreeSet::new();

/// Derives groups from a graph: one group per (source, out-weight class).
pub fn form_groups(graph: &DirectedGraph) -> GroupAssignment {
    let mut asg = GroupAssignment::default();
    for node in graph.nodes() {
        asg.add_node(node.clone());
    }
    for source in graph.nodes() {
        let mut classes: BTreeMap<Cost, Vec<&NodeId>> = BTreeMap::new();
        for (to, w) in graph.out_neighbors(source) {
            classes.entry(w).or_default().push(to);
        }
        let split = classes.len() > 1;
        for (k, (weight, receivers)) in classes.into_iter().enumerate() {
            let id = if split {
                GroupId::new(format!("g-{source}-{}", k + 1))
            } else {
                GroupId::new(format!("g-{source}"))
            };
            let mut group = Group::new(id.clone(), weight);
            group.senders.insert(source.clone());
            asg.send_grps.get_mut(source).unwrap().insert(id.clone());
            for r in receivers {
                group.receivers.insert(r.clone());
                asg.recv_grps.get_mut(r).unwrap().insert(id.clone());
            }
            asg.groups.insert(id, group);
        }
    }
    asg
}

impl GroupAssignment {
    pub fn add_node(&mut self, node: NodeId) {
        self.send_grps.entry(node.clone()).or_default();
        self.recv_grps.entry(node).or_default();
    }

    /// Inserts an empty group. Existing groups are left untouched.
    pub fn add_group(&mut self, id: GroupId, weight: Cost) {
        self.groups.entry(id.clone()).or_insert_with(|| Group::new(id, weight));
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.send_grps.keys()
    }

    pub fn contains_node(&self, node: &NodeId) -> bool {
        self.send_grps.contains_key(node)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn group(&self, id: &GroupId) -> Option<&Group> {
        self.groups.get(id)
    }

    pub fn weight(&self, id: &GroupId) -> Option<Cost> {
        self.groups.get(id).map(|g| g.weight)
    }

    pub fn send_grps(&self, node: &NodeId) -> &BTreeSet<GroupId> {
        self.send_grps.get(node).unwrap_or(&EMPTY)
    }

    pub fn recv_grps(&self, node: &NodeId) -> &BTreeSet<GroupId> {
        self.recv_grps.get(node).unwrap_or(&EMPTY)
    }

    pub fn is_member(&self, node: &NodeId, id: &GroupId) -> bool {
        self.groups.get(id).is_some_and(|g| g.contains(node))
    }

    /// Adds `node` to `grp` with `role`. Idempotent; returns the
    /// `MemberJoined` event only when the membership is new.
    pub fn join_group(
        &mut self,
        node: &NodeId,
        grp: &GroupId,
        role: Role,
        alive: &BTreeSet<NodeId>,
        round: u64,
    ) -> Result<Option<MembershipEvent>, OverlayError> {
        if !self.contains_node(node) || !alive.contains(node) {
            return Err(OverlayError::InvalidNode(node.clone()));
        }
        let group = self
            .groups
            .get_mut(grp)
            .ok_or_else(|| OverlayError::UnknownGroup(grp.clone()))?;
        let (set, index) = match role {
            Role::Sender => (&mut group.senders, &mut self.send_grps),
            Role::Receiver => (&mut group.receivers, &mut self.recv_grps),
        };
        if !set.insert(node.clone()) {
            return Ok(None);
        }
        index.get_mut(node).unwrap().insert(grp.clone());
        Ok(Some(MembershipEvent {
            kind: MembershipKind::MemberJoined,
            group: grp.clone(),
            node: node.clone(),
            round,
        }))
    }

    /// Detaches every membership of `node` and returns them so they can be
    /// restored later. The node stays in the universe.
    pub fn remove_node(&mut self, node: &NodeId) -> Vec<(GroupId, Role)> {
        let mut out = Vec::new();
        for g in std::mem::take(self.send_grps.get_mut(node).unwrap_or(&mut BTreeSet::new())) {
            if let Some(group) = self.groups.get_mut(&g) {
                group.senders.remove(node);
            }
            out.push((g, Role::Sender));
        }
        for g in std::mem::take(self.recv_grps.get_mut(node).unwrap_or(&mut BTreeSet::new())) {
            if let Some(group) = self.groups.get_mut(&g) {
                group.receivers.remove(node);
            }
            out.push((g, Role::Receiver));
        }
        out
    }

    /// Re-attaches memberships previously returned by [`remove_node`].
    ///
    /// [`remove_node`]: GroupAssignment::remove_node
    pub fn restore(&mut self, node: &NodeId, memberships: &[(GroupId, Role)]) {
        self.add_node(node.clone());
        for (g, role) in memberships {
            let Some(group) = self.groups.get_mut(g) else { continue };
            match role {
                Role::Sender => {
                    group.senders.insert(node.clone());
                    self.send_grps.get_mut(node).unwrap().insert(g.clone());
                }
                Role::Receiver => {
                    group.receivers.insert(node.clone());
                    self.recv_grps.get_mut(node).unwrap().insert(g.clone());
                }
            }
        }
    }

    /// Directed graph induced by the memberships of alive nodes.
    pub fn effective_graph(&self, alive: &BTreeSet<NodeId>) -> DirectedGraph {
        let mut g = DirectedGraph::with_nodes(self.nodes().filter(|n| alive.contains(*n)).cloned());
        for group in self.groups.values() {
            for s in group.senders.iter().filter(|s| alive.contains(*s)) {
                for r in group.receivers.iter().filter(|r| alive.contains(*r)) {
                    g.merge_edge(s, r, group.weight);
                }
            }
        }
        g
    }

    /// Alive receivers reached by `node`'s send groups, excluding itself.
    pub fn destinations(&self, node: &NodeId, alive: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        self.send_grps(node)
            .iter()
            .filter_map(|g| self.groups.get(g))
            .flat_map(|g| g.receivers.iter())
            .filter(|r| *r != node && alive.contains(*r))
            .cloned()
            .collect()
    }

    pub fn refresh_leaders(&mut self, alive: &BTreeSet<NodeId>) {
        for group in self.groups.values_mut() {
            group.leader = elect_leader(group, alive).ok();
        }
    }
}

/// Deterministic election: the smallest alive member identifier.
pub fn elect_leader(group: &Group, alive: &BTreeSet<NodeId>) -> Result<NodeId, OverlayError> {
    group
        .alive_members(alive)
        .next()
        .cloned()
        .ok_or_else(|| OverlayError::EmptyGroup(group.id.clone()))
}

/// Members of the cross-group leader channel.
pub fn leader_group(assignment: &GroupAssignment, alive: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    assignment.groups().filter_map(|g| elect_leader(g, alive).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::int;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn all(asg: &GroupAssignment) -> BTreeSet<NodeId> {
        asg.nodes().cloned().collect()
    }

    fn graph(edges: &[(&str, &str, i64)]) -> DirectedGraph {
        let mut g = DirectedGraph::new();
        for (u, v, w) in edges {
            g.add_edge(n(u), n(v), int(*w)).unwrap();
        }
        g
    }

    #[test]
    fn four_node_group_formation() {
        // left-most node 1 sends to node 2; node 4 sends to nodes 2 and 3
        let g = graph(&[("n1", "n2", 1), ("n4", "n2", 1), ("n4", "n3", 1)]);
        let asg = form_groups(&g);
        assert_eq!(asg.groups().count(), 2);
        let grp1 = asg.send_grps(&n("n1")).iter().next().unwrap().clone();
        assert_eq!(asg.group(&grp1).unwrap().size(), 2);
        assert_eq!(asg.recv_grps(&n("n2")).len(), 2);
        assert!(asg.recv_grps(&n("n2")).contains(&grp1));
        let grp2 = asg.send_grps(&n("n4")).iter().next().unwrap();
        assert_eq!(asg.group(grp2).unwrap().size(), 3);
    }

    #[test]
    fn ring_of_six_has_six_pairs() {
        let edges: Vec<(String, String)> =
            (0..6).map(|i| (format!("r{i}"), format!("r{}", (i + 1) % 6))).collect();
        let mut g = DirectedGraph::new();
        for (u, v) in &edges {
            g.add_edge(n(u), n(v), int(1)).unwrap();
        }
        let asg = form_groups(&g);
        assert_eq!(asg.groups().count(), 6);
        assert!(asg.groups().all(|g| g.size() == 2));
    }

    #[test]
    fn weight_classes_split_groups() {
        let g = graph(&[("s", "a", 1), ("s", "b", 1), ("s", "c", 2)]);
        let asg = form_groups(&g);
        let mut sizes: Vec<_> = asg.groups().map(|g| (g.weight, g.size())).collect();
        sizes.sort();
        assert_eq!(sizes, vec![(int(1), 3), (int(2), 2)]);
        assert_eq!(asg.effective_graph(&all(&asg)), g);
    }

    #[test]
    fn effective_graph_filters_dead_receivers() {
        let g = graph(&[("a", "b", 1), ("a", "c", 1), ("c", "a", 1)]);
        let asg = form_groups(&g);
        let mut alive = all(&asg);
        assert_eq!(asg.effective_graph(&alive), g);
        alive.remove(&n("b"));
        let eff = asg.effective_graph(&alive);
        assert_eq!(eff.edge_count(), 2);
        assert!(eff.weight(&n("a"), &n("b")).is_none());
    }

    #[test]
    fn multi_sender_group_edges() {
        let mut asg = GroupAssignment::default();
        for x in ["s1", "s2", "r1", "r2"] {
            asg.add_node(n(x));
        }
        asg.add_group("g".into(), int(1));
        let alive = all(&asg);
        for s in ["s1", "s2"] {
            asg.join_group(&n(s), &"g".into(), Role::Sender, &alive, 0).unwrap();
        }
        for r in ["r1", "r2"] {
            asg.join_group(&n(r), &"g".into(), Role::Receiver, &alive, 0).unwrap();
        }
        assert_eq!(asg.effective_graph(&alive).edge_count(), 4);
    }

    #[test]
    fn join_is_idempotent() {
        let g = graph(&[("a", "b", 1), ("b", "a", 1)]);
        let mut asg = form_groups(&g);
        let alive = all(&asg);
        let grp = GroupId::from("g-a");
        let ev = asg.join_group(&n("b"), &grp, Role::Receiver, &alive, 3).unwrap();
        assert!(ev.is_none(), "b already receives on g-a");
        let ev = asg.join_group(&n("a"), &"g-b".into(), Role::Sender, &alive, 3).unwrap().unwrap();
        assert_eq!(ev.kind, MembershipKind::MemberJoined);
        assert_eq!(ev.round, 3);
        let snapshot = asg.clone();
        assert!(asg.join_group(&n("a"), &"g-b".into(), Role::Sender, &alive, 4).unwrap().is_none());
        assert_eq!(asg, snapshot);
        assert!(asg.send_grps(&n("a")).contains(&GroupId::from("g-b")));
        assert_eq!(
            asg.join_group(&n("a"), &"nope".into(), Role::Sender, &alive, 0),
            Err(OverlayError::UnknownGroup("nope".into()))
        );
        let mut dead = alive.clone();
        dead.remove(&n("a"));
        assert_eq!(
            asg.join_group(&n("a"), &grp, Role::Receiver, &dead, 0),
            Err(OverlayError::InvalidNode(n("a")))
        );
    }

    #[test]
    fn remove_and_restore() {
        let g = graph(&[("a", "b", 1), ("b", "c", 1), ("c", "a", 1)]);
        let mut asg = form_groups(&g);
        let before = asg.clone();
        let detached = asg.remove_node(&n("b"));
        assert_eq!(detached.len(), 2);
        assert_eq!(asg.group(&"g-a".into()).unwrap().size(), 1);
        asg.restore(&n("b"), &detached);
        assert_eq!(asg, before);
    }

    #[test]
    fn leader_election() {
        let mut group = Group::new("g".into(), int(1));
        for x in ["n3", "n1"] {
            group.receivers.insert(n(x));
        }
        group.senders.insert(n("n2"));
        let mut alive: BTreeSet<NodeId> = ["n1", "n2", "n3"].into_iter().map(n).collect();
        assert_eq!(elect_leader(&group, &alive), Ok(n("n1")));
        alive.remove(&n("n1"));
        assert_eq!(elect_leader(&group, &alive), Ok(n("n2")));
        let mut solo = Group::new("h".into(), int(1));
        solo.senders.insert(n("n9"));
        assert_eq!(elect_leader(&solo, &BTreeSet::from([n("n9")])), Ok(n("n9")));
        assert!(matches!(elect_leader(&group, &BTreeSet::new()), Err(OverlayError::EmptyGroup(_))));
    }

    #[test]
    fn leader_group_of_ring_and_hub() {
        let ring = graph(&[("a", "b", 1), ("b", "c", 1), ("c", "d", 1), ("d", "a", 1)]);
        let asg = form_groups(&ring);
        // groups {a,b} {b,c} {c,d} {d,a}: minima a, b, c, a
        assert_eq!(leader_group(&asg, &all(&asg)).len(), 3);
        let hub = graph(&[("a", "b", 1), ("a", "c", 1), ("b", "a", 1), ("c", "a", 1)]);
        let asg = form_groups(&hub);
        assert_eq!(leader_group(&asg, &all(&asg)), BTreeSet::from([n("a")]));
        assert!(leader_group(&asg, &BTreeSet::new()).is_empty());
    }
}
