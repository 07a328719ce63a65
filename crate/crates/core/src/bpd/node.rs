//! Per-node protocol state and message handlers.
//!
//! Handlers never touch the assignment directly. They read it through
//! [`Ctx`] and return [`Effects`]: messages to send and memberships to add.
//! The engine applies both between deliveries.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, trace};

use super::{
    message::{ControlMsg, DiscoverMsg, GrpAns, GrpQry, GrpType, JoinRep, JoinReq, Outgoing, UpdateMsg},
    BpdConfig, Channel, PathTable,
};
use crate::{
    cost,
    graph::NodeId,
    overlay::{leader_group, GroupAssignment, GroupId, Role},
};

/// Read-only view handed to every handler.
pub struct Ctx<'a> {
    pub asg: &'a GroupAssignment,
    /// Nodes currently believed alive (not yet detected as failed).
    pub known: &'a BTreeSet<NodeId>,
    pub cfg: &'a BpdConfig,
    pub round: u64,
}

impl Ctx<'_> {
    fn has_role(&self, node: &NodeId, grp: &GroupId, role: Role) -> bool {
        match role {
            Role::Sender => self.asg.send_grps(node).contains(grp),
            Role::Receiver => self.asg.recv_grps(node).contains(grp),
        }
    }

    fn alive_others_in(&self, grp: &GroupId, me: &NodeId) -> usize {
        self.asg
            .group(grp)
            .map_or(0, |g| g.alive_members(self.known).filter(|n| *n != me).count())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum JoinCause {
    /// Stage 2: shortening the route `requester -> target`.
    BoundedPath,
    /// Lone member of a send group after a departure.
    SendGroupEmptied,
    /// The sender of a receive group departed.
    SenderLost,
    /// Partition repair through the leader channel's leader.
    Partition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Join {
    pub node: NodeId,
    pub grp: GroupId,
    pub role: Role,
    pub cause: JoinCause,
}

#[derive(Debug, Default)]
pub struct Effects {
    pub out: Vec<Outgoing>,
    pub joins: Vec<Join>,
}

impl Effects {
    fn send(&mut self, from: &NodeId, channel: Channel, msg: ControlMsg) {
        self.out.push(Outgoing { from: from.clone(), channel, msg });
    }

    pub fn extend(&mut self, other: Effects) {
        self.out.extend(other.out);
        self.joins.extend(other.joins);
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PendingJoin {
    pub grp_type: GrpType,
    pub cause: JoinCause,
    pub expected: usize,
    pub reps: Vec<JoinRep>,
    pub started: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct PendingQuery {
    pub grp: GroupId,
    pub expected: usize,
    pub answers: Vec<GrpAns>,
    pub started: u64,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub(crate) epoch: u64,
    pub(crate) paths: PathTable,
    /// `(requester, target)` pairs already handled in this epoch.
    pub(crate) handled_updates: BTreeSet<(NodeId, NodeId)>,
    pub(crate) joins: BTreeMap<u64, PendingJoin>,
    pub(crate) queries: BTreeMap<u64, PendingQuery>,
    pub(crate) retry: BTreeSet<(GrpType, JoinCause)>,
    next_request: u64,
}

impl NodeState {
    pub fn new(id: NodeId) -> Self {
        NodeState {
            id,
            epoch: 0,
            paths: PathTable::default(),
            handled_updates: BTreeSet::new(),
            joins: BTreeMap::new(),
            queries: BTreeMap::new(),
            retry: BTreeSet::new(),
            next_request: 0,
        }
    }

    pub fn paths(&self) -> &PathTable {
        &self.paths
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn has_pending(&self) -> bool {
        !self.joins.is_empty() || !self.queries.is_empty()
    }

    /// Forgets all volatile state, as after a crash.
    pub fn reset(&mut self) {
        *self = NodeState { next_request: self.next_request, ..NodeState::new(self.id.clone()) };
    }

    fn request_id(&mut self) -> u64 {
        self.next_request += 1;
        self.next_request
    }

    // ---- Stage 1 -------------------------------------------------------

    /// Starts a discovery epoch: clears the path table and probes every
    /// receive group.
    pub fn on_discover_trigger(&mut self, epoch: u64, ctx: &Ctx) -> Effects {
        self.epoch = epoch;
        self.paths.clear();
        self.handled_updates.clear();
        let mut fx = Effects::default();
        for g in ctx.asg.recv_grps(&self.id) {
            let Some(weight) = ctx.asg.weight(g) else { continue };
            let msg = DiscoverMsg { origin: self.id.clone(), depth: cost::int(0), grp: g.clone(), order: 0, weight, epoch };
            fx.send(&self.id, Channel::Group(g.clone()), ControlMsg::Discover(msg));
        }
        fx
    }

    pub fn on_discover_receive(&mut self, msg: &DiscoverMsg, delivered_on: &GroupId, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        if msg.epoch != self.epoch || msg.origin == self.id || &msg.grp != delivered_on {
            return fx;
        }
        if !ctx.asg.send_grps(&self.id).contains(delivered_on) {
            return fx;
        }
        let depth = msg.depth + msg.weight;
        if !self.paths.improve(&msg.origin, depth, delivered_on) {
            return fx;
        }
        for h in ctx.asg.recv_grps(&self.id) {
            let Some(weight) = ctx.asg.weight(h) else { continue };
            let fwd = DiscoverMsg { depth, grp: h.clone(), weight, ..msg.clone() };
            fx.send(&self.id, Channel::Group(h.clone()), ControlMsg::Discover(fwd));
        }
        fx
    }

    // ---- Stage 2 -------------------------------------------------------

    /// Requests a bounded route to every known peer whose recorded depth
    /// exceeds the threshold. Peers missing from the table count as
    /// infinitely far.
    pub fn on_update_trigger(&mut self, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        for target in ctx.known.iter().filter(|t| **t != self.id) {
            let far = self.paths.depth(target).is_none_or(|d| d > ctx.cfg.thresh);
            if !far {
                continue;
            }
            debug!("{}: {} is beyond the threshold", self.id, target);
            for g in ctx.asg.send_grps(&self.id) {
                let msg = UpdateMsg {
                    requester: self.id.clone(),
                    target: target.clone(),
                    depth: cost::int(0),
                    grp: None,
                    sealed: false,
                    origin_send_grp: g.clone(),
                    visited: BTreeSet::from([self.id.clone()]),
                    epoch: self.epoch,
                };
                fx.send(&self.id, Channel::Group(g.clone()), ControlMsg::Update(msg));
            }
        }
        fx
    }

    pub fn on_update_receive(&mut self, msg: &UpdateMsg, delivered_on: &GroupId, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        if msg.epoch != self.epoch || !ctx.asg.recv_grps(&self.id).contains(delivered_on) {
            return fx;
        }
        let key = (msg.requester.clone(), msg.target.clone());
        if msg.target == self.id {
            if !self.handled_updates.insert(key) {
                return fx;
            }
            let grp = msg.grp.clone().unwrap_or_else(|| msg.origin_send_grp.clone());
            if !ctx.has_role(&self.id, &grp, Role::Receiver) {
                fx.joins.push(Join { node: self.id.clone(), grp, role: Role::Receiver, cause: JoinCause::BoundedPath });
            }
            return fx;
        }
        if msg.visited.contains(&self.id) || !self.handled_updates.insert(key) {
            return fx;
        }
        let Some(w_in) = ctx.asg.weight(delivered_on) else { return fx };
        let arrival = msg.depth + w_in;
        for g in ctx.asg.send_grps(&self.id) {
            let Some(w_out) = ctx.asg.weight(g) else { continue };
            let mut fwd = msg.clone();
            fwd.visited.insert(self.id.clone());
            if !fwd.sealed {
                if arrival + w_out <= ctx.cfg.thresh {
                    fwd.depth = arrival;
                    fwd.grp = Some(g.clone());
                    fwd.sealed = arrival + w_out == ctx.cfg.thresh;
                } else {
                    fwd.sealed = true;
                }
            }
            fx.send(&self.id, Channel::Group(g.clone()), ControlMsg::Update(fwd));
        }
        fx
    }

    // ---- fault tolerance ----------------------------------------------

    fn start_join(&mut self, grp_type: GrpType, cause: JoinCause, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let leaders = leader_group(ctx.asg, ctx.known);
        let expected = leaders.iter().filter(|l| **l != self.id).count();
        if expected == 0 {
            debug!("{}: no leaders to ask, retrying next period", self.id);
            self.retry.insert((grp_type, cause));
            return fx;
        }
        let request = self.request_id();
        self.joins.insert(request, PendingJoin { grp_type, cause, expected, reps: Vec::new(), started: ctx.round });
        let req = JoinReq { requester: self.id.clone(), grp_type, request };
        fx.send(&self.id, Channel::Leaders, ControlMsg::JoinReq(req));
        fx
    }

    /// Partition repair: ask one specific node (the leader channel's leader)
    /// for a group to send on.
    fn start_directed_join(&mut self, hub: &NodeId, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let request = self.request_id();
        self.joins.insert(
            request,
            PendingJoin { grp_type: GrpType::SendGrp, cause: JoinCause::Partition, expected: 1, reps: Vec::new(), started: ctx.round },
        );
        let req = JoinReq { requester: self.id.clone(), grp_type: GrpType::SendGrp, request };
        fx.send(&self.id, Channel::Direct(hub.clone()), ControlMsg::JoinReq(req));
        fx
    }

    /// Partition repair, run once Stage 1 has settled. `hub` is the smallest
    /// live id. A node that cannot reach the hub asks it for a group to send
    /// on; the hub invites every peer it cannot reach into its smallest send
    /// group. Afterwards everybody reaches the hub and the hub reaches
    /// everybody.
    pub fn partition_actions(&mut self, hub: &NodeId, ctx: &Ctx) -> Effects {
        if self.id != *hub {
            if self.paths.depth(hub).is_none() {
                debug!("{}: cannot reach hub {hub}", self.id);
                return self.start_directed_join(hub, ctx);
            }
            return Effects::default();
        }
        let mut fx = Effects::default();
        let offer = ctx
            .asg
            .send_grps(&self.id)
            .iter()
            .filter_map(|g| ctx.asg.group(g))
            .map(|g| (g.size(), g.id.clone()))
            .min();
        let Some((size, grp)) = offer else {
            debug!("{}: hub has no send group to offer", self.id);
            return fx;
        };
        for peer in ctx.known.iter().filter(|p| **p != self.id && self.paths.depth(p).is_none()) {
            let rep = JoinRep {
                responder: self.id.clone(),
                requester: peer.clone(),
                grp: Some(grp.clone()),
                size,
                grp_type: GrpType::RecvGrp,
                request: None,
            };
            fx.send(&self.id, Channel::Direct(peer.clone()), ControlMsg::JoinRep(rep));
        }
        fx
    }

    /// Re-issues join requests that previously got no usable reply.
    pub(crate) fn retry_joins(&mut self, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        for (grp_type, cause) in std::mem::take(&mut self.retry) {
            fx.extend(self.start_join(grp_type, cause, ctx));
        }
        fx
    }

    /// A member of one of this node's send groups left.
    pub fn on_member_left_send(&mut self, grp: &GroupId, ctx: &Ctx) -> Effects {
        if !ctx.asg.send_grps(&self.id).contains(grp) || ctx.alive_others_in(grp, &self.id) > 0 {
            return Effects::default();
        }
        debug!("{}: alone in send group {grp}", self.id);
        self.start_join(GrpType::SendGrp, JoinCause::SendGroupEmptied, ctx)
    }

    /// Leader side: offer the smallest group of the requested kind in which the
    /// requester does not already hold the wanted role. Ties go to the smaller
    /// group id.
    pub fn on_join_req(&mut self, req: &JoinReq, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let (candidates, role) = match req.grp_type {
            GrpType::SendGrp => (ctx.asg.recv_grps(&self.id), Role::Sender),
            GrpType::RecvGrp => (ctx.asg.send_grps(&self.id), Role::Receiver),
        };
        let best = candidates
            .iter()
            .filter(|g| !ctx.has_role(&req.requester, g, role))
            .filter_map(|g| ctx.asg.group(g))
            .map(|g| (g.size(), g.id.clone()))
            .min();
        let rep = JoinRep {
            responder: self.id.clone(),
            requester: req.requester.clone(),
            size: best.as_ref().map_or(0, |(s, _)| *s),
            grp: best.map(|(_, g)| g),
            grp_type: req.grp_type,
            request: Some(req.request),
        };
        fx.send(&self.id, Channel::Direct(req.requester.clone()), ControlMsg::JoinRep(rep));
        fx
    }

    pub fn on_join_rep(&mut self, rep: &JoinRep, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        if rep.requester != self.id {
            return fx;
        }
        let Some(request) = rep.request else {
            // unsolicited offer from the partition-repair hub
            if let Some(g) = &rep.grp {
                if !ctx.has_role(&self.id, g, Role::Receiver) {
                    fx.joins.push(Join { node: self.id.clone(), grp: g.clone(), role: Role::Receiver, cause: JoinCause::Partition });
                }
            }
            return fx;
        };
        let Some(pending) = self.joins.get_mut(&request) else { return fx };
        pending.reps.push(rep.clone());
        if pending.reps.len() >= pending.expected {
            let pending = self.joins.remove(&request).unwrap();
            fx.extend(self.on_join_reps_complete(pending, ctx));
        }
        fx
    }

    /// Picks the smallest offered group (ties by id) and joins it with the
    /// role implied by the request type. With no usable offer the request is
    /// retried at the next repair period.
    pub(crate) fn on_join_reps_complete(&mut self, pending: PendingJoin, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let role = match pending.grp_type {
            GrpType::SendGrp => Role::Sender,
            GrpType::RecvGrp => Role::Receiver,
        };
        let choice = pending
            .reps
            .iter()
            .filter_map(|r| r.grp.as_ref().map(|g| (r.size, g)))
            .filter(|(_, g)| ctx.asg.group(g).is_some() && !ctx.has_role(&self.id, g, role))
            .min();
        match choice {
            Some((_, g)) => fx.joins.push(Join { node: self.id.clone(), grp: g.clone(), role, cause: pending.cause }),
            None => {
                debug!("{}: no replies to {} join request, retrying next period", self.id, pending.grp_type);
                self.retry.insert((pending.grp_type, pending.cause));
            }
        }
        fx
    }

    /// A member of one of this node's receive groups left: ask the group
    /// whether a sender is still there.
    pub fn on_member_left_recv(&mut self, grp: &GroupId, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        // several members of one group may leave at once; one query covers them
        if !ctx.asg.recv_grps(&self.id).contains(grp) || self.queries.values().any(|q| q.grp == *grp) {
            return fx;
        }
        let expected = ctx.alive_others_in(grp, &self.id);
        if expected == 0 {
            // nobody left to answer, so certainly no sender
            return self.start_join(GrpType::RecvGrp, JoinCause::SenderLost, ctx);
        }
        let request = self.request_id();
        self.queries
            .insert(request, PendingQuery { grp: grp.clone(), expected, answers: Vec::new(), started: ctx.round });
        let qry = GrpQry { requester: self.id.clone(), grp: grp.clone(), request };
        fx.send(&self.id, Channel::Group(grp.clone()), ControlMsg::GrpQry(qry));
        fx
    }

    pub fn on_grp_qry(&mut self, qry: &GrpQry, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let rep = ctx.asg.send_grps(&self.id).contains(&qry.grp).then(|| self.id.clone());
        let ans = GrpAns {
            responder: self.id.clone(),
            requester: qry.requester.clone(),
            grp: qry.grp.clone(),
            rep,
            request: qry.request,
        };
        fx.send(&self.id, Channel::Direct(qry.requester.clone()), ControlMsg::GrpAns(ans));
        fx
    }

    pub fn on_grp_ans(&mut self, ans: &GrpAns, ctx: &Ctx) -> Effects {
        if ans.requester != self.id {
            return Effects::default();
        }
        let Some(pending) = self.queries.get_mut(&ans.request) else {
            return Effects::default();
        };
        pending.answers.push(ans.clone());
        if pending.answers.len() < pending.expected {
            return Effects::default();
        }
        let pending = self.queries.remove(&ans.request).unwrap();
        self.on_grp_answers_complete(pending, ctx)
    }

    /// Escalates to a receive-group join request iff no answer named a
    /// sender.
    pub(crate) fn on_grp_answers_complete(&mut self, pending: PendingQuery, ctx: &Ctx) -> Effects {
        if pending.answers.iter().any(|a| a.rep.is_some()) {
            trace!("{}: sender of {} still alive", self.id, pending.grp);
            return Effects::default();
        }
        debug!("{}: sender of {} is gone", self.id, pending.grp);
        self.start_join(GrpType::RecvGrp, JoinCause::SenderLost, ctx)
    }

    /// Completes requests whose reply window has expired with whatever
    /// arrived.
    pub fn poll_timeouts(&mut self, ctx: &Ctx) -> Effects {
        let mut fx = Effects::default();
        let deadline = |started: u64| started + ctx.cfg.reply_timeout_rounds <= ctx.round;
        let expired: Vec<u64> = self.joins.iter().filter(|(_, p)| deadline(p.started)).map(|(k, _)| *k).collect();
        for k in expired {
            let pending = self.joins.remove(&k).unwrap();
            debug!("{}: {} join request timed out with {}/{} replies", self.id, pending.grp_type, pending.reps.len(), pending.expected);
            fx.extend(self.on_join_reps_complete(pending, ctx));
        }
        let expired: Vec<u64> = self.queries.iter().filter(|(_, p)| deadline(p.started)).map(|(k, _)| *k).collect();
        for k in expired {
            let pending = self.queries.remove(&k).unwrap();
            debug!("{}: query on {} timed out with {}/{} answers", self.id, pending.grp, pending.answers.len(), pending.expected);
            fx.extend(self.on_grp_answers_complete(pending, ctx));
        }
        fx
    }
}
