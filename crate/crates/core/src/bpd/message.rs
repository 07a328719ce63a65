use std::{collections::BTreeSet, fmt};

use serde::{Deserialize, Serialize};

use crate::{cost::Cost, graph::NodeId, overlay::GroupId};

/// Stage 1 probe. It travels against the direction of data flow: a receiver
/// sends it on its receive group and the group's senders extend the depth by
/// the link weight.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoverMsg {
    pub origin: NodeId,
    pub depth: Cost,
    pub grp: GroupId,
    pub order: u32,
    pub weight: Cost,
    pub epoch: u64,
}

/// Stage 2 request for a shorter route from `requester` to `target`.
///
/// `depth` is the route cost from the requester to the node that last became
/// the join candidate; `grp` is that candidate's send group. Once `sealed`, no
/// later hop can become a candidate without exceeding the threshold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMsg {
    pub requester: NodeId,
    pub target: NodeId,
    pub depth: Cost,
    pub grp: Option<GroupId>,
    pub sealed: bool,
    pub origin_send_grp: GroupId,
    pub visited: BTreeSet<NodeId>,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrpType {
    SendGrp,
    RecvGrp,
}

impl fmt::Display for GrpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GrpType::SendGrp => "send_grp",
            GrpType::RecvGrp => "recv_grp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReq {
    pub requester: NodeId,
    pub grp_type: GrpType,
    pub request: u64,
}

/// Reply to a [`JoinReq`]. `grp == None` is the empty marker sent by a leader
/// with no candidate group. `request == None` marks an unsolicited offer that
/// the recipient joins directly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRep {
    pub responder: NodeId,
    pub requester: NodeId,
    pub grp: Option<GroupId>,
    pub size: usize,
    pub grp_type: GrpType,
    pub request: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrpQry {
    pub requester: NodeId,
    pub grp: GroupId,
    pub request: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrpAns {
    pub responder: NodeId,
    pub requester: NodeId,
    pub grp: GroupId,
    pub rep: Option<NodeId>,
    pub request: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMsg {
    Discover(DiscoverMsg),
    Update(UpdateMsg),
    JoinReq(JoinReq),
    JoinRep(JoinRep),
    GrpQry(GrpQry),
    GrpAns(GrpAns),
}

impl ControlMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlMsg::Discover(_) => "discover",
            ControlMsg::Update(_) => "update",
            ControlMsg::JoinReq(_) => "join_req",
            ControlMsg::JoinRep(_) => "join_rep",
            ControlMsg::GrpQry(_) => "grp_qry",
            ControlMsg::GrpAns(_) => "grp_ans",
        }
    }

    pub fn is_fault_tolerance(&self) -> bool {
        !matches!(self, ControlMsg::Discover(_) | ControlMsg::Update(_))
    }

    /// Size of the JSON encoding in bytes.
    pub fn wire_size(&self) -> usize {
        serde_json::to_vec(self).map(|v| v.len()).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Delivered to every other member of the group.
    Group(GroupId),
    /// Delivered to every elected group leader.
    Leaders,
    Direct(NodeId),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Group(g) => write!(f, "group:{g}"),
            Channel::Leaders => f.write_str("leaders"),
            Channel::Direct(n) => write!(f, "direct:{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub from: NodeId,
    pub channel: Channel,
    pub msg: ControlMsg,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_size_is_stable() {
        let m = ControlMsg::JoinReq(JoinReq { requester: "n1".into(), grp_type: GrpType::SendGrp, request: 0 });
        let json = r#"{"type":"join_req","requester":"n1","grp_type":"send_grp","request":0}"#;
        assert_eq!(serde_json::to_string(&m).unwrap(), json);
        assert_eq!(m.wire_size(), json.len());
        assert!(m.is_fault_tolerance());
    }
}
