//! Lane graph of a multi-lane road network.
//!
//! Sections are road stretches carrying one or more parallel lanes. Every
//! lane lists the sections reachable from its downstream end; two adjacent
//! lanes are symmetric for a driver when both lead to the section the driver
//! needs next. The graph is immutable after loading and can be shared across
//! threads.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SectionIdx(pub usize);

pub const DEFAULT_CAPACITY_VPH_PER_LANE: f64 = 1800.0;
pub const DEFAULT_K1: f64 = 0.15;
pub const DEFAULT_K2: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: String,
    pub section: SectionIdx,
    pub length: f64,
    pub left: Option<LaneIdx>,
    pub right: Option<LaneIdx>,
    pub successors: Vec<SectionIdx>,
    pub speed_limit: f64,
    /// Longitudinal position of the decision point (stop line, off-ramp or
    /// lane end) that remaining distance is measured to.
    pub decision_point: f64,
    /// Position counted from the rightmost lane of the section (0 = rightmost).
    pub offset: usize,
}

impl Lane {
    pub fn is_terminal(&self) -> bool {
        self.successors.is_empty()
    }

    pub fn serves(&self, section: SectionIdx) -> bool {
        self.successors.contains(&section)
    }

    pub fn is_neighbor(&self, other: LaneIdx) -> bool {
        self.left == Some(other) || self.right == Some(other)
    }
}

#[derive(Debug, Clone)]
pub struct Section {
    pub id: String,
    /// Lanes ordered from rightmost to leftmost.
    pub lanes: Vec<LaneIdx>,
    pub length: f64,
    pub entrance: bool,
    pub capacity_vph: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Section {
    /// Free-flow traversal time at the fastest lane's speed limit.
    pub fn free_flow_time(&self, net: &Network) -> f64 {
        let vmax = self.lanes.iter().map(|&l| net.lane(l).speed_limit).fold(0.0, f64::max);
        self.length / vmax
    }
}

/// One leg of a route, carrying the volume-delay inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub section: SectionIdx,
    pub free_flow_time: f64,
    pub flow_vph: f64,
    pub capacity_vph: f64,
    pub k1: f64,
    pub k2: f64,
}

impl RouteSegment {
    pub fn validate(&self) -> Result<()> {
        if !(self.free_flow_time > 0.0) {
            return Err(Error::Config("segment free-flow time must be > 0".into()));
        }
        if !(self.capacity_vph > 0.0) {
            return Err(Error::Config("segment capacity must be > 0".into()));
        }
        if self.flow_vph < 0.0 || self.k1 < 0.0 || self.k2 < 1.0 {
            return Err(Error::Config("segment needs flow >= 0, k1 >= 0 and k2 >= 1".into()));
        }
        Ok(())
    }
}

/// Planned path through the network, from the current section to an exit.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub origin: SectionIdx,
    pub destination: SectionIdx,
    /// Sections still to traverse, starting with the current one.
    pub sections: Vec<SectionIdx>,
    pub free_flow: Vec<f64>,
}

impl Route {
    pub fn current(&self) -> SectionIdx {
        self.sections[0]
    }

    pub fn next(&self) -> Option<SectionIdx> {
        self.sections.get(1).copied()
    }

    pub fn advance(&mut self) {
        if self.sections.len() > 1 {
            self.sections.remove(0);
            self.free_flow.remove(0);
        }
    }

    pub fn is_connected(&self, net: &Network) -> bool {
        self.sections
            .windows(2)
            .all(|w| net.section_successors(w[0]).contains(&w[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneRelation {
    Symmetric,
    Asymmetric,
    NotAdjacent,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionFile {
    id: String,
    #[serde(default)]
    entrance: bool,
    #[serde(default)]
    capacity_vph_per_lane: Option<f64>,
    #[serde(default)]
    k1: Option<f64>,
    #[serde(default)]
    k2: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneFile {
    id: String,
    section: String,
    length_m: f64,
    #[serde(default)]
    left: Option<String>,
    #[serde(default)]
    right: Option<String>,
    #[serde(default)]
    successors: Vec<String>,
    speed_limit_mps: f64,
    #[serde(default)]
    decision_point_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    sections: Vec<SectionFile>,
    lanes: Vec<LaneFile>,
}

#[derive(Debug, Clone)]
pub struct Network {
    lanes: Vec<Lane>,
    sections: Vec<Section>,
    lane_ids: HashMap<String, LaneIdx>,
    section_ids: HashMap<String, SectionIdx>,
    predecessors: Vec<Vec<LaneIdx>>,
    section_succ: Vec<Vec<SectionIdx>>,
}

/// 1-based line of the first `"id": "<id>"` occurrence, for error messages.
fn line_of_id(text: &str, id: &str) -> Option<usize> {
    let value = format!("\"{id}\"");
    text.lines().enumerate().find_map(|(i, line)| {
        line.match_indices("\"id\"")
            .any(|(pos, key)| {
                let rest = line[pos + key.len()..].trim_start();
                rest.strip_prefix(':')
                    .is_some_and(|r| r.trim_start().starts_with(&value))
            })
            .then_some(i + 1)
    })
}

impl Network {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::file(path, format!("cannot read network file: {e}")))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::file(path, msg),
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        let at = |id: &str| match line_of_id(text, id) {
            Some(l) => format!("line {l}: "),
            None => String::new(),
        };

        let mut section_ids = HashMap::new();
        let mut sections = Vec::with_capacity(file.sections.len());
        for (i, s) in file.sections.iter().enumerate() {
            if section_ids.insert(s.id.clone(), SectionIdx(i)).is_some() {
                return Err(Error::Config(format!("{}duplicate section id `{}`", at(&s.id), s.id)));
            }
            let cap = s.capacity_vph_per_lane.unwrap_or(DEFAULT_CAPACITY_VPH_PER_LANE);
            let k1 = s.k1.unwrap_or(DEFAULT_K1);
            let k2 = s.k2.unwrap_or(DEFAULT_K2);
            if !(cap > 0.0) {
                return Err(Error::Config(format!(
                    "{}section `{}`: capacity must be > 0",
                    at(&s.id),
                    s.id
                )));
            }
            if !(k1 >= 0.0) || !(k2 >= 1.0) {
                return Err(Error::Config(format!(
                    "{}section `{}`: need k1 >= 0 and k2 >= 1",
                    at(&s.id),
                    s.id
                )));
            }
            sections.push(Section {
                id: s.id.clone(),
                lanes: Vec::new(),
                length: 0.0,
                entrance: s.entrance,
                capacity_vph: cap,
                k1,
                k2,
            });
        }

        let mut lane_ids = HashMap::new();
        for (i, l) in file.lanes.iter().enumerate() {
            if lane_ids.insert(l.id.clone(), LaneIdx(i)).is_some() {
                return Err(Error::Config(format!("{}duplicate lane id `{}`", at(&l.id), l.id)));
            }
        }

        let mut lanes = Vec::with_capacity(file.lanes.len());
        for l in &file.lanes {
            let here = at(&l.id);
            let section = *section_ids
                .get(&l.section)
                .ok_or_else(|| Error::Config(format!("{here}lane `{}`: unknown section `{}`", l.id, l.section)))?;
            if !(l.length_m > 0.0) {
                return Err(Error::Config(format!("{here}lane `{}`: length_m must be > 0", l.id)));
            }
            if !(l.speed_limit_mps > 0.0) {
                return Err(Error::Config(format!(
                    "{here}lane `{}`: speed_limit_mps must be > 0",
                    l.id
                )));
            }
            let neighbor = |n: &Option<String>, side: &str| -> Result<Option<LaneIdx>> {
                match n {
                    None => Ok(None),
                    Some(id) => lane_ids
                        .get(id)
                        .copied()
                        .map(Some)
                        .ok_or_else(|| Error::Config(format!("{here}lane `{}`: unknown {side} lane `{id}`", l.id))),
                }
            };
            let left = neighbor(&l.left, "left")?;
            let right = neighbor(&l.right, "right")?;
            let mut successors = Vec::new();
            for s in &l.successors {
                let idx = *section_ids
                    .get(s)
                    .ok_or_else(|| Error::Config(format!("{here}lane `{}`: unknown successor section `{s}`", l.id)))?;
                if !successors.contains(&idx) {
                    successors.push(idx);
                }
            }
            let decision_point = l.decision_point_m.unwrap_or(l.length_m);
            if !(decision_point > 0.0 && decision_point <= l.length_m) {
                return Err(Error::Config(format!(
                    "{here}lane `{}`: decision_point_m must lie in (0, length_m]",
                    l.id
                )));
            }
            lanes.push(Lane {
                id: l.id.clone(),
                section,
                length: l.length_m,
                left,
                right,
                successors,
                speed_limit: l.speed_limit_mps,
                decision_point,
                offset: 0,
            });
        }

        // Neighbor mutuality and same-section adjacency.
        for (i, lane) in lanes.iter().enumerate() {
            let here = at(&lane.id);
            if let Some(r) = lane.right {
                if lanes[r.0].left != Some(LaneIdx(i)) {
                    return Err(Error::Config(format!(
                        "{here}lane `{}` has right neighbor `{}` whose left neighbor is not `{}`",
                        lane.id, lanes[r.0].id, lane.id
                    )));
                }
                if lanes[r.0].section != lane.section {
                    return Err(Error::Config(format!(
                        "{here}lane `{}`: neighbor `{}` is in a different section",
                        lane.id, lanes[r.0].id
                    )));
                }
            }
            if let Some(l) = lane.left {
                if lanes[l.0].right != Some(LaneIdx(i)) {
                    return Err(Error::Config(format!(
                        "{here}lane `{}` has left neighbor `{}` whose right neighbor is not `{}`",
                        lane.id, lanes[l.0].id, lane.id
                    )));
                }
                if lanes[l.0].section != lane.section {
                    return Err(Error::Config(format!(
                        "{here}lane `{}`: neighbor `{}` is in a different section",
                        lane.id, lanes[l.0].id
                    )));
                }
            }
        }

        // Order each section's lanes right to left by walking the chain.
        for (si, section) in sections.iter_mut().enumerate() {
            let members: Vec<usize> = (0..lanes.len())
                .filter(|&i| lanes[i].section == SectionIdx(si))
                .collect();
            if members.is_empty() {
                return Err(Error::Config(format!(
                    "{}section `{}` has no lanes",
                    at(&section.id),
                    section.id
                )));
            }
            let rightmost: Vec<usize> = members.iter().copied().filter(|&i| lanes[i].right.is_none()).collect();
            if rightmost.len() != 1 {
                return Err(Error::Config(format!(
                    "{}section `{}`: lanes must form one left/right chain",
                    at(&section.id),
                    section.id
                )));
            }
            let mut order = vec![LaneIdx(rightmost[0])];
            while let Some(next) = lanes[order.last().unwrap().0].left {
                order.push(next);
            }
            if order.len() != members.len() {
                return Err(Error::Config(format!(
                    "{}section `{}`: lanes must form one left/right chain",
                    at(&section.id),
                    section.id
                )));
            }
            for (off, l) in order.iter().enumerate() {
                lanes[l.0].offset = off;
            }
            section.length = order.iter().map(|l| lanes[l.0].length).fold(0.0, f64::max);
            section.lanes = order;
        }

        let mut section_succ = vec![Vec::new(); sections.len()];
        for lane in &lanes {
            for &s in &lane.successors {
                let list: &mut Vec<SectionIdx> = &mut section_succ[lane.section.0];
                if !list.contains(&s) {
                    list.push(s);
                }
            }
        }
        for list in &mut section_succ {
            list.sort();
        }

        let mut net = Network {
            lanes,
            sections,
            lane_ids,
            section_ids,
            predecessors: Vec::new(),
            section_succ,
        };
        let mut predecessors = vec![Vec::new(); net.lanes.len()];
        for (i, lane) in net.lanes.iter().enumerate() {
            for &s in &lane.successors {
                let target = net.entry_lane(LaneIdx(i), s);
                predecessors[target.0].push(LaneIdx(i));
            }
        }
        net.predecessors = predecessors;
        if !net.sections.iter().any(|s| s.entrance) {
            return Err(Error::Config("network has no entrance section".into()));
        }
        if net.exits().is_empty() {
            return Err(Error::Config("network has no exit (terminal) section".into()));
        }
        Ok(net)
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn lane(&self, idx: LaneIdx) -> &Lane {
        &self.lanes[idx.0]
    }

    pub fn section(&self, idx: SectionIdx) -> &Section {
        &self.sections[idx.0]
    }

    pub fn lane_idx(&self, id: &str) -> Result<LaneIdx> {
        self.lane_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLane(id.to_string()))
    }

    pub fn section_idx(&self, id: &str) -> Result<SectionIdx> {
        self.section_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSection(id.to_string()))
    }

    pub fn section_successors(&self, s: SectionIdx) -> &[SectionIdx] {
        &self.section_succ[s.0]
    }

    /// Upstream lanes whose vehicles continue onto `lane`.
    pub fn predecessors(&self, lane: LaneIdx) -> &[LaneIdx] {
        &self.predecessors[lane.0]
    }

    pub fn entrances(&self) -> Vec<SectionIdx> {
        (0..self.sections.len())
            .map(SectionIdx)
            .filter(|s| self.sections[s.0].entrance)
            .collect()
    }

    /// Sections whose lanes all end the network.
    pub fn exits(&self) -> Vec<SectionIdx> {
        (0..self.sections.len())
            .map(SectionIdx)
            .filter(|s| self.is_exit(*s))
            .collect()
    }

    pub fn is_exit(&self, s: SectionIdx) -> bool {
        self.sections[s.0].lanes.iter().all(|l| self.lanes[l.0].is_terminal())
    }

    /// Lane taken in `next` by a vehicle leaving `from`: same offset from the
    /// right edge, clamped to the width of the next section.
    pub fn entry_lane(&self, from: LaneIdx, next: SectionIdx) -> LaneIdx {
        let lanes = &self.sections[next.0].lanes;
        let off = self.lanes[from.0].offset.min(lanes.len() - 1);
        lanes[off]
    }

    /// Total road length of the given sections in km.
    pub fn road_length_km(&self, sections: &[SectionIdx]) -> f64 {
        sections.iter().map(|s| self.sections[s.0].length).sum::<f64>() / 1000.0
    }

    pub fn lane_length_km(&self, sections: &[SectionIdx]) -> f64 {
        sections
            .iter()
            .flat_map(|s| self.sections[s.0].lanes.iter())
            .map(|l| self.lanes[l.0].length)
            .sum::<f64>()
            / 1000.0
    }

    /// Relation of lane `b` as seen by a driver on lane `a` whose route
    /// continues into `route_next`.
    ///
    /// Without a route, `b` is symmetric when it reaches every section `a`
    /// reaches. With a route, `b` is symmetric when both lanes serve the next
    /// route section, or neither does and their successor sets coincide.
    pub fn lane_relation(&self, a: LaneIdx, b: LaneIdx, route_next: Option<SectionIdx>) -> LaneRelation {
        let la = &self.lanes[a.0];
        let lb = &self.lanes[b.0];
        if !la.is_neighbor(b) {
            return LaneRelation::NotAdjacent;
        }
        let sa: BTreeSet<SectionIdx> = la.successors.iter().copied().collect();
        let sb: BTreeSet<SectionIdx> = lb.successors.iter().copied().collect();
        let symmetric = match route_next {
            Some(n) => match (sa.contains(&n), sb.contains(&n)) {
                (true, true) => true,
                (false, false) => sa == sb,
                _ => false,
            },
            None => sa.is_subset(&sb),
        };
        if symmetric {
            LaneRelation::Symmetric
        } else {
            LaneRelation::Asymmetric
        }
    }

    pub fn lane_relation_by_id(&self, a: &str, b: &str, route_next: Option<&str>) -> Result<LaneRelation> {
        let a = self.lane_idx(a)?;
        let b = self.lane_idx(b)?;
        if self.lanes[a.0].section != self.lanes[b.0].section {
            return Ok(LaneRelation::NotAdjacent);
        }
        let next = route_next.map(|s| self.section_idx(s)).transpose()?;
        Ok(self.lane_relation(a, b, next))
    }
}

/// Distance from `position` to the lane's decision point, clamped at zero.
pub fn remaining_distance(lane: &Lane, position: f64) -> f64 {
    (lane.decision_point - position).max(0.0)
}
