//! Navigation provider: live section travel times and shortest paths to exits.

use crate::incentives::route_travel_time;
use crate::network::{Network, Route, RouteSegment, SectionIdx};

/// Travel time reported for destinations that cannot be reached, s.
pub const UNREACHABLE_S: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct Navigator {
    free_flow: Vec<f64>,
    segments: Vec<RouteSegment>,
    exits: Vec<SectionIdx>,
    exit_pos: Vec<Option<usize>>,
    /// `to_exit[e][s]`: time from entering section `s` to leaving exit `e`.
    to_exit: Vec<Vec<f64>>,
    succ: Vec<Vec<SectionIdx>>,
}

impl Navigator {
    pub fn new(net: &Network) -> Self {
        let n = net.sections().len();
        let free_flow: Vec<f64> = net.sections().iter().map(|s| s.free_flow_time(net)).collect();
        let segments = net
            .sections()
            .iter()
            .enumerate()
            .map(|(i, s)| RouteSegment {
                section: SectionIdx(i),
                free_flow_time: free_flow[i],
                flow_vph: 0.0,
                capacity_vph: s.capacity_vph * s.lanes.len() as f64,
                k1: s.k1,
                k2: s.k2,
            })
            .collect();
        let exits = net.exits();
        let mut exit_pos = vec![None; n];
        for (i, e) in exits.iter().enumerate() {
            exit_pos[e.0] = Some(i);
        }
        let succ = (0..n).map(|s| net.section_successors(SectionIdx(s)).to_vec()).collect();
        let mut nav = Navigator {
            free_flow,
            segments,
            exits,
            exit_pos,
            to_exit: Vec::new(),
            succ,
        };
        nav.recompute();
        nav
    }

    /// Refreshes section times from the number of vehicles on each section.
    /// Occupancy is turned into the flow that would sustain it at free-flow
    /// speed.
    pub fn update(&mut self, vehicles_on_section: &[usize]) {
        for (seg, &n) in self.segments.iter_mut().zip(vehicles_on_section) {
            seg.flow_vph = n as f64 * 3600.0 / seg.free_flow_time;
        }
        self.recompute();
    }

    fn recompute(&mut self) {
        let times: Vec<f64> = self.segments.iter().map(route_travel_time).collect();
        let n = times.len();
        self.to_exit = self
            .exits
            .iter()
            .map(|&e| {
                let mut d = vec![f64::INFINITY; n];
                d[e.0] = times[e.0];
                // Bellman-Ford relaxation; the section graph is tiny.
                for _ in 0..n {
                    let mut changed = false;
                    for s in 0..n {
                        if s == e.0 {
                            continue;
                        }
                        let best = self.succ[s].iter().map(|t| d[t.0]).fold(f64::INFINITY, f64::min);
                        let cand = times[s] + best;
                        if cand < d[s] {
                            d[s] = cand;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
                d
            })
            .collect();
    }

    pub fn segment(&self, s: SectionIdx) -> &RouteSegment {
        &self.segments[s.0]
    }

    pub fn section_time(&self, s: SectionIdx) -> f64 {
        route_travel_time(&self.segments[s.0])
    }

    /// Time from entering `from` to leaving `dest`.
    pub fn to_dest(&self, from: SectionIdx, dest: SectionIdx) -> f64 {
        match self.exit_pos[dest.0] {
            Some(e) if self.to_exit[e][from.0].is_finite() => self.to_exit[e][from.0],
            _ => UNREACHABLE_S,
        }
    }

    pub fn reachable(&self, from: SectionIdx, dest: SectionIdx) -> bool {
        self.to_dest(from, dest) < UNREACHABLE_S
    }

    /// Best next section among `options` toward `dest`; first wins ties.
    pub fn best_of(&self, options: &[SectionIdx], dest: SectionIdx) -> Option<SectionIdx> {
        let mut best: Option<(SectionIdx, f64)> = None;
        for &s in options {
            let t = self.to_dest(s, dest);
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((s, t));
            }
        }
        best.map(|b| b.0)
    }

    /// Shortest path from `from` (inclusive) to `dest`.
    pub fn route(&self, from: SectionIdx, dest: SectionIdx) -> Route {
        let mut sections = vec![from];
        let mut cur = from;
        while cur != dest && sections.len() <= self.segments.len() {
            match self.best_of(&self.succ[cur.0], dest) {
                Some(n) if self.reachable(n, dest) => {
                    sections.push(n);
                    cur = n;
                }
                _ => break,
            }
        }
        let free_flow = sections.iter().map(|s| self.free_flow[s.0]).collect();
        Route {
            origin: from,
            destination: dest,
            sections,
            free_flow,
        }
    }

    /// Live travel time of the planned sections after the current one.
    pub fn remainder(&self, route: &Route) -> f64 {
        if route.sections.last() != Some(&route.destination) {
            return UNREACHABLE_S;
        }
        route.sections[1..].iter().map(|s| self.section_time(*s)).sum()
    }

    pub fn exits(&self) -> &[SectionIdx] {
        &self.exits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::FIG1;

    #[test]
    fn routes_and_times() {
        let net = Network::from_json_str(FIG1).unwrap();
        let mut nav = Navigator::new(&net);
        let a = net.section_idx("approach").unwrap();
        let l = net.section_idx("left_street").unwrap();
        let t0_a = 500.0 / 13.9;
        let t0_l = 200.0 / 13.9;
        assert!((nav.to_dest(a, l) - (t0_a + t0_l)).abs() < 1e-9);
        let r = nav.route(a, l);
        assert_eq!(r.sections, vec![a, l]);
        assert!(r.is_connected(&net));
        assert!((nav.remainder(&r) - t0_l).abs() < 1e-9);
        assert!(!nav.reachable(l, net.section_idx("straight_on").unwrap()));

        // Congestion only ever lengthens section times.
        let mut counts = vec![0; 3];
        counts[a.0] = 60;
        nav.update(&counts);
        assert!(nav.section_time(a) > t0_a);
        assert!((nav.section_time(l) - t0_l).abs() < 1e-12);
    }
}
