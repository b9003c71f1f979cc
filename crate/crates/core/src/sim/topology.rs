//! Node placement, flows and static shortest-path routing.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, sin, sqrt};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::ids::NodeId;

use super::SimError;

/// Radius bound of the wheel; the relay-to-rim spoke never exceeds it.
pub const WHEEL_MAX_RADIUS_M: f64 = 150.0;
/// Every non-opposite rim pair must stay within this chord length.
pub const WHEEL_MAX_CHORD_M: f64 = 240.0;
/// Design communication range of the wheel; opposite nodes must lie beyond it.
pub const WHEEL_RANGE_M: f64 = 250.0;
pub const LINE_SPACING_M: f64 = 150.0;
const RANDOM_PLACEMENT_RETRIES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub enum TopologySpec {
    /// `pairs` opposite rim pairs around a relay at the centre.
    Wheel { pairs: u16 },
    Line { nodes: u16 },
    Random {
        nodes: u16,
        area_m: f64,
        flows: u16,
        /// Placement seed; the run seed is used when absent.
        placement_seed: Option<u64>,
    },
    Custom {
        positions: Vec<(f64, f64)>,
        flows: Vec<(u16, u16)>,
    },
}

impl TopologySpec {
    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::Wheel { .. } => "wheel",
            TopologySpec::Line { .. } => "line",
            TopologySpec::Random { .. } => "random",
            TopologySpec::Custom { .. } => "custom",
        }
    }
}

/// Next-hop table from hop-count shortest paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routes {
    next: Vec<Vec<Option<NodeId>>>,
}

impl Routes {
    /// Breadth-first search from every destination; ties between equally
    /// short paths go to the smallest next-hop id.
    pub fn shortest_paths(adjacent: &[Vec<bool>]) -> Routes {
        let n = adjacent.len();
        let mut next = vec![vec![None; n]; n];
        for dst in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[dst] = 0;
            let mut queue = VecDeque::from([dst]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if adjacent[u][v] && dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            for src in 0..n {
                if src == dst || dist[src] == usize::MAX {
                    continue;
                }
                next[src][dst] = (0..n)
                    .find(|&v| adjacent[src][v] && dist[v] + 1 == dist[src])
                    .map(|v| NodeId(v as u16));
            }
        }
        Routes { next }
    }

    pub fn node_count(&self) -> usize {
        self.next.len()
    }

    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        self.next.get(from.index())?.get(to.index()).copied().flatten()
    }

    /// Hop after `next_hop(from, to)`, absent when that hop is `to` itself.
    pub fn second_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        let n = self.next_hop(from, to)?;
        if n == to {
            None
        } else {
            self.next_hop(n, to)
        }
    }

    /// Full node sequence from `from` to `to`, both included.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop(cur, to)?;
            if path.len() > self.next.len() {
                return None;
            }
            path.push(cur);
        }
        Some(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    /// Bidirectional flows between endpoint pairs.
    pub flows: Vec<(NodeId, NodeId)>,
    pub link_range_m: f64,
    pub routes: Routes,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (xa, ya) = self.positions[a.index()];
        let (xb, yb) = self.positions[b.index()];
        sqrt((xa - xb) * (xa - xb) + (ya - yb) * (ya - yb))
    }

    /// Assemble a topology, routing over links no longer than `range_m`.
    pub fn from_positions(
        positions: Vec<(f64, f64)>,
        flows: Vec<(NodeId, NodeId)>,
        range_m: f64,
    ) -> Result<Topology, SimError> {
        let n = positions.len();
        if n < 2 {
            return Err(SimError::Config("topology needs at least two nodes"));
        }
        let mut topo = Topology {
            positions,
            flows,
            link_range_m: range_m,
            routes: Routes { next: Vec::new() },
        };
        let adjacent: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| i != j && topo.distance(NodeId(i as u16), NodeId(j as u16)) <= range_m)
                    .collect()
            })
            .collect();
        topo.routes = Routes::shortest_paths(&adjacent);
        for &(a, b) in &topo.flows {
            if a.index() >= n || b.index() >= n || a == b {
                return Err(SimError::Config("flow endpoints must be distinct existing nodes"));
            }
            if topo.routes.next_hop(a, b).is_none() || topo.routes.next_hop(b, a).is_none() {
                return Err(SimError::Unroutable { from: a, to: b });
            }
        }
        Ok(topo)
    }
}

/// Radius of a wheel with `pairs` opposite pairs.
pub fn wheel_radius(pairs: u16) -> Result<f64, SimError> {
    if pairs == 0 {
        return Err(SimError::Config("wheel needs at least one pair"));
    }
    // The widest non-opposite chord spans pi - pi/pairs.
    let r = if pairs == 1 {
        WHEEL_MAX_RADIUS_M
    } else {
        let chord_factor = 2.0 * cos(PI / (2.0 * f64::from(pairs)));
        WHEEL_MAX_RADIUS_M.min(WHEEL_MAX_CHORD_M / chord_factor)
    };
    if 2.0 * r <= WHEEL_RANGE_M {
        return Err(SimError::InfeasibleWheel {
            pairs,
            radius_m: r,
            opposite_m: 2.0 * r,
        });
    }
    Ok(r)
}

/// Relay (node 0) at the centre, `2 * pairs` nodes evenly on the rim,
/// opposite rim nodes exchanging traffic.
pub fn build_wheel(pairs: u16) -> Result<Topology, SimError> {
    let r = wheel_radius(pairs)?;
    let rim = 2 * pairs;
    let mut positions = vec![(0.0, 0.0)];
    for k in 0..rim {
        let theta = 2.0 * PI * f64::from(k) / f64::from(rim);
        positions.push((r * cos(theta), r * sin(theta)));
    }
    let flows = (1..=pairs).map(|k| (NodeId(k), NodeId(k + pairs))).collect();
    Topology::from_positions(positions, flows, WHEEL_RANGE_M)
}

/// `nodes` nodes 150 m apart on a line, end nodes exchanging traffic.
pub fn build_line(nodes: u16, range_m: f64) -> Result<Topology, SimError> {
    if nodes < 2 {
        return Err(SimError::Config("line needs at least two nodes"));
    }
    let positions = (0..nodes).map(|k| (LINE_SPACING_M * f64::from(k), 0.0)).collect();
    Topology::from_positions(positions, vec![(NodeId(0), NodeId(nodes - 1))], range_m)
}

/// Uniform placement with `flows` disjoint endpoint pairs, redrawn until
/// every flow is routable.
pub fn build_random<R: Rng + ?Sized>(
    nodes: u16,
    area_m: f64,
    flows: u16,
    range_m: f64,
    rng: &mut R,
) -> Result<Topology, SimError> {
    if usize::from(flows) * 2 > usize::from(nodes) {
        return Err(SimError::Config("random topology needs two distinct nodes per flow"));
    }
    if area_m <= 0.0 {
        return Err(SimError::Config("random topology area must be positive"));
    }
    for _ in 0..RANDOM_PLACEMENT_RETRIES {
        let positions: Vec<(f64, f64)> = (0..nodes)
            .map(|_| (rng.gen_range(0.0..area_m), rng.gen_range(0.0..area_m)))
            .collect();
        let mut ids: Vec<u16> = (0..nodes).collect();
        ids.shuffle(rng);
        let pairs = ids[..2 * usize::from(flows)]
            .chunks(2)
            .map(|c| (NodeId(c[0]), NodeId(c[1])))
            .collect();
        match Topology::from_positions(positions, pairs, range_m) {
            Ok(t) => return Ok(t),
            Err(SimError::Unroutable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SimError::PlacementRetriesExhausted(RANDOM_PLACEMENT_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N0: NodeId = NodeId(0);

    #[test]
    fn alice_bob_wheel() {
        let t = build_wheel(1).unwrap();
        assert_eq!(t.node_count(), 3);
        assert!((t.distance(NodeId(1), NodeId(2)) - 300.0).abs() < 1e-9);
        assert_eq!(t.routes.next_hop(NodeId(1), NodeId(2)), Some(N0));
        assert_eq!(t.routes.second_hop(NodeId(1), NodeId(2)), Some(NodeId(2)));
        assert_eq!(t.routes.second_hop(N0, NodeId(2)), None);
    }

    #[test]
    fn wheel_geometry_bounds() {
        for pairs in 1..=5 {
            let t = build_wheel(pairs).unwrap();
            let rim = 2 * pairs;
            for a in 1..=rim {
                assert!((t.distance(N0, NodeId(a)) - t.distance(N0, NodeId(1))).abs() < 1e-9);
                for b in (a + 1)..=rim {
                    let d = t.distance(NodeId(a), NodeId(b));
                    if b - a == pairs {
                        assert!(d > WHEEL_RANGE_M, "pairs {pairs}: opposite {d}");
                    } else {
                        assert!(d <= WHEEL_MAX_CHORD_M + 1e-9, "pairs {pairs}: chord {d}");
                    }
                }
            }
            for &(a, b) in &t.flows {
                assert_eq!(t.routes.path(a, b).unwrap(), [a, N0, b]);
            }
        }
    }

    #[test]
    fn wheel_beyond_five_pairs_is_infeasible() {
        assert!(matches!(
            build_wheel(6),
            Err(SimError::InfeasibleWheel { pairs: 6, .. })
        ));
        assert!(build_wheel(0).is_err());
    }

    #[test]
    fn line_routes_follow_the_line() {
        let t = build_line(10, 268.0).unwrap();
        let path = t.routes.path(NodeId(0), NodeId(9)).unwrap();
        assert_eq!(path.len(), 10);
        assert!(path.iter().enumerate().all(|(i, n)| n.index() == i));
        assert_eq!(build_line(3, 268.0).unwrap().routes.path(NodeId(2), NodeId(0)).unwrap().len(), 3);
    }

    #[test]
    fn ties_go_to_lowest_next_hop() {
        // A square: 0 and 3 are opposite corners reachable via 1 or 2.
        let adj = vec![
            vec![false, true, true, false],
            vec![true, false, false, true],
            vec![true, false, false, true],
            vec![false, true, true, false],
        ];
        let r = Routes::shortest_paths(&adj);
        assert_eq!(r.next_hop(NodeId(0), NodeId(3)), Some(NodeId(1)));
        assert_eq!(r.next_hop(NodeId(3), NodeId(0)), Some(NodeId(1)));
    }

    #[test]
    fn random_topology_is_deterministic_and_routable() {
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let a = build_random(40, 1000.0, 10, 268.0, &mut r1).unwrap();
        let b = build_random(40, 1000.0, 10, 268.0, &mut r2).unwrap();
        assert_eq!(a, b);
        let mut ends: Vec<NodeId> = a.flows.iter().flat_map(|&(x, y)| [x, y]).collect();
        ends.sort();
        ends.dedup();
        assert_eq!(ends.len(), 20);
        for &(x, y) in &a.flows {
            assert!(a.routes.path(x, y).is_some());
            assert!(a.routes.path(y, x).is_some());
        }
    }
}
