//! Graph-world simulator: navigable viewpoints with metric positions and
//! symbolic landmark observations on a 12 x 3 panoramic direction grid.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type NodeId = usize;

pub const HEADINGS: usize = 12;
pub const ELEVATIONS: usize = 3;
pub const DIRECTIONS: usize = HEADINGS * ELEVATIONS;
pub const DEFAULT_VISIBILITY_RADIUS: f64 = 5.0;
/// Level elevation bin, used for start states.
pub const LEVEL: u8 = 1;

const HEADING_DEG: f64 = 30.0;
const ELEVATION_HALF_BAND_DEG: f64 = 15.0;
const GEODESIC_RTOL: f64 = 1e-9;

/// Object words used to name landmarks in generated worlds. Disjoint from the
/// landmark and verb blacklists of the instruction parser.
pub const LANDMARK_NAMES: &[&str] = &[
    "sofa", "table", "kitchen", "lamp", "bed", "painting", "fireplace", "piano", "mirror",
    "plant", "bathtub", "staircase", "couch", "fridge", "sink", "desk", "bookshelf", "rug",
    "television", "closet", "chair", "window", "oven", "counter", "dresser", "statue",
    "vase", "railing", "hallway", "bedroom", "bathroom", "toilet", "archway", "cabinet",
    "balcony", "pool",
];

pub fn landmark_vocab(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| match LANDMARK_NAMES.get(i) {
            Some(name) => (*name).to_string(),
            None => format!("object{i}"),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub position: [f64; 3],
    pub landmarks: BTreeSet<String>,
}

/// Agent pose: a node plus the panoramic bin it faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub node: NodeId,
    pub heading: u8,
    pub elevation: u8,
}

impl State {
    pub fn at(node: NodeId) -> Self {
        State {
            node,
            heading: 0,
            elevation: LEVEL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NavAction {
    MoveTo(NodeId),
    Stop,
}

/// Landmark observation at a node. `landmarks` is a 36 x |vocab| row-major
/// multi-hot (row = `elevation * 12 + heading`); `here` marks the landmarks
/// carried by the node itself, which have no direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub vocab_size: usize,
    pub landmarks: Vec<bool>,
    pub here: Vec<bool>,
    pub neighbor_directions: BTreeMap<NodeId, (u8, u8)>,
}

impl Observation {
    pub fn feature_dim(vocab_size: usize) -> usize {
        (DIRECTIONS + 1) * vocab_size
    }

    pub fn bit(&self, heading: u8, elevation: u8, landmark: usize) -> bool {
        self.landmarks[direction_index(heading, elevation) * self.vocab_size + landmark]
    }

    pub fn direction(&self, heading: u8, elevation: u8) -> &[bool] {
        let start = direction_index(heading, elevation) * self.vocab_size;
        &self.landmarks[start..start + self.vocab_size]
    }

    /// Landmarks visible in any direction.
    pub fn visible(&self) -> Vec<bool> {
        let mut out = vec![false; self.vocab_size];
        for row in self.landmarks.chunks(self.vocab_size) {
            for (o, &b) in out.iter_mut().zip(row) {
                *o |= b;
            }
        }
        out
    }

    /// Indices of set bits in the flattened `[landmarks ++ here]` feature vector.
    pub fn active_features(&self) -> Vec<usize> {
        self.landmarks
            .iter()
            .chain(self.here.iter())
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

pub fn direction_index(heading: u8, elevation: u8) -> usize {
    elevation as usize * HEADINGS + heading as usize
}

/// Panoramic bin of the displacement `from -> to`: azimuth clockwise from
/// +y quantized to 30 degree bins centred on the bin heading, elevation split
/// at +-15 degrees.
pub fn direction_bin(from: [f64; 3], to: [f64; 3]) -> (u8, u8) {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let dz = to[2] - from[2];
    let azimuth = dx.atan2(dy).to_degrees().rem_euclid(360.0);
    let heading = (((azimuth + HEADING_DEG / 2.0) / HEADING_DEG).floor() as usize % HEADINGS) as u8;
    let pitch = dz.atan2(dx.hypot(dy)).to_degrees();
    let elevation = if pitch < -ELEVATION_HALF_BAND_DEG {
        0
    } else if pitch > ELEVATION_HALF_BAND_DEG {
        2
    } else {
        1
    };
    (heading, elevation)
}

fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Serialize, Deserialize)]
struct WorldRecord {
    world_id: String,
    nodes: Vec<Node>,
    edges: Vec<[NodeId; 2]>,
    landmark_vocab: Vec<String>,
}

/// Immutable navigation graph. Geodesic distances and per-node observations
/// are precomputed at construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "WorldRecord", into = "WorldRecord")]
pub struct WorldGraph {
    world_id: String,
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    landmark_vocab: Vec<String>,
    visibility_radius: f64,
    adjacency: Vec<Vec<NodeId>>,
    node_landmarks: Vec<Vec<usize>>,
    geodesic: Vec<f64>,
    observations: Vec<Observation>,
}

impl PartialEq for WorldGraph {
    fn eq(&self, other: &Self) -> bool {
        self.world_id == other.world_id
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.landmark_vocab == other.landmark_vocab
    }
}

impl TryFrom<WorldRecord> for WorldGraph {
    type Error = Error;

    fn try_from(r: WorldRecord) -> Result<Self> {
        let edges = r.edges.into_iter().map(|[a, b]| (a, b)).collect();
        WorldGraph::new(r.world_id, r.nodes, edges, r.landmark_vocab)
    }
}

impl From<WorldGraph> for WorldRecord {
    fn from(w: WorldGraph) -> Self {
        WorldRecord {
            world_id: w.world_id,
            nodes: w.nodes,
            edges: w.edges.into_iter().map(|(a, b)| [a, b]).collect(),
            landmark_vocab: w.landmark_vocab,
        }
    }
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl WorldGraph {
    /// Builds a world from parts. Node ids must be `0..n` in order, edges must
    /// join distinct positions, and node landmarks must come from the vocab.
    /// Connectivity is not required here (see [`WorldGraph::is_connected`]);
    /// generated worlds are always connected.
    pub fn new(
        world_id: impl Into<String>,
        nodes: Vec<Node>,
        edges: Vec<(NodeId, NodeId)>,
        landmark_vocab: Vec<String>,
    ) -> Result<Self> {
        Self::with_visibility_radius(
            world_id,
            nodes,
            edges,
            landmark_vocab,
            DEFAULT_VISIBILITY_RADIUS,
        )
    }

    pub fn with_visibility_radius(
        world_id: impl Into<String>,
        nodes: Vec<Node>,
        edges: Vec<(NodeId, NodeId)>,
        landmark_vocab: Vec<String>,
        visibility_radius: f64,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidWorld("world has no nodes".into()));
        }
        if !(visibility_radius >= 0.0) {
            return Err(Error::InvalidWorld("visibility radius must be >= 0".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::InvalidWorld(format!(
                    "node at index {i} has id {}; ids must be 0..n in order",
                    node.id
                )));
            }
            if node.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidWorld(format!("node {i} has a non-finite position")));
            }
        }
        let vocab_index: BTreeMap<&str, usize> = landmark_vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        if vocab_index.len() != landmark_vocab.len() {
            return Err(Error::InvalidWorld("landmark vocab has duplicates".into()));
        }
        let mut node_landmarks = Vec::with_capacity(n);
        for node in &nodes {
            let mut ids = Vec::with_capacity(node.landmarks.len());
            for name in &node.landmarks {
                match vocab_index.get(name.as_str()) {
                    Some(&k) => ids.push(k),
                    None => {
                        return Err(Error::InvalidWorld(format!(
                            "node {} carries landmark {name:?} outside the vocab",
                            node.id
                        )))
                    }
                }
            }
            ids.sort_unstable();
            node_landmarks.push(ids);
        }

        let mut normalized = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::InvalidWorld(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::InvalidWorld(format!("self-loop at node {a}")));
            }
            let len = euclidean(nodes[a].position, nodes[b].position);
            if !(len > 0.0) {
                return Err(Error::InvalidWorld(format!("edge ({a}, {b}) has zero length")));
            }
            if normalized.insert((a.min(b), a.max(b))) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let mut world = WorldGraph {
            world_id: world_id.into(),
            nodes,
            edges: normalized.into_iter().collect(),
            landmark_vocab,
            visibility_radius,
            adjacency,
            node_landmarks,
            geodesic: Vec::new(),
            observations: Vec::new(),
        };
        world.geodesic = (0..n).flat_map(|s| world.dijkstra(s)).collect();
        world.observations = (0..n).map(|i| world.compute_observation(i)).collect();
        Ok(world)
    }

    fn dijkstra(&self, source: NodeId) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier {
            dist: 0.0,
            node: source,
        });
        while let Some(Frontier { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &next in &self.adjacency[node] {
                let nd = d + self.edge_length(node, next);
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Frontier { dist: nd, node: next });
                }
            }
        }
        dist
    }

    fn compute_observation(&self, node: NodeId) -> Observation {
        let v = self.landmark_vocab.len();
        let origin = self.nodes[node].position;
        let mut landmarks = vec![false; DIRECTIONS * v];
        for (j, other) in self.nodes.iter().enumerate() {
            if j == node || self.node_landmarks[j].is_empty() {
                continue;
            }
            if euclidean(origin, other.position) > self.visibility_radius {
                continue;
            }
            let (h, e) = direction_bin(origin, other.position);
            let row = direction_index(h, e) * v;
            for &k in &self.node_landmarks[j] {
                landmarks[row + k] = true;
            }
        }
        let mut here = vec![false; v];
        for &k in &self.node_landmarks[node] {
            here[k] = true;
        }
        let neighbor_directions = self.adjacency[node]
            .iter()
            .map(|&j| (j, direction_bin(origin, self.nodes[j].position)))
            .collect();
        Observation {
            vocab_size: v,
            landmarks,
            here,
            neighbor_directions,
        }
    }

    pub fn world_id(&self) -> &str {
        &self.world_id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Undirected edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn landmark_vocab(&self) -> &[String] {
        &self.landmark_vocab
    }

    pub fn visibility_radius(&self) -> f64 {
        self.visibility_radius
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    /// Vocab indices of the landmarks carried by `node`, ascending.
    pub fn node_landmarks(&self, node: NodeId) -> &[usize] {
        &self.node_landmarks[node]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node < self.nodes.len()
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a) && self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn position(&self, node: NodeId) -> [f64; 3] {
        self.nodes[node].position
    }

    pub fn euclidean(&self, a: NodeId, b: NodeId) -> f64 {
        euclidean(self.nodes[a].position, self.nodes[b].position)
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> f64 {
        self.euclidean(a, b)
    }

    /// Shortest-path distance along edges; infinite when disconnected.
    pub fn geodesic(&self, a: NodeId, b: NodeId) -> f64 {
        self.geodesic[a * self.nodes.len() + b]
    }

    pub fn is_connected(&self) -> bool {
        self.geodesic[..self.nodes.len()].iter().all(|d| d.is_finite())
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.nodes.len() as f64
    }

    fn check_state(&self, s: State) -> Result<()> {
        if !self.contains(s.node) {
            return Err(Error::InvalidState(format!("node {} not in world", s.node)));
        }
        if s.heading as usize >= HEADINGS || s.elevation as usize >= ELEVATIONS {
            return Err(Error::InvalidState(format!(
                "heading {} / elevation {} outside the 12 x 3 grid",
                s.heading, s.elevation
            )));
        }
        Ok(())
    }

    /// Transition function. `MoveTo` lands on the target facing the bin of
    /// the traversed direction; `Stop` is the identity.
    pub fn step(&self, s: State, a: NavAction) -> Result<State> {
        self.check_state(s)?;
        match a {
            NavAction::Stop => Ok(s),
            NavAction::MoveTo(target) => {
                if !self.is_adjacent(s.node, target) {
                    return Err(Error::InvalidAction {
                        node: s.node,
                        target,
                    });
                }
                let (heading, elevation) = self.move_bin(s.node, target);
                Ok(State {
                    node: target,
                    heading,
                    elevation,
                })
            }
        }
    }

    pub fn move_bin(&self, from: NodeId, to: NodeId) -> (u8, u8) {
        direction_bin(self.nodes[from].position, self.nodes[to].position)
    }

    /// The precomputed observation at a state. Observations use absolute
    /// direction bins, so they depend only on the node.
    pub fn observe(&self, s: State) -> Result<&Observation> {
        self.check_state(s)?;
        Ok(&self.observations[s.node])
    }

    pub fn observation_at(&self, node: NodeId) -> &Observation {
        &self.observations[node]
    }

    /// `Stop` followed by a move to each neighbour in ascending id order.
    pub fn navigable_actions(&self, s: State) -> Result<Vec<NavAction>> {
        self.check_state(s)?;
        let mut out = Vec::with_capacity(self.adjacency[s.node].len() + 1);
        out.push(NavAction::Stop);
        out.extend(self.adjacency[s.node].iter().map(|&j| NavAction::MoveTo(j)));
        Ok(out)
    }

    /// Metric shortest path from `a` to `b`; among equal-length paths the
    /// lexicographically smallest node sequence wins.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<Vec<NodeId>> {
        for n in [a, b] {
            if !self.contains(n) {
                return Err(Error::InvalidState(format!("node {n} not in world")));
            }
        }
        if !self.geodesic(a, b).is_finite() {
            return Err(Error::Unreachable { from: a, to: b });
        }
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            let remaining = self.geodesic(cur, b);
            let tol = GEODESIC_RTOL * remaining.max(1.0);
            cur = *self.adjacency[cur]
                .iter()
                .find(|&&n| (self.edge_length(cur, n) + self.geodesic(n, b) - remaining).abs() <= tol)
                .expect("a shortest-path successor exists for finite geodesics");
            path.push(cur);
        }
        Ok(path)
    }

    /// First move along the shortest path towards `goal`, or `Stop` when
    /// already there.
    pub fn next_hop(&self, from: NodeId, goal: NodeId) -> Result<NavAction> {
        if from == goal {
            return Ok(NavAction::Stop);
        }
        let path = self.shortest_path(from, goal)?;
        Ok(NavAction::MoveTo(path[1]))
    }
}

/// Random geometric graph in a 3-D box: the `n_nodes * connectivity / 2`
/// closest pairs become edges, then the closest inter-component pairs are
/// added until the graph is connected. Each node carries 0-3 landmarks.
pub fn generate_world(
    seed: u64,
    n_nodes: usize,
    n_landmarks: usize,
    connectivity: f64,
) -> Result<WorldGraph> {
    if n_nodes < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_nodes must be >= 2 to build a connected world (got {n_nodes})"
        )));
    }
    if n_landmarks < 1 {
        return Err(Error::InvalidParameter("n_landmarks must be >= 1".into()));
    }
    if !(connectivity >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "connectivity must be >= 1 (got {connectivity})"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::tag::WORLD]);
    let side = 2.5 * (n_nodes as f64).sqrt();
    let positions: Vec<[f64; 3]> = (0..n_nodes)
        .map(|_| {
            [
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();

    let mut pairs: Vec<(f64, NodeId, NodeId)> = Vec::with_capacity(n_nodes * (n_nodes - 1) / 2);
    for a in 0..n_nodes {
        for b in a + 1..n_nodes {
            pairs.push((euclidean(positions[a], positions[b]), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let target = ((n_nodes as f64 * connectivity / 2.0).round() as usize).clamp(1, pairs.len());
    let mut components = UnionFind::new(n_nodes);
    let mut edges = Vec::with_capacity(target + n_nodes);
    for &(_, a, b) in &pairs[..target] {
        components.union(a, b);
        edges.push((a, b));
    }
    for &(_, a, b) in &pairs[target..] {
        if components.count == 1 {
            break;
        }
        if components.union(a, b) {
            edges.push((a, b));
        }
    }

    let vocab = landmark_vocab(n_landmarks);
    let mut ids: Vec<usize> = (0..n_landmarks).collect();
    let nodes = positions
        .into_iter()
        .enumerate()
        .map(|(id, position)| {
            let count = rng.gen_range(0..=3usize).min(n_landmarks);
            ids.shuffle(&mut rng);
            let landmarks = ids[..count].iter().map(|&k| vocab[k].clone()).collect();
            Node {
                id,
                position,
                landmarks,
            }
        })
        .collect();

    WorldGraph::new(format!("world-{seed}"), nodes, edges, vocab)
}

struct UnionFind {
    parent: Vec<usize>,
    count: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            count: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        self.count -= 1;
        true
    }
}
