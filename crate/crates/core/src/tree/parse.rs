use std::collections::{HashSet, VecDeque};

use super::{AirwayTree, Branch};
use crate::error::{Error, Result};
use crate::morphology::DistanceField;
use crate::skeleton::SkeletonPointSet;
use crate::volume::Coord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Tip(usize),
    Junction(usize),
}

struct Graph<'a> {
    sk: &'a SkeletonPointSet,
    nbrs: Vec<Vec<usize>>,
    /// node id per point, for tips and junction-cluster members
    node_of: Vec<Option<usize>>,
    nodes: Vec<NodeKind>,
    clusters: Vec<Vec<usize>>,
    /// representative point of each cluster
    centre: Vec<usize>,
}

struct Edge {
    a: usize,
    b: usize,
    path: Vec<usize>,
}

impl<'a> Graph<'a> {
    fn build(sk: &'a SkeletonPointSet) -> Self {
        let n = sk.len();
        let nbrs: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut v: Vec<usize> = sk.neighbors(i).collect();
                v.sort_unstable();
                v
            })
            .collect();

        // Adjacent branch points (count >= 3) form one junction.
        let mut cluster_of = vec![usize::MAX; n];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for s in 0..n {
            if nbrs[s].len() < 3 || cluster_of[s] != usize::MAX {
                continue;
            }
            let id = clusters.len();
            let mut members = vec![s];
            cluster_of[s] = id;
            let mut k = 0;
            while k < members.len() {
                let i = members[k];
                for &j in &nbrs[i] {
                    if nbrs[j].len() >= 3 && cluster_of[j] == usize::MAX {
                        cluster_of[j] = id;
                        members.push(j);
                    }
                }
                k += 1;
            }
            members.sort_unstable();
            clusters.push(members);
        }

        let centre = clusters
            .iter()
            .map(|members| {
                let pts: Vec<Coord> = members.iter().map(|&i| sk.points()[i]).collect();
                let mean = [0, 1, 2].map(|k| {
                    pts.iter().map(|p| p[k] as f64).sum::<f64>() / pts.len() as f64
                });
                let spread = |p: &Coord| -> f64 { (0..3).map(|k| (p[k] as f64 - mean[k]).powi(2)).sum() };
                // first minimum in point order
                let mut best = 0;
                for (k, p) in pts.iter().enumerate() {
                    if spread(p) < spread(&pts[best]) {
                        best = k;
                    }
                }
                members[best]
            })
            .collect();

        let mut nodes = Vec::new();
        let mut node_of = vec![None; n];
        let mut cluster_node = vec![usize::MAX; clusters.len()];
        for i in 0..n {
            if nbrs[i].len() == 1 {
                node_of[i] = Some(nodes.len());
                nodes.push(NodeKind::Tip(i));
            } else if cluster_of[i] != usize::MAX {
                let c = cluster_of[i];
                if cluster_node[c] == usize::MAX {
                    cluster_node[c] = nodes.len();
                    nodes.push(NodeKind::Junction(c));
                }
                node_of[i] = Some(cluster_node[c]);
            }
        }

        Graph {
            sk,
            nbrs,
            node_of,
            nodes,
            clusters,
            centre,
        }
    }

    fn members(&self, node: usize) -> &[usize] {
        match &self.nodes[node] {
            NodeKind::Tip(p) => std::slice::from_ref(p),
            NodeKind::Junction(c) => &self.clusters[*c],
        }
    }

    fn anchor(&self, node: usize) -> usize {
        match self.nodes[node] {
            NodeKind::Tip(p) => p,
            NodeKind::Junction(c) => self.centre[c],
        }
    }

    /// Shortest route between two members of one junction cluster.
    fn route_in_cluster(&self, from: usize, to: usize) -> Vec<usize> {
        if from == to {
            return vec![from];
        }
        let node = self.node_of[from];
        let mut prev = std::collections::HashMap::new();
        prev.insert(from, from);
        let mut queue = VecDeque::from([from]);
        while let Some(i) = queue.pop_front() {
            if i == to {
                break;
            }
            for &j in &self.nbrs[i] {
                if self.node_of[j] == node && !prev.contains_key(&j) {
                    prev.insert(j, i);
                    queue.push_back(j);
                }
            }
        }
        let mut route = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[&cur];
            route.push(cur);
        }
        route.reverse();
        route
    }

    /// Traces every path between nodes through degree-2 points.
    fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        let mut walked = vec![false; self.sk.len()];
        let mut direct = HashSet::new();
        for node in 0..self.nodes.len() {
            for &m in self.members(node) {
                for &q in &self.nbrs[m] {
                    if self.node_of[q] == Some(node) {
                        continue;
                    }
                    if let Some(other) = self.node_of[q] {
                        if direct.insert((node.min(other), node.max(other))) {
                            edges.push(Edge {
                                a: node,
                                b: other,
                                path: vec![m, q],
                            });
                        }
                        continue;
                    }
                    if walked[q] {
                        continue;
                    }
                    walked[q] = true;
                    let mut path = vec![m, q];
                    let (mut prev, mut cur) = (m, q);
                    loop {
                        let Some(&next) = self.nbrs[cur].iter().find(|&&x| x != prev) else {
                            break;
                        };
                        if let Some(end) = self.node_of[next] {
                            path.push(next);
                            if end != node {
                                edges.push(Edge {
                                    a: node,
                                    b: end,
                                    path,
                                });
                            }
                            break;
                        }
                        if walked[next] {
                            break;
                        }
                        walked[next] = true;
                        path.push(next);
                        prev = cur;
                        cur = next;
                    }
                }
            }
        }
        // Run every path from anchor to anchor through the junction clusters.
        for e in &mut edges {
            let head = self.route_in_cluster(self.anchor(e.a), e.path[0]);
            let tail = self.route_in_cluster(*e.path.last().unwrap(), self.anchor(e.b));
            let mut full = head;
            full.extend_from_slice(&e.path[1..]);
            full.extend_from_slice(&tail[1..]);
            e.path = full;
        }
        edges
    }
}

/// Turns a single-component skeleton into an ungraded, unlabeled tree.
///
/// Branch points are skeleton points with three or more neighbours (adjacent
/// ones merged into one junction), tips have exactly one. The root is the tip
/// of the widest tip-bearing segment, with `radius` sampled along it; ties
/// and a missing radius field fall back to the tip with the largest `z`.
pub fn parse_skeleton(sk: &SkeletonPointSet, radius: Option<&DistanceField>) -> Result<AirwayTree> {
    if sk.is_empty() {
        return Err(Error::EmptyMask);
    }
    let comps = sk.components();
    if comps.len() > 1 {
        return Err(Error::DisconnectedSkeleton(comps.len()));
    }
    let radius_at = |i: usize| radius.map_or(1.0, |f| f.at(sk.points()[i]));
    let coords = |path: &[usize]| -> Vec<Coord> { path.iter().map(|&i| sk.points()[i]).collect() };

    if sk.len() == 1 {
        let b = Branch::new(0, None, coords(&[0]), vec![radius_at(0)], sk.spacing());
        return Ok(AirwayTree::from_parts_unchecked(vec![b], 0, sk.spacing(), sk.dims()));
    }

    let g = Graph::build(sk);
    if !g.nodes.iter().any(|n| matches!(n, NodeKind::Tip(_))) {
        return Err(Error::DegenerateSkeleton);
    }
    let edges = g.edges();
    let mean_radius: Vec<f64> = edges
        .iter()
        .map(|e| e.path.iter().map(|&i| radius_at(i)).sum::<f64>() / e.path.len() as f64)
        .collect();

    let mut root: Option<(usize, usize)> = None; // (edge, tip node)
    for (k, e) in edges.iter().enumerate() {
        for tip in [e.a, e.b] {
            let NodeKind::Tip(p) = g.nodes[tip] else { continue };
            let better = match root {
                None => true,
                Some((best, best_tip)) => {
                    let NodeKind::Tip(bp) = g.nodes[best_tip] else { unreachable!() };
                    mean_radius[k] > mean_radius[best]
                        || (mean_radius[k] == mean_radius[best] && sk.points()[p][0] > sk.points()[bp][0])
                }
            };
            if better {
                root = Some((k, tip));
            }
        }
    }
    let (root_edge, root_node) = root.ok_or(Error::DegenerateSkeleton)?;

    let mut node_edges = vec![Vec::new(); g.nodes.len()];
    for (k, e) in edges.iter().enumerate() {
        node_edges[e.a].push(k);
        node_edges[e.b].push(k);
    }

    let mut branches: Vec<Branch> = Vec::new();
    let mut used = vec![false; edges.len()];
    let mut reached = vec![false; g.nodes.len()];
    reached[root_node] = true;
    let mut queue = VecDeque::from([(root_edge, root_node, None::<usize>)]);
    while let Some((k, from, parent)) = queue.pop_front() {
        if used[k] {
            continue;
        }
        used[k] = true;
        let e = &edges[k];
        let to = if e.a == from { e.b } else { e.a };
        if reached[to] {
            // closes a loop; the tree keeps the first route found
            continue;
        }
        reached[to] = true;
        let mut path = e.path.clone();
        if e.a != from {
            path.reverse();
        }
        let id = branches.len();
        let radii = path.iter().map(|&i| radius_at(i)).collect();
        branches.push(Branch::new(id, parent, coords(&path), radii, sk.spacing()));
        if let Some(p) = parent {
            branches[p].children.push(id);
        }
        for &k2 in &node_edges[to] {
            if !used[k2] {
                queue.push_back((k2, to, Some(id)));
            }
        }
    }
    Ok(AirwayTree::from_parts_unchecked(
        branches,
        0,
        sk.spacing(),
        sk.dims(),
    ))
}
