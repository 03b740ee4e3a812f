//! Home-location inference from geolocated events.
//!
//! Events cluster with a friend-of-friend rule: any two points within
//! the linking length join the same cluster, and clusters are the
//! connected components of that graph. The largest cluster, if it is
//! big enough in absolute size and as a share of the user's events,
//! yields the home point as the spherical centroid of its members.
//!
//! Linking is accelerated by bucketing points into mesh trixels whose
//! edge exceeds the linking length and only testing pairs from buckets
//! that can reach each other. The result is identical to the all-pairs
//! graph by construction; the tests enforce that against a brute-force
//! oracle.

use crate::geo::{haversine_km, padded_bbox, spherical_centroid, GeoPoint};
use crate::htm::{cover_bbox, locate};

/// One geolocated, user-attributed event.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEvent {
    pub user_id: String,
    pub point: GeoPoint,
    /// UTC seconds since the epoch; never negative.
    pub timestamp: i64,
}

/// Inferred residence of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeLocation {
    pub user_id: String,
    pub point: GeoPoint,
    pub cluster_size: usize,
    pub total_events: usize,
    /// cluster_size / total_events, in (0, 1].
    pub support: f64,
}

/// Thresholds for [`infer_home`]. All of them are judgment calls and
/// stay configurable from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeParams {
    pub min_events: usize,
    pub link_km: f64,
    pub min_cluster_size: usize,
    pub min_support: f64,
}

impl Default for HomeParams {
    fn default() -> Self {
        HomeParams {
            min_events: 10,
            link_km: 1.0,
            min_cluster_size: 3,
            min_support: 0.2,
        }
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Friend-of-friend partition: connected components of the graph that
/// links every pair within `link_km`. Clusters come back in canonical
/// order (size descending, then smallest member index) with members
/// ascending, so equal inputs produce identical output regardless of
/// point order.
pub fn cluster_fof(points: &[GeoPoint], link_km: f64) -> Vec<Vec<usize>> {
    assert!(link_km > 0.0, "linking length must be positive");
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let depth = crate::gazetteer::depth_for_edge_km(link_km);

    // bucket points at the deepest level whose trixel edge still
    // exceeds the linking length
    let mut buckets: Vec<(u64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                locate(*p, depth).expect("depth in range").packed(),
                i as u32,
            )
        })
        .collect();
    buckets.sort_unstable();

    let mut uf = UnionFind::new(n);
    for (i, p) in points.iter().enumerate() {
        let probe = padded_bbox(*p, link_km);
        let cells = cover_bbox(&probe, depth).expect("depth in range");
        for (cell, _) in cells {
            let shift = 2 * (depth - cell.depth()) as u32;
            let lo = cell.packed() << shift;
            let hi = (cell.packed() + 1) << shift;
            let start = buckets.partition_point(|&(c, _)| c < lo);
            for &(c, j) in &buckets[start..] {
                if c >= hi {
                    break;
                }
                let j = j as usize;
                if j <= i {
                    continue;
                }
                if haversine_km(*p, points[j]) <= link_km {
                    uf.union(i as u32, j as u32);
                }
            }
        }
    }

    canonical_partition(n, |i| uf.find(i as u32) as usize)
}

/// Groups indices by their component root and applies the canonical
/// ordering shared with test oracles.
pub(crate) fn canonical_partition(
    n: usize,
    mut root_of: impl FnMut(usize) -> usize,
) -> Vec<Vec<usize>> {
    let mut by_root: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for i in 0..n {
        by_root.entry(root_of(i)).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = by_root.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters
}

/// Infers the user's home from their events, or nothing when the
/// evidence is too thin: too few events overall, a largest cluster
/// below the size floor, or a support share below the minimum.
pub fn infer_home(events: &[GeoEvent], params: &HomeParams) -> Option<HomeLocation> {
    let total = events.len();
    if total < params.min_events {
        return None;
    }
    debug_assert!(
        events.iter().all(|e| e.user_id == events[0].user_id),
        "events of several users passed to infer_home"
    );
    let points: Vec<GeoPoint> = events.iter().map(|e| e.point).collect();
    let clusters = cluster_fof(&points, params.link_km);
    let winner = clusters.first()?;
    if winner.len() < params.min_cluster_size {
        return None;
    }
    let support = winner.len() as f64 / total as f64;
    if support < params.min_support {
        return None;
    }
    let member_points: Vec<GeoPoint> = winner.iter().map(|&i| points[i]).collect();
    let home = spherical_centroid(member_points.iter())?;
    Some(HomeLocation {
        user_id: events[0].user_id.clone(),
        point: home,
        cluster_size: winner.len(),
        total_events: total,
        support,
    })
}
