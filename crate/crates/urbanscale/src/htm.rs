//! Hierarchical triangular mesh over the unit sphere.
//!
//! The sphere is seeded with the eight faces of an octahedron (poles on
//! the z axis, longitude 0 on the x axis) and each spherical triangle
//! ("trixel") splits into four children through the renormalized edge
//! midpoints. Trixel ids pack a root index and a child-digit path into a
//! single integer with a sentinel bit, so `parent` is a right shift and
//! the prefix property holds bit-for-bit.

use crate::geo::{cross, dot, normalize, BoundingBox, GeoPoint};
use thiserror::Error;

/// Deepest supported subdivision level.
pub const MAX_DEPTH: u8 = 30;

/// Inclusive slack for sidedness tests on normalized triple products.
/// Well below the geometry noise floor at depth 30, so ties stay
/// deterministic without ever rejecting a genuinely interior point.
pub const SIDE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HtmError {
    #[error("depth {0} exceeds maximum {MAX_DEPTH}")]
    DepthOutOfRange(u8),
    #[error("trixel already at maximum depth {MAX_DEPTH}")]
    MaxDepthReached,
    #[error("invalid packed trixel id {0:#x}")]
    InvalidPacked(u64),
    #[error("root index {0} outside 0..8")]
    InvalidRoot(u8),
    #[error("child digit {0} outside 0..4")]
    InvalidDigit(u8),
}

/// Packed trixel identifier.
///
/// Layout (from the high end): a single sentinel 1 bit, three root bits,
/// then two bits per path digit. A root id is therefore `8 + root` and a
/// child id is `parent << 2 | digit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrixelId(u64);

const ROOT_NAMES: [&str; 8] = ["S0", "S1", "S2", "S3", "N0", "N1", "N2", "N3"];

impl TrixelId {
    pub fn root(index: u8) -> Result<Self, HtmError> {
        if index >= 8 {
            return Err(HtmError::InvalidRoot(index));
        }
        Ok(TrixelId(8 | index as u64))
    }

    pub fn from_parts(root: u8, path: &[u8]) -> Result<Self, HtmError> {
        if path.len() > MAX_DEPTH as usize {
            return Err(HtmError::DepthOutOfRange(path.len() as u8));
        }
        let mut id = Self::root(root)?;
        for &d in path {
            id = id.child(d)?;
        }
        Ok(id)
    }

    /// Validates a packed value: sentinel present, an even number of
    /// digit bits, and depth within range.
    pub fn decode(packed: u64) -> Result<Self, HtmError> {
        if packed < 8 {
            return Err(HtmError::InvalidPacked(packed));
        }
        let bits = 64 - packed.leading_zeros() as u64;
        if !(bits - 4).is_multiple_of(2) || (bits - 4) / 2 > MAX_DEPTH as u64 {
            return Err(HtmError::InvalidPacked(packed));
        }
        Ok(TrixelId(packed))
    }

    pub fn packed(self) -> u64 {
        self.0
    }

    pub fn depth(self) -> u8 {
        let bits = 64 - self.0.leading_zeros() as u8;
        (bits - 4) / 2
    }

    pub fn root_index(self) -> u8 {
        ((self.0 >> (2 * self.depth())) & 0x7) as u8
    }

    /// Path digits from the root down.
    pub fn digits(self) -> Vec<u8> {
        let depth = self.depth();
        (0..depth)
            .map(|i| ((self.0 >> (2 * (depth - 1 - i))) & 0x3) as u8)
            .collect()
    }

    pub fn parent(self) -> Option<TrixelId> {
        if self.depth() == 0 {
            None
        } else {
            Some(TrixelId(self.0 >> 2))
        }
    }

    pub fn child(self, digit: u8) -> Result<TrixelId, HtmError> {
        if digit >= 4 {
            return Err(HtmError::InvalidDigit(digit));
        }
        if self.depth() >= MAX_DEPTH {
            return Err(HtmError::MaxDepthReached);
        }
        Ok(TrixelId(self.0 << 2 | digit as u64))
    }

    /// True when `self` is `other` or an ancestor of it.
    pub fn contains_id(self, other: TrixelId) -> bool {
        let (da, db) = (self.depth(), other.depth());
        da <= db && (other.0 >> (2 * (db - da))) == self.0
    }

    /// Ancestor at `depth`, which must not exceed the own depth.
    pub fn ancestor_at(self, depth: u8) -> TrixelId {
        let d = self.depth();
        assert!(
            depth <= d,
            "ancestor depth {depth} deeper than id depth {d}"
        );
        TrixelId(self.0 >> (2 * (d - depth)))
    }

    /// Human-readable name such as "N012".
    pub fn name(self) -> String {
        let mut s = String::from(ROOT_NAMES[self.root_index() as usize]);
        for d in self.digits() {
            s.push(char::from(b'0' + d));
        }
        s
    }
}

impl std::fmt::Display for TrixelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A trixel with its three unit-vector corners, counterclockwise seen
/// from outside the sphere.
#[derive(Debug, Clone, Copy)]
pub struct Trixel {
    pub id: TrixelId,
    pub vertices: [[f64; 3]; 3],
}

// Octahedron corners: poles on +-z, lon 0 at +x, lon 90 at +y.
const OCTA: [[f64; 3]; 6] = [
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
];

// Root faces in id order S0..S3, N0..N3.
const ROOT_FACES: [[usize; 3]; 8] = [
    [1, 5, 2],
    [2, 5, 3],
    [3, 5, 4],
    [4, 5, 1],
    [1, 0, 4],
    [4, 0, 3],
    [3, 0, 2],
    [2, 0, 1],
];

pub fn root_trixel(index: u8) -> Result<Trixel, HtmError> {
    let id = TrixelId::root(index)?;
    let f = ROOT_FACES[index as usize];
    Ok(Trixel {
        id,
        vertices: [OCTA[f[0]], OCTA[f[1]], OCTA[f[2]]],
    })
}

/// Trixel geometry for an arbitrary id, rebuilt by descending from its root.
pub fn trixel_from_id(id: TrixelId) -> Trixel {
    let mut t = root_trixel(id.root_index()).expect("valid root");
    for d in id.digits() {
        t = subdivide(&t).expect("depth checked by id")[d as usize];
    }
    t
}

fn midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]])
}

/// Splits a trixel through its renormalized edge midpoints. Child digits:
/// 0 keeps v0, 1 keeps v1, 2 keeps v2 and 3 is the middle triangle.
pub fn subdivide(t: &Trixel) -> Result<[Trixel; 4], HtmError> {
    let [v0, v1, v2] = t.vertices;
    let m01 = midpoint(v0, v1);
    let m02 = midpoint(v0, v2);
    let m12 = midpoint(v1, v2);
    Ok([
        Trixel {
            id: t.id.child(0)?,
            vertices: [v0, m01, m02],
        },
        Trixel {
            id: t.id.child(1)?,
            vertices: [v1, m12, m01],
        },
        Trixel {
            id: t.id.child(2)?,
            vertices: [v2, m02, m12],
        },
        Trixel {
            id: t.id.child(3)?,
            vertices: [m01, m12, m02],
        },
    ])
}

/// Signed distance of `p` from the great-circle plane through `a`, `b`,
/// using the normalized edge normal. Positive on the inside of a
/// counterclockwise triangle.
fn side(a: [f64; 3], b: [f64; 3], p: [f64; 3]) -> f64 {
    dot(normalize(cross(a, b)), p)
}

/// Smallest of the three side values; >= -SIDE_TOLERANCE means inside.
fn min_side(t: &Trixel, p: [f64; 3]) -> f64 {
    let [v0, v1, v2] = t.vertices;
    side(v0, v1, p).min(side(v1, v2, p)).min(side(v2, v0, p))
}

pub fn point_in_trixel(t: &Trixel, p: [f64; 3]) -> bool {
    min_side(t, p) >= -SIDE_TOLERANCE
}

/// The trixel at `depth` containing `p`. Points on shared edges resolve
/// to the first candidate in root order, then child-digit order, which
/// keeps the result deterministic.
pub fn locate(p: GeoPoint, depth: u8) -> Result<TrixelId, HtmError> {
    if depth > MAX_DEPTH {
        return Err(HtmError::DepthOutOfRange(depth));
    }
    let v = p.to_unit_vector();
    let mut best = root_trixel(0).expect("root 0");
    let mut best_side = f64::NEG_INFINITY;
    for r in 0..8u8 {
        let t = root_trixel(r).expect("valid root");
        let s = min_side(&t, v);
        if s >= -SIDE_TOLERANCE {
            best = t;
            break;
        }
        if s > best_side {
            best_side = s;
            best = t;
        }
    }
    let mut cur = best;
    for _ in 0..depth {
        let children = subdivide(&cur)?;
        let mut chosen = None;
        let mut fallback = (f64::NEG_INFINITY, 0usize);
        for (i, child) in children.iter().enumerate() {
            let s = min_side(child, v);
            if s >= -SIDE_TOLERANCE {
                chosen = Some(i);
                break;
            }
            if s > fallback.0 {
                fallback = (s, i);
            }
        }
        cur = children[chosen.unwrap_or(fallback.1)];
    }
    Ok(cur.id)
}

/// Whether a cover cell lies fully inside the rectangle or only meets it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverFlag {
    Full,
    Partial,
}

enum Classification {
    Disjoint,
    Intersecting,
    Inside,
}

/// Trixels covering a lat/lon rectangle. Trixels wholly inside come out
/// `Full` wherever the recursion finds them; trixels still crossing the
/// boundary at `depth` come out `Partial`. The union of the returned
/// cells is always a superset of the rectangle.
pub fn cover_bbox(bbox: &BoundingBox, depth: u8) -> Result<Vec<(TrixelId, CoverFlag)>, HtmError> {
    if depth > MAX_DEPTH {
        return Err(HtmError::DepthOutOfRange(depth));
    }
    if bbox.is_point() {
        let p = GeoPoint::new(bbox.min_lat(), bbox.west()).expect("valid corner");
        return Ok(vec![(locate(p, depth)?, CoverFlag::Partial)]);
    }
    let mut out = Vec::new();
    for r in 0..8u8 {
        cover_recurse(&root_trixel(r)?, bbox, depth, &mut out)?;
    }
    Ok(out)
}

fn cover_recurse(
    t: &Trixel,
    bbox: &BoundingBox,
    depth: u8,
    out: &mut Vec<(TrixelId, CoverFlag)>,
) -> Result<(), HtmError> {
    match classify(t, bbox) {
        Classification::Disjoint => {}
        Classification::Inside => out.push((t.id, CoverFlag::Full)),
        Classification::Intersecting => {
            if t.id.depth() >= depth {
                out.push((t.id, CoverFlag::Partial));
            } else {
                for child in subdivide(t)? {
                    cover_recurse(&child, bbox, depth, out)?;
                }
            }
        }
    }
    Ok(())
}

const DEG_TOLERANCE: f64 = 1e-9;

fn classify(t: &Trixel, bbox: &BoundingBox) -> Classification {
    let verts_inside = t
        .vertices
        .iter()
        .filter(|v| bbox.contains_with_tolerance(GeoPoint::from_unit_vector(**v), DEG_TOLERANCE))
        .count();
    let crossing = boundary_crossing(t, bbox);
    if verts_inside == 3 && !crossing {
        return Classification::Inside;
    }
    if verts_inside > 0 || crossing {
        return Classification::Intersecting;
    }
    if bbox
        .corners()
        .iter()
        .any(|c| point_in_trixel(t, c.to_unit_vector()))
    {
        return Classification::Intersecting;
    }
    Classification::Disjoint
}

/// True if any trixel edge meets the rectangle boundary. Errs toward
/// reporting a crossing; false positives only cause extra refinement.
fn boundary_crossing(t: &Trixel, bbox: &BoundingBox) -> bool {
    let edges = [
        (t.vertices[0], t.vertices[1]),
        (t.vertices[1], t.vertices[2]),
        (t.vertices[2], t.vertices[0]),
    ];
    for &(a, b) in &edges {
        for lat in [bbox.min_lat(), bbox.max_lat()] {
            if lat.abs() < 90.0 && arc_crosses_parallel(a, b, lat, bbox) {
                return true;
            }
        }
        if bbox.lon_span() < 360.0 {
            for lon in [bbox.west(), bbox.east()] {
                if arc_crosses_meridian(a, b, lon, bbox.min_lat(), bbox.max_lat()) {
                    return true;
                }
            }
        }
    }
    false
}

/// Is `c` on the minor arc between `a` and `b`? Uses the cosine bound,
/// valid because trixel edges never exceed a quarter circle.
fn on_minor_arc(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> bool {
    let cos_ab = dot(a, b);
    dot(a, c) >= cos_ab - 1e-12 && dot(b, c) >= cos_ab - 1e-12
}

fn lon_of(v: [f64; 3]) -> f64 {
    if v[0] == 0.0 && v[1] == 0.0 {
        0.0
    } else {
        v[1].atan2(v[0]).to_degrees()
    }
}

/// Wrap-aware overlap of two eastward longitude intervals.
fn lon_intervals_overlap(w1: f64, s1: f64, w2: f64, s2: f64) -> bool {
    if s1 >= 360.0 || s2 >= 360.0 {
        return true;
    }
    (w2 - w1).rem_euclid(360.0) <= s1 + DEG_TOLERANCE
        || (w1 - w2).rem_euclid(360.0) <= s2 + DEG_TOLERANCE
}

fn arc_crosses_parallel(a: [f64; 3], b: [f64; 3], lat: f64, bbox: &BoundingBox) -> bool {
    let s = lat.to_radians().sin();
    let n = normalize(cross(a, b));
    let h2 = n[0] * n[0] + n[1] * n[1];
    if h2 < 1e-24 {
        // Equatorial edge: coplanar with the parallel only at lat 0.
        if s.abs() > 1e-12 {
            return false;
        }
        let (la, lb) = (lon_of(a), lon_of(b));
        let d = (lb - la).rem_euclid(360.0);
        let (w, span) = if d <= 180.0 { (la, d) } else { (lb, 360.0 - d) };
        return lon_intervals_overlap(w, span, bbox.west(), bbox.lon_span());
    }
    let r2 = 1.0 - s * s;
    if r2 < 0.0 {
        return false;
    }
    let d = -n[2] * s;
    let disc = h2 * r2 - d * d;
    if disc < -1e-15 {
        return false;
    }
    let base = [n[0] * d / h2, n[1] * d / h2];
    let q = disc.max(0.0).sqrt() / h2;
    for sign in [1.0, -1.0] {
        let c = [base[0] - sign * n[1] * q, base[1] + sign * n[0] * q, s];
        if on_minor_arc(a, b, c) {
            let lon = lon_of(c);
            let within = bbox.lon_span() >= 360.0
                || (lon - bbox.west()).rem_euclid(360.0) <= bbox.lon_span() + DEG_TOLERANCE;
            if within {
                return true;
            }
        }
    }
    false
}

fn arc_crosses_meridian(a: [f64; 3], b: [f64; 3], lon: f64, min_lat: f64, max_lat: f64) -> bool {
    let lam = lon.to_radians();
    let m = [-lam.sin(), lam.cos(), 0.0];
    let n = normalize(cross(a, b));
    let dir = cross(n, m);
    let len2 = dot(dir, dir);
    if len2 < 1e-24 {
        // Edge lies in this meridian's great circle. Bound the latitudes
        // the arc reaches on the near half (longitude lon rather than
        // lon + 180) and compare against the segment's latitude band.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in [a, b] {
            if v[0] * lam.cos() + v[1] * lam.sin() >= -1e-12 {
                let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
                lo = lo.min(lat);
                hi = hi.max(lat);
            }
        }
        for pole in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]] {
            if on_minor_arc(a, b, pole) {
                let lat = pole[2] * 90.0;
                lo = lo.min(lat);
                hi = hi.max(lat);
            }
        }
        return lo <= max_lat + DEG_TOLERANCE && hi >= min_lat - DEG_TOLERANCE;
    }
    let u = normalize(dir);
    for sign in [1.0, -1.0] {
        let c = [sign * u[0], sign * u[1], sign * u[2]];
        if !on_minor_arc(a, b, c) {
            continue;
        }
        // Right half-plane: longitude lon rather than lon + 180.
        if c[0] * lam.cos() + c[1] * lam.sin() < -1e-12 {
            continue;
        }
        let lat = c[2].clamp(-1.0, 1.0).asin().to_degrees();
        if lat >= min_lat - DEG_TOLERANCE && lat <= max_lat + DEG_TOLERANCE {
            return true;
        }
    }
    false
}
