//! Gazetteer ingestion and coordinate-to-city resolution.
//!
//! City rows come in as tab-separated `city_id name country lat lon
//! population`; bounding boxes live in a companion file keyed by city id.
//! Bad rows never abort the stream: they are counted per reason in a
//! [`ParseReport`] so dirty dumps stay usable, and a strict caller can
//! turn any rejection into a failure.

use crate::geo::{haversine_km, BoundingBox, GeoPoint};
use crate::htm::{cover_bbox, locate, HtmError, TrixelId};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

/// One gazetteer city. The bounding box always contains the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CityRecord {
    pub city_id: String,
    pub name: String,
    pub country: String,
    pub center: GeoPoint,
    pub population: u64,
    pub bbox: BoundingBox,
}

/// Half-width in degrees of the bounding box synthesized for cities the
/// bbox file does not cover.
pub const DEFAULT_BBOX_HALF_WIDTH: f64 = 0.1;

/// Default nearest-center fallback radius for [`resolve_city`].
pub const DEFAULT_FALLBACK_KM: f64 = 30.0;

/// Default mesh depth for [`GeoIndex`]; trixel edges are a few hundred
/// meters there, finer than any city bounding box.
pub const DEFAULT_INDEX_DEPTH: u8 = 14;

/// Ingestion outcome counters, serialized as `{accepted, rejected, reasons{}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub accepted: u64,
    pub rejected: u64,
    pub reasons: BTreeMap<String, u64>,
}

impl ParseReport {
    fn reject(&mut self, reason: &str) {
        self.rejected += 1;
        *self.reasons.entry(reason.to_string()).or_insert(0) += 1;
    }
}

fn parse_f64(field: &str) -> Option<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

fn valid_country(code: &str) -> Option<String> {
    if code.len() == 2 && code.chars().all(|c| c.is_ascii_alphabetic()) {
        Some(code.to_ascii_uppercase())
    } else {
        None
    }
}

fn default_bbox(center: GeoPoint) -> BoundingBox {
    BoundingBox::new(
        (center.lat() - DEFAULT_BBOX_HALF_WIDTH).max(-90.0),
        center.lon() - DEFAULT_BBOX_HALF_WIDTH,
        (center.lat() + DEFAULT_BBOX_HALF_WIDTH).min(90.0),
        center.lon() + DEFAULT_BBOX_HALF_WIDTH,
    )
    .expect("default bbox construction")
}

/// Parses the city stream and an optional bbox stream into records.
///
/// Lines starting with `#` and blank lines are skipped. Rejected rows are
/// counted in the report under a kebab-case reason; duplicates keep the
/// first occurrence. Cities without a usable bbox row get a default box
/// of +-0.1 degrees around the center.
pub fn parse_gazetteer<R: BufRead, B: BufRead>(
    cities: R,
    bboxes: Option<B>,
) -> std::io::Result<(Vec<CityRecord>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut records: Vec<CityRecord> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();

    for line in cities.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            report.reject("arity");
            continue;
        }
        let (id, name, country_raw, lat_s, lon_s, pop_s) = (
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5],
        );
        let Some(country) = valid_country(country_raw.trim()) else {
            report.reject("country-code");
            continue;
        };
        let (Some(lat), Some(lon)) = (parse_f64(lat_s), parse_f64(lon_s)) else {
            report.reject("malformed-number");
            continue;
        };
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            report.reject("coordinate-out-of-range");
            continue;
        }
        // parse signed first so "-5" counts as out of range, not malformed
        let population = match pop_s.trim().parse::<i64>() {
            Ok(p) if p >= 1 => p as u64,
            Ok(_) => {
                report.reject("population-out-of-range");
                continue;
            }
            Err(_) => {
                report.reject("malformed-number");
                continue;
            }
        };
        let id = id.trim();
        if id.is_empty() {
            report.reject("empty-id");
            continue;
        }
        if index_of.contains_key(id) {
            report.reject("duplicate-id");
            continue;
        }
        let center = GeoPoint::new(lat, lon).expect("validated coordinate");
        index_of.insert(id.to_string(), records.len());
        records.push(CityRecord {
            city_id: id.to_string(),
            name: name.to_string(),
            country,
            center,
            population,
            bbox: default_bbox(center),
        });
        report.accepted += 1;
    }

    if let Some(bboxes) = bboxes {
        let mut seen_bbox: HashSet<String> = HashSet::new();
        for line in bboxes.lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                report.reject("bbox-arity");
                continue;
            }
            let id = fields[0].trim();
            let nums: Vec<Option<f64>> = fields[1..5].iter().map(|f| parse_f64(f)).collect();
            let (Some(min_lat), Some(min_lon), Some(max_lat), Some(max_lon)) =
                (nums[0], nums[1], nums[2], nums[3])
            else {
                report.reject("bbox-malformed-number");
                continue;
            };
            let lat_ok = (-90.0..=90.0).contains(&min_lat) && (-90.0..=90.0).contains(&max_lat);
            let lon_ok = (-180.0..=180.0).contains(&min_lon) && (-180.0..=180.0).contains(&max_lon);
            if !lat_ok || !lon_ok {
                report.reject("bbox-coordinate-out-of-range");
                continue;
            }
            if min_lat > max_lat {
                report.reject("bbox-lat-order");
                continue;
            }
            let Some(&idx) = index_of.get(id) else {
                report.reject("bbox-unknown-city");
                continue;
            };
            if !seen_bbox.insert(id.to_string()) {
                report.reject("bbox-duplicate");
                continue;
            }
            let bbox = BoundingBox::new(min_lat, min_lon, max_lat, max_lon)
                .expect("validated bbox bounds");
            if !bbox.contains(records[idx].center) {
                report.reject("bbox-excludes-center");
                continue;
            }
            records[idx].bbox = bbox;
        }
    }

    Ok((records, report))
}

/// Serializes a record back to its city-file row.
pub fn city_row(r: &CityRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.city_id,
        r.name,
        r.country,
        r.center.lat(),
        r.center.lon(),
        r.population
    )
}

/// Serializes a record's bbox to its bbox-file row.
pub fn bbox_row(r: &CityRecord) -> String {
    // east() folds the span back into [-180, 180); emit a raw max_lon
    // that reparses to the same span instead.
    let max_lon = r.bbox.west() + r.bbox.lon_span();
    let max_lon = if max_lon > 180.0 {
        max_lon - 360.0
    } else {
        max_lon
    };
    format!(
        "{}\t{}\t{}\t{}\t{}",
        r.city_id,
        r.bbox.min_lat(),
        r.bbox.west(),
        r.bbox.max_lat(),
        max_lon
    )
}

/// Spatial index over one city list: trixel cells covering each bbox
/// plus center buckets for the nearest-center fallback.
pub struct GeoIndex {
    depth: u8,
    fallback_km: f64,
    n_cities: usize,
    /// cover cells (mixed depths, <= `depth`) -> city indices
    bbox_cells: HashMap<u64, Vec<u32>>,
    /// city centers keyed by their trixel at `center_depth`, sorted
    center_depth: u8,
    centers: Vec<(u64, u32)>,
}

/// Largest depth whose trixel edge still exceeds `km` (roots span about
/// a quarter circumference per edge).
pub(crate) fn depth_for_edge_km(km: f64) -> u8 {
    let root_edge = std::f64::consts::FRAC_PI_2 * crate::geo::EARTH_RADIUS_KM;
    let mut depth = 0u8;
    let mut edge = root_edge;
    while depth < 20 && edge / 2.0 >= km {
        edge /= 2.0;
        depth += 1;
    }
    depth
}

impl GeoIndex {
    pub fn build(cities: &[CityRecord], depth: u8, fallback_km: f64) -> Result<Self, HtmError> {
        let mut bbox_cells: HashMap<u64, Vec<u32>> = HashMap::new();
        for (i, city) in cities.iter().enumerate() {
            for (cell, _) in cover_bbox(&city.bbox, depth)? {
                bbox_cells.entry(cell.packed()).or_default().push(i as u32);
            }
        }
        let center_depth = depth_for_edge_km(fallback_km.max(0.5)).min(depth);
        let mut centers: Vec<(u64, u32)> = cities
            .iter()
            .enumerate()
            .map(|(i, c)| Ok((locate(c.center, center_depth)?.packed(), i as u32)))
            .collect::<Result<_, HtmError>>()?;
        centers.sort_unstable();
        Ok(GeoIndex {
            depth,
            fallback_km,
            n_cities: cities.len(),
            bbox_cells,
            center_depth,
            centers,
        })
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn fallback_km(&self) -> f64 {
        self.fallback_km
    }

    /// City indices whose center bucket descends from `cell`.
    fn centers_under(&self, cell: TrixelId) -> &[(u64, u32)] {
        let shift = 2 * (self.center_depth - cell.depth()) as u32;
        let lo = cell.packed() << shift;
        let hi = (cell.packed() + 1) << shift;
        let start = self.centers.partition_point(|&(p, _)| p < lo);
        let end = self.centers.partition_point(|&(p, _)| p < hi);
        &self.centers[start..end]
    }
}

/// Resolves a point to a city id.
///
/// Containment wins first: among all cities whose bbox holds the point,
/// the smallest box by solid area is returned (ties break on the lexi-
/// cographically smallest id). Otherwise the nearest city center within
/// the fallback radius is used. The result never depends on the order of
/// the city list.
pub fn resolve_city<'a>(
    p: GeoPoint,
    cities: &'a [CityRecord],
    index: &GeoIndex,
) -> Option<&'a str> {
    assert_eq!(
        cities.len(),
        index.n_cities,
        "index was built over a different city list"
    );
    let cell = locate(p, index.depth).ok()?;
    let mut candidates: Vec<u32> = Vec::new();
    for d in 0..=index.depth {
        if let Some(v) = index.bbox_cells.get(&cell.ancestor_at(d).packed()) {
            candidates.extend_from_slice(v);
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let mut best: Option<(f64, &str)> = None;
    for &i in &candidates {
        let city = &cities[i as usize];
        if city.bbox.contains(p) {
            let key = (city.bbox.solid_area(), city.city_id.as_str());
            let better = match best {
                None => true,
                Some((area, id)) => key.0 < area || (key.0 == area && key.1 < id),
            };
            if better {
                best = Some(key);
            }
        }
    }
    if let Some((_, id)) = best {
        return Some(id);
    }

    // fallback: nearest center within the radius
    let probe = crate::geo::padded_bbox(p, index.fallback_km);
    let mut near: Vec<u32> = Vec::new();
    if let Ok(cells) = cover_bbox(&probe, index.center_depth) {
        for (c, _) in cells {
            for &(_, i) in index.centers_under(c) {
                near.push(i);
            }
        }
    }
    near.sort_unstable();
    near.dedup();
    let mut best: Option<(f64, &str)> = None;
    for &i in &near {
        let city = &cities[i as usize];
        let d = haversine_km(p, city.center);
        if d > index.fallback_km {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && city.city_id.as_str() < bid),
        };
        if better {
            best = Some((d, city.city_id.as_str()));
        }
    }
    best.map(|(_, id)| id)
}
