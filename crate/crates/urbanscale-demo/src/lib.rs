//! Browser playground for the urbanscale library.
//!
//! Three interactive operations are exported through wasm-bindgen, each
//! returning a JSON string the static page renders onto canvases:
//! scaling-law fitting on synthetic city systems, friend-of-friend
//! clustering, and trixel covers of a latitude/longitude box. The crate
//! also compiles natively so the exports stay under ordinary `cargo
//! test`; build the browser artifact with
//! `wasm-pack build crates/urbanscale-demo --target web`.

use serde::Serialize;
use urbanscale::geo::{BoundingBox, GeoPoint};
use urbanscale::homeloc::{cluster_fof, infer_home, GeoEvent, HomeParams};
use urbanscale::htm::{cover_bbox, trixel_from_id, CoverFlag};
use urbanscale::rng::SeededRng;
use urbanscale::scaling::{fit_scaling, FitConfig, WeightMode};
use urbanscale::synth::{gen_city_system, gen_counts, NoiseModel, SynthConfig};
use wasm_bindgen::prelude::*;

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| format!("{{\"error\":{:?}}}", e.to_string()))
}

#[derive(Serialize)]
struct ErrorJson {
    error: String,
}

fn error_json(message: impl std::fmt::Display) -> String {
    to_json(&ErrorJson {
        error: message.to_string(),
    })
}

#[derive(Serialize)]
struct FitDemo {
    beta: f64,
    beta_stderr: f64,
    log10_y0: f64,
    r2: f64,
    regime: String,
    n_cities: usize,
    zero_cities_excluded: usize,
    points: Vec<[f64; 2]>,
    bin_means: Vec<[f64; 2]>,
    line: [[f64; 2]; 2],
}

/// Generates a rank-size city system, draws counts with the requested
/// exponent and noise, fits the scaling law and returns scatter, bin
/// means and the fitted line in log10 coordinates.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn scaling_demo(
    n_cities: u32,
    n_max: f64,
    beta: f64,
    y0: f64,
    poisson: bool,
    seed: u32,
    n_bins: u32,
    uniform_weights: bool,
) -> String {
    let config = SynthConfig {
        n_cities: n_cities as usize,
        zipf_alpha: 1.0,
        n_max: n_max.max(1.0) as u64,
        beta,
        y0,
        noise: if poisson {
            NoiseModel::Poisson
        } else {
            NoiseModel::None
        },
        seed: seed as u64,
        country: "XX".to_string(),
    };
    let cities = match gen_city_system(&config) {
        Ok(c) => c,
        Err(e) => return error_json(e),
    };
    let obs = gen_counts(&cities, config.beta, config.y0, config.noise, config.seed);
    let fit_config = FitConfig {
        n_bins: (n_bins as usize).max(2),
        weight_mode: if uniform_weights {
            WeightMode::Uniform
        } else {
            WeightMode::CountSum
        },
    };
    let fit = match fit_scaling(&obs, &fit_config) {
        Ok(f) => f,
        Err(e) => return error_json(e),
    };
    let plot = urbanscale::pipeline::plot_data_for("XX", "demo", &obs, &fit, fit_config.n_bins);
    to_json(&FitDemo {
        beta: fit.beta,
        beta_stderr: fit.beta_stderr,
        log10_y0: fit.log10_y0(),
        r2: fit.r2,
        regime: fit.regime.to_string(),
        n_cities: fit.n_cities,
        zero_cities_excluded: fit.zero_cities_excluded,
        points: plot.points,
        bin_means: plot.bin_means,
        line: plot.line,
    })
}

#[derive(Serialize)]
struct ClusterDemo {
    points: Vec<ClusterPoint>,
    n_clusters: usize,
    largest_cluster: usize,
    home: Option<[f64; 2]>,
    support: Option<f64>,
}

#[derive(Serialize)]
struct ClusterPoint {
    lat: f64,
    lon: f64,
    cluster: usize,
}

/// Scatters event sites around a handful of anchors plus background
/// strays, runs friend-of-friend clustering at the given linking length
/// and reports the inferred home of the synthetic user.
#[wasm_bindgen]
pub fn clustering_demo(
    n_sites: u32,
    points_per_site: u32,
    site_spread_km: f64,
    stray_points: u32,
    link_km: f64,
    seed: u32,
) -> String {
    if link_km <= 0.0 {
        return error_json("link length must be positive");
    }
    let n_sites = n_sites.clamp(1, 8);
    let points_per_site = points_per_site.clamp(1, 200);
    let stray_points = stray_points.min(200);
    let spread_deg = site_spread_km.clamp(0.01, 500.0) / urbanscale::geo::KM_PER_DEG;

    let mut rng = SeededRng::new(seed as u64);
    let mut points: Vec<GeoPoint> = Vec::new();
    for _ in 0..n_sites {
        let site_lat = rng.range_f64(-35.0, 55.0);
        let site_lon = rng.range_f64(-30.0, 30.0);
        for _ in 0..points_per_site {
            let lat = (site_lat + rng.range_f64(-spread_deg, spread_deg)).clamp(-89.0, 89.0);
            let lon = site_lon + rng.range_f64(-spread_deg, spread_deg);
            points.push(GeoPoint::new(lat, lon).expect("demo point in range"));
        }
    }
    for _ in 0..stray_points {
        let lat = rng.range_f64(-55.0, 70.0);
        let lon = rng.range_f64(-60.0, 60.0);
        points.push(GeoPoint::new(lat, lon).expect("stray point in range"));
    }

    let clusters = cluster_fof(&points, link_km);
    let mut cluster_of = vec![0usize; points.len()];
    for (ci, members) in clusters.iter().enumerate() {
        for &m in members {
            cluster_of[m] = ci;
        }
    }
    let events: Vec<GeoEvent> = points
        .iter()
        .enumerate()
        .map(|(i, p)| GeoEvent {
            user_id: "demo".into(),
            point: *p,
            timestamp: i as i64,
        })
        .collect();
    let params = HomeParams {
        link_km,
        ..HomeParams::default()
    };
    let home = infer_home(&events, &params);
    to_json(&ClusterDemo {
        n_clusters: clusters.len(),
        largest_cluster: clusters.first().map(|c| c.len()).unwrap_or(0),
        home: home.as_ref().map(|h| [h.point.lat(), h.point.lon()]),
        support: home.as_ref().map(|h| h.support),
        points: points
            .iter()
            .zip(&cluster_of)
            .map(|(p, &c)| ClusterPoint {
                lat: p.lat(),
                lon: p.lon(),
                cluster: c,
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct MeshDemo {
    cells: Vec<MeshCell>,
    n_full: usize,
    n_partial: usize,
}

#[derive(Serialize)]
struct MeshCell {
    name: String,
    id: String,
    depth: u8,
    full: bool,
    /// Triangle corners as [lat, lon] pairs.
    corners: [[f64; 2]; 3],
}

/// Covers a latitude/longitude box with mesh trixels down to `depth`
/// and returns their corner coordinates for drawing.
#[wasm_bindgen]
pub fn mesh_demo(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64, depth: u32) -> String {
    let bbox = match BoundingBox::new(min_lat, min_lon, max_lat, max_lon) {
        Ok(b) => b,
        Err(e) => return error_json(e),
    };
    let depth = depth.min(10) as u8;
    let cover = match cover_bbox(&bbox, depth) {
        Ok(c) => c,
        Err(e) => return error_json(e),
    };
    if cover.len() > 20_000 {
        return error_json(format!(
            "cover of {} cells is too large to draw",
            cover.len()
        ));
    }
    let mut cells = Vec::with_capacity(cover.len());
    let mut n_full = 0;
    let mut n_partial = 0;
    for (id, flag) in cover {
        let t = trixel_from_id(id);
        let mut corners = [[0.0f64; 2]; 3];
        for (i, v) in t.vertices.iter().enumerate() {
            let p = GeoPoint::from_unit_vector(*v);
            corners[i] = [p.lat(), p.lon()];
        }
        let full = flag == CoverFlag::Full;
        if full {
            n_full += 1;
        } else {
            n_partial += 1;
        }
        cells.push(MeshCell {
            name: id.name(),
            id: id.to_string(),
            depth: id.depth(),
            full,
            corners,
        });
    }
    to_json(&MeshDemo {
        cells,
        n_full,
        n_partial,
    })
}
