//! Synthetic city systems and follower counts with known exponents.
//!
//! This is the ground-truth harness for the fitter and the pipeline:
//! rank-size (Zipf) populations, counts drawn from the scaling law with
//! optional Poisson noise, and an event-level fixture generator that
//! turns counts into per-user geolocated events so end-to-end runs
//! exercise the real ingestion path.

use crate::gazetteer::CityRecord;
use crate::geo::{BoundingBox, GeoPoint};
use crate::homeloc::GeoEvent;
use crate::rng::{poisson, SeededRng};
use crate::scaling::{fit_scaling, CityObservation, FitConfig};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    None,
    #[default]
    Poisson,
}

impl NoiseModel {
    pub fn parse(s: &str) -> Option<NoiseModel> {
        match s {
            "none" => Some(NoiseModel::None),
            "poisson" => Some(NoiseModel::Poisson),
            _ => None,
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseModel::None => "none",
            NoiseModel::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of cities M.
    pub n_cities: usize,
    /// Rank-size exponent alpha; population of rank i is n_max / i^alpha.
    pub zipf_alpha: f64,
    /// Population of the largest city.
    pub n_max: u64,
    /// True scaling exponent.
    pub beta: f64,
    /// Prefactor Y0.
    pub y0: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Country code stamped on the generated records.
    pub country: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cities: 1000,
            zipf_alpha: 1.0,
            n_max: 10_000_000,
            beta: 1.0,
            y0: 1.0,
            noise: NoiseModel::Poisson,
            seed: 42,
            country: "XX".to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("n_cities must be at least 1")]
    NoCities,
    #[error("zipf_alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("y0 must be positive, got {0}")]
    BadPrefactor(f64),
    #[error("n_max {n_max} smaller than n_cities {n_cities}")]
    PopulationUnderflow { n_max: u64, n_cities: usize },
    #[error("country code must be two ASCII letters, got {0:?}")]
    BadCountry(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_cities < 1 {
            return Err(SynthError::NoCities);
        }
        if self.zipf_alpha <= 0.0 || self.zipf_alpha.is_nan() {
            return Err(SynthError::BadAlpha(self.zipf_alpha));
        }
        if self.y0 <= 0.0 || self.y0.is_nan() {
            return Err(SynthError::BadPrefactor(self.y0));
        }
        if (self.n_max as usize) < self.n_cities {
            return Err(SynthError::PopulationUnderflow {
                n_max: self.n_max,
                n_cities: self.n_cities,
            });
        }
        if self.country.len() != 2 || !self.country.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(SynthError::BadCountry(self.country.clone()));
        }
        Ok(())
    }
}

const GRID_COLS: u64 = 240;
const GRID_LON_STEP: f64 = 1.5;
const GRID_LAT_STEP: f64 = 1.2;
const CITY_BBOX_HALF: f64 = 0.4;

/// Deterministic grid placement. Each country hashes to one of six
/// latitude bands so fixtures with a handful of countries do not stack
/// cities on the same coordinates.
fn grid_center(country: &str, rank: usize) -> GeoPoint {
    let band = country
        .bytes()
        .fold(0u64, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64))
        % 6;
    let base_lat = -66.0 + band as f64 * 22.0;
    let idx = (rank - 1) as u64;
    let row = (idx / GRID_COLS) % 18;
    let col = idx % GRID_COLS;
    GeoPoint::new(
        base_lat + row as f64 * GRID_LAT_STEP,
        -179.25 + col as f64 * GRID_LON_STEP,
    )
    .expect("grid point in range")
}

/// Rank-size city system: city i (1-based) has population
/// round(n_max / i^alpha), floored at 1. Output is deterministic.
pub fn gen_city_system(config: &SynthConfig) -> Result<Vec<CityRecord>, SynthError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.n_cities);
    for i in 1..=config.n_cities {
        let raw = config.n_max as f64 / (i as f64).powf(config.zipf_alpha);
        let population = (raw.round() as u64).max(1);
        let center = grid_center(&config.country, i);
        let bbox = BoundingBox::new(
            center.lat() - CITY_BBOX_HALF,
            center.lon() - CITY_BBOX_HALF,
            center.lat() + CITY_BBOX_HALF,
            center.lon() + CITY_BBOX_HALF,
        )
        .expect("grid bbox in range");
        let city_id = format!("{}{:06}", config.country, i);
        out.push(CityRecord {
            name: city_id.clone(),
            city_id,
            country: config.country.clone(),
            center,
            population,
            bbox,
        });
    }
    Ok(out)
}

/// Counts from the scaling law: the expected count of a city with
/// population N is y0 * N^beta; `NoiseModel::None` rounds it and
/// `NoiseModel::Poisson` draws from a seeded generator, so equal seeds
/// give equal draws.
pub fn gen_counts(
    cities: &[CityRecord],
    beta: f64,
    y0: f64,
    noise: NoiseModel,
    seed: u64,
) -> Vec<CityObservation> {
    let mut rng = SeededRng::new(seed);
    cities
        .iter()
        .map(|c| {
            let lambda = y0 * (c.population as f64).powf(beta);
            let count = match noise {
                NoiseModel::None => lambda.round(),
                NoiseModel::Poisson => poisson(&mut rng, lambda) as f64,
            };
            CityObservation {
                city_id: c.city_id.clone(),
                population: c.population,
                count,
            }
        })
        .collect()
}

/// Outcome of repeated generate-and-fit trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub true_beta: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub mean_beta: f64,
    /// Sample standard deviation of the recovered exponents.
    pub stddev_beta: f64,
    /// Fraction of all trials with |beta_hat - beta| <= 2 stderr.
    pub coverage: f64,
}

/// Coverage slack below any meaningful standard error; keeps exact
/// (noise-free) recoveries from flunking the interval check on float
/// rounding alone.
const COVERAGE_FLOOR: f64 = 1e-9;

/// Runs `n_trials` generate-and-fit rounds with seeds
/// `seed, seed+1, ...`; fit failures count as failed trials and drop out
/// of the mean, while coverage keeps the full trial count in its
/// denominator.
pub fn recovery_experiment(
    config: &SynthConfig,
    fit_config: &FitConfig,
    n_trials: usize,
) -> Result<RecoveryReport, SynthError> {
    assert!(n_trials >= 1, "need at least one trial");
    config.validate()?;
    let cities = gen_city_system(config)?;
    let mut betas: Vec<f64> = Vec::with_capacity(n_trials);
    let mut covered = 0usize;
    let mut failed = 0usize;
    for t in 0..n_trials {
        let seed = config.seed.wrapping_add(t as u64);
        let obs = gen_counts(&cities, config.beta, config.y0, config.noise, seed);
        match fit_scaling(&obs, fit_config) {
            Ok(fit) => {
                // absolute floor: an exact fit has stderr at roundoff
                // scale and must still count as covered
                if (fit.beta - config.beta).abs() <= 2.0 * fit.beta_stderr + COVERAGE_FLOOR {
                    covered += 1;
                }
                betas.push(fit.beta);
            }
            Err(_) => failed += 1,
        }
    }
    let n_ok = betas.len();
    let mean = if n_ok > 0 {
        betas.iter().sum::<f64>() / n_ok as f64
    } else {
        f64::NAN
    };
    let stddev = if n_ok > 1 {
        (betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n_ok as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RecoveryReport {
        true_beta: config.beta,
        n_trials,
        n_failed: failed,
        mean_beta: mean,
        stddev_beta: stddev,
        coverage: covered as f64 / n_trials as f64,
    })
}

/// A club label with its injected exponent for event fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct ClubSpec {
    pub label: String,
    pub beta: f64,
}

/// Knobs for turning per-city counts into user-level events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFixtureSpec {
    pub clubs: Vec<ClubSpec>,
    pub y0: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub events_per_user: usize,
    /// Scatter of a user's events around the city center, in km.
    pub jitter_km: f64,
}

impl Default for EventFixtureSpec {
    fn default() -> Self {
        EventFixtureSpec {
            clubs: vec![ClubSpec {
                label: "club-a".into(),
                beta: 1.0,
            }],
            y0: 0.001,
            noise: NoiseModel::None,
            seed: 42,
            events_per_user: 12,
            jitter_km: 0.05,
        }
    }
}

/// Synthetic users with geolocated events plus per-club follower lists.
#[derive(Debug, Clone, Default)]
pub struct EventFixture {
    pub events: Vec<GeoEvent>,
    /// (club label, user ids) in club order.
    pub followers: Vec<(String, Vec<String>)>,
}

const FIXTURE_BASE_TS: i64 = 1_600_000_000;

/// Expands city-level counts into users: a city with count Y for a club
/// gets Y users, each with `events_per_user` events jittered around the
/// city center. Everything is seeded, so the fixture is reproducible
/// byte for byte.
pub fn gen_event_fixture(
    cities: &[CityRecord],
    spec: &EventFixtureSpec,
) -> Result<EventFixture, SynthError> {
    let mut fixture = EventFixture::default();
    let jitter_deg = spec.jitter_km / crate::geo::KM_PER_DEG;
    for (ci, club) in spec.clubs.iter().enumerate() {
        let club_seed = spec
            .seed
            .wrapping_add(1_000_003u64.wrapping_mul(ci as u64 + 1));
        let obs = gen_counts(cities, club.beta, spec.y0, spec.noise, club_seed);
        let mut rng = SeededRng::new(club_seed ^ 0x9e37);
        let mut users = Vec::new();
        for (city, o) in cities.iter().zip(&obs) {
            for k in 0..o.count as u64 {
                let user_id = format!("{}-{}-{}", city.city_id, sanitize_label(&club.label), k);
                for e in 0..spec.events_per_user {
                    let lat = city.center.lat() + rng.range_f64(-jitter_deg, jitter_deg);
                    let lon = city.center.lon() + rng.range_f64(-jitter_deg, jitter_deg);
                    fixture.events.push(GeoEvent {
                        user_id: user_id.clone(),
                        point: GeoPoint::new(lat.clamp(-90.0, 90.0), lon)
                            .expect("jittered point in range"),
                        timestamp: FIXTURE_BASE_TS + e as i64 * 3600,
                    });
                }
                users.push(user_id);
            }
        }
        fixture.followers.push((club.label.clone(), users));
    }
    Ok(fixture)
}

/// File-system friendly rendering of a club label.
pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
