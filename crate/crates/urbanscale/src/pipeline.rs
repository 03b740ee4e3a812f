//! End-to-end orchestration: homes, city assignment, per-country and
//! per-club aggregation, fitting and report emission.
//!
//! Every stage reads and writes plain files, so a pipeline can restart
//! from any intermediate product. All iteration orders are pinned
//! (sorted keys, configured club order) and floats print in shortest
//! round-trip form, which makes repeated runs byte-identical.

use crate::formats::{self, FormatError};
use crate::gazetteer::{parse_gazetteer, resolve_city, CityRecord, GeoIndex, ParseReport};
use crate::homeloc::{infer_home, HomeParams};
use crate::htm::HtmError;
use crate::scaling::{
    bin_logspace, fit_scaling, CityObservation, FitConfig, FitError, Regime, ScalingFit, WeightMode,
};
use crate::synth::{
    gen_city_system, gen_counts, gen_event_fixture, ClubSpec, EventFixtureSpec, SynthConfig,
    SynthError,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// A club and the set of user ids following it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FollowerSet {
    pub club: String,
    pub user_ids: BTreeSet<String>,
}

impl FollowerSet {
    pub fn new(club: impl Into<String>, ids: impl IntoIterator<Item = String>) -> Self {
        FollowerSet {
            club: club.into(),
            user_ids: ids.into_iter().collect(),
        }
    }
}

/// Per-club ingest coverage: total followers vs followers with an
/// inferred home.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestStats {
    pub club: String,
    /// Total follower count from source metadata, when known.
    pub total_followers: Option<u64>,
    pub geolocated: u64,
}

impl IngestStats {
    /// Percentage of followers with a geolocated home; `None` when the
    /// total is unknown or zero.
    pub fn match_rate(&self) -> Option<f64> {
        match self.total_followers {
            Some(t) if t > 0 => Some(self.geolocated as f64 / t as f64 * 100.0),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown country code {requested:?}; valid codes: {}", valid.join(", "))]
    UnknownCountry {
        requested: String,
        valid: Vec<String>,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Htm(#[from] HtmError),
}

impl PipelineError {
    /// Process exit code: 1 for usage and configuration problems, 2 for
    /// data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::UnknownCountry { .. }
            | PipelineError::Synth(_)
            | PipelineError::Htm(_)
            | PipelineError::Io { .. } => 1,
            PipelineError::Format(FormatError::Io { .. }) => 1,
            PipelineError::Format(FormatError::Malformed { .. }) | PipelineError::Data(_) => 2,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Tunables shared across stages. A config file supplies `key = value`
/// pairs with the same names as the command-line flags; flags win.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_bins: usize,
    pub weight_mode: WeightMode,
    pub link_km: f64,
    pub min_events: usize,
    pub min_cluster_size: usize,
    pub min_support: f64,
    pub depth: u8,
    pub fallback_km: f64,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            n_bins: 15,
            weight_mode: WeightMode::CountSum,
            link_km: 1.0,
            min_events: 10,
            min_cluster_size: 3,
            min_support: 0.2,
            depth: crate::gazetteer::DEFAULT_INDEX_DEPTH,
            fallback_km: crate::gazetteer::DEFAULT_FALLBACK_KM,
            strict: false,
        }
    }
}

impl PipelineConfig {
    /// Applies one `key = value` pair; keys match the CLI flag names.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |what: &str| PipelineError::Config(format!("bad value {value:?} for {what}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "n-bins" => self.n_bins = value.parse().map_err(|_| bad("n-bins"))?,
            "weight-mode" => {
                self.weight_mode = WeightMode::parse(value).ok_or_else(|| bad("weight-mode"))?
            }
            "link-km" => self.link_km = value.parse().map_err(|_| bad("link-km"))?,
            "min-events" => self.min_events = value.parse().map_err(|_| bad("min-events"))?,
            "min-cluster-size" => {
                self.min_cluster_size = value.parse().map_err(|_| bad("min-cluster-size"))?
            }
            "min-support" => self.min_support = value.parse().map_err(|_| bad("min-support"))?,
            "depth" => self.depth = value.parse().map_err(|_| bad("depth"))?,
            "fallback-km" => self.fallback_km = value.parse().map_err(|_| bad("fallback-km"))?,
            "strict" => self.strict = value.parse().map_err(|_| bad("strict"))?,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown config key {other:?}"
                )));
            }
        }
        Ok(())
    }

    /// Loads a `key = value` config file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let mut config = PipelineConfig::default();
        config.merge_file(path)?;
        Ok(config)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PipelineError::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn home_params(&self) -> HomeParams {
        HomeParams {
            min_events: self.min_events,
            link_km: self.link_km,
            min_cluster_size: self.min_cluster_size,
            min_support: self.min_support,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            n_bins: self.n_bins,
            weight_mode: self.weight_mode,
        }
    }
}

/// Per-club and combined city counts for one country. The combined
/// series counts each user once however many listed clubs they follow.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryCounts {
    pub country: String,
    pub per_club: Vec<(String, Vec<CityObservation>)>,
    pub combined: Vec<CityObservation>,
}

/// Tallies follower homes into per-city counts. Every city of the
/// country appears, including zero-count ones; the fitter excludes and
/// reports those later.
pub fn aggregate_city_counts(
    assignments: &BTreeMap<String, String>,
    cities: &[CityRecord],
    followers: &[FollowerSet],
    country: &str,
) -> Result<CountryCounts, PipelineError> {
    let country_pops: BTreeMap<&str, u64> = cities
        .iter()
        .filter(|c| c.country == country)
        .map(|c| (c.city_id.as_str(), c.population))
        .collect();
    if country_pops.is_empty() {
        let mut valid: Vec<String> = cities.iter().map(|c| c.country.clone()).collect();
        valid.sort();
        valid.dedup();
        return Err(PipelineError::UnknownCountry {
            requested: country.to_string(),
            valid,
        });
    }

    let tally = |users: &mut dyn Iterator<Item = &String>| -> Vec<CityObservation> {
        let mut counts: BTreeMap<&str, u64> = country_pops.keys().map(|&id| (id, 0u64)).collect();
        for user in users {
            if let Some(city) = assignments.get(user) {
                if let Some(c) = counts.get_mut(city.as_str()) {
                    *c += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|(city_id, y)| CityObservation {
                city_id: city_id.to_string(),
                population: country_pops[city_id],
                count: y as f64,
            })
            .collect()
    };

    let per_club: Vec<(String, Vec<CityObservation>)> = followers
        .iter()
        .map(|f| (f.club.clone(), tally(&mut f.user_ids.iter())))
        .collect();
    let union: BTreeSet<&String> = followers.iter().flat_map(|f| f.user_ids.iter()).collect();
    let combined = tally(&mut union.into_iter());
    Ok(CountryCounts {
        country: country.to_string(),
        per_club,
        combined,
    })
}

/// One output row of the fit stage: either a fit or the reason the
/// series could not be fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub country: String,
    pub club: String,
    pub outcome: Result<ScalingFit, FitError>,
}

impl FitRow {
    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(fit) if fit.warning.is_some() => "ok-two-bins".to_string(),
            Ok(_) => "ok".to_string(),
            Err(e) => format!("fit-impossible:{}", e.code()),
        }
    }
}

/// Label used for the union-of-clubs series.
pub const COMBINED_LABEL: &str = "combined";

/// Fits every club series plus the combined series (always last).
/// A series that cannot be fitted becomes a status row, not an error.
pub fn run_country_fit(counts: &CountryCounts, config: &FitConfig) -> Vec<FitRow> {
    let mut rows: Vec<FitRow> = counts
        .per_club
        .iter()
        .map(|(club, obs)| FitRow {
            country: counts.country.clone(),
            club: club.clone(),
            outcome: fit_scaling(obs, config),
        })
        .collect();
    rows.push(FitRow {
        country: counts.country.clone(),
        club: COMBINED_LABEL.to_string(),
        outcome: fit_scaling(&counts.combined, config),
    });
    rows
}

const FITS_HEADER: [&str; 11] = [
    "country",
    "club",
    "beta",
    "beta_stderr",
    "log10_y0",
    "r2",
    "n_bins",
    "n_cities",
    "zero_cities_excluded",
    "regime",
    "status",
];

pub fn write_fits_csv(path: &Path, rows: &[FitRow]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(
        std::fs::File::create(path)
            .map_err(|e| io_err(path, e))
            .map(std::io::BufWriter::new)?,
    );
    w.write_record(FITS_HEADER)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    for row in rows {
        let rec: [String; 11] = match &row.outcome {
            Ok(fit) => [
                row.country.clone(),
                row.club.clone(),
                fit.beta.to_string(),
                fit.beta_stderr.to_string(),
                fit.log10_y0().to_string(),
                fit.r2.to_string(),
                fit.n_bins.to_string(),
                fit.n_cities.to_string(),
                fit.zero_cities_excluded.to_string(),
                fit.regime.to_string(),
                row.status(),
            ],
            Err(_) => [
                row.country.clone(),
                row.club.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                row.status(),
            ],
        };
        w.write_record(&rec)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn parse_regime(s: &str) -> Option<Regime> {
    match s {
        "sublinear" => Some(Regime::Sublinear),
        "linear" => Some(Regime::Linear),
        "superlinear" => Some(Regime::Superlinear),
        _ => None,
    }
}

/// Reads rows written by [`write_fits_csv`]. Fit-impossible rows come
/// back with a generic error so the status survives a round trip.
pub fn read_fits_csv(path: &Path) -> Result<Vec<FitRow>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| FormatError::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let bad = |msg: &str| {
            PipelineError::Format(FormatError::Malformed {
                path: path.to_path_buf(),
                line,
                message: msg.to_string(),
            })
        };
        if rec.len() != FITS_HEADER.len() {
            return Err(bad("wrong column count"));
        }
        let status = rec[10].to_string();
        let outcome = if status.starts_with("ok") {
            let beta: f64 = rec[2].parse().map_err(|_| bad("bad beta"))?;
            let stderr: f64 = rec[3].parse().map_err(|_| bad("bad beta_stderr"))?;
            let log10_y0: f64 = rec[4].parse().map_err(|_| bad("bad log10_y0"))?;
            let r2: f64 = rec[5].parse().map_err(|_| bad("bad r2"))?;
            let n_bins: usize = rec[6].parse().map_err(|_| bad("bad n_bins"))?;
            let n_cities: usize = rec[7].parse().map_err(|_| bad("bad n_cities"))?;
            let zeroes: usize = rec[8]
                .parse()
                .map_err(|_| bad("bad zero_cities_excluded"))?;
            let regime = parse_regime(&rec[9]).ok_or_else(|| bad("bad regime"))?;
            Ok(ScalingFit {
                beta,
                beta_stderr: stderr,
                log_y0: log10_y0 * std::f64::consts::LN_10,
                r2,
                n_bins,
                n_cities,
                zero_cities_excluded: zeroes,
                regime,
                warning: (status == "ok-two-bins")
                    .then(|| "two-bin fit: stderr reported as 0 by convention".to_string()),
            })
        } else if let Some(code) = status.strip_prefix("fit-impossible:") {
            Err(match code {
                "too-few-observations" => FitError::TooFewObservations { surviving: 0 },
                "no-population-spread" => FitError::NoPopulationSpread,
                "degenerate-abscissa" => FitError::DegenerateAbscissa,
                "too-few-bins" => FitError::TooFewBins(0),
                "invalid-bin-count" => FitError::InvalidBinCount(0),
                _ => FitError::TooFewObservations { surviving: 0 },
            })
        } else {
            return Err(bad(&format!("bad status {status:?}")));
        };
        rows.push(FitRow {
            country: rec[0].to_string(),
            club: rec[1].to_string(),
            outcome,
        });
    }
    Ok(rows)
}

/// Summary report: one row per fitted series plus grouped JSON with a
/// beta = 1 reference marker, enough to redraw the exponents-by-country
/// figure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryJson {
    pub reference_beta: f64,
    pub countries: Vec<CountryGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountryGroup {
    pub country: String,
    pub clubs: Vec<ClubExponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClubExponent {
    pub club: String,
    pub beta: f64,
    pub beta_stderr: f64,
    pub regime: Regime,
}

/// Builds the summary CSV text and JSON value from fit rows. Rows whose
/// fit failed are left out; an empty input yields a header-only CSV.
pub fn render_summary(rows: &[FitRow]) -> (String, SummaryJson) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "club", "beta", "beta_stderr", "regime"])
        .expect("csv header");
    let mut groups: Vec<CountryGroup> = Vec::new();
    for row in rows {
        let Ok(fit) = &row.outcome else { continue };
        w.write_record([
            row.country.as_str(),
            row.club.as_str(),
            &fit.beta.to_string(),
            &fit.beta_stderr.to_string(),
            &fit.regime.to_string(),
        ])
        .expect("csv row");
        match groups.last_mut() {
            Some(g) if g.country == row.country => g,
            _ => {
                groups.push(CountryGroup {
                    country: row.country.clone(),
                    clubs: Vec::new(),
                });
                groups.last_mut().expect("just pushed")
            }
        }
        .clubs
        .push(ClubExponent {
            club: row.club.clone(),
            beta: fit.beta,
            beta_stderr: fit.beta_stderr,
            regime: fit.regime,
        });
    }
    let csv_text = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv");
    (
        csv_text,
        SummaryJson {
            reference_beta: 1.0,
            countries: groups,
        },
    )
}

/// Ingest coverage per club: how many of each club's followers have an
/// inferred home.
pub fn summarize_ingest(
    followers: &[FollowerSet],
    geolocated_users: &BTreeSet<String>,
    totals: &BTreeMap<String, u64>,
) -> Vec<IngestStats> {
    followers
        .iter()
        .map(|f| IngestStats {
            club: f.club.clone(),
            total_followers: totals.get(&f.club).copied(),
            geolocated: f
                .user_ids
                .iter()
                .filter(|u| geolocated_users.contains(*u))
                .count() as u64,
        })
        .collect()
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Plain-text table of ingest coverage, one row per club.
pub fn render_ingest_table(stats: &[IngestStats]) -> String {
    let name_w = stats
        .iter()
        .map(|s| s.club.len())
        .chain([9])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_w$}  {:>18}  {:>20}  {:>10}\n",
        "Team name", "Total followers", "Geolocated followers", "Match rate"
    ));
    out.push_str(&format!(
        "{}\n",
        "-".repeat(name_w + 2 + 18 + 2 + 20 + 2 + 10)
    ));
    for s in stats {
        let total = match s.total_followers {
            Some(t) => group_thousands(t),
            None => "\u{2014}".to_string(),
        };
        let rate = match s.match_rate() {
            Some(r) => format!("{r:.2}%"),
            None => "\u{2014}".to_string(),
        };
        out.push_str(&format!(
            "{:<name_w$}  {:>18}  {:>20}  {:>10}\n",
            s.club,
            total,
            group_thousands(s.geolocated),
            rate
        ));
    }
    out
}

/// Per-fit plot payload: raw scatter, bin means and the fitted line,
/// all in base-10 log space.
#[derive(Debug, Clone, Serialize)]
pub struct PlotData {
    pub country: String,
    pub club: String,
    pub beta: f64,
    pub beta_stderr: f64,
    pub log10_y0: f64,
    pub r2: f64,
    pub regime: Regime,
    pub points: Vec<[f64; 2]>,
    pub bin_means: Vec<[f64; 2]>,
    pub line: [[f64; 2]; 2],
}

/// Assembles plot data for a fitted series from its observations.
pub fn plot_data_for(
    country: &str,
    club: &str,
    obs: &[CityObservation],
    fit: &ScalingFit,
    n_bins: usize,
) -> PlotData {
    let ln10 = std::f64::consts::LN_10;
    let points: Vec<[f64; 2]> = obs
        .iter()
        .filter(|o| o.count > 0.0)
        .map(|o| [(o.population as f64).ln() / ln10, o.count.ln() / ln10])
        .collect();
    let bin_means: Vec<[f64; 2]> = bin_logspace(obs, n_bins)
        .map(|bins| {
            bins.iter()
                .map(|b| [b.mean_log_n / ln10, b.mean_log_y / ln10])
                .collect()
        })
        .unwrap_or_default();
    let x0 = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let x1 = points
        .iter()
        .map(|p| p[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let y = |x: f64| fit.log10_y0() + fit.beta * x;
    PlotData {
        country: country.to_string(),
        club: club.to_string(),
        beta: fit.beta,
        beta_stderr: fit.beta_stderr,
        log10_y0: fit.log10_y0(),
        r2: fit.r2,
        regime: fit.regime,
        points,
        bin_means,
        line: [[x0, y(x0)], [x1, y(x1)]],
    }
}

// ---------------------------------------------------------------------
// stage drivers
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomesOutcome {
    pub events_read: u64,
    pub lines_skipped: u64,
    pub users_seen: u64,
    pub homes_inferred: u64,
}

/// events.jsonl -> homes.csv, one row per user with enough support,
/// sorted by user id.
pub fn run_homes(
    events_path: &Path,
    out_path: &Path,
    params: &HomeParams,
    strict: bool,
) -> Result<HomesOutcome, PipelineError> {
    let file = formats::read_events_jsonl(events_path)?;
    if strict && file.skipped > 0 {
        return Err(PipelineError::Data(format!(
            "{} malformed event lines in {}",
            file.skipped,
            events_path.display()
        )));
    }
    let events_read = file.events.len() as u64;
    let mut by_user: BTreeMap<String, Vec<crate::homeloc::GeoEvent>> = BTreeMap::new();
    for e in file.events {
        by_user.entry(e.user_id.clone()).or_default().push(e);
    }
    let users_seen = by_user.len() as u64;
    let homes: Vec<crate::homeloc::HomeLocation> = by_user
        .values()
        .filter_map(|events| infer_home(events, params))
        .collect();
    formats::write_homes_csv(out_path, &homes)?;
    Ok(HomesOutcome {
        events_read,
        lines_skipped: file.skipped,
        users_seen,
        homes_inferred: homes.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignOutcome {
    pub homes_read: u64,
    pub assigned: u64,
    pub unassigned: u64,
    pub report: ParseReport,
}

fn open_buf(path: &Path) -> Result<std::io::BufReader<std::fs::File>, PipelineError> {
    Ok(std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| io_err(path, e))?,
    ))
}

/// Loads the gazetteer pair, enforcing strictness on rejected rows.
pub fn load_gazetteer(
    gazetteer_path: &Path,
    bbox_path: Option<&Path>,
    strict: bool,
) -> Result<(Vec<CityRecord>, ParseReport), PipelineError> {
    let cities_reader = open_buf(gazetteer_path)?;
    let bbox_reader = match bbox_path {
        Some(p) => Some(open_buf(p)?),
        None => None,
    };
    let (cities, report) =
        parse_gazetteer(cities_reader, bbox_reader).map_err(|e| io_err(gazetteer_path, e))?;
    if strict && report.rejected > 0 {
        return Err(PipelineError::Data(format!(
            "{} rejected gazetteer rows ({:?})",
            report.rejected, report.reasons
        )));
    }
    Ok((cities, report))
}

/// homes.csv + gazetteer -> user_city.csv. Users that resolve to no
/// city are dropped and counted.
#[allow(clippy::too_many_arguments)]
pub fn run_assign(
    homes_path: &Path,
    gazetteer_path: &Path,
    bbox_path: Option<&Path>,
    out_path: &Path,
    report_path: Option<&Path>,
    depth: u8,
    fallback_km: f64,
    strict: bool,
) -> Result<AssignOutcome, PipelineError> {
    let (cities, report) = load_gazetteer(gazetteer_path, bbox_path, strict)?;
    if let Some(rp) = report_path {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(rp, json + "\n").map_err(|e| io_err(rp, e))?;
    }
    let index = GeoIndex::build(&cities, depth, fallback_km)?;
    let homes = formats::read_homes_csv(homes_path)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut unassigned = 0u64;
    for h in &homes {
        match resolve_city(h.point, &cities, &index) {
            Some(city) => rows.push((h.user_id.clone(), city.to_string())),
            None => unassigned += 1,
        }
    }
    formats::write_user_city_csv(out_path, &rows)?;
    Ok(AssignOutcome {
        homes_read: homes.len() as u64,
        assigned: rows.len() as u64,
        unassigned,
        report,
    })
}

/// Where the fit stage gets its observations from.
pub enum FitSource {
    /// Real path: user-to-city assignments joined with follower lists.
    UserCity {
        user_city: PathBuf,
        followers_dir: PathBuf,
    },
    /// Direct path: per-city observations, one series per country.
    Observations { path: PathBuf, club: String },
}

pub struct FitStageOutput {
    pub rows: Vec<FitRow>,
    pub countries: Vec<String>,
}

/// Runs fits per country and writes fits.csv plus optional plot-data
/// JSON files. `countries` of `None` means every country in the
/// gazetteer (or in the observations), sorted; `clubs` of `None` keeps
/// the follower-file order.
#[allow(clippy::too_many_arguments)]
pub fn run_fit(
    source: &FitSource,
    gazetteer_path: &Path,
    bbox_path: Option<&Path>,
    countries: Option<&[String]>,
    clubs: Option<&[String]>,
    config: &FitConfig,
    out_path: &Path,
    plot_dir: Option<&Path>,
    strict: bool,
) -> Result<FitStageOutput, PipelineError> {
    let (cities, _) = load_gazetteer(gazetteer_path, bbox_path, strict)?;
    let mut rows: Vec<FitRow> = Vec::new();
    let mut plots: Vec<PlotData> = Vec::new();

    let country_list = |present: BTreeSet<String>| -> Vec<String> {
        match countries {
            Some(cs) => cs.to_vec(),
            None => present.into_iter().collect(),
        }
    };

    match source {
        FitSource::UserCity {
            user_city,
            followers_dir,
        } => {
            let mut assignments: BTreeMap<String, String> = BTreeMap::new();
            for (line, (user, city)) in formats::read_user_city_csv(user_city)?
                .into_iter()
                .enumerate()
            {
                if assignments.insert(user.clone(), city).is_some() {
                    return Err(PipelineError::Format(FormatError::Malformed {
                        path: user_city.clone(),
                        line: line as u64 + 2,
                        message: format!("duplicate user {user:?}"),
                    }));
                }
            }
            let raw = formats::read_followers_dir(followers_dir)?;
            let mut sets: Vec<FollowerSet> = raw
                .into_iter()
                .map(|(club, ids)| FollowerSet::new(club, ids))
                .collect();
            if let Some(wanted) = clubs {
                let mut picked = Vec::with_capacity(wanted.len());
                for label in wanted {
                    let Some(pos) = sets.iter().position(|s| &s.club == label) else {
                        let have: Vec<String> = sets.iter().map(|s| s.club.clone()).collect();
                        return Err(PipelineError::Config(format!(
                            "no follower file for club {label:?}; available: {}",
                            have.join(", ")
                        )));
                    };
                    picked.push(sets.remove(pos));
                }
                sets = picked;
            }
            let present: BTreeSet<String> = cities.iter().map(|c| c.country.clone()).collect();
            for country in country_list(present) {
                let counts = aggregate_city_counts(&assignments, &cities, &sets, &country)?;
                let country_rows = run_country_fit(&counts, config);
                if plot_dir.is_some() {
                    let series = counts
                        .per_club
                        .iter()
                        .map(|(club, obs)| (club.as_str(), obs))
                        .chain(std::iter::once((COMBINED_LABEL, &counts.combined)));
                    for ((club, obs), row) in series.zip(&country_rows) {
                        if let Ok(fit) = &row.outcome {
                            plots.push(plot_data_for(&country, club, obs, fit, config.n_bins));
                        }
                    }
                }
                rows.extend(country_rows);
            }
        }
        FitSource::Observations { path, club } => {
            let obs = formats::read_observations_csv(path)?;
            let country_of: BTreeMap<&str, &str> = cities
                .iter()
                .map(|c| (c.city_id.as_str(), c.country.as_str()))
                .collect();
            let mut grouped: BTreeMap<String, Vec<CityObservation>> = BTreeMap::new();
            for o in obs {
                let Some(country) = country_of.get(o.city_id.as_str()) else {
                    return Err(PipelineError::Data(format!(
                        "observation for unknown city {:?}",
                        o.city_id
                    )));
                };
                grouped.entry(country.to_string()).or_default().push(o);
            }
            let present: BTreeSet<String> = grouped.keys().cloned().collect();
            for country in country_list(present) {
                let Some(obs) = grouped.get(&country) else {
                    let valid: Vec<String> = grouped.keys().cloned().collect();
                    return Err(PipelineError::UnknownCountry {
                        requested: country,
                        valid,
                    });
                };
                let row = FitRow {
                    country: country.clone(),
                    club: club.clone(),
                    outcome: fit_scaling(obs, config),
                };
                if plot_dir.is_some() {
                    if let Ok(fit) = &row.outcome {
                        plots.push(plot_data_for(&country, club, obs, fit, config.n_bins));
                    }
                }
                rows.push(row);
            }
        }
    }

    write_fits_csv(out_path, &rows)?;
    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for plot in &plots {
            let file = dir.join(format!(
                "{}_{}.json",
                crate::synth::sanitize_label(&plot.country),
                crate::synth::sanitize_label(&plot.club)
            ));
            let json = serde_json::to_string_pretty(plot).expect("plot serializes");
            std::fs::write(&file, json + "\n").map_err(|e| io_err(&file, e))?;
        }
    }
    let countries: Vec<String> = rows
        .iter()
        .map(|r| r.country.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(FitStageOutput { rows, countries })
}

/// fits.csv -> summary.csv + summary.json. Returns the number of
/// summarized (successfully fitted) rows.
pub fn run_report(
    fits_path: &Path,
    out_csv: &Path,
    out_json: &Path,
) -> Result<usize, PipelineError> {
    let rows = read_fits_csv(fits_path)?;
    let (csv_text, json) = render_summary(&rows);
    std::fs::write(out_csv, &csv_text).map_err(|e| io_err(out_csv, e))?;
    let json_text = serde_json::to_string_pretty(&json).expect("summary serializes");
    std::fs::write(out_json, json_text + "\n").map_err(|e| io_err(out_json, e))?;
    Ok(json.countries.iter().map(|g| g.clubs.len()).sum())
}

/// followers/*.txt + homes.csv (+ totals.tsv) -> coverage stats and the
/// rendered table.
pub fn run_ingest_stats(
    followers_dir: &Path,
    homes_path: &Path,
    totals_path: Option<&Path>,
) -> Result<(Vec<IngestStats>, String), PipelineError> {
    let followers: Vec<FollowerSet> = formats::read_followers_dir(followers_dir)?
        .into_iter()
        .map(|(club, ids)| FollowerSet::new(club, ids))
        .collect();
    let homes = formats::read_homes_csv(homes_path)?;
    let geolocated: BTreeSet<String> = homes.into_iter().map(|h| h.user_id).collect();
    let totals = match totals_path {
        Some(p) => formats::read_totals_tsv(p)?,
        None => BTreeMap::new(),
    };
    let stats = summarize_ingest(&followers, &geolocated, &totals);
    let table = render_ingest_table(&stats);
    Ok((stats, table))
}

/// One synthetic country system plus shared club labels; used by the
/// `synth` subcommand and the end-to-end tests.
pub struct SynthRun {
    pub systems: Vec<SynthConfig>,
    /// (label, beta override); a club without an override uses each
    /// country's own exponent.
    pub clubs: Vec<(String, Option<f64>)>,
    pub events: bool,
    pub events_per_user: usize,
    pub jitter_km: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutcome {
    pub cities: u64,
    pub observations: u64,
    pub users: u64,
    pub events: u64,
}

/// Writes a full synthetic dataset into `out_dir`: cities.tsv,
/// bboxes.tsv, observations.csv and, with `events`, events.jsonl plus
/// followers/*.txt feeding the real ingestion path.
pub fn run_synth(run: &SynthRun, out_dir: &Path) -> Result<SynthOutcome, PipelineError> {
    if run.systems.is_empty() {
        return Err(PipelineError::Config(
            "no synthetic country configured".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for s in &run.systems {
        s.validate()?;
        if !seen.insert(s.country.clone()) {
            return Err(PipelineError::Config(format!(
                "country {:?} configured twice",
                s.country
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut all_cities: Vec<CityRecord> = Vec::new();
    let mut all_obs: Vec<CityObservation> = Vec::new();
    let mut all_events: Vec<crate::homeloc::GeoEvent> = Vec::new();
    let mut follower_lists: BTreeMap<String, Vec<String>> = BTreeMap::new();

    for system in &run.systems {
        let cities = gen_city_system(system)?;
        let obs = gen_counts(&cities, system.beta, system.y0, system.noise, system.seed);
        if run.events {
            let expected_users: f64 =
                obs.iter().map(|o| o.count).sum::<f64>() * run.clubs.len().max(1) as f64;
            if expected_users > 2_000_000.0 {
                return Err(PipelineError::Config(format!(
                    "events mode would expand to about {expected_users:.0} users for country \
                     {:?}; lower y0, beta or n_max",
                    system.country
                )));
            }
        }
        all_obs.extend(obs);
        if run.events {
            let spec = EventFixtureSpec {
                clubs: run
                    .clubs
                    .iter()
                    .map(|(label, beta)| ClubSpec {
                        label: label.clone(),
                        beta: beta.unwrap_or(system.beta),
                    })
                    .collect(),
                y0: system.y0,
                noise: system.noise,
                seed: system.seed,
                events_per_user: run.events_per_user,
                jitter_km: run.jitter_km,
            };
            let fixture = gen_event_fixture(&cities, &spec)?;
            all_events.extend(fixture.events);
            for (label, users) in fixture.followers {
                follower_lists.entry(label).or_default().extend(users);
            }
        }
        all_cities.extend(cities);
    }

    formats::write_gazetteer_tsv(&out_dir.join("cities.tsv"), &all_cities)?;
    formats::write_bbox_tsv(&out_dir.join("bboxes.tsv"), &all_cities)?;
    formats::write_observations_csv(&out_dir.join("observations.csv"), &all_obs)?;
    let mut outcome = SynthOutcome {
        cities: all_cities.len() as u64,
        observations: all_obs.len() as u64,
        users: 0,
        events: 0,
    };
    if run.events {
        formats::write_events_jsonl(&out_dir.join("events.jsonl"), &all_events)?;
        // keep the configured club order for the follower files
        let ordered: Vec<(String, Vec<String>)> = run
            .clubs
            .iter()
            .map(|(label, _)| {
                (
                    label.clone(),
                    follower_lists.get(label).cloned().unwrap_or_default(),
                )
            })
            .collect();
        formats::write_followers_dir(&out_dir.join("followers"), &ordered)?;
        outcome.users = ordered.iter().map(|(_, u)| u.len() as u64).sum();
        outcome.events = all_events.len() as u64;
    }
    Ok(outcome)
}

/// Reads any `BufRead` of config text; helper for tests.
pub fn parse_config_pairs<R: BufRead>(reader: R) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::default();
    for line in reader.lines() {
        let line = line.map_err(|e| PipelineError::Config(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(PipelineError::Config(format!(
                "expected key = value, got {line:?}"
            )));
        };
        config.apply(key.trim(), value.trim())?;
    }
    Ok(config)
}
