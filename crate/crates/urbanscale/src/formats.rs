//! Readers and writers for the interchange files between pipeline
//! stages: events JSONL, homes CSV, assignment CSV, observation CSV,
//! follower totals TSV and the gazetteer pair.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-reading an intermediate file reproduces the exact values and
//! repeated runs stay byte-identical.

use crate::gazetteer::{bbox_row, city_row, CityRecord};
use crate::geo::GeoPoint;
use crate::homeloc::{GeoEvent, HomeLocation};
use crate::scaling::CityObservation;
use serde::Deserialize;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, FormatError> {
    Ok(std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| FormatError::io(path, e))?,
    ))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, FormatError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| FormatError::io(path, e))?;
        }
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?,
    ))
}

#[derive(Debug, Deserialize)]
struct RawEvent {
    user: String,
    lat: f64,
    lon: f64,
    ts: i64,
}

/// Events parsed from JSONL plus the number of lines that were skipped
/// as malformed (bad JSON, missing fields, out-of-range coordinates or
/// negative timestamps).
#[derive(Debug, Default)]
pub struct EventFile {
    pub events: Vec<GeoEvent>,
    pub skipped: u64,
}

/// Reads `{"user": ..., "lat": ..., "lon": ..., "ts": ...}` lines.
/// Malformed lines never abort the stream.
pub fn read_events_jsonl(path: &Path) -> Result<EventFile, FormatError> {
    let reader = open(path)?;
    let mut out = EventFile::default();
    for line in reader.lines() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        let Ok(point) = GeoPoint::new(raw.lat, raw.lon) else {
            out.skipped += 1;
            continue;
        };
        if raw.ts < 0 || raw.user.is_empty() {
            out.skipped += 1;
            continue;
        }
        out.events.push(GeoEvent {
            user_id: raw.user,
            point,
            timestamp: raw.ts,
        });
    }
    Ok(out)
}

pub fn write_events_jsonl(path: &Path, events: &[GeoEvent]) -> Result<(), FormatError> {
    let mut w = create(path)?;
    for e in events {
        // hand-rolled to keep the field order stable
        writeln!(
            w,
            "{{\"user\":{},\"lat\":{},\"lon\":{},\"ts\":{}}}",
            serde_json::to_string(&e.user_id).expect("string encodes"),
            e.point.lat(),
            e.point.lon(),
            e.timestamp
        )
        .map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

const HOMES_HEADER: [&str; 6] = [
    "user_id",
    "lat",
    "lon",
    "cluster_size",
    "total_events",
    "support",
];

pub fn write_homes_csv(path: &Path, homes: &[HomeLocation]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(HOMES_HEADER).map_err(|e| csv_io(path, e))?;
    for h in homes {
        w.write_record([
            h.user_id.as_str(),
            &h.point.lat().to_string(),
            &h.point.lon().to_string(),
            &h.cluster_size.to_string(),
            &h.total_events.to_string(),
            &h.support.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> FormatError {
    FormatError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    }
}

pub fn read_homes_csv(path: &Path) -> Result<Vec<HomeLocation>, FormatError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<HomeRow>().enumerate() {
        let line = i as u64 + 2;
        let row = rec.map_err(|e| FormatError::malformed(path, line, e.to_string()))?;
        let point = GeoPoint::new(row.lat, row.lon)
            .map_err(|e| FormatError::malformed(path, line, e.to_string()))?;
        out.push(HomeLocation {
            user_id: row.user_id,
            point,
            cluster_size: row.cluster_size,
            total_events: row.total_events,
            support: row.support,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct HomeRow {
    user_id: String,
    lat: f64,
    lon: f64,
    cluster_size: usize,
    total_events: usize,
    support: f64,
}

pub fn write_user_city_csv(path: &Path, rows: &[(String, String)]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["user_id", "city_id"])
        .map_err(|e| csv_io(path, e))?;
    for (user, city) in rows {
        w.write_record([user.as_str(), city.as_str()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_user_city_csv(path: &Path) -> Result<Vec<(String, String)>, FormatError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<(String, String)>().enumerate() {
        let row = rec.map_err(|e| FormatError::malformed(path, i as u64 + 2, e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_observations_csv(path: &Path, obs: &[CityObservation]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["city_id", "population", "count"])
        .map_err(|e| csv_io(path, e))?;
    for o in obs {
        w.write_record([
            o.city_id.as_str(),
            &o.population.to_string(),
            &o.count.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_observations_csv(path: &Path) -> Result<Vec<CityObservation>, FormatError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<CityObservation>().enumerate() {
        let row = rec.map_err(|e| FormatError::malformed(path, i as u64 + 2, e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_gazetteer_tsv(path: &Path, cities: &[CityRecord]) -> Result<(), FormatError> {
    let mut w = create(path)?;
    writeln!(w, "# city_id\tname\tcountry\tlat\tlon\tpopulation")
        .map_err(|e| FormatError::io(path, e))?;
    for c in cities {
        writeln!(w, "{}", city_row(c)).map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_bbox_tsv(path: &Path, cities: &[CityRecord]) -> Result<(), FormatError> {
    let mut w = create(path)?;
    writeln!(w, "# city_id\tmin_lat\tmin_lon\tmax_lat\tmax_lon")
        .map_err(|e| FormatError::io(path, e))?;
    for c in cities {
        writeln!(w, "{}", bbox_row(c)).map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Follower-list files: one user id per line, file stem is the club
/// label. Files are read in lexicographic name order.
pub fn read_followers_dir(dir: &Path) -> Result<Vec<(String, Vec<String>)>, FormatError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| FormatError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let label = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if label.is_empty() {
            continue;
        }
        let reader = open(&p)?;
        let mut ids = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| FormatError::io(&p, e))?;
            let id = line.trim();
            if id.is_empty() || id.starts_with('#') {
                continue;
            }
            ids.push(id.to_string());
        }
        out.push((label, ids));
    }
    Ok(out)
}

pub fn write_followers_dir(
    dir: &Path,
    followers: &[(String, Vec<String>)],
) -> Result<(), FormatError> {
    std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    for (label, ids) in followers {
        let path = dir.join(format!("{}.txt", crate::synth::sanitize_label(label)));
        let mut w = create(&path)?;
        for id in ids {
            writeln!(w, "{id}").map_err(|e| FormatError::io(&path, e))?;
        }
        w.flush().map_err(|e| FormatError::io(&path, e))?;
    }
    Ok(())
}

/// Optional club -> total-follower-count metadata: tab-separated
/// `club<TAB>total`, `#` comments allowed.
pub fn read_totals_tsv(
    path: &Path,
) -> Result<std::collections::BTreeMap<String, u64>, FormatError> {
    let reader = open(path)?;
    let mut out = std::collections::BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(club), Some(total_s), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(FormatError::malformed(
                path,
                i as u64 + 1,
                "expected club<TAB>total",
            ));
        };
        let total: u64 = total_s.trim().parse().map_err(|_| {
            FormatError::malformed(path, i as u64 + 1, format!("bad total {total_s:?}"))
        })?;
        out.insert(club.trim().to_string(), total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_city_system, SynthConfig};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn events_jsonl_round_trip_and_skips() {
        let dir = tmp();
        let path = dir.path().join("events.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"user\":\"u1\",\"lat\":40.0,\"lon\":-3.7,\"ts\":100}\n",
                "not json\n",
                "{\"user\":\"u2\",\"lat\":95.0,\"lon\":0.0,\"ts\":100}\n",
                "{\"user\":\"u3\",\"lat\":10.0,\"lon\":10.0,\"ts\":-5}\n",
                "{\"user\":\"u4\",\"lat\":10.0,\"lon\":10.0}\n",
                "{\"user\":\"u5\",\"lat\":-10.0,\"lon\":190.0,\"ts\":7}\n",
            ),
        )
        .unwrap();
        let got = read_events_jsonl(&path).unwrap();
        assert_eq!(got.events.len(), 2);
        assert_eq!(got.skipped, 4);
        assert_eq!(got.events[0].user_id, "u1");
        // lon got normalized
        assert_eq!(got.events[1].point.lon(), -170.0);

        let back = dir.path().join("back.jsonl");
        write_events_jsonl(&back, &got.events).unwrap();
        let again = read_events_jsonl(&back).unwrap();
        assert_eq!(again.skipped, 0);
        assert_eq!(again.events, got.events);
    }

    #[test]
    fn homes_csv_round_trip() {
        let dir = tmp();
        let path = dir.path().join("homes.csv");
        let homes = vec![
            HomeLocation {
                user_id: "alice,with comma".into(),
                point: GeoPoint::new(40.416775, -3.70379).unwrap(),
                cluster_size: 15,
                total_events: 20,
                support: 0.75,
            },
            HomeLocation {
                user_id: "bob".into(),
                point: GeoPoint::new(-33.8688, 151.2093).unwrap(),
                cluster_size: 10,
                total_events: 10,
                support: 1.0,
            },
        ];
        write_homes_csv(&path, &homes).unwrap();
        let got = read_homes_csv(&path).unwrap();
        assert_eq!(got, homes);
    }

    #[test]
    fn observations_csv_round_trip() {
        let dir = tmp();
        let path = dir.path().join("obs.csv");
        let obs = vec![
            CityObservation {
                city_id: "A1".into(),
                population: 1_000_000,
                count: 123.0,
            },
            CityObservation {
                city_id: "B2".into(),
                population: 50_000,
                count: 0.0,
            },
        ];
        write_observations_csv(&path, &obs).unwrap();
        assert_eq!(read_observations_csv(&path).unwrap(), obs);
    }

    #[test]
    fn gazetteer_files_reparse_cleanly() {
        let dir = tmp();
        let cities = gen_city_system(&SynthConfig {
            n_cities: 25,
            country: "AA".into(),
            ..Default::default()
        })
        .unwrap();
        let gaz = dir.path().join("cities.tsv");
        let bbox = dir.path().join("bboxes.tsv");
        write_gazetteer_tsv(&gaz, &cities).unwrap();
        write_bbox_tsv(&bbox, &cities).unwrap();
        let (records, report) =
            crate::gazetteer::parse_gazetteer(open(&gaz).unwrap(), Some(open(&bbox).unwrap()))
                .unwrap();
        assert_eq!(report.rejected, 0, "reasons: {:?}", report.reasons);
        assert_eq!(records, cities);
    }

    #[test]
    fn followers_dir_round_trip_sorted() {
        let dir = tmp();
        let followers = vec![
            ("zeta".to_string(), vec!["u3".to_string(), "u1".to_string()]),
            ("alpha".to_string(), vec!["u2".to_string()]),
        ];
        write_followers_dir(dir.path(), &followers).unwrap();
        let got = read_followers_dir(dir.path()).unwrap();
        // read order is lexicographic by file name
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, "alpha");
        assert_eq!(got[1].0, "zeta");
        assert_eq!(got[1].1, vec!["u3".to_string(), "u1".to_string()]);
    }

    #[test]
    fn totals_tsv_parses() {
        let dir = tmp();
        let path = dir.path().join("totals.tsv");
        std::fs::write(
            &path,
            "# club\ttotal\nReal Madrid\t28700000\nBayern Munich\t4300000\n",
        )
        .unwrap();
        let totals = read_totals_tsv(&path).unwrap();
        assert_eq!(totals.get("Real Madrid"), Some(&28_700_000));
        assert_eq!(totals.get("Bayern Munich"), Some(&4_300_000));
        std::fs::write(&path, "broken line\n").unwrap();
        assert!(read_totals_tsv(&path).is_err());
    }
}
