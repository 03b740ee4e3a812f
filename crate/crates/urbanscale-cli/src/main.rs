//! Command-line driver for the urbanscale pipeline.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use urbanscale::pipeline::{
    run_assign, run_fit, run_homes, run_ingest_stats, run_report, run_synth, FitSource,
    PipelineConfig, PipelineError, SynthRun,
};
use urbanscale::scaling::WeightMode;
use urbanscale::synth::{NoiseModel, SynthConfig};

#[derive(Parser)]
#[command(
    name = "urbanscale",
    version,
    about = "Urban-scaling analysis of geolocated follower data",
    long_about = "Pipeline stages: homes (events -> home points), assign (homes -> cities), \
                  fit (city counts -> scaling exponents), report (fits -> summary), plus \
                  synth (generate validation data) and ingest-stats (coverage table)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options mirrored by `key = value` lines in a config file; explicit
/// flags win over the file.
#[derive(Args, Debug, Default)]
struct ConfigOpts {
    /// Key-value config file applied before the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for anything randomized
    #[arg(long)]
    seed: Option<u64>,
    /// Number of log-space bins for fitting
    #[arg(long)]
    n_bins: Option<usize>,
    /// Bin weighting: count-sum or uniform
    #[arg(long)]
    weight_mode: Option<String>,
    /// Friend-of-friend linking length in km
    #[arg(long)]
    link_km: Option<f64>,
    /// Minimum events before a user gets a home
    #[arg(long)]
    min_events: Option<usize>,
    /// Minimum size of the winning cluster
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Minimum share of events in the winning cluster
    #[arg(long)]
    min_support: Option<f64>,
    /// Mesh depth of the city index
    #[arg(long)]
    depth: Option<u8>,
    /// Nearest-center fallback radius in km
    #[arg(long)]
    fallback_km: Option<f64>,
    /// Turn any rejected or skipped input row into a failure (exit 2)
    #[arg(long)]
    strict: bool,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.merge_file(path)?;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.n_bins {
            config.n_bins = v;
        }
        if let Some(v) = &self.weight_mode {
            config.weight_mode = WeightMode::parse(v)
                .ok_or_else(|| PipelineError::Config(format!("bad weight-mode {v:?}")))?;
        }
        if let Some(v) = self.link_km {
            config.link_km = v;
        }
        if let Some(v) = self.min_events {
            config.min_events = v;
        }
        if let Some(v) = self.min_cluster_size {
            config.min_cluster_size = v;
        }
        if let Some(v) = self.min_support {
            config.min_support = v;
        }
        if let Some(v) = self.depth {
            config.depth = v;
        }
        if let Some(v) = self.fallback_km {
            config.fallback_km = v;
        }
        if self.strict {
            config.strict = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Infer home locations from an events JSONL stream
    Homes {
        /// Input events.jsonl: {"user","lat","lon","ts"} per line
        #[arg(long)]
        events: PathBuf,
        /// Output homes CSV
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Resolve home points to gazetteer cities
    Assign {
        /// homes.csv from the homes stage
        #[arg(long)]
        homes: PathBuf,
        /// Gazetteer TSV: city_id, name, country, lat, lon, population
        #[arg(long)]
        gazetteer: PathBuf,
        /// Companion bbox TSV: city_id, min_lat, min_lon, max_lat, max_lon
        #[arg(long)]
        bbox: Option<PathBuf>,
        /// Output user_city CSV
        #[arg(long)]
        out: PathBuf,
        /// Write the gazetteer parse report JSON here
        #[arg(long)]
        parse_report: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Fit scaling exponents per country and club
    Fit {
        /// user_city.csv from the assign stage
        #[arg(long)]
        user_city: Option<PathBuf>,
        /// Directory of follower lists, one user id per line, file stem
        /// is the club label
        #[arg(long)]
        followers: Option<PathBuf>,
        /// Alternative input: per-city observations CSV
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Series label for observations input
        #[arg(long, default_value = "observations")]
        club: String,
        #[arg(long)]
        gazetteer: PathBuf,
        #[arg(long)]
        bbox: Option<PathBuf>,
        /// Comma-separated country codes (default: all in the gazetteer)
        #[arg(long)]
        countries: Option<String>,
        /// Comma-separated club labels to fit, in order (default: all
        /// follower files)
        #[arg(long)]
        clubs: Option<String>,
        /// Output fits CSV
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-fit plot-data JSON
        #[arg(long)]
        plot_dir: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Generate synthetic cities, counts and (optionally) events
    Synth {
        /// Output directory
        #[arg(long)]
        out_dir: PathBuf,
        /// Countries as CODE or CODE:beta, comma separated
        #[arg(long, default_value = "XX")]
        countries: String,
        /// Exponent for countries without an explicit one
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        n_cities: usize,
        /// Rank-size exponent
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Population of the largest city
        #[arg(long, default_value_t = 10_000_000)]
        n_max: u64,
        /// Count prefactor
        #[arg(long, default_value_t = 1.0)]
        y0: f64,
        /// Count noise: none or poisson
        #[arg(long, default_value = "poisson")]
        noise: String,
        /// Clubs as LABEL or LABEL:beta, comma separated (events mode)
        #[arg(long, default_value = "club-a")]
        clubs: String,
        /// Also emit events.jsonl and followers/ for end-to-end runs
        #[arg(long)]
        events: bool,
        #[arg(long, default_value_t = 12)]
        events_per_user: usize,
        /// Scatter of each user's events around the city center, km
        #[arg(long, default_value_t = 0.05)]
        jitter_km: f64,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Summarize a fits CSV into the exponent table and plot JSON
    Report {
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_json: PathBuf,
    },
    /// Coverage table: followers with inferred homes per club
    IngestStats {
        #[arg(long)]
        followers: PathBuf,
        #[arg(long)]
        homes: PathBuf,
        /// Club totals TSV: club<TAB>total_followers
        #[arg(long)]
        totals: Option<PathBuf>,
    },
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// "NAME" or "NAME:1.25" -> (NAME, Some(1.25)); a trailing segment that
/// does not parse as a number stays part of the name.
fn split_tagged(entry: &str) -> (String, Option<f64>) {
    if let Some((name, num)) = entry.rsplit_once(':') {
        if let Ok(v) = num.trim().parse::<f64>() {
            return (name.trim().to_string(), Some(v));
        }
    }
    (entry.trim().to_string(), None)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Homes { events, out, opts } => {
            let config = opts.resolve()?;
            let outcome = run_homes(&events, &out, &config.home_params(), config.strict)?;
            println!(
                "events: {} read, {} skipped; users: {}; homes inferred: {} -> {}",
                outcome.events_read,
                outcome.lines_skipped,
                outcome.users_seen,
                outcome.homes_inferred,
                out.display()
            );
            Ok(())
        }
        Command::Assign {
            homes,
            gazetteer,
            bbox,
            out,
            parse_report,
            opts,
        } => {
            let config = opts.resolve()?;
            let outcome = run_assign(
                &homes,
                &gazetteer,
                bbox.as_deref(),
                &out,
                parse_report.as_deref(),
                config.depth,
                config.fallback_km,
                config.strict,
            )?;
            println!(
                "gazetteer: {} accepted, {} rejected; homes: {}; assigned: {}, unassigned: {} -> {}",
                outcome.report.accepted,
                outcome.report.rejected,
                outcome.homes_read,
                outcome.assigned,
                outcome.unassigned,
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            user_city,
            followers,
            observations,
            club,
            gazetteer,
            bbox,
            countries,
            clubs,
            out,
            plot_dir,
            opts,
        } => {
            let config = opts.resolve()?;
            let source = match (user_city, observations) {
                (Some(uc), None) => {
                    let followers_dir = followers.ok_or_else(|| {
                        PipelineError::Config("--user-city requires --followers".into())
                    })?;
                    FitSource::UserCity {
                        user_city: uc,
                        followers_dir,
                    }
                }
                (None, Some(obs)) => FitSource::Observations { path: obs, club },
                _ => {
                    return Err(PipelineError::Config(
                        "pass exactly one of --user-city or --observations".into(),
                    ))
                }
            };
            let countries = countries.map(|s| split_list(&s));
            let clubs = clubs.map(|s| split_list(&s));
            let output = run_fit(
                &source,
                &gazetteer,
                bbox.as_deref(),
                countries.as_deref(),
                clubs.as_deref(),
                &config.fit_config(),
                &out,
                plot_dir.as_deref(),
                config.strict,
            )?;
            let fitted = output.rows.iter().filter(|r| r.outcome.is_ok()).count();
            println!(
                "fitted {}/{} series across {} countries -> {}",
                fitted,
                output.rows.len(),
                output.countries.len(),
                out.display()
            );
            Ok(())
        }
        Command::Synth {
            out_dir,
            countries,
            beta,
            n_cities,
            alpha,
            n_max,
            y0,
            noise,
            clubs,
            events,
            events_per_user,
            jitter_km,
            opts,
        } => {
            let config = opts.resolve()?;
            let noise = NoiseModel::parse(&noise)
                .ok_or_else(|| PipelineError::Config(format!("bad noise model {noise:?}")))?;
            let systems: Vec<SynthConfig> = split_list(&countries)
                .iter()
                .map(|entry| {
                    let (country, country_beta) = split_tagged(entry);
                    SynthConfig {
                        n_cities,
                        zipf_alpha: alpha,
                        n_max,
                        beta: country_beta.unwrap_or(beta),
                        y0,
                        noise,
                        seed: config.seed,
                        country,
                    }
                })
                .collect();
            let clubs: Vec<(String, Option<f64>)> =
                split_list(&clubs).iter().map(|c| split_tagged(c)).collect();
            let run = SynthRun {
                systems,
                clubs,
                events,
                events_per_user,
                jitter_km,
            };
            let outcome = run_synth(&run, &out_dir)?;
            println!(
                "cities: {}, observations: {}, users: {}, events: {} -> {}",
                outcome.cities,
                outcome.observations,
                outcome.users,
                outcome.events,
                out_dir.display()
            );
            Ok(())
        }
        Command::Report {
            fits,
            out_csv,
            out_json,
        } => {
            let n = run_report(&fits, &out_csv, &out_json)?;
            println!(
                "summarized {} fitted series -> {}, {}",
                n,
                out_csv.display(),
                out_json.display()
            );
            Ok(())
        }
        Command::IngestStats {
            followers,
            homes,
            totals,
        } => {
            let (_, table) = run_ingest_stats(&followers, &homes, totals.as_deref())?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
