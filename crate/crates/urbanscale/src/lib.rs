//! Urban-scaling analysis of geolocated follower data.
//!
//! The crate walks the whole chain from raw geolocated events to scaling
//! exponents: friend-of-friend clustering infers a home point per user,
//! a hierarchical triangular mesh resolves homes to gazetteer cities,
//! per-city follower counts are binned in log space and fitted with
//! weighted least squares, and a synthetic generator with known
//! exponents validates the fitter end to end.

pub mod formats;
pub mod gazetteer;
pub mod geo;
pub mod homeloc;
pub mod htm;
pub mod pipeline;
pub mod rng;
pub mod scaling;
pub mod synth;
