//! Generative checks of the library invariants.

use proptest::prelude::*;
use urbanscale::geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM};
use urbanscale::homeloc::cluster_fof;
use urbanscale::htm::{locate, TrixelId};
use urbanscale::scaling::{bin_logspace, fit_scaling, CityObservation, FitConfig, WeightMode};

fn arb_point() -> impl Strategy<Value = GeoPoint> {
    // uniform in z keeps points uniform on the sphere
    (-1.0f64..=1.0, -180.0f64..180.0)
        .prop_map(|(z, lon)| GeoPoint::new(z.asin().to_degrees(), lon).unwrap())
}

proptest! {
    #[test]
    fn trixel_codec_round_trips(root in 0u8..8, path in prop::collection::vec(0u8..4, 0..=30)) {
        let id = TrixelId::from_parts(root, &path).unwrap();
        let decoded = TrixelId::decode(id.packed()).unwrap();
        prop_assert_eq!(decoded, id);
        prop_assert_eq!(decoded.root_index(), root);
        prop_assert_eq!(decoded.digits(), path.clone());
        if let Some(parent) = id.parent() {
            prop_assert!(parent.contains_id(id));
            prop_assert_eq!(parent.depth() + 1, id.depth());
        }
    }

    #[test]
    fn locate_returns_prefix_chain(p in arb_point(), depth in 1u8..=12) {
        let deep = locate(p, depth).unwrap();
        let shallow = locate(p, depth - 1).unwrap();
        prop_assert_eq!(deep.parent().unwrap(), shallow);
        prop_assert_eq!(deep.ancestor_at(0), locate(p, 0).unwrap());
    }

    #[test]
    fn haversine_is_symmetric_and_bounded(a in arb_point(), b in arb_point()) {
        let d1 = haversine_km(a, b);
        let d2 = haversine_km(b, a);
        prop_assert_eq!(d1, d2);
        prop_assert!(d1 >= 0.0);
        prop_assert!(d1 <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
    }

    #[test]
    fn fof_partition_is_permutation_invariant(
        points in prop::collection::vec(
            (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap()),
            1..60,
        ),
        link_km in 0.5f64..50.0,
        swap_seed in 0u64..1000,
    ) {
        let base = cluster_fof(&points, link_km);

        // deterministic shuffle driven by the seed
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut state = swap_seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for i in (1..order.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let shuffled: Vec<GeoPoint> = order.iter().map(|&i| points[i]).collect();
        let mut mapped: Vec<Vec<usize>> = cluster_fof(&shuffled, link_km)
            .into_iter()
            .map(|cluster| {
                let mut back: Vec<usize> = cluster.into_iter().map(|j| order[j]).collect();
                back.sort_unstable();
                back
            })
            .collect();
        mapped.sort();
        let mut base_sorted = base;
        base_sorted.sort();
        prop_assert_eq!(base_sorted, mapped);
    }

    #[test]
    fn fof_cluster_count_monotone_in_link(
        points in prop::collection::vec(
            (-0.3f64..0.3, -0.3f64..0.3).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap()),
            1..50,
        ),
        link_a in 0.1f64..20.0,
        factor in 1.0f64..10.0,
    ) {
        let small = cluster_fof(&points, link_a).len();
        let large = cluster_fof(&points, link_a * factor).len();
        prop_assert!(large <= small);
    }

    #[test]
    fn binning_conserves_cities_and_weights(
        counts in prop::collection::vec(0.0f64..1e6, 2..120),
        n_bins in 2usize..24,
    ) {
        let obs: Vec<CityObservation> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| CityObservation {
                city_id: format!("c{i}"),
                population: 100 + (i as u64) * 37,
                count: c.round(),
            })
            .collect();
        let surviving = obs.iter().filter(|o| o.count > 0.0).count();
        prop_assume!(surviving >= 2);
        let bins = bin_logspace(&obs, n_bins).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.n_cities).sum::<usize>(), surviving);
        let total: f64 = bins.iter().map(|b| b.weight).sum();
        let want: f64 = obs.iter().map(|o| o.count).sum();
        prop_assert!((total - want).abs() < 1e-6 * want.max(1.0));
        for b in &bins {
            prop_assert!(b.weight > 0.0);
            prop_assert!(b.n_cities >= 1);
        }
    }

    #[test]
    fn count_rescaling_shifts_only_intercept(
        scale in 0.01f64..100.0,
        seed in 0u64..500,
    ) {
        let obs: Vec<CityObservation> = (1..=40)
            .map(|i| {
                let pop = 1000u64 * (i as u64) * (i as u64) + seed % 17;
                let wobble = 1.0 + 0.2 * (((i as u64 * 31 + seed) % 7) as f64) / 7.0;
                CityObservation {
                    city_id: format!("c{i}"),
                    population: pop,
                    count: 0.5 * (pop as f64).powf(1.1) * wobble,
                }
            })
            .collect();
        let config = FitConfig { n_bins: 9, weight_mode: WeightMode::Uniform };
        let base = fit_scaling(&obs, &config).unwrap();
        let scaled: Vec<CityObservation> = obs
            .iter()
            .map(|o| CityObservation { count: o.count * scale, ..o.clone() })
            .collect();
        let shifted = fit_scaling(&scaled, &config).unwrap();
        prop_assert!((shifted.beta - base.beta).abs() < 1e-9);
        prop_assert!((shifted.beta_stderr - base.beta_stderr).abs() < 1e-9);
        prop_assert!((shifted.log_y0 - (base.log_y0 + scale.ln())).abs() < 1e-9);
    }
}
