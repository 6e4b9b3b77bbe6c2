use std::collections::HashMap;

use cabcompare_core::analytics::{
    distance_distribution, majority_raster, median_curve, price_distributions, run_experiment, HistogramSpec,
    PricePair, Verdict,
};
use cabcompare_core::pricing::RateCardEmulator;
use cabcompare_core::synth::{self, SynthConfig};
use cabcompare_core::{haversine_miles, run_stats, Cents, CellId, GeoPoint, MeshSpecF64, RateCard, Sampling, StatsConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(n: usize, seed: u64) -> Vec<PricePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = MeshSpecF64::nyc().bbox;
    (0..n)
        .map(|i| PricePair {
            ordinal: i as u32,
            trip_id: i as u64,
            pickup: GeoPoint {
                lat: rng.random_range(b.south_west.lat..=b.north_east.lat),
                lon: rng.random_range(b.south_west.lon..=b.north_east.lon),
            },
            yellow: Cents(rng.random_range(250..12_000)),
            uber: Cents(rng.random_range(800..12_000)),
        })
        .collect()
}

/// Median by full sort; even counts take the lower middle element.
fn sorted_median(mut v: Vec<i64>) -> i64 {
    v.sort();
    v[(v.len() - 1) / 2]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn per_bin_medians_match_sort(n in 1usize..10_000, seed in any::<u64>(), width in 1i64..800, min_support in 1u64..20) {
        let pairs = random_pairs(n, seed);
        let curve = median_curve(&pairs, Cents(width), min_support).unwrap();
        let mut groups: HashMap<i64, Vec<i64>> = HashMap::new();
        for p in &pairs {
            groups.entry(p.yellow.0 / width).or_default().push(p.uber.0);
        }
        prop_assert_eq!(curve.bins.len(), groups.len());
        prop_assert_eq!(curve.bins.iter().map(|b| b.support).sum::<u64>(), n as u64);
        for b in &curve.bins {
            let g = groups.remove(&(b.lo.0 / width)).unwrap();
            prop_assert_eq!(b.hi.0 - b.lo.0, width);
            prop_assert_eq!(b.support, g.len() as u64);
            let expect = (g.len() as u64 >= min_support).then(|| Cents(sorted_median(g)));
            prop_assert_eq!(b.median_uber, expect);
        }
    }

    #[test]
    fn raster_matches_tally(n in 1usize..10_000, seed in any::<u64>(), cell in prop::sample::select(vec![100.0, 500.0, 1_000.0, 5_000.0])) {
        let pairs = random_pairs(n, seed);
        let spec = MeshSpecF64::nyc().with_cell_size(cell).unwrap();
        let raster = majority_raster(&pairs, &spec).unwrap();
        let mut tally: HashMap<CellId, (u64, u64)> = HashMap::new();
        for p in &pairs {
            let e = tally.entry(spec.cell_of(&p.pickup).unwrap()).or_default();
            e.0 += u64::from(p.uber < p.yellow);
            e.1 += u64::from(p.uber > p.yellow);
        }
        prop_assert_eq!(raster.cells.len(), tally.len());
        for (cell, (u, y)) in tally {
            let got = raster.cells[&cell];
            prop_assert_eq!((got.uber_cheaper_count, got.yellow_cheaper_count), (u, y));
            let expect = if u == 0 && y == 0 { Verdict::Nodata } else if u > y { Verdict::Black } else { Verdict::Yellow };
            prop_assert_eq!(got.verdict, expect);
        }
    }

    #[test]
    fn distance_mean_matches_direct_sum(n in 1usize..10_000, seed in any::<u64>()) {
        let corpus = synth::generate(n, seed, &SynthConfig::default());
        let stats = distance_distribution(&corpus, &HistogramSpec::distances()).unwrap();
        let direct = corpus.iter().map(|t| haversine_miles(&t.pickup, &t.dropoff)).sum::<f64>() / n as f64;
        prop_assert!((stats.mean_mi - direct).abs() <= 1e-9 * direct.abs().max(f64::MIN_POSITIVE));
        let meter = corpus.iter().filter_map(|t| t.trip_distance_mi).sum::<f64>() / n as f64;
        prop_assert!((stats.meter_mean_mi.unwrap() - meter).abs() <= 1e-9 * meter);
        prop_assert!(stats.histogram.is_consistent());
        prop_assert_eq!(stats.histogram.total, n as u64);
    }

    #[test]
    fn price_histograms_count_everything(n in 1usize..5_000, seed in any::<u64>()) {
        let pairs = random_pairs(n, seed);
        let d = price_distributions(&pairs, &HistogramSpec::prices()).unwrap();
        for h in [&d.yellow, &d.uber] {
            prop_assert!(h.is_consistent());
            prop_assert_eq!(h.total, n as u64);
        }
        let above = pairs.iter().filter(|p| p.yellow >= Cents(10_000)).count() as u64;
        prop_assert_eq!(d.yellow.overflow, above);
        prop_assert_eq!(d.median_gap, Cents(sorted_median(pairs.iter().map(|p| p.uber.0).collect())
            - sorted_median(pairs.iter().map(|p| p.yellow.0).collect())));
    }
}

#[test]
fn experiment_accounting_on_1000_trips() {
    let corpus = synth::generate(1_000, 77, &SynthConfig::default());
    let emulator = RateCardEmulator::new(RateCard::illustrative()).unwrap();
    let run = run_experiment(&corpus, &emulator, &Sampling::all());
    assert_eq!(run.report.sampled, 1_000);
    assert_eq!(run.report.paired, run.report.sampled - run.report.provider_failed);
    for p in &run.pairs {
        assert_eq!(p.yellow, corpus[p.ordinal as usize].total_fare);
    }
}

#[test]
fn stats_outputs_are_byte_identical_across_runs() {
    let corpus = synth::generate(4_000, 5, &SynthConfig::default());
    let emulator = RateCardEmulator::new(RateCard::illustrative()).unwrap();
    let config = StatsConfig { sampling: Sampling::new(0.6, 99).unwrap(), ..StatsConfig::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_stats(&corpus, &MeshSpecF64::nyc(), &emulator, &config).unwrap().write_outputs(d.path()).unwrap();
    }
    for name in ["distributions.csv", "median_curve.csv", "distances.csv", "raster.csv", "trace_points.csv", "summary.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dirs[0].path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["counts"]["corpus"], 4_000);
    assert!(summary["median_gap_usd"].is_number());
}
