use pilotwave::ensemble::{count_crossings, empirical_histogram, ks_statistic, reference_histogram, sample_initial, Sampler};
use pilotwave::grid::{Boundary, Coord, GridSpec, V4};
use proptest::prelude::*;

fn bump(grid: &GridSpec, c: f64, s: f64) -> Vec<f64> {
    grid.sample(|p| (-(p[1] - c).powi(2) / (2.0 * s * s)).exp())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flat_and_multi_indices_agree(nx in 5usize..12, ny in 5usize..12, nz in 5usize..9, pick in any::<prop::sample::Index>()) {
        let grid = GridSpec::new(vec![
            pilotwave::grid::Axis::new(Coord::X, 0.0, 1.0, nx, Boundary::OneSided),
            pilotwave::grid::Axis::new(Coord::Y, 0.0, 2.0, ny, Boundary::Periodic),
            pilotwave::grid::Axis::new(Coord::Z, -1.0, 1.0, nz, Boundary::OneSided),
        ]).unwrap();
        let i = pick.index(grid.len());
        prop_assert_eq!(grid.flat_index(&grid.multi_index(i)), i);
    }

    #[test]
    fn samples_follow_seed_and_stay_inside(seed in any::<u64>(), c in -3.0f64..3.0, s in 0.5f64..2.0) {
        let grid = GridSpec::line(Coord::X, -8.0, 8.0, 161, Boundary::OneSided).unwrap();
        let w = bump(&grid, c, s);
        for sampler in [Sampler::InverseCdf, Sampler::Rejection] {
            let a = sample_initial(&grid, &w, 300, seed, sampler).unwrap();
            let b = sample_initial(&grid, &w, 300, seed, sampler).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|p| (-8.0..=8.0).contains(&p[1])));
            let ks = ks_statistic(&grid, &w, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ks));
        }
    }

    #[test]
    fn histograms_are_distributions(c in -3.0f64..3.0, s in 0.5f64..2.0, bins in 4usize..40) {
        let grid = GridSpec::line(Coord::X, -8.0, 8.0, 161, Boundary::OneSided).unwrap();
        let w = bump(&grid, c, s);
        let r = reference_histogram(&grid, &w, bins).unwrap();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let pos = sample_initial(&grid, &w, 500, 9, Sampler::InverseCdf).unwrap();
        let e = empirical_histogram(&grid, &pos, bins);
        prop_assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ordered_paths_never_cross(starts in prop::collection::vec(-5.0f64..5.0, 2..30), rate in 0.1f64..2.0) {
        let mut starts = starts;
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let paths: Vec<Vec<V4>> = starts
            .iter()
            .map(|&x| (0..20).map(|k| [k as f64, x * (1.0 + rate * k as f64), 0.0, 0.0]).collect())
            .collect();
        prop_assert_eq!(count_crossings(&paths, 1), 0);
    }
}

#[test]
fn swapped_paths_count_each_inverted_sample() {
    let a: Vec<V4> = (0..5).map(|k| [k as f64, -1.0 + 0.5 * k as f64, 0.0, 0.0]).collect();
    let b: Vec<V4> = (0..5).map(|k| [k as f64, 1.0 - 0.5 * k as f64, 0.0, 0.0]).collect();
    assert_eq!(count_crossings(&[a, b], 1), 2);
}

#[test]
fn large_samples_match_their_density() {
    let grid = GridSpec::line(Coord::X, -8.0, 8.0, 321, Boundary::OneSided).unwrap();
    let w = bump(&grid, 1.0, 1.5);
    let pos = sample_initial(&grid, &w, 20_000, 1, Sampler::InverseCdf).unwrap();
    assert!(ks_statistic(&grid, &w, &pos).unwrap() < 0.015);
    let shifted = bump(&grid, 2.0, 1.5);
    assert!(ks_statistic(&grid, &shifted, &pos).unwrap() > 0.1);
}
