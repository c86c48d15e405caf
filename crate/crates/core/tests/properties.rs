use hqrc::data::{
    decode_series, encode_series, flatten, region_indices, unflatten, Grid, GriddedSeries,
    LandMask, RegionSpec,
};
use hqrc::metrics::{ensemble_average, rmnse, rmse};
use hqrc::nalgebra::DMatrix;
use hqrc::pod::{fit_pod, MinMaxScaler};
use hqrc::quantum::IsingParams;
use hqrc::readout::clip_unit;
use hqrc::reservoir::QuantumReservoir;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn masked_series() -> impl Strategy<Value = (GriddedSeries, LandMask)> {
    (2usize..6, 2usize..7, 1usize..5).prop_flat_map(|(n_lat, n_lon, n_time)| {
        let cells = n_lat * n_lon;
        (
            prop::collection::vec(any::<bool>(), cells),
            prop::collection::vec(-40.0..40.0f64, cells * n_time),
        )
            .prop_map(move |(mut kept, values)| {
                kept[0] = true;
                let grid = Grid::global(n_lat, n_lon);
                let series = GriddedSeries {
                    grid,
                    n_time,
                    cadence: "weekly".into(),
                    time_labels: Vec::new(),
                    values,
                };
                (series, LandMask { grid, kept })
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reservoir_states_stay_physical(
        seed in 0u64..1000,
        n in 1usize..5,
        v in 1usize..6,
        inputs in prop::collection::vec(0.0..=1.0f64, 1..40),
    ) {
        let params = IsingParams::random(n, 2.0, seed).unwrap();
        let mut q = QuantumReservoir::new(params, 4.0, v).unwrap();
        for u in inputs {
            let signals = q.substep_evolve(u).unwrap();
            prop_assert!(signals.iter().all(|s| (-1.0 - 1e-12..=1.0 + 1e-12).contains(s)));
            q.state().validate(1e-10, 1e-9, 1e-9).unwrap();
        }
        prop_assert!(q.propagator().unitarity_error() <= 1e-10);
    }

    #[test]
    fn flatten_round_trip((series, mask) in masked_series()) {
        let flat = flatten(&series, &mask).unwrap();
        prop_assert_eq!(flat.nrows(), mask.n_kept());
        let back = unflatten(&mask, &flat, f64::NAN, &series.cadence).unwrap();
        for (k, (a, b)) in back.values.iter().zip(&series.values).enumerate() {
            if mask.kept[k % mask.grid.n_cells()] {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!(a.is_nan());
            }
        }
        prop_assert_eq!(flatten(&back, &mask).unwrap(), flat);
    }

    #[test]
    fn gsf_round_trip((series, mask) in masked_series()) {
        let bytes = encode_series(&series, &mask).unwrap();
        let (decoded, m2) = decode_series(&bytes).unwrap();
        prop_assert_eq!(&m2, &mask);
        // Values are stored as f32.
        let flat = flatten(&series, &mask).unwrap().map(|v| v as f32 as f64);
        prop_assert_eq!(flatten(&decoded, &m2).unwrap(), flat);
    }

    #[test]
    fn rmse_partitions_additively(
        (pred, truth) in (matrix(6, 7), matrix(6, 7)),
        split in 1usize..7,
    ) {
        let all: Vec<usize> = (0..7).collect();
        let (a, b) = all.split_at(split);
        let full = rmse(&pred, &truth, None).unwrap().powi(2) * 7.0;
        let parts = rmse(&pred, &truth, Some(a)).unwrap().powi(2) * a.len() as f64
            + if b.is_empty() { 0.0 } else { rmse(&pred, &truth, Some(b)).unwrap().powi(2) * b.len() as f64 };
        prop_assert!((full - parts).abs() <= 1e-9 * full.max(1.0));
    }

    #[test]
    fn rmnse_affine_invariant(
        (pred, truth) in (matrix(8, 3), matrix(8, 3)),
        scale in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
        shift in -20.0..20.0f64,
    ) {
        let base = rmnse(&pred, &truth).unwrap();
        let f = |m: &DMatrix<f64>| m.map(|v| v * scale + shift);
        let moved = rmnse(&f(&pred), &f(&truth)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn ensemble_std_zero_iff_identical(
        m in matrix(3, 4),
        delta in prop::collection::vec(-1.0..1.0f64, 12),
        k in 1usize..5,
    ) {
        let same = vec![m.clone(); k];
        let (mean, std) = ensemble_average(&same).unwrap();
        prop_assert!((mean - &m).amax() <= 1e-12);
        prop_assert!(std.iter().all(|s| *s <= 1e-12));

        let other = &m + DMatrix::from_row_slice(3, 4, &delta);
        let (_, std) = ensemble_average(&[m.clone(), other.clone()]).unwrap();
        let diff = &other - &m;
        for (s, d) in std.iter().zip(diff.iter()) {
            prop_assert!((s - d.abs() / 2.0).abs() <= 1e-12);
        }
        prop_assert_eq!(std.iter().all(|s| *s == 0.0), other == m);
    }

    #[test]
    fn region_selection_is_monotone(
        lat in (-80.0..0.0f64, 0.0..80.0f64),
        lon in (0.0..170.0f64, 190.0..360.0f64),
        grow in 0.0..30.0f64,
    ) {
        let mask = LandMask::all_ocean(Grid::global(18, 36));
        let inner = RegionSpec { lat_min: lat.0, lat_max: lat.1, lon_min: lon.0, lon_max: lon.1 };
        let outer = RegionSpec {
            lat_min: inner.lat_min - grow,
            lat_max: inner.lat_max + grow,
            lon_min: inner.lon_min - grow,
            lon_max: inner.lon_max + grow,
        };
        if let Ok(small) = region_indices(&mask, &inner) {
            let big = region_indices(&mask, &outer).unwrap();
            prop_assert!(small.iter().all(|i| big.contains(i)));
            prop_assert!(big.len() >= small.len());
        }
    }

    #[test]
    fn scaler_round_trip(coeffs in matrix(9, 4), row in prop::collection::vec(-30.0..30.0f64, 4)) {
        let s = MinMaxScaler::fit(&coeffs).unwrap();
        let scaled = s.scale(&coeffs).unwrap();
        prop_assert!(scaled.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let back = s.unscale(&scaled).unwrap();
        prop_assert!((back - &coeffs).amax() <= 1e-9);
        let r = s.unscale_row(&s.scale_row(&row).unwrap()).unwrap();
        for (a, b) in r.iter().zip(&row) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn clip_stays_in_unit_interval(x in prop::collection::vec(-5.0..5.0f64, 0..20)) {
        let c = clip_unit(&x).unwrap();
        for (a, b) in c.iter().zip(&x) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert_eq!(*a, b.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn pod_modes_orthonormal(data in matrix(12, 8), m in 1usize..8) {
        let (basis, series) = fit_pod(&data, m).unwrap();
        let gram = basis.modes.transpose() * &basis.modes;
        prop_assert!((gram - DMatrix::identity(m, m)).amax() <= 1e-8);
        let scaled = series.scaled().unwrap();
        prop_assert!(scaled.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        prop_assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}
