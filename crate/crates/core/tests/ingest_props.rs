use std::io::Write;

use nalgebra::DVector;
use proptest::prelude::*;

use rredmd::dynamics::{simulate_vdp, VdpConfig};
use rredmd::ingest::{add_noise_snr, default_column_names, open_csv_stream, write_csv, CsvStreamConfig};

#[test]
fn simulated_trajectory_round_trips() {
    let traj = simulate_vdp(&VdpConfig { seed: 3, ..VdpConfig::default() }, 500).unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    write_csv(f.path(), &traj, &default_column_names(2), 0.01).unwrap();
    let back: Vec<DVector<f64>> = open_csv_stream(&CsvStreamConfig::new(f.path()))
        .unwrap()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(back.len(), traj.len());
    for (a, b) in back.iter().zip(&traj) {
        assert!((a - b).abs().max() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seventeen_digits_are_lossless(rows in prop::collection::vec(prop::array::uniform3(any::<f64>().prop_filter("finite", |v| v.is_finite())), 1..30)) {
        let traj: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_row_slice(r)).collect();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &traj, &default_column_names(3), 0.5).unwrap();
        let back: Vec<DVector<f64>> = open_csv_stream(&CsvStreamConfig::new(f.path())).unwrap().map(|r| r.unwrap()).collect();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn noise_is_reproducible(seed in any::<u64>(), snr in 0.0f64..60.0) {
        let data = || (0..700).map(|i| Ok(DVector::from_row_slice(&[(i as f64 * 0.1).sin(), i as f64])));
        let a: Vec<_> = add_noise_snr(data(), snr, seed).unwrap().map(|r| r.unwrap()).collect();
        let b: Vec<_> = add_noise_snr(data(), snr, seed).unwrap().map(|r| r.unwrap()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn header_only_file_streams_nothing() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "t,x1").unwrap();
    assert_eq!(open_csv_stream(&CsvStreamConfig::new(f.path())).unwrap().count(), 0);
}
