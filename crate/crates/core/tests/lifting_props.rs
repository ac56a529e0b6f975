use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rredmd::{build_dictionary, Dictionary32, Dictionary64, DictionarySpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_lift_equals_row_lift(rows in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..20), s in 0.1f64..3.0) {
        let centers = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, -1.0, 2.0, 0.0, 0.5]);
        let d = Dictionary64::new(3, true, true, centers, s).unwrap();
        let x = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let batch = d.lift_batch(&x).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let one = d.lift(r).unwrap();
            prop_assert_eq!(batch.row(i).transpose(), one);
        }
    }
}

#[test]
fn configured_sizes() {
    let warm: Vec<DVector<f64>> = (0..200)
        .map(|i| DVector::from_row_slice(&[(i as f64 * 0.1).sin() * 2.0, (i as f64 * 0.1).cos() * 2.0]))
        .collect();
    let spec = DictionarySpec { num_rbf: 40, ..DictionarySpec::default() };
    assert_eq!(build_dictionary(&spec, &warm).unwrap().dictionary.total_dim(), 43);

    let ring: Vec<DVector<f64>> = (0..200)
        .map(|i| DVector::from_fn(20, |j, _| ((i * 7 + j * 3) as f64 * 0.37).sin()))
        .collect();
    let spec = DictionarySpec { num_rbf: 15 * 10, include_identity: false, include_constant: false, ..Default::default() };
    assert_eq!(build_dictionary(&spec, &ring).unwrap().dictionary.total_dim(), 150);
}

#[test]
fn single_precision_dictionary() {
    let d = Dictionary32::new(2, true, true, DMatrix::from_row_slice(1, 2, &[0.0, 0.0]), 1.0).unwrap();
    let z = d.lift(&[0.0, 0.0]).unwrap();
    assert_eq!(z.as_slice(), &[1.0f32, 0.0, 0.0, 1.0]);
}
