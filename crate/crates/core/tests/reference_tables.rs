//! Reference confusion matrices with their printed row and column
//! percentages. Blank cells are zero.

use ferroscope::metrics::{Reduce, Stat};
use ferroscope::ConfusionMatrix;

fn bridge() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&[
        vec![1069, 6, 1, 3, 33, 0, 9],
        vec![1, 91, 10, 4, 1, 0, 3],
        vec![1, 9, 235, 3, 2, 2, 9],
        vec![11, 1, 8, 658, 37, 11, 35],
        vec![28, 1, 3, 24, 704, 7, 52],
        vec![5, 2, 4, 13, 11, 81, 3],
        vec![10, 0, 8, 31, 33, 2, 678],
    ])
    .unwrap()
}

/// Classes: normal, rolled-in scale, inclusion, scratch, patch, background.
fn steel() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&[
        vec![222, 70, 7, 1, 0, 7],
        vec![16, 345, 17, 4, 13, 0],
        vec![16, 42, 128, 5, 0, 2],
        vec![6, 25, 6, 125, 11, 4],
        vec![0, 5, 0, 7, 78, 0],
        vec![3, 0, 0, 1, 0, 210],
    ])
    .unwrap()
}

fn check(cm: &ConfusionMatrix, rows: &[f64], cols: &[f64]) {
    for (c, &want) in rows.iter().enumerate() {
        let got = 100.0 * cm.recall(c).unwrap();
        assert!((got - want).abs() <= 0.05, "row {c}: {got} vs {want}");
        let text = cm.ratio(c, Stat::Recall).unwrap().percent();
        assert_eq!(text, format!("{want:.1}%"));
    }
    for (c, &want) in cols.iter().enumerate() {
        let got = 100.0 * cm.precision(c).unwrap();
        assert!((got - want).abs() <= 0.05, "column {c}: {got} vs {want}");
        assert_eq!(cm.ratio(c, Stat::Precision).unwrap().percent(), format!("{want:.1}%"));
    }
}

#[test]
fn bridge_matrix_reproduces_printed_percentages() {
    let cm = bridge();
    check(
        &cm,
        &[95.4, 82.7, 90.0, 86.5, 86.0, 68.1, 89.0],
        &[95.0, 82.7, 87.4, 89.4, 85.7, 78.6, 85.9],
    );
    let acc = 100.0 * cm.accuracy().unwrap();
    assert!((acc - 88.9).abs() < 0.05, "{acc}");
}

#[test]
fn steel_matrix_reproduces_printed_percentages() {
    let cm = steel();
    check(
        &cm,
        &[72.3, 87.3, 66.3, 70.6, 86.7, 98.1],
        &[84.4, 70.8, 81.0, 87.4, 76.5, 94.2],
    );
}

#[test]
fn steel_matrix_accuracy_is_within_rounding_of_caption() {
    let cm = steel();
    assert_eq!((cm.trace(), cm.total()), (1108, 1376));
    let acc = cm.accuracy().unwrap();
    assert!((acc - 0.804).abs() < 0.005, "{acc}");
    assert_eq!(cm.accuracy_ratio().unwrap().percent(), "80.5%");
}

#[test]
fn steel_key_class_aggregates() {
    let cm = steel();
    let key = [1, 2, 3, 4];
    let min_row = cm.key_class_aggregate(&key, Stat::Recall, Reduce::Min).unwrap();
    assert!((min_row - 0.663).abs() < 5e-4);
    let min_col = cm.key_class_aggregate(&key, Stat::Precision, Reduce::Min).unwrap();
    assert!((min_col - 0.708).abs() < 5e-4);
    let mean_row = cm.key_class_aggregate(&key, Stat::Recall, Reduce::Mean).unwrap();
    assert!((mean_row - 0.777).abs() < 5e-4, "{mean_row}");
    let mean_col = cm.key_class_aggregate(&key, Stat::Precision, Reduce::Mean).unwrap();
    assert!((mean_col - 0.789).abs() < 5e-4, "{mean_col}");
    // normal-class row and column statistics
    assert!((cm.recall(0).unwrap() - 0.723).abs() < 5e-4);
    assert!((cm.precision(0).unwrap() - 0.844).abs() < 5e-4);
}
