//! Shared fixtures for the benchmarks.

use mlta::{BinaryDataMatrix, MltaParameters, SlopeMatrix, Slopes};

/// Two groups over 12 variables with a common two-dimensional trait.
pub fn truth() -> MltaParameters {
    let m = 12;
    let b = vec![
        (0..m).map(|j| if j % 2 == 0 { 1.5 } else { -1.0 }).collect(),
        (0..m).map(|j| if j % 3 == 0 { -1.5 } else { 1.0 }).collect(),
    ];
    let rows: Vec<Vec<f64>> = (0..m).map(|j| vec![0.8 - 0.1 * j as f64, 0.05 * j as f64]).collect();
    let w = SlopeMatrix::from_rows(&rows, 2).expect("fixture slopes");
    MltaParameters::new(vec![0.4, 0.6], b, Slopes::Common(w)).expect("fixture parameters")
}

/// `n` rows drawn from [`truth`].
pub fn sample(n: usize) -> BinaryDataMatrix {
    mlta::simulate(&truth(), n, 11).expect("fixture sample").data
}
