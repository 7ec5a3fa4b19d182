use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::data::BinaryDataMatrix;

const SCALE: f64 = 1e12;

/// Row-to-column assignment maximizing the total score of a square matrix.
pub fn max_overlap_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let g = score.len();
    if g == 0 {
        return Vec::new();
    }
    let max = score
        .iter()
        .flatten()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    // Kuhn–Munkres needs an ordered weight type.
    let weights = Matrix::from_rows(
        score
            .iter()
            .map(|row| row.iter().map(|v| (v / max * SCALE).round() as i64).collect::<Vec<_>>()),
    )
    .expect("square score matrix");
    kuhn_munkres(&weights).1
}

/// For each reference group, the group of `other` with which it shares the
/// most weighted responsibility mass. Both tables are N×G over the same rows.
pub fn align_groups(data: &BinaryDataMatrix, reference: &[f64], other: &[f64], groups: usize) -> Vec<usize> {
    let mut overlap = vec![vec![0.0; groups]; groups];
    for n in 0..data.n_rows() {
        let w = data.weight(n);
        let (r, o) = (
            &reference[n * groups..(n + 1) * groups],
            &other[n * groups..(n + 1) * groups],
        );
        for (a, ra) in r.iter().enumerate() {
            for (b, ob) in o.iter().enumerate() {
                overlap[a][b] += w * ra * ob;
            }
        }
    }
    max_overlap_assignment(&overlap)
}
