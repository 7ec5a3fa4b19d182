/// MAP group of each row of an N×G responsibility table. Ties go to the
/// lowest group index.
pub fn classify_map(z: &[f64], groups: usize) -> Vec<usize> {
    z.chunks(groups)
        .map(|row| {
            let mut best = 0;
            for (g, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Fraction of row pairs on which two labelings agree about "same group".
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_and_ties() {
        assert_eq!(classify_map(&[0.2, 0.8, 0.5, 0.5], 2), vec![1, 0]);
        assert_eq!(classify_map(&[0.8, 0.2, 0.5, 0.5], 2), vec![0, 0]);
    }

    #[test]
    fn rand_index_ignores_label_names() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!((rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) - 2.0 / 6.0).abs() < 1e-15);
    }
}
