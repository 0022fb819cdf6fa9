//! Small numeric and seeding utilities shared across modules.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

/// One round of the splitmix64 finaliser; used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a hash of a string. Stable across platforms and releases, unlike
/// `std::hash::DefaultHasher`.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Mixes a parent seed with a label into a child seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(label)))
}

/// Column means and standard deviations (population). Zero-variance columns
/// report a scale of 1 so that standardising leaves them centred but finite.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnScaler {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl ColumnScaler {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &m), &xi) in var.iter_mut().zip(&mean).zip(row) {
                *v += (xi - m) * (xi - m);
            }
        }
        let scale = var.mapv(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        ColumnScaler { mean, scale }
    }

    pub fn identity(width: usize) -> Self {
        ColumnScaler {
            mean: Array1::zeros(width),
            scale: Array1::ones(width),
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        out -= &self.mean;
        out /= &self.scale;
        out
    }

    pub fn inverse(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        out *= &self.scale;
        out += &self.mean;
        out
    }
}

/// Horizontal concatenation of matrices with equal row counts. An empty
/// list yields an `n × 0` matrix.
pub fn hstack(n: usize, parts: &[ArrayView2<f64>]) -> Array2<f64> {
    if parts.is_empty() {
        return Array2::zeros((n, 0));
    }
    concatenate(Axis(1), parts).expect("row counts must agree")
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Formats `mean±std` with two decimals, the layout used by report tables.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.2}±{s:.3}")
}

/// Pearson correlation of two equally long slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    cov / (sa * sb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(derive_seed(1, "x1"), derive_seed(1, "x2"));
        assert_ne!(derive_seed(1, "x1"), derive_seed(2, "x1"));
        assert_eq!(derive_seed(5, "z"), derive_seed(5, "z"));
    }

    #[test]
    fn scaler_round_trips() {
        let x = array![[1.0, 5.0, 2.0], [3.0, 5.0, -2.0], [5.0, 5.0, 0.0]];
        let s = ColumnScaler::fit(x.view());
        let z = s.transform(x.view());
        assert!((z.column(0).sum()).abs() < 1e-12);
        assert_eq!(z.column(1).to_vec(), vec![0.0; 3]);
        let back = s.inverse(z.view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(format_mean_std(&[0.5, 0.5]), "0.50±0.000");
    }

    #[test]
    fn hstack_handles_empty() {
        assert_eq!(hstack(4, &[]).dim(), (4, 0));
        let a = array![[1.0], [2.0]];
        let b = array![[3.0, 4.0], [5.0, 6.0]];
        assert_eq!(hstack(2, &[a.view(), b.view()]), array![[1.0, 3.0, 4.0], [2.0, 5.0, 6.0]]);
    }
}
