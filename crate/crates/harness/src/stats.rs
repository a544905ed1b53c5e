//! Small descriptive statistics used by the reports.

/// z value for a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two
/// values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean with a normal-approximation 95% interval `mean ± 1.96 sd / sqrt(n)`.
pub fn mean_ci(xs: &[f64]) -> (f64, f64, f64) {
    let m = mean(xs);
    let half = Z95 * sample_sd(xs) / (xs.len() as f64).sqrt();
    (m, m - half, m + half)
}

/// Linear-interpolation quantile (R type 7). `xs` need not be sorted.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Box-plot numbers: quartiles plus whiskers at the most extreme values
/// within 1.5 IQR of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn of(xs: &[f64]) -> Self {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q25 = quantile_sorted(&v, 0.25);
        let q75 = quantile_sorted(&v, 0.75);
        let iqr = q75 - q25;
        let (lo, hi) = (q25 - 1.5 * iqr, q75 + 1.5 * iqr);
        let inside = || v.iter().copied().filter(|x| *x >= lo && *x <= hi);
        BoxStats {
            q25,
            median: quantile_sorted(&v, 0.5),
            q75,
            min: inside().fold(f64::NAN, f64::min),
            max: inside().fold(f64::NAN, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantiles_by_hand() {
        // Sorted: 1 2 4 7 100. h = 4p.
        let xs = [7.0, 1.0, 100.0, 4.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&xs, 0.5), 4.0);
        assert_eq!(quantile(&xs, 0.75), 7.0);
        assert_eq!(quantile(&xs, 1.0), 100.0);
        // h = 4 * 0.1 = 0.4 -> 1 + 0.4 * (2 - 1)
        assert!((quantile(&xs, 0.1) - 1.4).abs() < 1e-12);
        // IQR = 5, fences [-5.5, 14.5]: 100 is an outlier.
        let b = BoxStats::of(&xs);
        assert_eq!((b.q25, b.median, b.q75, b.min, b.max), (2.0, 4.0, 7.0, 1.0, 7.0));
    }

    #[test]
    fn even_count_median_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        // h = 3 * 0.25 = 0.75 -> 1 + 0.75
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.25), 1.75);
    }

    #[test]
    fn ci_by_hand() {
        // mean 5, deviations -3 -1 1 3, ss 20, var 20/3.
        let (m, lo, hi) = mean_ci(&[2.0, 4.0, 6.0, 8.0]);
        let half = 1.96 * (20.0f64 / 3.0).sqrt() / 2.0;
        assert_eq!(m, 5.0);
        assert!((hi - m - half).abs() < 1e-12);
        assert!((m - lo - half).abs() < 1e-12);
        assert_eq!(mean_ci(&[3.5]), (3.5, 3.5, 3.5));
    }

    proptest! {
        #[test]
        fn quartiles_are_ordered(xs in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let b = BoxStats::of(&xs);
            prop_assert!(b.q25 <= b.median && b.median <= b.q75);
            // Whiskers are data points inside the fences and bound every
            // other such point. They may fall inside the box.
            let iqr = b.q75 - b.q25;
            let (lo, hi) = (b.q25 - 1.5 * iqr, b.q75 + 1.5 * iqr);
            prop_assert!(xs.contains(&b.min) && xs.contains(&b.max));
            prop_assert!(lo <= b.min && b.min <= b.max && b.max <= hi);
            for x in xs.iter().filter(|x| **x >= lo && **x <= hi) {
                prop_assert!(b.min <= *x && *x <= b.max);
            }
        }
    }
}
