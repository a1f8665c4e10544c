use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One-sided paired t-test of `b > a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub n: usize,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    /// `+inf` / `-inf` when every difference is the same non-zero value.
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Pairs `runs_a[i]` with `runs_b[i]` (same seed) and tests `mean(b - a) > 0`.
pub fn paired_t_test(runs_a: &[f64], runs_b: &[f64]) -> Result<SignificanceResult> {
    if runs_a.len() != runs_b.len() {
        return Err(Error::DimensionMismatch {
            what: "paired runs",
            expected: runs_a.len(),
            actual: runs_b.len(),
        });
    }
    let n = runs_a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = runs_a.iter().zip(runs_b).map(|(a, b)| b - a).collect();
    let md = mean(&d);
    let sd = sample_std(&d);
    let df = n - 1;
    let (t, p) = if sd == 0.0 {
        if md > 0.0 {
            (f64::INFINITY, 0.0)
        } else if md < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        }
    } else {
        let t = md / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, df as f64)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (t, dist.sf(t).clamp(0.0, 1.0))
    };
    Ok(SignificanceResult {
        n,
        mean_a: mean(runs_a),
        std_a: sample_std(runs_a),
        mean_b: mean(runs_b),
        std_b: sample_std(runs_b),
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
    })
}

/// `"86.10 (0.35)"`.
pub fn format_mean_std(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$} ({std:.decimals$})")
}

/// Markdown table of `mean (std)` per model plus the one-sided p-value.
pub fn significance_markdown(
    metric: &str,
    label_a: &str,
    label_b: &str,
    rows: &[(String, SignificanceResult)],
    decimals: usize,
) -> String {
    let mut out = format!(
        "| {metric} | {label_a} | {label_b} | p-value (one-sided) |\n|---|---|---|---|\n"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {} | {} | {:.5} |\n",
            format_mean_std(r.mean_a, r.std_a, decimals),
            format_mean_std(r.mean_b, r.std_b, decimals),
            r.p_value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Upper tail of Student-t with 2 degrees of freedom has a closed form:
    /// `P(T > t) = 1/2 - t / (2 sqrt(t^2 + 2))`.
    fn upper_tail_df2(t: f64) -> f64 {
        0.5 - t / (2.0 * (t * t + 2.0).sqrt())
    }

    #[test]
    fn hand_oracle_three_pairs() {
        let r = paired_t_test(&[0.0, 0.0, 0.0], &[0.5, 0.7, 0.6]).unwrap();
        let t = 0.6 / (0.1 / 3f64.sqrt());
        assert_abs_diff_eq!(r.t_statistic, t, epsilon = 1e-9);
        assert_abs_diff_eq!(r.t_statistic, 10.392, epsilon = 1e-3);
        assert_eq!(r.degrees_of_freedom, 2);
        assert_abs_diff_eq!(r.p_value, upper_tail_df2(t), epsilon = 1e-10);
        assert_abs_diff_eq!(r.p_value, 0.00456, epsilon = 1e-4);
    }

    #[test]
    fn degenerate_cases() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.t_statistic, f64::INFINITY);
        let same = [0.81, 0.79, 0.85];
        let r = paired_t_test(&same, &same).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 0.5));
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn table_formatting() {
        assert_eq!(format_mean_std(86.1, 0.35, 2), "86.10 (0.35)");
        let r = paired_t_test(&[76.0, 76.4, 76.2], &[80.0, 80.3, 80.0]).unwrap();
        let md = significance_markdown("OOD F1", "Base", "KYC", &[("Concat".into(), r)], 1);
        assert!(md.contains("| Concat | 76.2 (0.2) | 80.1 (0.2) |"), "{md}");
    }
}
