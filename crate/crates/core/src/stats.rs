//! Normal-approximation confidence intervals and the exact sign test.

use serde::{Deserialize, Serialize};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    /// `None` when fewer than two observations make the spread undefined.
    pub half_width: Option<f64>,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Option<MeanCi> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z_95 * (var / n as f64).sqrt()
        });
        Some(MeanCi {
            n,
            mean,
            half_width,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width.unwrap_or(0.0)
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width.unwrap_or(0.0)
    }

    pub fn overlaps(&self, other: &MeanCi) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

/// Exact two-sided binomial sign test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub n_positive: usize,
    pub n_negative: usize,
    /// Pairs with no difference; excluded from the test.
    pub n_ties: usize,
    pub p_value: f64,
}

/// Sign test on paired differences `a[i] - b[i]`.
pub fn sign_test(differences: impl IntoIterator<Item = f64>) -> SignTest {
    let (mut plus, mut minus, mut ties) = (0, 0, 0);
    for d in differences {
        if d > 0.0 {
            plus += 1;
        } else if d < 0.0 {
            minus += 1;
        } else {
            ties += 1;
        }
    }
    SignTest {
        n_positive: plus,
        n_negative: minus,
        n_ties: ties,
        p_value: sign_test_p_value(plus, minus),
    }
}

/// `min(1, 2 P(X <= min(k, n - k)))` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p_value(n_positive: usize, n_negative: usize) -> f64 {
    let n = n_positive + n_negative;
    if n == 0 {
        return 1.0;
    }
    let k = n_positive.min(n_negative);
    // Sum C(n, i) / 2^n in log space to stay finite for large n.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}
