//! Bernoulli naive Bayes folded into additive log-odds form.
//!
//! With `p_j(c) = P(x_j = 1 | c)` the log posterior odds of a binary row is
//!
//! ```text
//! log P(+)/P(-) + sum_j [ x_j log(p_j(+)/p_j(-)) + (1 - x_j) log((1-p_j(+))/(1-p_j(-))) ]
//! ```
//!
//! which rearranges into a bias (prior plus every absence term) and one weight
//! per item that is only paid when the item is Liked.

/// Smoothed class-conditional Like probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliCounts {
    pub n_positive: usize,
    pub n_negative: usize,
    pub positive_counts: Vec<usize>,
    pub negative_counts: Vec<usize>,
    pub smoothing: f64,
}

impl BernoulliCounts {
    pub fn from_rows(rows: &[&[usize]], labels: &[bool], n_items: usize, smoothing: f64) -> Self {
        let mut positive_counts = vec![0; n_items];
        let mut negative_counts = vec![0; n_items];
        let mut n_positive = 0;
        for (row, &y) in rows.iter().zip(labels) {
            let counts = if y {
                n_positive += 1;
                &mut positive_counts
            } else {
                &mut negative_counts
            };
            for &j in row.iter() {
                counts[j] += 1;
            }
        }
        BernoulliCounts {
            n_positive,
            n_negative: labels.len() - n_positive,
            positive_counts,
            negative_counts,
            smoothing,
        }
    }

    /// `ln P(x_j = 1 | class)` and `ln P(x_j = 0 | class)`.
    pub fn log_probs(&self, j: usize, positive: bool) -> (f64, f64) {
        let (count, n) = if positive {
            (self.positive_counts[j], self.n_positive)
        } else {
            (self.negative_counts[j], self.n_negative)
        };
        let denom = n as f64 + 2.0 * self.smoothing;
        let present = (count as f64 + self.smoothing) / denom;
        let absent = ((n - count) as f64 + self.smoothing) / denom;
        (present.ln(), absent.ln())
    }

    pub fn prior_log_odds(&self) -> f64 {
        (self.n_positive as f64 / self.n_negative as f64).ln()
    }

    /// `(bias, weights)` of the equivalent additive score.
    pub fn additive_form(&self) -> (f64, Vec<f64>) {
        let n_items = self.positive_counts.len();
        let mut bias = self.prior_log_odds();
        let mut weights = Vec::with_capacity(n_items);
        for j in 0..n_items {
            let (p1, p0) = self.log_probs(j, true);
            let (n1, n0) = self.log_probs(j, false);
            weights.push((p1 - n1) - (p0 - n0));
            bias += p0 - n0;
        }
        (bias, weights)
    }
}
