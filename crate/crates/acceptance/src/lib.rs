//! Acceptance criteria for `likecloak`.
//!
//! The oracles here recompute quantities the library derives, by brute force
//! or from first principles, without calling the code under test. The runner
//! prints one line per criterion with the measured value and its tolerance.

use std::time::{Duration, Instant};

use likecloak::corpus::SynthSpec;

/// The 5,000 x 2,000 corpus at 1% density used by the effort and randomization criteria.
pub fn reference_spec() -> SynthSpec {
    SynthSpec {
        n_users: 5000,
        n_items: 2000,
        sparsity: 0.01,
        trait_prevalence: 0.2,
        n_informative: 200,
        lift: 4.0,
        duplication_factor: 1,
        seed: 7,
    }
}

/// Ten planted traits over one population, for the true/false-positive criterion.
pub fn tpfp_spec() -> SynthSpec {
    SynthSpec {
        n_users: 5000,
        n_items: 2000,
        sparsity: 0.01,
        trait_prevalence: 0.1,
        n_informative: 100,
        lift: 4.0,
        duplication_factor: 1,
        seed: 11,
    }
}

/// Base corpus of the duplication sweep; `duplication_factor` is overridden per point.
pub fn duplication_spec() -> SynthSpec {
    SynthSpec {
        trait_prevalence: 0.1,
        n_informative: 100,
        ..reference_spec()
    }
}

/// Criteria that cannot pass under this build's synthetic data. They still run
/// and print FAIL, but do not fail the target. See the README.
pub const KNOWN_UNATTAINABLE: &[&str] = &["nb-double-counting"];

/// Smallest number of removals from `row` that brings `bias + sum(weights)`
/// to at most `cutoff`, by enumerating every subset. `None` if no subset does.
pub fn exhaustive_min_removals(bias: f64, weights: &[f64], row: &[usize], cutoff: f64) -> Option<usize> {
    assert!(row.len() <= 20, "exhaustive search over {} items", row.len());
    let mut best: Option<usize> = None;
    for mask in 0u32..1 << row.len() {
        let k = mask.count_ones() as usize;
        if best.is_some_and(|b| b <= k) {
            continue;
        }
        let mut s = bias;
        for (pos, &j) in row.iter().enumerate() {
            if mask >> pos & 1 == 0 {
                s += weights[j];
            }
        }
        if s <= cutoff {
            best = Some(k);
        }
    }
    best
}

/// Bernoulli naive Bayes log-odds of `x` computed from counts, with add-`alpha`
/// smoothing on every item probability and the empirical class prior.
pub fn naive_bayes_log_odds(rows: &[Vec<usize>], labels: &[bool], n_items: usize, alpha: f64, x: &[bool]) -> f64 {
    let n1 = labels.iter().filter(|&&y| y).count() as f64;
    let n0 = labels.len() as f64 - n1;
    let mut c1 = vec![0.0; n_items];
    let mut c0 = vec![0.0; n_items];
    for (row, &y) in rows.iter().zip(labels) {
        let c = if y { &mut c1 } else { &mut c0 };
        for &j in row {
            c[j] += 1.0;
        }
    }
    let mut z = (n1 / n0).ln();
    for j in 0..n_items {
        let p1 = (c1[j] + alpha) / (n1 + 2.0 * alpha);
        let p0 = (c0[j] + alpha) / (n0 + 2.0 * alpha);
        z += if x[j] {
            (p1 / p0).ln()
        } else {
            ((1.0 - p1) / (1.0 - p0)).ln()
        };
    }
    z
}

/// Central difference of `f` along coordinate `k`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], k: usize, h: f64) -> f64 {
    let mut up = theta.to_vec();
    let mut down = theta.to_vec();
    up[k] += h;
    down[k] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub tolerance: &'static str,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Outcome {
    pub fn known_unattainable(&self) -> bool {
        KNOWN_UNATTAINABLE.contains(&self.name)
    }

    pub fn line(&self) -> String {
        let verdict = match (self.passed, self.known_unattainable()) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known limitation)",
        };
        format!(
            "{verdict} {}: {} | tolerance: {} | {:.1}s of {}s",
            self.name,
            self.measured,
            self.tolerance,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

/// Runs criteria in order and prints each line as soon as it is known.
#[derive(Debug, Default)]
pub struct Runner {
    pub outcomes: Vec<Outcome>,
}

impl Runner {
    /// `check` returns whether the criterion holds and a description of what was
    /// measured. Exceeding `budget` fails the criterion; an `Err` fails it too.
    pub fn run(
        &mut self,
        name: &'static str,
        tolerance: &'static str,
        budget: Duration,
        check: impl FnOnce() -> Result<(bool, String), String>,
    ) {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (ok, measured) = match result {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let outcome = Outcome {
            name,
            passed: ok && elapsed <= budget,
            measured,
            tolerance,
            elapsed,
            budget,
        };
        println!("{}", outcome.line());
        self.outcomes.push(outcome);
    }

    /// Failures that are not documented as unattainable.
    pub fn unexpected_failures(&self) -> Vec<&Outcome> {
        self.outcomes
            .iter()
            .filter(|o| !o.passed && !o.known_unattainable())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_search_small_cases() {
        let w = [3.0, 2.0, 1.0, -1.0];
        assert_eq!(exhaustive_min_removals(0.0, &w, &[0, 1, 2], 3.5), Some(1));
        assert_eq!(exhaustive_min_removals(0.0, &w, &[0, 1, 2], 2.5), Some(2));
        assert_eq!(exhaustive_min_removals(0.0, &w, &[0, 1, 2], 0.5), Some(3));
        assert_eq!(exhaustive_min_removals(0.0, &w, &[0, 1, 2], 7.0), Some(0));
        assert_eq!(exhaustive_min_removals(1.0, &w, &[0], 0.5), None);
    }

    #[test]
    fn naive_bayes_oracle_on_a_hand_count() {
        // Two positives liking item 0, two negatives liking nothing.
        let rows = vec![vec![0], vec![0], vec![], vec![]];
        let labels = [true, true, false, false];
        let z = naive_bayes_log_odds(&rows, &labels, 1, 1.0, &[true]);
        // p1 = 3/4, p0 = 1/4, equal priors.
        assert!((z - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_a_quadratic() {
        let d = central_difference(|t| t[0] * t[0] + 3.0 * t[1], &[2.0, 1.0], 0, 1e-4);
        assert!((d - 4.0).abs() < 1e-8);
    }
}
