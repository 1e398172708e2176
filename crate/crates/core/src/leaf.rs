//! Conjugate leaf models.
//!
//! A leaf model supplies the node-local marginal likelihood
//! `log ∫ Π p(y|θ) p(θ) dθ`, the one-step posterior predictive, and count
//! bookkeeping. The inference engines only go through [`LeafState`], so a new
//! conjugate family only needs a new [`LeafPrior`] variant here.
//!
//! The Bernoulli–Beta family:
//! - prior `θ ~ Beta(α, β)`, likelihood `y | θ ~ Bernoulli(θ)`
//! - marginal after `c1` ones and `c0` zeros: `B(α + c1, β + c0) / B(α, β)`
//! - predictive: `P(y = 1) = (α + c1) / (α + β + c0 + c1)`

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const BERNOULLI_BETA: &str = "bernoulli_beta";

#[inline]
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Prior hyperparameters of one node's leaf parameter `θ_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LeafPrior {
    BernoulliBeta { alpha: f64, beta: f64 },
}

impl Default for LeafPrior {
    fn default() -> Self {
        Self::BernoulliBeta {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LeafPrior {
    pub fn bernoulli_beta(alpha: f64, beta: f64) -> Result<Self> {
        let prior = Self::BernoulliBeta { alpha, beta };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::BernoulliBeta { alpha, beta } => {
                if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
                    return Err(Error::InvalidHyperparameter(format!(
                        "Beta prior needs finite alpha > 0 and beta > 0, got ({alpha}, {beta})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::BernoulliBeta { .. } => BERNOULLI_BETA,
        }
    }

    pub fn accepts(&self, y: u32) -> bool {
        match self {
            Self::BernoulliBeta { .. } => y <= 1,
        }
    }

    pub(crate) fn check(&self, y: u32, row: usize) -> Result<()> {
        if self.accepts(y) {
            Ok(())
        } else {
            Err(Error::Observation {
                row,
                value: i64::from(y),
                family: self.family(),
            })
        }
    }

    pub fn empty_state(self) -> LeafState {
        LeafState {
            prior: self,
            counts: [0, 0],
        }
    }

    /// `log ∫ Π_{y ∈ ys} p(y|θ) p(θ) dθ` with this prior as the measure.
    /// The empty multiset has marginal 1.
    pub fn log_marginal(&self, ys: &[u32]) -> Result<f64> {
        Ok(self.empty_state().absorb(ys)?.absorbed_log_marginal())
    }

    /// Bit pattern of the hyperparameters, used as a memo key.
    pub(crate) fn key(&self) -> (u64, u64) {
        match *self {
            Self::BernoulliBeta { alpha, beta } => (alpha.to_bits(), beta.to_bits()),
        }
    }
}

/// A node's leaf model: its prior plus the counts absorbed so far.
///
/// Counts are the sufficient statistics, so the state only depends on the
/// multiset of observations, never their order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafState {
    prior: LeafPrior,
    counts: [u64; 2],
}

impl LeafState {
    pub fn prior(&self) -> LeafPrior {
        self.prior
    }

    /// Observation counts indexed by label.
    pub fn counts(&self) -> [u64; 2] {
        self.counts
    }

    pub fn count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub(crate) fn from_counts(prior: LeafPrior, counts: [u64; 2]) -> Self {
        Self { prior, counts }
    }

    /// Conjugate posterior hyperparameters.
    pub fn posterior(&self) -> LeafPrior {
        match self.prior {
            LeafPrior::BernoulliBeta { alpha, beta } => LeafPrior::BernoulliBeta {
                alpha: alpha + self.counts[1] as f64,
                beta: beta + self.counts[0] as f64,
            },
        }
    }

    /// Marginal likelihood of everything absorbed, integrated against the prior.
    pub fn absorbed_log_marginal(&self) -> f64 {
        if self.count() == 0 {
            return 0.0;
        }
        match (self.prior, self.posterior()) {
            (
                LeafPrior::BernoulliBeta { alpha, beta },
                LeafPrior::BernoulliBeta {
                    alpha: post_alpha,
                    beta: post_beta,
                },
            ) => ln_beta(post_alpha, post_beta) - ln_beta(alpha, beta),
        }
    }

    /// Marginal likelihood of `ys` integrated against this state's posterior.
    pub fn log_marginal(&self, ys: &[u32]) -> Result<f64> {
        let base = self.absorbed_log_marginal();
        Ok(self.absorb(ys)?.absorbed_log_marginal() - base)
    }

    /// One-step posterior predictive `log p(y | absorbed data)`.
    pub fn log_predictive(&self, y: u32) -> Result<f64> {
        self.prior.check(y, 1)?;
        Ok(self.log_predictive_unchecked(y))
    }

    #[inline]
    pub(crate) fn log_predictive_unchecked(&self, y: u32) -> f64 {
        match self.prior {
            LeafPrior::BernoulliBeta { alpha, beta } => {
                let n = (self.counts[0] + self.counts[1]) as f64;
                let hit = if y == 1 {
                    alpha + self.counts[1] as f64
                } else {
                    beta + self.counts[0] as f64
                };
                (hit / (alpha + beta + n)).ln()
            }
        }
    }

    pub fn predictive(&self) -> Predictive {
        match self.posterior() {
            LeafPrior::BernoulliBeta { alpha, beta } => Predictive::Bernoulli {
                p_one: alpha / (alpha + beta),
            },
        }
    }

    /// Conjugate update by a multiset of observations.
    pub fn absorb(&self, ys: &[u32]) -> Result<LeafState> {
        let mut next = *self;
        for (i, &y) in ys.iter().enumerate() {
            self.prior.check(y, i + 1)?;
            next.observe(y);
        }
        Ok(next)
    }

    #[inline]
    pub(crate) fn observe(&mut self, y: u32) {
        self.counts[y as usize] += 1;
    }

    pub(crate) fn merge_counts(&mut self, counts: [u64; 2]) {
        self.counts[0] += counts[0];
        self.counts[1] += counts[1];
    }
}

/// Predictive distribution over `y` for a new point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Predictive {
    Bernoulli { p_one: f64 },
}

impl Predictive {
    pub fn prob(&self, y: u32) -> f64 {
        match *self {
            Self::Bernoulli { p_one } => match y {
                1 => p_one,
                0 => 1.0 - p_one,
                _ => 0.0,
            },
        }
    }

    /// `(1 - weight) * self + weight * other`.
    pub(crate) fn mix(self, other: Predictive, weight: f64) -> Predictive {
        match (self, other) {
            (Self::Bernoulli { p_one: a }, Self::Bernoulli { p_one: b }) => Self::Bernoulli {
                p_one: (1.0 - weight) * a + weight * b,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> LeafPrior {
        LeafPrior::bernoulli_beta(1.0, 1.0).unwrap()
    }

    // Independent route for the Bernoulli–Beta marginal: Pólya-urn product.
    fn polya(alpha: f64, beta: f64, ys: &[u32]) -> f64 {
        let (mut c0, mut c1) = (0.0, 0.0);
        let mut log_p = 0.0;
        for &y in ys {
            let hit = if y == 1 { alpha + c1 } else { beta + c0 };
            log_p += (hit / (alpha + beta + c0 + c1)).ln();
            if y == 1 {
                c1 += 1.0
            } else {
                c0 += 1.0
            }
        }
        log_p
    }

    // Composite Simpson on [0, 1] of θ^{c1}(1-θ)^{c0} Beta(θ; a, b), with the
    // substitution θ = sin²(φ) to tame the endpoint singularity when a or b < 1.
    fn quadrature(alpha: f64, beta: f64, c0: u32, c1: u32) -> f64 {
        let norm = ln_beta(alpha, beta).exp();
        let a = alpha + c1 as f64;
        let b = beta + c0 as f64;
        // ∫ θ^{a-1}(1-θ)^{b-1} dθ = 2 ∫_0^{π/2} sin^{2a-1}φ cos^{2b-1}φ dφ
        let f = |phi: f64| 2.0 * phi.sin().powf(2.0 * a - 1.0) * phi.cos().powf(2.0 * b - 1.0);
        let n = 20_000;
        let h = std::f64::consts::FRAC_PI_2 / n as f64;
        let mut sum = f(0.0) + f(std::f64::consts::FRAC_PI_2);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0 / norm
    }

    #[test]
    fn empty_marginal_is_zero() {
        assert_eq!(uniform().log_marginal(&[]).unwrap(), 0.0);
    }

    #[test]
    fn marginal_examples() {
        let p = uniform();
        assert!((p.log_marginal(&[1]).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        let expected = polya(1.0, 1.0, &[1, 0]);
        assert!((expected - (1.0f64 / 6.0).ln()).abs() < 1e-15);
        assert!((p.log_marginal(&[1, 0]).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-14);
        assert!((quadrature(1.0, 1.0, 1, 1) - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn marginal_matches_quadrature() {
        for &alpha in &[0.5, 1.0, 2.0] {
            for &beta in &[0.5, 1.0, 2.0] {
                let prior = LeafPrior::bernoulli_beta(alpha, beta).unwrap();
                for c0 in 0..=10u32 {
                    for c1 in 0..=(10 - c0) {
                        let mut ys = vec![0; c0 as usize];
                        ys.extend(std::iter::repeat_n(1, c1 as usize));
                        let got = prior.log_marginal(&ys).unwrap().exp();
                        let want = quadrature(alpha, beta, c0, c1);
                        assert!(
                            (got - want).abs() < 1e-8,
                            "a={alpha} b={beta} c0={c0} c1={c1}: {got} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn predictive_examples() {
        let s = uniform().empty_state();
        assert!((s.log_predictive(1).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let s = s.absorb(&[1]).unwrap();
        assert!((s.log_predictive(1).unwrap() - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        let s = LeafPrior::bernoulli_beta(2.0, 3.0).unwrap().empty_state();
        assert!((s.log_predictive(0).unwrap() - (3.0f64 / 5.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn absorb_examples() {
        let s = uniform().empty_state().absorb(&[1, 1, 0]).unwrap();
        assert_eq!(
            s.posterior(),
            LeafPrior::BernoulliBeta {
                alpha: 3.0,
                beta: 2.0
            }
        );
        let e = uniform().empty_state();
        assert_eq!(e.absorb(&[]).unwrap(), e);
        let chained = e.absorb(&[1, 0]).unwrap().absorb(&[1]).unwrap();
        assert_eq!(chained, e.absorb(&[1, 0, 1]).unwrap());
    }

    #[test]
    fn invalid_observations_rejected() {
        let s = uniform().empty_state();
        assert!(matches!(s.log_predictive(2), Err(Error::Observation { .. })));
        assert!(matches!(s.absorb(&[0, 7]), Err(Error::Observation { row: 2, .. })));
        assert!(uniform().log_marginal(&[3]).is_err());
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(LeafPrior::bernoulli_beta(0.0, 1.0).is_err());
        assert!(LeafPrior::bernoulli_beta(1.0, -1.0).is_err());
        assert!(LeafPrior::bernoulli_beta(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn marginal_of_state_uses_posterior() {
        let s = uniform().empty_state().absorb(&[1]).unwrap();
        // p(1 | one prior 1) = 2/3
        assert!((s.log_marginal(&[1]).unwrap() - (2.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chain_rule(
                alpha in 0.1f64..5.0,
                beta in 0.1f64..5.0,
                ys in proptest::collection::vec(0u32..2, 0..40),
            ) {
                let prior = LeafPrior::bernoulli_beta(alpha, beta).unwrap();
                let mut state = prior.empty_state();
                let mut sum = 0.0;
                for &y in &ys {
                    sum += state.log_predictive(y).unwrap();
                    state = state.absorb(&[y]).unwrap();
                }
                let batch = prior.log_marginal(&ys).unwrap();
                prop_assert!((sum - batch).abs() < 1e-12, "{} vs {}", sum, batch);
                prop_assert!((polya(alpha, beta, &ys) - batch).abs() < 1e-12);
            }

            #[test]
            fn exchangeable(
                ys in proptest::collection::vec(0u32..2, 0..30),
                seed in any::<u64>(),
            ) {
                let prior = LeafPrior::bernoulli_beta(0.7, 1.3).unwrap();
                let mut shuffled = ys.clone();
                let len = shuffled.len();
                if len > 1 {
                    let mut s = seed;
                    for i in (1..len).rev() {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        shuffled.swap(i, (s >> 33) as usize % (i + 1));
                    }
                }
                prop_assert_eq!(
                    prior.log_marginal(&ys).unwrap().to_bits(),
                    prior.log_marginal(&shuffled).unwrap().to_bits()
                );
            }
        }
    }
}
