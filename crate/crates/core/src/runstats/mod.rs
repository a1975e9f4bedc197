//! Closed-form run statistics, certificate scales and noise thresholds.
//!
//! Powers of probabilities are evaluated in log space (`k * ln p` via `ln_1p`,
//! then `expm1`) so noise loads `q * M_H` up to several hundred stay finite.

pub mod markov;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmlError};
use crate::noise::NoiseModel;

pub use markov::RunChain;

/// Waiting time `X_k(p)` for `k` consecutive successes in i.i.d. Bernoulli(`p`) trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunQuery {
    pub p: f64,
    pub k: u64,
}

impl RunQuery {
    pub fn new(p: f64, k: u64) -> Result<Self> {
        if p == 0.0 {
            return Err(SsmlError::Infeasible(
                "success probability 0 never produces a run".into(),
            ));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(SsmlError::param(format!("success probability {p} must lie in (0, 1]")));
        }
        if k == 0 {
            return Err(SsmlError::param("run length k must be >= 1"));
        }
        Ok(Self { p, k })
    }

    /// `k ln p`, accurate for `p` close to one.
    fn log_pk(&self) -> f64 {
        self.k as f64 * (-(1.0 - self.p)).ln_1p()
    }

    pub fn report(&self) -> RunStatsReport {
        RunStatsReport {
            query: *self,
            mean: run_mean(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStatsReport {
    pub query: RunQuery,
    pub mean: f64,
}

impl RunStatsReport {
    pub fn tail_at(&self, n: u64) -> f64 {
        run_tail_bound(&self.query, n)
    }

    pub fn quantile_sufficient(&self, delta: f64) -> Result<u64> {
        quantile_sufficient_shots(&self.query, delta)
    }
}

/// `E[X_k(p)] = (1 - p^k) / ((1 - p) p^k)`, equal to `k` at `p = 1`.
pub fn run_mean(q: &RunQuery) -> f64 {
    if q.p == 1.0 {
        return q.k as f64;
    }
    // (1 - p^k) / p^k = p^{-k} - 1
    (-q.log_pk()).exp_m1() / (1.0 - q.p)
}

/// Block bound `P(X_k > N) <= (1 - p^k)^floor(N / k)`.
pub fn run_tail_bound(q: &RunQuery, n: u64) -> f64 {
    let blocks = n / q.k;
    if blocks == 0 {
        return 1.0;
    }
    let miss = -q.log_pk().exp_m1(); // 1 - p^k
    if miss == 0.0 {
        return 0.0;
    }
    (blocks as f64 * miss.ln()).exp()
}

/// Exact survival function `P(X_k > n)`, `n = 0..=n_max`, from the Markov chain.
pub fn run_waiting_distribution(q: &RunQuery, n_max: usize) -> Result<Vec<f64>> {
    Ok(RunChain::new(q.p, q.k as usize)?.survival(n_max))
}

/// Exact mean from the chain's first-step equations.
pub fn run_waiting_mean_exact(q: &RunQuery) -> Result<f64> {
    Ok(RunChain::new(q.p, q.k as usize)?.mean())
}

fn check_probability(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(SsmlError::param(format!("{name} = {x} must lie in [0, 1]")));
    }
    Ok(())
}

/// Probability that a frozen control of fidelity `f` yields `mh` consecutive successes.
pub fn certificate_prob(f: f64, mh: u64) -> Result<f64> {
    check_probability("fidelity", f)?;
    if mh == 0 {
        return Err(SsmlError::param("halting threshold must be >= 1"));
    }
    Ok(f.powf(mh as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateQuery {
    pub mh: u64,
    pub delta: f64,
    /// Label-flip probability; 0 for the noiseless certificate.
    pub q: f64,
}

impl CertificateQuery {
    pub fn new(mh: u64, delta: f64, q: f64) -> Result<Self> {
        if mh == 0 {
            return Err(SsmlError::param("halting threshold must be >= 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SsmlError::param(format!("delta = {delta} must lie in (0, 1)")));
        }
        if !(0.0..0.5).contains(&q) {
            return Err(SsmlError::param(format!("q = {q} must lie in [0, 0.5)")));
        }
        Ok(Self { mh, delta, q })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertScale {
    pub exact: f64,
    /// Large-threshold approximation.
    pub approx: f64,
}

/// `1 - delta^(1/M_H)`, the infidelity excluded at confidence `1 - delta` by a halt.
pub fn eps_cert(mh: u64, delta: f64) -> Result<CertScale> {
    let cq = CertificateQuery::new(mh, delta, 0.0)?;
    Ok(eps_cert_unchecked(cq.mh, cq.delta))
}

fn eps_cert_unchecked(mh: u64, delta: f64) -> CertScale {
    let log_delta = delta.ln();
    CertScale {
        exact: -(log_delta / mh as f64).exp_m1(),
        approx: -log_delta / mh as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NoiseCert {
    Scale(CertScale),
    /// Halting no longer certifies any infidelity level.
    Ceiling,
}

/// `(1 - q - delta^(1/M_H)) / (1 - 2q)`, or [`NoiseCert::Ceiling`] when that is `<= 0`.
pub fn noise_cert_eps(cq: &CertificateQuery) -> Result<NoiseCert> {
    let cq = CertificateQuery::new(cq.mh, cq.delta, cq.q)?;
    let base = eps_cert_unchecked(cq.mh, cq.delta);
    // 1 - q - delta^{1/M_H} = eps_cert - q
    let numer = base.exact - cq.q;
    if numer <= 0.0 {
        return Ok(NoiseCert::Ceiling);
    }
    let scale = 1.0 - 2.0 * cq.q;
    Ok(NoiseCert::Scale(CertScale {
        exact: numer / scale,
        approx: (base.approx - cq.q) / scale,
    }))
}

/// Recorded-success probability of a control with true fidelity `f`.
pub fn effective_success(f: f64, noise: NoiseModel) -> Result<f64> {
    check_probability("fidelity", f)?;
    Ok(noise.effective_success(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupMean {
    /// `E[X_{M_H}(1 - q)]`.
    pub exact: f64,
    /// `(e^{q M_H} - 1) / q`.
    pub asymptotic: f64,
}

/// Lower bound on the expected halting time under label noise `q`: the best
/// case waiting time for `mh` consecutive successes at `p = 1 - q`.
pub fn noise_blowup_mean(q: f64, mh: u64) -> Result<BlowupMean> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SsmlError::param(format!("q = {q} must lie in (0, 1)")));
    }
    let exact = run_mean(&RunQuery::new(1.0 - q, mh)?);
    Ok(BlowupMean {
        exact,
        asymptotic: (q * mh as f64).exp_m1() / q,
    })
}

/// Smallest `N` with `run_tail_bound(q, N) <= delta`.
pub fn quantile_sufficient_shots(q: &RunQuery, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SsmlError::param(format!("delta = {delta} must lie in (0, 1)")));
    }
    if q.p == 1.0 {
        return Ok(q.k);
    }
    let miss = -q.log_pk().exp_m1();
    if miss >= 1.0 {
        return Err(SsmlError::Infeasible("p^k underflows to zero".into()));
    }
    // Only whole blocks count, so the answer is a multiple of k. Start from the
    // log estimate and step to the exact boundary.
    let estimate = (delta.ln() / miss.ln()).ceil().max(1.0);
    if !estimate.is_finite() || estimate * q.k as f64 > u64::MAX as f64 / 2.0 {
        return Err(SsmlError::Infeasible("required shots exceed u64 range".into()));
    }
    let mut blocks = estimate as u64;
    while blocks > 1 && run_tail_bound(q, (blocks - 1) * q.k) <= delta {
        blocks -= 1;
    }
    while run_tail_bound(q, blocks * q.k) > delta {
        blocks += 1;
    }
    Ok(blocks * q.k)
}

/// High-confidence scaling `(k / p^k) ln(1/delta)`.
pub fn quantile_scaling(q: &RunQuery, delta: f64) -> f64 {
    q.k as f64 * (-q.log_pk()).exp() * (1.0 / delta).ln()
}

/// Infidelity estimate `1 / (1 + M_S)` from the current run length.
pub fn ms_proxy(ms: u64) -> f64 {
    1.0 / (1.0 + ms as f64)
}

/// `P(L = l) = (1 - eps)^l eps` for the success-run length under a frozen control.
pub fn geometric_run_pmf(eps: f64, l: u64) -> Result<f64> {
    check_run_eps(eps)?;
    Ok((1.0 - eps).powf(l as f64) * eps)
}

/// `E[L] = 1/eps - 1`.
pub fn geometric_run_mean(eps: f64) -> Result<f64> {
    check_run_eps(eps)?;
    Ok(1.0 / eps - 1.0)
}

fn check_run_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SsmlError::param(format!("infidelity {eps} must lie in (0, 1]")));
    }
    Ok(())
}

/// `E[tau_eps] + E[X_{M_H}(1 - eps)]`, the search-plus-certification bound on `E[T]`.
pub fn decomposition_upper(tau_mean: f64, eps: f64, mh: u64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(SsmlError::param(format!("infidelity level {eps} must lie in [0, 1)")));
    }
    if tau_mean.is_nan() || tau_mean < 0.0 {
        return Err(SsmlError::param(format!("mean hitting time {tau_mean} must be >= 0")));
    }
    Ok(tau_mean + run_mean(&RunQuery::new(1.0 - eps, mh)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rq(p: f64, k: u64) -> RunQuery {
        RunQuery::new(p, k).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn run_mean_examples() {
        for p in [0.1, 0.5, 0.77] {
            assert!(rel(run_mean(&rq(p, 1)), 1.0 / p) < 1e-14);
        }
        assert_eq!(run_mean(&rq(1.0, 7)), 7.0);
        assert!(rel(run_mean(&rq(0.5, 2)), 6.0) < 1e-15);
        assert!(matches!(RunQuery::new(0.0, 3), Err(SsmlError::Infeasible(_))));
        assert!(RunQuery::new(1.2, 3).is_err());
        assert!(RunQuery::new(0.5, 0).is_err());
    }

    #[test]
    fn tail_examples() {
        assert_eq!(run_tail_bound(&rq(0.5, 5), 4), 1.0);
        assert_eq!(run_tail_bound(&rq(1.0, 5), 5), 0.0);
        assert_eq!(run_tail_bound(&rq(1.0, 5), 4), 1.0);
        assert!((run_tail_bound(&rq(0.5, 2), 4) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn certificate_examples() {
        assert_eq!(certificate_prob(1.0, 50).unwrap(), 1.0);
        assert_eq!(certificate_prob(0.37, 1).unwrap(), 0.37);
        // 0.9^10 by repeated multiplication
        let mut oracle = 1.0;
        for _ in 0..10 {
            oracle *= 0.9;
        }
        assert!((certificate_prob(0.9, 10).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.3487).abs() < 1e-4);
        assert!(certificate_prob(1.1, 3).is_err());
    }

    #[test]
    fn eps_cert_examples() {
        assert!(eps_cert(10, 1.0 - 1e-15).unwrap().exact < 1e-15);
        assert!((eps_cert(1, 0.05).unwrap().exact - 0.95).abs() < 1e-15);
        let e = eps_cert(100, 0.05).unwrap();
        assert!((e.exact - 0.029_513_049_607).abs() < 1e-12, "{}", e.exact);
        assert!((e.approx - (20.0_f64).ln() / 100.0).abs() < 1e-15);
        assert!(eps_cert(10, 1.0).is_err());
        assert!(eps_cert(0, 0.5).is_err());
    }

    #[test]
    fn effective_success_examples() {
        assert_eq!(effective_success(0.42, NoiseModel::None).unwrap(), 0.42);
        assert_eq!(effective_success(0.42, NoiseModel::Bsc(0.0)).unwrap(), 0.42);
        for f in [0.0, 0.3, 1.0] {
            assert_eq!(effective_success(f, NoiseModel::Bsc(0.5)).unwrap(), 0.5);
        }
        assert!((effective_success(1.0, NoiseModel::FalseNegative(0.1)).unwrap() - 0.9).abs() < 1e-15);
        for q in [0.01, 0.2, 0.49] {
            assert!(effective_success(1.0, NoiseModel::Bsc(q)).unwrap() <= 1.0 - q + 1e-15);
            assert!(effective_success(1.0, NoiseModel::FalseNegative(q)).unwrap() <= 1.0 - q + 1e-15);
        }
    }

    #[test]
    fn blowup_examples() {
        let b = noise_blowup_mean(0.05, 100).unwrap();
        assert_eq!(b.exact, run_mean(&rq(0.95, 100)));
        // exact form grows like e^{-M ln(1-q)}, faster than e^{qM}
        assert!((b.asymptotic - (5.0_f64.exp() - 1.0) / 0.05).abs() < 1e-9);
        let gap = b.exact / b.asymptotic - 1.0;
        assert!(gap > 0.0 && gap < 0.15, "{gap}");

        let small = noise_blowup_mean(0.0001, 100).unwrap();
        assert!(rel(small.exact, 100.0) < 0.01);
        assert!(noise_blowup_mean(0.0, 10).is_err());
    }

    #[test]
    fn noise_cert_examples() {
        let q0 = noise_cert_eps(&CertificateQuery::new(100, 0.05, 0.0).unwrap()).unwrap();
        assert_eq!(q0, NoiseCert::Scale(eps_cert(100, 0.05).unwrap()));
        let NoiseCert::Scale(s) = noise_cert_eps(&CertificateQuery::new(100, 0.05, 0.01).unwrap()).unwrap() else {
            panic!("expected a scale");
        };
        let oracle = (0.99 - 0.05_f64.powf(0.01)) / 0.98;
        assert!((s.exact - oracle).abs() < 1e-14);
        assert!((s.exact - 0.0199).abs() < 1e-4);
        let threshold = eps_cert(100, 0.05).unwrap().exact;
        let cq = CertificateQuery::new(100, 0.05, threshold).unwrap();
        assert_eq!(noise_cert_eps(&cq).unwrap(), NoiseCert::Ceiling);
        let cq = CertificateQuery::new(100, 0.05, 0.2).unwrap();
        assert_eq!(noise_cert_eps(&cq).unwrap(), NoiseCert::Ceiling);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_sufficient_shots(&rq(1.0, 9), 0.01).unwrap(), 9);
        // one block suffices when delta >= 1 - p^k
        let q = rq(0.8, 3);
        let miss = 1.0 - 0.8_f64.powi(3);
        assert_eq!(quantile_sufficient_shots(&q, miss + 1e-9).unwrap(), 3);
        assert_eq!(quantile_sufficient_shots(&q, miss - 1e-9).unwrap(), 6);
    }

    #[test]
    fn quantile_by_direct_search() {
        let q = rq(0.9, 5);
        let delta = 0.01;
        let brute = (1..)
            .find(|&n| run_tail_bound(&q, n) <= delta)
            .unwrap();
        assert_eq!(quantile_sufficient_shots(&q, delta).unwrap(), brute);
        let mut prev = u64::MAX;
        for p in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
            let n = quantile_sufficient_shots(&rq(p, 5), delta).unwrap();
            assert!(n <= prev);
            prev = n;
        }
        // consistent with the (k / p^k) ln(1/delta) scaling within a block and a factor
        let approx = quantile_scaling(&q, delta);
        let n = quantile_sufficient_shots(&q, delta).unwrap() as f64;
        assert!(n <= approx + 5.0 && n >= 0.5 * approx, "{n} vs {approx}");
    }

    #[test]
    fn proxy_and_geometric() {
        assert_eq!(ms_proxy(0), 1.0);
        assert_eq!(ms_proxy(99), 0.01);
        let eps = 0.125;
        assert_eq!(ms_proxy(geometric_run_mean(eps).unwrap() as u64), eps);
        assert_eq!(geometric_run_pmf(0.3, 0).unwrap(), 0.3);
        assert_eq!(geometric_run_pmf(0.5, 2).unwrap(), 0.125);
        assert!(geometric_run_pmf(0.0, 1).is_err());
        for eps in [0.01, 0.3, 1.0] {
            let n = 2000;
            let head: f64 = (0..n).map(|l| geometric_run_pmf(eps, l).unwrap()).sum();
            let tail = (1.0 - eps).powi(n as i32);
            assert!((head + tail - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn decomposition_examples() {
        assert!((decomposition_upper(0.0, 1e-12, 40).unwrap() - 40.0).abs() < 1e-6);
        assert_eq!(decomposition_upper(0.0, 0.0, 40).unwrap(), 40.0);
        let v = decomposition_upper(500.0, 0.01, 100).unwrap();
        assert!((v - 500.0 - run_mean(&rq(0.99, 100))).abs() < 1e-9 * v);
        assert!(decomposition_upper(1.0, 1.0, 10).is_err());
    }

    #[test]
    fn regime_dichotomy() {
        for (q, mh) in [(0.001, 100u64), (0.0001, 1000), (0.01, 10)] {
            let r = noise_blowup_mean(q, mh).unwrap().exact / mh as f64;
            assert!((1.0..=1.06).contains(&r), "{q} {mh} {r}");
        }
        for (q, mh) in [(0.01, 500u64), (0.05, 200), (0.001, 10_000), (0.1, 300)] {
            let v = noise_blowup_mean(q, mh).unwrap().exact;
            assert!(v >= (q * mh as f64).exp() / (2.0 * q));
        }
    }

    #[test]
    fn oracle_agreement_grid() {
        for p in [0.3, 0.5, 0.9, 0.99, 0.999] {
            for k in 1..=20 {
                let q = rq(p, k);
                let oracle = run_waiting_mean_exact(&q).unwrap();
                assert!(rel(run_mean(&q), oracle) <= 1e-12, "p={p} k={k}");
            }
        }
    }

    proptest! {
        #[test]
        fn mean_monotone(p in 0.05f64..0.99, dp in 0.001f64..0.01, k in 1u64..40) {
            let p2 = (p + dp).min(1.0);
            prop_assert!(run_mean(&rq(p2, k)) < run_mean(&rq(p, k)));
            prop_assert!(run_mean(&rq(p, k + 1)) > run_mean(&rq(p, k)));
            prop_assert!(run_mean(&rq(p, k)) >= k as f64);
        }

        #[test]
        fn blowup_monotone_in_q(q in 0.001f64..0.4, mh in 1u64..500) {
            let a = noise_blowup_mean(q, mh).unwrap().exact;
            let b = noise_blowup_mean(q * 1.01, mh).unwrap().exact;
            prop_assert!(b > a);
        }

        #[test]
        fn tail_non_increasing(p in 0.05f64..1.0, k in 1u64..30, n in 0u64..500) {
            let q = rq(p, k);
            prop_assert!(run_tail_bound(&q, n + 1) <= run_tail_bound(&q, n));
        }

        #[test]
        fn certificate_inverse(mh in 1u64..2000, delta in 0.0001f64..0.9999) {
            let e = eps_cert(mh, delta).unwrap().exact;
            let back = certificate_prob(1.0 - e, mh).unwrap();
            prop_assert!((back - delta).abs() <= 1e-10);
        }
    }
}
