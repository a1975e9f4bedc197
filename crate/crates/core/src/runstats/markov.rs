//! Exact waiting time for `k` consecutive successes via the absorbing
//! run-length chain on states `0..=k`.
//!
//! Deliberately shares nothing with the closed forms in the parent module; it
//! is the reference those formulas are checked against.

use crate::error::{Result, SsmlError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunChain {
    p: f64,
    k: usize,
}

impl RunChain {
    pub fn new(p: f64, k: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SsmlError::param(format!("success probability {p} must lie in (0, 1]")));
        }
        if k == 0 {
            return Err(SsmlError::param("run length must be >= 1"));
        }
        Ok(Self { p, k })
    }

    /// `P(X_k > n)` for `n = 0..=n_max`, by pushing the transient mass through
    /// the transition matrix one trial at a time.
    pub fn survival(&self, n_max: usize) -> Vec<f64> {
        let (p, k) = (self.p, self.k);
        let fail = 1.0 - p;
        // mass[j]: probability of sitting in run-length state j without having been absorbed
        let mut mass = vec![0.0; k];
        mass[0] = 1.0;
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(1.0);
        let mut next = vec![0.0; k];
        for _ in 0..n_max {
            next[0] = mass.iter().sum::<f64>() * fail;
            for j in 1..k {
                next[j] = mass[j - 1] * p;
            }
            std::mem::swap(&mut mass, &mut next);
            // Summing the transient mass keeps full relative accuracy deep in
            // the tail, where `1 - absorbed` would cancel.
            out.push(mass.iter().sum());
        }
        out
    }

    /// Expected absorption time from state 0.
    ///
    /// First-step equations `E_j = 1 + p E_{j+1} + (1-p) E_0`, `E_k = 0`, solved by
    /// back substitution with `E_j = a_j + b_j E_0`. The coefficient `1 - b_j` is
    /// carried directly so `E_0 = a_0 / (1 - b_0)` does not cancel.
    pub fn mean(&self) -> f64 {
        let (p, k) = (self.p, self.k);
        let mut a = 0.0; // a_k
        let mut one_minus_b = 1.0; // 1 - b_k
        for _ in 0..k {
            a = 1.0 + p * a;
            // b_j = p b_{j+1} + (1 - p)  =>  1 - b_j = p (1 - b_{j+1})
            one_minus_b *= p;
        }
        a / one_minus_b
    }
}
