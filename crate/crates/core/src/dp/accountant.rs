use std::collections::HashMap;

use super::{DpError, Result};

pub const MAX_ORDER: usize = 32;
/// Integration covers z in [-R*sigma, 1 + R*sigma].
pub const INTEGRATION_RANGE: f64 = 20.0;
pub const INTEGRATION_POINTS: usize = 200_001;

const SIGMA_MIN: f64 = 0.5;
const SIGMA_MAX: f64 = 64.0;
const SIGMA_TOL: f64 = 1e-3;

fn check_params(q: f64, sigma: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(DpError::InvalidSpec(format!(
            "q must be in (0, 1], got {q}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DpError::InvalidSpec(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    Ok(())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trapezoid weights and log densities on the integration grid.
struct Grid {
    /// ln(w_i * mu0(z_i))
    log_wmu0: Vec<f64>,
    /// w_i * mu0(z_i)
    wmu0: Vec<f64>,
    /// ln(mu(z_i) / mu0(z_i))
    log_ratio: Vec<f64>,
}

impl Grid {
    fn new(q: f64, sigma: f64) -> Self {
        let n = INTEGRATION_POINTS;
        let lo = -INTEGRATION_RANGE * sigma;
        let hi = 1.0 + INTEGRATION_RANGE * sigma;
        let h = (hi - lo) / (n - 1) as f64;
        let s2 = sigma * sigma;
        let log_norm = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let log_q = q.ln();
        let log_1mq = (-q).ln_1p();
        let mut log_wmu0 = Vec::with_capacity(n);
        let mut wmu0 = Vec::with_capacity(n);
        let mut log_ratio = Vec::with_capacity(n);
        for i in 0..n {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { h / 2.0 } else { h };
            let lw = w.ln() - z * z / (2.0 * s2) - log_norm;
            log_wmu0.push(lw);
            wmu0.push(lw.exp());
            // mu/mu0 = 1 + d with d = q * (exp(x) - 1)
            let x = (2.0 * z - 1.0) / (2.0 * s2);
            let d = q * x.exp_m1();
            let lr = if d.abs() < 0.5 {
                d.ln_1p()
            } else {
                log_add_exp(log_1mq, log_q + x)
            };
            log_ratio.push(lr);
        }
        Grid {
            log_wmu0,
            wmu0,
            log_ratio,
        }
    }

    /// ln of the integral of mu0 * (mu/mu0)^k.
    fn log_moment_integral(&self, k: f64) -> Result<f64> {
        let max_exp = self
            .log_ratio
            .iter()
            .map(|&lr| k * lr)
            .fold(f64::NEG_INFINITY, f64::max);
        let value = if max_exp < 700.0 {
            // Integrate (ratio^k - 1) so values near zero keep their precision.
            let s: f64 = self
                .wmu0
                .iter()
                .zip(&self.log_ratio)
                .map(|(&w, &lr)| w * (k * lr).exp_m1())
                .sum();
            s.ln_1p()
        } else {
            let terms = self
                .log_wmu0
                .iter()
                .zip(&self.log_ratio)
                .map(|(&lw, &lr)| lw + k * lr);
            let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
            m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
        };
        if !value.is_finite() {
            return Err(DpError::Numerical(format!(
                "log-moment integral for exponent {k} is {value}"
            )));
        }
        Ok(value)
    }
}

/// alpha(lambda) for lambda = 1..=MAX_ORDER (index lambda - 1).
pub fn log_moments(q: f64, sigma: f64) -> Result<[f64; MAX_ORDER]> {
    check_params(q, sigma)?;
    let grid = Grid::new(q, sigma);
    let mut out = [0.0; MAX_ORDER];
    for (i, slot) in out.iter_mut().enumerate() {
        let lambda = (i + 1) as f64;
        // E_{mu}[(mu/mu0)^l] = E_{mu0}[(mu/mu0)^(l+1)];  E_{mu0}[(mu0/mu)^l]
        let forward = grid.log_moment_integral(lambda + 1.0)?;
        let backward = grid.log_moment_integral(-lambda)?;
        *slot = forward.max(backward).max(0.0);
    }
    Ok(out)
}

pub fn log_moment(q: f64, sigma: f64, lambda: usize) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&lambda) {
        return Err(DpError::InvalidSpec(format!(
            "moment order must be in 1..={MAX_ORDER}, got {lambda}"
        )));
    }
    Ok(log_moments(q, sigma)?[lambda - 1])
}

fn tail_bound(totals: &[f64; MAX_ORDER], delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidSpec(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let log_inv_delta = -delta.ln();
    Ok(totals
        .iter()
        .enumerate()
        .map(|(i, a)| (a + log_inv_delta) / (i + 1) as f64)
        .fold(f64::INFINITY, f64::min))
}

/// epsilon after `steps` identical steps at (q, sigma).
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    if steps == 0 {
        return Err(DpError::EmptyLedger);
    }
    let mut totals = log_moments(q, sigma)?;
    for a in &mut totals {
        *a *= steps as f64;
    }
    tail_bound(&totals, delta)
}

/// Running sum of log-moments over recorded steps.
#[derive(Debug, Clone, Default)]
pub struct MomentLedger {
    totals: [f64; MAX_ORDER],
    steps: u64,
    cache: HashMap<(u64, u64), [f64; MAX_ORDER]>,
}

impl MomentLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.record_steps(q, sigma, 1)
    }

    pub fn record_steps(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        let key = (q.to_bits(), sigma.to_bits());
        let alphas = match self.cache.get(&key) {
            Some(a) => *a,
            None => {
                let a = log_moments(q, sigma)?;
                self.cache.insert(key, a);
                a
            }
        };
        for (t, a) in self.totals.iter_mut().zip(alphas) {
            *t += steps as f64 * a;
        }
        self.steps += steps;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Accumulated alpha(lambda), lambda = 1..=MAX_ORDER.
    pub fn totals(&self) -> &[f64; MAX_ORDER] {
        &self.totals
    }
}

pub fn compose_eps(ledger: &MomentLedger, delta: f64) -> Result<f64> {
    if ledger.steps == 0 {
        return Err(DpError::EmptyLedger);
    }
    tail_bound(&ledger.totals, delta)
}

/// Smallest sigma in [0.5, 64] (to within 1e-3) whose epsilon after `steps`
/// phases does not exceed `target_eps`.
pub fn calibrate_sigma(target_eps: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(target_eps > 0.0) {
        return Err(DpError::InvalidSpec(format!(
            "target epsilon must be > 0, got {target_eps}"
        )));
    }
    let eps = |s: f64| epsilon_for(q, s, steps, delta);
    let at_max = eps(SIGMA_MAX)?;
    if at_max > target_eps {
        return Err(DpError::Unachievable {
            target: target_eps,
            eps_at_max: at_max,
        });
    }
    if eps(SIGMA_MIN)? <= target_eps {
        return Ok(SIGMA_MIN);
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    while hi - lo > SIGMA_TOL {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
