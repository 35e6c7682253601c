//! Univariate AR(p) models: OLS fitting with AICc order selection,
//! multi-step fitted values, forecasting and shock-driven path simulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// How the autoregressive order is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSelection {
    /// Minimise AICc over `0..=max_order`.
    Aicc,
    /// Use exactly `max_order`.
    Fixed,
}

/// `y_t = c + Σ φ_l y_{t−l} + ε_t` with `Var(ε) = innovation_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    coefficients: Vec<f64>,
    intercept: f64,
    innovation_variance: f64,
}

impl ArModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64, innovation_variance: f64) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
            return Err(Error::invalid("AR coefficients must be finite"));
        }
        if !(innovation_variance >= 0.0) {
            return Err(Error::invalid("innovation variance must be non-negative"));
        }
        Ok(Self {
            coefficients,
            intercept,
            innovation_variance,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn innovation_variance(&self) -> f64 {
        self.innovation_variance
    }

    /// Fits the model by least squares on the lagged regression.
    ///
    /// With [`OrderSelection::Aicc`] every order `0..=max_order` is fit on the
    /// common sample `t > max_order` and the order minimising
    /// `T·ln(RSS/T) + 2(p+2)·T/(T−p−3)` wins (ties go to the smaller order);
    /// the winner is then re-estimated on all usable observations.
    pub fn fit(series: &[f64], max_order: usize, selection: OrderSelection) -> Result<Self> {
        if series.len() <= max_order + 2 {
            return Err(Error::invalid(format!(
                "series of length {} too short for max order {max_order}",
                series.len()
            )));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series has non-finite values"));
        }
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let spread = series.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if spread <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::Singular {
                context: "AR fit".into(),
                detail: "constant series gives a singular design matrix".into(),
            });
        }
        let order = match selection {
            OrderSelection::Fixed => max_order,
            OrderSelection::Aicc => {
                let mut best = (f64::INFINITY, 0);
                for p in 0..=max_order {
                    let t_eff = (series.len() - max_order) as f64;
                    if t_eff - p as f64 - 3.0 <= 0.0 {
                        continue;
                    }
                    let (_, rss) = ols_ar(series, p, max_order)?;
                    let aicc = t_eff * (rss / t_eff).ln()
                        + 2.0 * (p as f64 + 2.0) * t_eff / (t_eff - p as f64 - 3.0);
                    // strict improvement keeps the smaller order on ties
                    if aicc < best.0 - 1e-12 * aicc.abs().max(1.0) {
                        best = (aicc, p);
                    }
                }
                best.1
            }
        };
        let (beta, rss) = ols_ar(series, order, order)?;
        let t_eff = series.len() - order;
        let dof = t_eff.saturating_sub(order + 1).max(1);
        Self::new(beta[1..].to_vec(), beta[0], rss / dof as f64)
    }

    /// Unconditional mean `c / (1 − Σφ)`, when it exists.
    pub fn mean(&self) -> Option<f64> {
        let s: f64 = self.coefficients.iter().sum();
        (s != 1.0).then(|| self.intercept / (1.0 - s))
    }

    fn check_history(&self, history: &[f64]) -> Result<()> {
        if history.len() < self.order() {
            return Err(Error::invalid(format!(
                "history of length {} shorter than AR order {}",
                history.len(),
                self.order()
            )));
        }
        Ok(())
    }

    /// Iterates the recursion `h` steps past `history`, adding `shocks[s]` at step `s`.
    pub fn simulate_path(&self, history: &[f64], h: usize, shocks: &[f64]) -> Result<Vec<f64>> {
        if shocks.len() != h {
            return Err(Error::dims("simulate_path shocks", h, shocks.len()));
        }
        self.check_history(history)?;
        let p = self.order();
        let mut window: Vec<f64> = history[history.len() - p..].to_vec();
        let mut out = Vec::with_capacity(h);
        for &shock in shocks {
            let mut next = self.intercept + shock;
            for (l, phi) in self.coefficients.iter().enumerate() {
                next += phi * window[p - 1 - l];
            }
            if p > 0 {
                window.remove(0);
                window.push(next);
            }
            out.push(next);
        }
        Ok(out)
    }

    /// Point forecasts for horizons `1..=h` from the end of `history`.
    pub fn forecast(&self, history: &[f64], h: usize) -> Result<Vec<f64>> {
        self.simulate_path(history, h, &vec![0.0; h])
    }

    /// Entry `j` is the `h`-step-ahead prediction of `series[j + h]` made with
    /// `series[..=j]`; `None` where fewer than `order` observations are available.
    pub fn fitted_multistep(&self, series: &[f64], h: usize) -> Result<Vec<Option<f64>>> {
        if h == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if h >= series.len() {
            return Err(Error::invalid(format!(
                "horizon {h} exceeds series length {}",
                series.len()
            )));
        }
        (0..series.len() - h)
            .map(|j| {
                let history = &series[..=j];
                if history.len() < self.order() {
                    Ok(None)
                } else {
                    Ok(self.forecast(history, h)?.last().copied())
                }
            })
            .collect()
    }

    /// Errors of the `h`-step forecasts made from an origin with `origin_len`
    /// observations: `series[origin_len + s] − forecast_s` for `s < h`.
    ///
    /// Returns `None` if the origin has too little history or the horizon runs
    /// past the end of the series.
    pub fn origin_errors(&self, series: &[f64], origin_len: usize, h: usize) -> Option<Vec<f64>> {
        if origin_len < self.order() || origin_len + h > series.len() {
            return None;
        }
        let f = self.forecast(&series[..origin_len], h).ok()?;
        Some(f.iter().enumerate().map(|(s, v)| series[origin_len + s] - v).collect())
    }
}

/// OLS of `y_t` on `[1, y_{t−1}, …, y_{t−p}]` for `t ≥ start`. Returns (β, RSS).
fn ols_ar(series: &[f64], p: usize, start: usize) -> Result<(Vec<f64>, f64)> {
    let rows = series.len() - start;
    let cols = p + 1;
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            series[start + r - c]
        }
    });
    let y = DVector::from_iterator(rows, series[start..].iter().cloned());
    let xtx = x.transpose() * &x;
    let factor = SpdFactor::new(&xtx, "AR design matrix")?;
    let beta = factor.solve_vec(&(x.transpose() * &y));
    let resid = &y - &x * &beta;
    Ok((beta.iter().cloned().collect(), resid.norm_squared()))
}
