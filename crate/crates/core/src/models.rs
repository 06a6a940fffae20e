//! Click-probability models for a detector with recursive afterpulsing.
//!
//! Every click (light, dark or afterpulse) can trap a carrier that later
//! produces another click with probability `p_ap`. The chain of afterpulse
//! orders forms the events `γ_i` with `P(γ_i) = P₀·p_apⁱ`; the total click
//! probability is the probability of their union. The forward models here are
//! successive truncations of that union, and the inverse functions recover
//! `p_ap` (or `P₀`) from measured quantities.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default truncation depth of the high-order model.
pub const DEFAULT_ORDER_MAX: usize = 20;

/// Upper end of the bracket used when solving for `p_ap`.
pub const P_AP_UPPER: f64 = 1.0 - 1e-9;

/// Absolute tolerance of the bisection solvers.
pub const BISECTION_TOL: f64 = 1e-12;

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} = {v} is not in [0, 1]")));
    }
    Ok(())
}

fn check_p_ap(v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Domain(format!("p_ap = {v} is not in [0, 1)")));
    }
    Ok(())
}

/// Internal afterpulse probability and truncation order of the recursive model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    p_ap: f64,
    order_max: usize,
}

impl ModelParams {
    pub fn new(p_ap: f64, order_max: usize) -> Result<Self> {
        check_p_ap(p_ap)?;
        if order_max == 0 {
            return Err(Error::Domain("order_max must be at least 1".into()));
        }
        Ok(Self { p_ap, order_max })
    }

    /// Parameters with the default truncation depth of 20.
    pub fn with_p_ap(p_ap: f64) -> Result<Self> {
        Self::new(p_ap, DEFAULT_ORDER_MAX)
    }

    pub fn p_ap(&self) -> f64 {
        self.p_ap
    }

    pub fn order_max(&self) -> usize {
        self.order_max
    }
}

/// Click probability without afterpulsing and the resulting total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    pub p0: f64,
    pub p_total: f64,
}

impl ClickProbabilities {
    pub fn new(p0: f64, p_total: f64) -> Result<Self> {
        check_probability("p0", p0)?;
        check_probability("p_total", p_total)?;
        if p0 > p_total {
            return Err(Error::Domain(format!(
                "p0 = {p0} exceeds total click probability {p_total}"
            )));
        }
        Ok(Self { p0, p_total })
    }
}

/// Afterpulse ratio measured from a histogram together with the count rate
/// and statistical dead time of the acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentalAfterpulse {
    pub p_exp: f64,
    /// Total count rate in clicks per second.
    pub rate: f64,
    /// Statistical dead time in seconds.
    pub tau_s: f64,
}

impl ExperimentalAfterpulse {
    pub fn new(p_exp: f64, rate: f64, tau_s: f64) -> Result<Self> {
        if !(p_exp >= 0.0 && p_exp.is_finite()) {
            return Err(Error::Domain(format!("p_exp = {p_exp} must be >= 0")));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!("rate = {rate} must be >= 0")));
        }
        if !(tau_s > 0.0 && tau_s.is_finite()) {
            return Err(Error::Domain(format!("tau_s = {tau_s} must be > 0")));
        }
        if rate * tau_s >= 1.0 + p_exp {
            return Err(Error::Singular(format!(
                "R*tau = {} must be below 1 + p_exp = {}",
                rate * tau_s,
                1.0 + p_exp
            )));
        }
        Ok(Self { p_exp, rate, tau_s })
    }

    /// Observed click probability `P_n = R·τ`.
    pub fn p_n(&self) -> f64 {
        self.rate * self.tau_s
    }

    /// `P₀ = P_n / (1 + p_exp)` together with `P_n`.
    pub fn click_probabilities(&self) -> Result<ClickProbabilities> {
        let p_n = self.p_n();
        ClickProbabilities::new(p_n / (1.0 + self.p_exp), p_n)
    }
}

/// Which truncation of the recursive model is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Simple,
    First,
    Second,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Model::Simple),
            "first" | "1" => Ok(Model::First),
            "second" | "2" => Ok(Model::Second),
            _ => Err(Error::Config(format!("unknown model '{s}'"))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Simple => "simple",
            Model::First => "first",
            Model::Second => "second",
        })
    }
}

/// Result of a truncated model that is allowed to leave `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardValue {
    pub value: f64,
    /// Set when the truncation produced a value above one.
    pub out_of_range: bool,
}

impl ForwardValue {
    fn new(value: f64) -> Self {
        Self {
            value,
            out_of_range: value > 1.0,
        }
    }
}

/// Simple model: `P = P₀ + P₀·p_s − P₀²·p_s`.
pub fn simple_forward(p0: f64, p_s: f64) -> Result<f64> {
    check_probability("p0", p0)?;
    check_probability("p_s", p_s)?;
    Ok(p0 * (1.0 + p_s - p0 * p_s))
}

/// Closed forms of the first- and second-order index sums,
/// `Σ pⁱ = 1/(1−p)` and `Σ_{j>i} p^{i+j} = p/((1−p)²(1+p))`.
pub fn geometric_sums(p_ap: f64) -> Result<(f64, f64)> {
    check_p_ap(p_ap)?;
    let q = 1.0 - p_ap;
    Ok((1.0 / q, p_ap / (q * q * (1.0 + p_ap))))
}

/// First-order model `P = P₀/(1 − p_ap)`. Values above one are returned as is
/// with the `out_of_range` flag set.
pub fn first_order_forward(p0: f64, params: &ModelParams) -> Result<ForwardValue> {
    check_probability("p0", p0)?;
    let (s1, _) = geometric_sums(params.p_ap)?;
    Ok(ForwardValue::new(p0 * s1))
}

/// Second-order model `P = P₀·s₁ − P₀²·s₂`.
pub fn second_order_forward(p0: f64, params: &ModelParams) -> Result<f64> {
    check_probability("p0", p0)?;
    Ok(second_order_unchecked(p0, params.p_ap))
}

fn second_order_unchecked(p0: f64, p_ap: f64) -> f64 {
    let q = 1.0 - p_ap;
    p0 / q - p0 * p0 * p_ap / (q * q * (1.0 + p_ap))
}

/// High-order model: probability of the union of the independent events
/// `γ_0 … γ_n`, evaluated as `1 − Π (1 − P₀·p_apⁱ)`.
pub fn exact_forward(p0: f64, params: &ModelParams) -> Result<f64> {
    check_probability("p0", p0)?;
    let mut miss = 1.0;
    let mut term = p0;
    for _ in 0..=params.order_max {
        miss *= 1.0 - term;
        term *= params.p_ap;
    }
    Ok(1.0 - miss)
}

/// `p_s = p_exp / (1 − P₀)`.
pub fn invert_simple(p_exp: f64, p0: f64) -> Result<f64> {
    check_probability("p0", p0)?;
    if p0 >= 1.0 {
        return Err(Error::Singular("invert_simple requires p0 < 1".into()));
    }
    Ok(p_exp / (1.0 - p0))
}

/// `p⁽¹⁾ = 1 − 1/(1 + p_exp)`, written as `p_exp/(1 + p_exp)`.
pub fn invert_first(p_exp: f64) -> Result<f64> {
    if !(p_exp >= 0.0) {
        return Err(Error::Domain(format!("p_exp = {p_exp} must be >= 0")));
    }
    Ok(p_exp / (1.0 + p_exp))
}

/// Sign of `∂P/∂p_ap` for the second-order model at fixed `P₀`, up to a
/// positive factor. The cubic is concave on `[0, 1]`, positive at 0 and
/// negative at 1, so it has exactly one root there.
fn second_order_slope_in_p(p0: f64, p: f64) -> f64 {
    (1.0 - p0) * (1.0 + p) - p * p * (1.0 + 2.0 * p0) - p * p * p
}

/// Location of the maximum of the second-order model over `p_ap` for fixed `P₀`.
fn second_order_peak_in_p(p0: f64) -> f64 {
    if second_order_slope_in_p(p0, P_AP_UPPER) >= 0.0 {
        return P_AP_UPPER;
    }
    bisect(0.0, P_AP_UPPER, |p| second_order_slope_in_p(p0, p))
}

/// Location of the maximum of the second-order model over `P₀` for fixed `p_ap`,
/// clipped to 1.
fn second_order_peak_in_p0(p_ap: f64) -> f64 {
    if p_ap == 0.0 {
        return 1.0;
    }
    ((1.0 - p_ap * p_ap) / (2.0 * p_ap)).min(1.0)
}

/// Root of `g` on `[lo, hi]` where `g(lo) >= 0 >= g(hi)` or the reverse.
fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    let lo_sign = g(lo) >= 0.0;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if (g(mid) >= 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Numerical inverse of the second-order model: the `p⁽²⁾` for which
/// `P₀·s₁(p) − P₀²·s₂(p) = P₀·(1 + p_exp)`.
///
/// The search runs on the rising branch `[0, p_peak]` of the model, where the
/// root is unique.
pub fn invert_second(p_exp: f64, p0: f64) -> Result<f64> {
    if !(p_exp >= 0.0 && p_exp.is_finite()) {
        return Err(Error::Domain(format!("p_exp = {p_exp} must be >= 0")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 = {p0} must be in (0, 1)")));
    }
    let target = p0 * (1.0 + p_exp);
    if target > 1.0 {
        return Err(Error::Domain(format!(
            "P_n = p0*(1+p_exp) = {target} exceeds 1"
        )));
    }
    if p_exp == 0.0 {
        return Ok(0.0);
    }
    let peak = second_order_peak_in_p(p0);
    if second_order_unchecked(p0, peak) < target {
        return Err(Error::NoRoot(format!(
            "second-order model with p0 = {p0} never reaches P = {target}"
        )));
    }
    Ok(bisect(0.0, peak, |p| second_order_unchecked(p0, p) - target))
}

/// `p_s = p_exp·(1 + p_exp)/(1 + p_exp − R·τ)`.
pub fn p_s_from_rate(exp: &ExperimentalAfterpulse) -> Result<f64> {
    let denom = 1.0 + exp.p_exp - exp.p_n();
    if denom <= 0.0 {
        return Err(Error::Singular(format!(
            "1 + p_exp - R*tau = {denom} is not positive"
        )));
    }
    Ok(exp.p_exp * (1.0 + exp.p_exp) / denom)
}

/// Afterpulse click probability `P_ap = p_exp·P₀/(1 − P₀)`, common to all models.
pub fn universal_p_ap(p_exp: f64, p0: f64) -> Result<f64> {
    check_probability("p0", p0)?;
    if p0 >= 1.0 {
        return Err(Error::Singular("universal P_ap requires p0 < 1".into()));
    }
    Ok(p_exp * p0 / (1.0 - p0))
}

/// Solve the chosen forward model for `P₀` given the observed total `P`.
///
/// The simple model takes the smaller root of its quadratic. The second-order
/// model is solved by bisection on its rising branch in `P₀`.
pub fn p0_from_observed(p_total: f64, model: Model, p_ap: f64) -> Result<f64> {
    check_probability("p_total", p_total)?;
    check_p_ap(p_ap)?;
    match model {
        Model::Simple => {
            let b = 1.0 + p_ap;
            let disc = b * b - 4.0 * p_ap * p_total;
            if disc < 0.0 {
                return Err(Error::NoRoot(format!(
                    "simple model has no real P0 for P = {p_total}"
                )));
            }
            // Smaller root of p·x² − (1+p)·x + P = 0 in its cancellation-free form.
            Ok(2.0 * p_total / (b + disc.sqrt()))
        }
        Model::First => Ok(p_total * (1.0 - p_ap)),
        Model::Second => {
            let peak = second_order_peak_in_p0(p_ap);
            if second_order_unchecked(peak, p_ap) < p_total {
                return Err(Error::NoRoot(format!(
                    "second-order model with p_ap = {p_ap} never reaches P = {p_total}"
                )));
            }
            Ok(bisect(0.0, peak, |x| second_order_unchecked(x, p_ap) - p_total))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64) -> ModelParams {
        ModelParams::with_p_ap(p).unwrap()
    }

    /// Explicit inclusion–exclusion over every non-empty subset of `γ_0..γ_n`.
    fn union_by_subsets(p0: f64, p_ap: f64, n: usize) -> f64 {
        let events = n + 1;
        let mut total = 0.0;
        for mask in 1u32..(1 << events) {
            let mut prod = 1.0;
            for i in 0..events {
                if mask & (1 << i) != 0 {
                    prod *= p0 * p_ap.powi(i as i32);
                }
            }
            if mask.count_ones() % 2 == 1 {
                total += prod;
            } else {
                total -= prod;
            }
        }
        total
    }

    #[test]
    fn simple_forward_examples() {
        assert_eq!(simple_forward(0.5, 0.0).unwrap(), 0.5);
        assert_eq!(simple_forward(1.0, 0.3).unwrap(), 1.0);
        assert!((simple_forward(0.2, 0.1).unwrap() - 0.216).abs() < 1e-12);
        assert!(simple_forward(1.2, 0.1).is_err());
        assert!(simple_forward(0.2, -0.1).is_err());
    }

    #[test]
    fn first_order_examples() {
        assert_eq!(first_order_forward(0.3, &params(0.0)).unwrap().value, 0.3);
        let v = first_order_forward(0.5, &params(0.1)).unwrap();
        assert!((v.value - 0.555_56).abs() < 1e-5);
        assert!(!v.out_of_range);
        let v = first_order_forward(0.9, &params(0.3)).unwrap();
        assert!((v.value - 1.285_714).abs() < 1e-5);
        assert!(v.out_of_range);
        assert!(ModelParams::with_p_ap(1.0).is_err());
    }

    #[test]
    fn second_order_examples() {
        assert_eq!(second_order_forward(0.3, &params(0.0)).unwrap(), 0.3);
        let v = second_order_forward(0.5, &params(0.1)).unwrap();
        assert!((v - 0.527_50).abs() < 1e-5);
        // 1/0.7 − 0.3/(0.49·1.3)
        let v = second_order_forward(1.0, &params(0.3)).unwrap();
        assert!((v - 0.957_614).abs() < 1e-5, "{v}");
    }

    #[test]
    fn geometric_sums_match_partial_series() {
        assert_eq!(geometric_sums(0.0).unwrap(), (1.0, 0.0));
        for &p in &[0.1, 0.5, 0.9] {
            let (s1, s2) = geometric_sums(p).unwrap();
            let n = 400;
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            for i in 0..=n {
                t1 += p.powi(i);
                for j in (i + 1)..=n {
                    t2 += p.powi(i + j);
                }
            }
            assert!((s1 - t1).abs() < 1e-10, "p={p}");
            assert!((s2 - t2).abs() < 1e-10, "p={p}");
        }
        let (s1, s2) = geometric_sums(0.1).unwrap();
        assert!((s1 - 1.111_11).abs() < 1e-5);
        assert!((s2 - 0.112_233).abs() < 1e-5);
        let (s1, s2) = geometric_sums(0.5).unwrap();
        assert!((s1 - 2.0).abs() < 1e-12);
        assert!((s2 - 1.333_33).abs() < 1e-5);
        assert!(geometric_sums(1.0).is_err());
    }

    #[test]
    fn exact_forward_examples() {
        assert_eq!(exact_forward(0.4, &params(0.0)).unwrap(), 0.4);
        assert_eq!(exact_forward(1.0, &params(0.3)).unwrap(), 1.0);
        let p4 = ModelParams::new(0.1, 4).unwrap();
        let v = exact_forward(0.5, &p4).unwrap();
        assert!((v - union_by_subsets(0.5, 0.1, 4)).abs() < 1e-12);
    }

    #[test]
    fn exact_forward_equals_subset_enumeration() {
        for n in 1..=10 {
            for &p0 in &[0.05, 0.3, 0.77, 1.0] {
                for &p in &[0.05, 0.2, 0.5, 0.9] {
                    let params = ModelParams::new(p, n).unwrap();
                    let a = exact_forward(p0, &params).unwrap();
                    let b = union_by_subsets(p0, p, n);
                    assert!((a - b).abs() < 1e-12, "n={n} p0={p0} p={p}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn inversions_examples() {
        assert_eq!(invert_simple(0.1, 0.0).unwrap(), 0.1);
        assert!((invert_simple(0.1, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(invert_simple(0.0, 0.3).unwrap(), 0.0);
        assert!(matches!(invert_simple(0.1, 1.0), Err(Error::Singular(_))));

        assert_eq!(invert_first(0.0).unwrap(), 0.0);
        assert!((invert_first(0.15).unwrap() - 0.130_43).abs() < 1e-5);
        assert!((invert_first(1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invert_second_round_trips() {
        assert_eq!(invert_second(0.0, 0.4).unwrap(), 0.0);
        for &(p0, p) in &[(0.2, 0.3), (0.05, 0.1)] {
            let big_p = second_order_forward(p0, &params(p)).unwrap();
            let p_exp = big_p / p0 - 1.0;
            let back = invert_second(p_exp, p0).unwrap();
            assert!((back - p).abs() < 1e-9, "{back} vs {p}");
        }
        // forward at (0.2, 0.3) evaluates to 0.266876
        let big_p = second_order_forward(0.2, &params(0.3)).unwrap();
        assert!((big_p - 0.266_876).abs() < 1e-6);
    }

    #[test]
    fn invert_second_reports_unreachable_targets() {
        // The second-order model at p0 = 0.9 peaks near P = 0.93.
        assert!(matches!(invert_second(0.2, 0.9), Err(Error::Domain(_))));
        assert!(matches!(invert_second(0.1, 0.9), Err(Error::NoRoot(_))));
        assert!(invert_second(0.1, 0.0).is_err());
    }

    #[test]
    fn p_s_from_rate_examples() {
        let e = ExperimentalAfterpulse::new(0.1, 0.0, 1e-6).unwrap();
        assert_eq!(p_s_from_rate(&e).unwrap(), 0.1);
        let e = ExperimentalAfterpulse::new(0.1, 0.5e6, 1e-6).unwrap();
        assert!((p_s_from_rate(&e).unwrap() - 0.183_33).abs() < 1e-5);
        let p0 = 0.5 / 1.1;
        let alt = invert_simple(0.1, p0).unwrap();
        assert!((p_s_from_rate(&e).unwrap() - alt).abs() < 1e-12);
        assert!(matches!(
            ExperimentalAfterpulse::new(0.1, 1.2e6, 1e-6),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn universal_p_ap_examples() {
        assert_eq!(universal_p_ap(0.1, 0.0).unwrap(), 0.0);
        assert!((universal_p_ap(0.1, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert!((universal_p_ap(0.2, 0.25).unwrap() - 0.066_67).abs() < 1e-5);
        assert!(universal_p_ap(0.2, 1.0).is_err());
    }

    #[test]
    fn p0_from_observed_examples() {
        assert!((p0_from_observed(0.3, Model::First, 0.0).unwrap() - 0.3).abs() < 1e-15);
        let v = p0_from_observed(0.555_56, Model::First, 0.1).unwrap();
        assert!((v - 0.5).abs() < 1e-5);
        let v = p0_from_observed(0.527_50, Model::Second, 0.1).unwrap();
        assert!((v - 0.5).abs() < 1e-4);
        let v = p0_from_observed(0.216, Model::Simple, 0.1).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
        assert!(p0_from_observed(0.5, Model::Simple, 1.0).is_err());
    }

    #[test]
    fn model_names_parse() {
        for m in [Model::Simple, Model::First, Model::Second] {
            assert_eq!(m.to_string().parse::<Model>().unwrap(), m);
        }
        assert!("third".parse::<Model>().is_err());
    }
}
