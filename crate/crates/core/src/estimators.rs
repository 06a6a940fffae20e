//! Afterpulse estimators.
//!
//! The gate-resolved methods (Bethune, Yuan, coincidence) work on a pair of
//! histograms folded over one laser period, one taken with light and one
//! without. The sweep-histogram method works on click delays after a
//! laser-triggered click and is converted to model parameters by
//! [`derive_all`].
//!
//! Rates are counts divided by live time, so that acquisitions with different
//! dead-time losses can be compared.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::histio::SweepHistogram;
use crate::models::{
    invert_first, invert_second, p_s_from_rate, universal_p_ap, ExperimentalAfterpulse,
};

/// Bins per gate needed to tell gates apart.
pub const MIN_BINS_PER_GATE: u64 = 10;

/// Click counts folded over one analysis period of whole gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GateHistogram {
    bins: Vec<u64>,
    bin_width_ps: u64,
    period_ps: u64,
    gates_per_period: u64,
    acquisition_gates: u64,
    live_time_ps: u64,
    pub meta: BTreeMap<String, String>,
}

impl GateHistogram {
    pub fn new(
        bins: Vec<u64>,
        bin_width_ps: u64,
        period_ps: u64,
        gates_per_period: u64,
        acquisition_gates: u64,
        live_time_ps: u64,
    ) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        if bin_width_ps == 0 || bins.len() as u64 * bin_width_ps != period_ps {
            return Err(Error::Domain(format!(
                "{} bins of {bin_width_ps} ps do not span a {period_ps} ps period",
                bins.len()
            )));
        }
        if gates_per_period == 0 || bins.len() as u64 % gates_per_period != 0 {
            return Err(Error::Domain(format!(
                "{} bins cannot be split into {gates_per_period} gates",
                bins.len()
            )));
        }
        if live_time_ps == 0 {
            return Err(Error::Degenerate("histogram has no live time".into()));
        }
        Ok(Self {
            bins,
            bin_width_ps,
            period_ps,
            gates_per_period,
            acquisition_gates,
            live_time_ps,
            meta: BTreeMap::new(),
        })
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.bin_width_ps
    }

    pub fn period_ps(&self) -> u64 {
        self.period_ps
    }

    pub fn gates_per_period(&self) -> u64 {
        self.gates_per_period
    }

    pub fn acquisition_gates(&self) -> u64 {
        self.acquisition_gates
    }

    pub fn live_time_ps(&self) -> u64 {
        self.live_time_ps
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-12
    }

    pub fn period(&self) -> f64 {
        self.period_ps as f64 * 1e-12
    }

    pub fn live_time(&self) -> f64 {
        self.live_time_ps as f64 * 1e-12
    }

    pub fn bins_per_gate(&self) -> u64 {
        self.bins.len() as u64 / self.gates_per_period
    }

    /// Counts summed over each gate of the period.
    pub fn gate_counts(&self) -> Vec<u64> {
        self.bins
            .chunks(self.bins_per_gate() as usize)
            .map(|c| c.iter().sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Gate with the most counts, taken as the illuminated one.
    pub fn illuminated_gate(&self) -> usize {
        let counts = self.gate_counts();
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        best
    }
}

/// A method estimate with its Poisson counting uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

fn check_pair(lit: &GateHistogram, dark: &GateHistogram) -> Result<()> {
    if lit.gates_per_period != dark.gates_per_period || lit.bins.len() != dark.bins.len() {
        return Err(Error::Incompatible(format!(
            "lit ({} gates, {} bins) and dark ({} gates, {} bins) histograms differ in layout",
            lit.gates_per_period,
            lit.bins.len(),
            dark.gates_per_period,
            dark.bins.len()
        )));
    }
    Ok(())
}

fn check_resolution(h: &GateHistogram) -> Result<()> {
    if h.bins_per_gate() < MIN_BINS_PER_GATE {
        return Err(Error::Incompatible(format!(
            "{} bins per gate; at least {MIN_BINS_PER_GATE} are needed to resolve gates",
            h.bins_per_gate()
        )));
    }
    Ok(())
}

fn check_frequency_ratio(lit: &GateHistogram, f_g: f64, f_l: f64) -> Result<u64> {
    if !(f_g > 0.0 && f_l > 0.0) {
        return Err(Error::Incompatible("frequencies must be positive".into()));
    }
    let ratio = f_g / f_l;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio < 1.0 {
        return Err(Error::Incompatible(format!(
            "f_g / f_l = {ratio} is not an integer"
        )));
    }
    let ratio = ratio.round() as u64;
    if ratio != lit.gates_per_period {
        return Err(Error::Incompatible(format!(
            "f_g / f_l = {ratio} but the histogram period holds {} gates",
            lit.gates_per_period
        )));
    }
    Ok(ratio)
}

/// `(R_ni − R_dark) / R_de` with the laser at half the gate frequency.
pub fn estimate_bethune(lit: &GateHistogram, dark: &GateHistogram) -> Result<Estimate> {
    if lit.gates_per_period != 2 {
        return Err(Error::Incompatible(format!(
            "Bethune method needs a two-gate period, got {} gates",
            lit.gates_per_period
        )));
    }
    check_pair(lit, dark)?;
    check_resolution(lit)?;
    let lit_counts = lit.gate_counts();
    let dark_counts = dark.gate_counts();
    let ni = 1 - lit.illuminated_gate();
    let (t, td) = (lit.live_time(), dark.live_time());

    let r_de = (lit_counts[0] + lit_counts[1]) as f64 / t;
    if r_de == 0.0 {
        return Err(Error::Degenerate("no counts in the illuminated acquisition".into()));
    }
    let n_ni = lit_counts[ni] as f64;
    let n_dark = dark_counts[ni] as f64;
    let value = (n_ni / t - n_dark / td) / r_de;
    let sigma = (n_ni / (t * t) + n_dark / (td * td)).sqrt() / r_de;
    Ok(Estimate { value, sigma })
}

/// Yuan method with `R_ni` from the first full gate after the illuminated one.
pub fn estimate_yuan(
    lit: &GateHistogram,
    dark: &GateHistogram,
    f_g: f64,
    f_l: f64,
) -> Result<Estimate> {
    estimate_yuan_at(lit, dark, f_g, f_l, 1)
}

/// `(R_ni − R_dark) / (R^c_de − R_ni) · f_g/f_l`, with `R_ni` taken
/// `gate_offset` gates after the illuminated gate.
pub fn estimate_yuan_at(
    lit: &GateHistogram,
    dark: &GateHistogram,
    f_g: f64,
    f_l: f64,
    gate_offset: usize,
) -> Result<Estimate> {
    let ratio = check_frequency_ratio(lit, f_g, f_l)?;
    check_pair(lit, dark)?;
    check_resolution(lit)?;
    if gate_offset == 0 || gate_offset as u64 >= ratio {
        return Err(Error::Incompatible(format!(
            "non-illuminated gate offset {gate_offset} must be in 1..{ratio}"
        )));
    }
    let lit_counts = lit.gate_counts();
    let dark_counts = dark.gate_counts();
    let lit_gate = lit.illuminated_gate();
    let ni = (lit_gate + gate_offset) % ratio as usize;
    let (t, td) = (lit.live_time(), dark.live_time());

    let n_ni = lit_counts[ni] as f64;
    let n_dark = dark_counts[ni] as f64;
    let r_c = lit_counts[lit_gate] as f64 / t;
    let denom = r_c - n_ni / t;
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "coincident rate does not exceed the non-illuminated rate".into(),
        ));
    }
    let scale = ratio as f64;
    let value = (n_ni / t - n_dark / td) / denom * scale;
    let sigma = (n_ni / (t * t) + n_dark / (td * td)).sqrt() / denom * scale;
    Ok(Estimate { value, sigma })
}

/// `(R_de − R^c_de − (1 − f_l/f_g)·R_dark) / R^c_de`, where `R_de` is the
/// total rate over the laser period (coincident gate included) and `R_dark`
/// the total dark rate.
pub fn estimate_coincidence(
    lit: &GateHistogram,
    dark: &GateHistogram,
    f_g: f64,
    f_l: f64,
) -> Result<Estimate> {
    let ratio = check_frequency_ratio(lit, f_g, f_l)?;
    check_pair(lit, dark)?;
    let lit_counts = lit.gate_counts();
    let lit_gate = lit.illuminated_gate();
    let (t, td) = (lit.live_time(), dark.live_time());

    let n_c = lit_counts[lit_gate] as f64;
    if n_c == 0.0 {
        return Err(Error::Degenerate("no coincident counts".into()));
    }
    let n_rest = lit.total() as f64 - n_c;
    let n_dark = dark.total() as f64;
    let k = 1.0 - 1.0 / ratio as f64;
    let r_c = n_c / t;
    let value = (n_rest / t - k * n_dark / td) / r_c;
    let sigma = (n_rest / (t * t) + k * k * n_dark / (td * td)).sqrt() / r_c;
    Ok(Estimate { value, sigma })
}

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(Error::Domain(format!("invalid window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }
}

/// Default dark-count window at the end of a 25 µs sweep.
pub const DEFAULT_DCR_WINDOW: TimeWindow = TimeWindow {
    start: 20e-6,
    end: 25e-6,
};

/// Mean counts per bin over the bins lying inside `window`.
pub fn dcr_baseline(h: &SweepHistogram, window: TimeWindow) -> Result<f64> {
    let range = h.bins_within(window.start, window.end);
    if range.is_empty() {
        return Err(Error::Domain(format!(
            "window [{}, {}] s holds no whole bin of the {} s sweep",
            window.start,
            window.end,
            h.sweep()
        )));
    }
    let n = range.len() as f64;
    Ok(h.bins()[range].iter().sum::<u64>() as f64 / n)
}

/// Output of the sweep-histogram method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomEstimate {
    /// `C_ap / C₀`.
    pub p_exp: f64,
    /// Poisson counting uncertainty of `p_exp`.
    pub sigma: f64,
    pub c0: u64,
    pub c_ap: f64,
    /// Mean dark counts per bin.
    pub c_dcr: f64,
    /// Set when `C_ap` is negative by more than three standard deviations,
    /// which points at a misplaced window or dead time.
    pub suspicious: bool,
}

/// Afterpulse ratio from a sweep histogram: dark baseline from `window`,
/// afterpulse counts summed from `tau_s` to the end of the sweep.
pub fn estimate_custom(
    h: &SweepHistogram,
    tau_s: f64,
    window: TimeWindow,
) -> Result<CustomEstimate> {
    if h.c0() == 0 {
        return Err(Error::Degenerate("no trigger clicks (C0 = 0)".into()));
    }
    if !(tau_s >= 0.0 && tau_s < h.sweep()) {
        return Err(Error::Domain(format!(
            "dead time {tau_s} s must lie inside the {} s sweep",
            h.sweep()
        )));
    }
    let win = h.bins_within(window.start, window.end);
    let c_dcr = dcr_baseline(h, window)?;
    let ap = h.bin_at(tau_s)..h.bins().len();
    let ratio = ap.len() as f64 / win.len() as f64;

    let mut c_ap = 0.0;
    let mut var = 0.0;
    for (i, &c) in h.bins().iter().enumerate() {
        // C_ap = Σ_ap C_i − N_ap·C_dcr, written as one weight per bin.
        let mut w = 0.0;
        if ap.contains(&i) {
            w += 1.0;
        }
        if win.contains(&i) {
            w -= ratio;
        }
        c_ap += w * c as f64;
        var += w * w * c as f64;
    }
    let c0 = h.c0();
    let sigma = var.sqrt() / c0 as f64;
    Ok(CustomEstimate {
        p_exp: c_ap / c0 as f64,
        sigma,
        c0,
        c_ap,
        c_dcr,
        suspicious: c_ap < -3.0 * var.sqrt(),
    })
}

/// `p_exp` converted to every model parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateBundle {
    pub p_exp: f64,
    /// Observed click probability `R·τ`.
    pub p_n: f64,
    /// Click probability without afterpulses.
    pub p0: f64,
    pub p_s: f64,
    pub p1: f64,
    pub p2: f64,
    /// Afterpulse click probability common to all models.
    pub p_ap: f64,
}

/// Convert `p_exp` using the count rate and statistical dead time.
pub fn derive_all(p_exp: f64, rate: f64, tau_s: f64) -> Result<EstimateBundle> {
    let exp = ExperimentalAfterpulse::new(p_exp, rate, tau_s)?;
    let probs = exp.click_probabilities()?;
    let p_s = p_s_from_rate(&exp)?;
    let p1 = invert_first(p_exp)?;
    // As P₀ → 0 the second-order model reduces to the first-order one.
    let p2 = if probs.p0 == 0.0 {
        p1
    } else {
        invert_second(p_exp, probs.p0)?
    };
    Ok(EstimateBundle {
        p_exp,
        p_n: probs.p_total,
        p0: probs.p0,
        p_s,
        p1,
        p2,
        p_ap: universal_p_ap(p_exp, probs.p0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histio::merge_bins;
    use crate::models::{first_order_forward, second_order_forward, simple_forward, ModelParams};

    fn gate_hist(gate_counts: &[u64], live_ps: u64) -> GateHistogram {
        let mut bins = Vec::new();
        for &c in gate_counts {
            let mut g = vec![0; 10];
            g[5] = c;
            bins.extend(g);
        }
        let n = gate_counts.len() as u64;
        GateHistogram::new(bins, 320, 3200 * n, n, 1_000_000, live_ps).unwrap()
    }

    #[test]
    fn bethune_dark_as_lit_is_zero() {
        let dark = gate_hist(&[50, 52], 1_000_000);
        let e = estimate_bethune(&dark, &dark).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.sigma > 0.0);
    }

    #[test]
    fn bethune_formula() {
        let lit = gate_hist(&[1000, 60], 1_000_000_000);
        let dark = gate_hist(&[10, 10], 2_000_000_000);
        let e = estimate_bethune(&lit, &dark).unwrap();
        let t = 1e-3;
        let td = 2e-3;
        let expected = (60.0 / t - 10.0 / td) / (1060.0 / t);
        assert!((e.value - expected).abs() < 1e-12);
    }

    #[test]
    fn bethune_needs_two_gates() {
        let lit = gate_hist(&[1000], 1_000_000);
        assert!(matches!(
            estimate_bethune(&lit, &lit),
            Err(Error::Incompatible(_))
        ));
        let coarse =
            GateHistogram::new(vec![5, 1], 3200, 6400, 2, 100, 1_000_000).unwrap();
        assert!(matches!(
            estimate_bethune(&coarse, &coarse),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn yuan_formula_and_gate_choice() {
        let lit = gate_hist(&[10, 1000, 80, 40, 20], 1_000_000_000);
        let dark = gate_hist(&[10, 10, 10, 10, 10], 1_000_000_000);
        let f_g = 312.5e6;
        let f_l = f_g / 5.0;
        let first = estimate_yuan(&lit, &dark, f_g, f_l).unwrap();
        let expected = (80.0 - 10.0) / (1000.0 - 80.0) * 5.0;
        assert!((first.value - expected).abs() < 1e-12);
        let later = estimate_yuan_at(&lit, &dark, f_g, f_l, 2).unwrap();
        assert!(later.value < first.value);
        assert!(estimate_yuan(&lit, &dark, f_g, f_g / 5.5).is_err());
        assert!(estimate_yuan(&lit, &dark, f_g, f_g / 4.0).is_err());
        assert!(estimate_yuan_at(&lit, &dark, f_g, f_l, 5).is_err());
    }

    #[test]
    fn coincidence_formula() {
        let lit = gate_hist(&[1000, 30, 20, 10], 1_000_000_000);
        let dark = gate_hist(&[5, 5, 5, 5], 1_000_000_000);
        let f_g = 312.5e6;
        let e = estimate_coincidence(&lit, &dark, f_g, f_g / 4.0).unwrap();
        let expected = (60.0 - 0.75 * 20.0) / 1000.0;
        assert!((e.value - expected).abs() < 1e-12);

        // No afterpulses and no dark counts: only coincident clicks.
        let clean = gate_hist(&[1000, 0, 0, 0], 1_000_000_000);
        let none = gate_hist(&[0, 0, 0, 0], 1_000_000_000);
        assert_eq!(estimate_coincidence(&clean, &none, f_g, f_g / 4.0).unwrap().value, 0.0);
        assert!(estimate_coincidence(&none, &none, f_g, f_g / 4.0).is_err());
    }

    #[test]
    fn dcr_baseline_examples() {
        let zero = SweepHistogram::zeros(10, 25_000).unwrap();
        assert_eq!(dcr_baseline(&zero, DEFAULT_DCR_WINDOW).unwrap(), 0.0);
        let flat = SweepHistogram::new(10, 25_000, vec![7; 2500], 10).unwrap();
        assert_eq!(dcr_baseline(&flat, DEFAULT_DCR_WINDOW).unwrap(), 7.0);
        let w = TimeWindow::new(30e-6, 40e-6).unwrap();
        assert!(dcr_baseline(&flat, w).is_err());
    }

    #[test]
    fn custom_flat_histogram_has_no_afterpulses() {
        let mut bins = vec![4; 2500];
        for b in bins.iter_mut().take(21) {
            *b = 0;
        }
        let h = SweepHistogram::new(10, 25_000, bins, 100).unwrap();
        let e = estimate_custom(&h, 0.21e-6, DEFAULT_DCR_WINDOW).unwrap();
        assert!(e.p_exp.abs() < 1e-12);
        assert_eq!(e.c_dcr, 4.0);
        assert!(!e.suspicious);
    }

    #[test]
    fn custom_counts_excess_over_baseline() {
        let mut bins = vec![2u64; 2500];
        bins[100] += 30;
        bins[500] += 20;
        let h = SweepHistogram::new(10, 25_000, bins, 500).unwrap();
        let e = estimate_custom(&h, 0.21e-6, DEFAULT_DCR_WINDOW).unwrap();
        assert!((e.c_ap - 50.0).abs() < 1e-9);
        assert!((e.p_exp - 0.1).abs() < 1e-12);

        let m = merge_bins(&h, 10).unwrap();
        let em = estimate_custom(&m, 0.2e-6, DEFAULT_DCR_WINDOW).unwrap();
        let e2 = estimate_custom(&h, 0.2e-6, DEFAULT_DCR_WINDOW).unwrap();
        assert!((em.p_exp - e2.p_exp).abs() < 1e-12);
    }

    #[test]
    fn custom_flags_negative_excess() {
        let mut bins = vec![0u64; 2500];
        for b in &mut bins[2000..] {
            *b = 50;
        }
        let h = SweepHistogram::new(10, 25_000, bins, 100).unwrap();
        let e = estimate_custom(&h, 0.2e-6, DEFAULT_DCR_WINDOW).unwrap();
        assert!(e.c_ap < 0.0);
        assert!(e.suspicious);
    }

    #[test]
    fn custom_preconditions() {
        let h = SweepHistogram::new(10, 25_000, vec![1; 2500], 0).unwrap();
        assert!(matches!(
            estimate_custom(&h, 1e-6, DEFAULT_DCR_WINDOW),
            Err(Error::Degenerate(_))
        ));
        let h = SweepHistogram::new(10, 25_000, vec![1; 2500], 5).unwrap();
        assert!(estimate_custom(&h, 30e-6, DEFAULT_DCR_WINDOW).is_err());
    }

    #[test]
    fn derive_all_examples() {
        let b = derive_all(0.0, 0.1e6, 1e-6).unwrap();
        assert_eq!((b.p_s, b.p1, b.p2), (0.0, 0.0, 0.0));

        let b = derive_all(0.1, 0.0, 1e-6).unwrap();
        assert_eq!(b.p_s, 0.1);
        assert!((b.p1 - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(b.p2, b.p1);
        // Tiny but non-zero R·τ approaches the same limit.
        let near = derive_all(0.1, 1.0, 1e-6).unwrap();
        assert!((near.p2 - b.p1).abs() < 1e-6);

        assert!(derive_all(0.1, 1.2e6, 1e-6).is_err());
    }

    #[test]
    fn derive_all_round_trips_and_ordering() {
        let grid = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5];
        for &p_exp in &grid {
            for &rt in &grid {
                let b = derive_all(p_exp, rt * 1e6, 1e-6).unwrap();
                let simple = simple_forward(b.p0, b.p_s).unwrap();
                let first =
                    first_order_forward(b.p0, &ModelParams::with_p_ap(b.p1).unwrap()).unwrap();
                let second =
                    second_order_forward(b.p0, &ModelParams::with_p_ap(b.p2).unwrap()).unwrap();
                assert!((simple - b.p_n).abs() < 1e-9);
                assert!((first.value - b.p_n).abs() < 1e-9);
                assert!((second - b.p_n).abs() < 1e-9);
                assert!(b.p1 < b.p_exp && b.p_exp < b.p_s, "{b:?}");
                assert!(b.p1 <= b.p2 && b.p2 <= b.p_s, "{b:?}");
            }
        }
    }
}
