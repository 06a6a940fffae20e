use super::{gates_for, ClickTrace};
use crate::error::{Error, Result};
use crate::estimators::GateHistogram;
use crate::histio::SweepHistogram;

/// Which gates carry a laser pulse: every `period_gates`-th gate starting at
/// `phase_gates`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaserSchedule {
    pub period_gates: u64,
    pub phase_gates: u64,
}

impl LaserSchedule {
    pub fn new(period_gates: u64, phase_gates: u64) -> Self {
        Self {
            period_gates: period_gates.max(1),
            phase_gates: phase_gates % period_gates.max(1),
        }
    }

    pub fn is_laser_gate(&self, gate: u64) -> bool {
        gate % self.period_gates == self.phase_gates
    }
}

/// Emulate the oscilloscope: a laser-coincident click opens a sweep of
/// `sweep_ns`, every later click inside the sweep lands in the bin of its
/// delay, and no new trigger is accepted until the sweep has closed.
pub fn build_sweep_histogram(
    trace: &ClickTrace,
    sweep_ns: u64,
    bin_width_ns: u64,
    laser: &LaserSchedule,
) -> Result<SweepHistogram> {
    if !(sweep_ns > bin_width_ns && bin_width_ns > 0) {
        return Err(Error::Domain(format!(
            "need sweep ({sweep_ns} ns) > bin width ({bin_width_ns} ns) > 0"
        )));
    }
    if trace.f_g.fract() != 0.0 {
        return Err(Error::Domain("gate frequency must be whole hertz".into()));
    }
    let mut h = SweepHistogram::zeros(bin_width_ns, sweep_ns)?;
    let f_g = trace.f_g as u128;
    // Delay of k gates in ns is k·1e9/f_g; compare in integers.
    let sweep_limit = sweep_ns as u128 * f_g;
    let bin_div = bin_width_ns as u128 * f_g;
    let n_bins = h.bins().len();

    let clicks = &trace.click_gates;
    let mut i = 0;
    while i < clicks.len() {
        let trigger = clicks[i];
        i += 1;
        if !laser.is_laser_gate(trigger) {
            continue;
        }
        h.add_trigger();
        while i < clicks.len() {
            let scaled = (clicks[i] - trigger) as u128 * 1_000_000_000;
            if scaled >= sweep_limit {
                break;
            }
            let bin = (scaled / bin_div) as usize;
            if bin < n_bins {
                h.bins_mut()[bin] += 1;
            }
            i += 1;
        }
    }
    Ok(h
        .with_meta("source", "simulator")
        .with_meta("clicks", trace.clicks())
        .with_meta("hidden_avalanches", trace.hidden_avalanches)
        .with_meta("total_gates", trace.total_gates)
        .with_meta("f_g_hz", trace.f_g))
}

/// Fold the trace into a histogram over one period of `gates_per_period`
/// gates with `bins_per_gate` bins each. Clicks are placed in the middle bin
/// of their gate. Live time excludes `tau_s` after every click.
pub fn build_gate_histogram(
    trace: &ClickTrace,
    gates_per_period: u64,
    bins_per_gate: u64,
    tau_s: f64,
) -> Result<GateHistogram> {
    if gates_per_period == 0 || bins_per_gate == 0 {
        return Err(Error::Domain(
            "gates per period and bins per gate must be positive".into(),
        ));
    }
    let gate_ps = 1e12 / trace.f_g;
    if gate_ps.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "gate period {gate_ps} ps is not a whole number of picoseconds"
        )));
    }
    let gate_ps = gate_ps as u64;
    if gate_ps % bins_per_gate != 0 {
        return Err(Error::Domain(format!(
            "{bins_per_gate} bins do not divide a {gate_ps} ps gate"
        )));
    }
    let mut bins = vec![0u64; (gates_per_period * bins_per_gate) as usize];
    let dead_gates = gates_for(tau_s, trace.f_g).saturating_sub(1);
    let mut blocked = 0u64;
    for &g in &trace.click_gates {
        let slot = (g % gates_per_period) * bins_per_gate + bins_per_gate / 2;
        bins[slot as usize] += 1;
        blocked += dead_gates.min(trace.total_gates - g - 1);
    }
    let live_gates = trace.total_gates - blocked.min(trace.total_gates);
    let mut h = GateHistogram::new(
        bins,
        gate_ps / bins_per_gate,
        gate_ps * gates_per_period,
        gates_per_period,
        trace.total_gates,
        live_gates * gate_ps,
    )?;
    h.meta.insert("source".into(), "simulator".into());
    h.meta.insert("f_g_hz".into(), trace.f_g.to_string());
    Ok(h)
}
