//! Monte Carlo model of a sine-gated SPAD.
//!
//! The detector is resolved on the gate grid. Light, dark and trap-release
//! avalanches are independent per gate; the engine jumps from one gate with a
//! candidate avalanche to the next instead of visiting every gate, which keeps
//! long acquisitions at low laser rates cheap. Each avalanche, registered or
//! not, traps at most one carrier with probability `p_ap_internal`; the
//! carrier is released after an exponential delay and fires at the next gate.

mod histograms;
mod scheme;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};

pub use histograms::{build_gate_histogram, build_sweep_histogram, LaserSchedule};
pub use scheme::{effective_efficiency, DeadTimeScheme, Ramp, SchemeKind};

use crate::error::{Error, Result};

/// Gate frequency of the reference detector, Hz.
pub const DEFAULT_GATE_FREQUENCY: f64 = 312.5e6;

/// Smallest `k` with `k / f_g >= t`.
pub(crate) fn gates_for(t: f64, f_g: f64) -> u64 {
    let x = t * f_g;
    if x <= 0.0 {
        0
    } else {
        (x - 1e-9).ceil() as u64
    }
}

/// Full description of one simulated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Gate frequency, Hz. Must be a whole number of hertz.
    pub f_g: f64,
    /// Laser repetition rate, Hz. `f_g / f_l` must be an integer.
    pub f_l: f64,
    /// Mean photon number per laser pulse.
    pub mu: f64,
    /// Detection efficiency per arriving photon.
    pub pde: f64,
    /// Dark click probability per gate.
    pub dcr_per_gate: f64,
    /// Probability that an avalanche traps a carrier.
    pub p_ap_internal: f64,
    /// Mean carrier release delay, seconds.
    pub tau_detrap: f64,
    pub scheme: DeadTimeScheme,
    pub n_gates: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            f_g: DEFAULT_GATE_FREQUENCY,
            f_l: 1e4,
            mu: 1.0,
            pde: 0.2,
            dcr_per_gate: dcr_per_gate_from_hz(100.0, DEFAULT_GATE_FREQUENCY),
            p_ap_internal: 0.1,
            tau_detrap: 1e-6,
            scheme: DeadTimeScheme::lt_ar(0.2e-6, 0.2e-6, 0.0, Ramp::Linear),
            n_gates: 50_000_000,
            seed: 1,
        }
    }
}

/// Per-gate dark click probability for a dark count rate in Hz.
pub fn dcr_per_gate_from_hz(dcr_hz: f64, f_g: f64) -> f64 {
    -(-dcr_hz / f_g).exp_m1()
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} is not in [0, 1]")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_g > 0.0 && self.f_g.is_finite() && self.f_g.fract() == 0.0) {
            return Err(Error::Config(format!(
                "gate frequency {} Hz must be a positive whole number",
                self.f_g
            )));
        }
        if !(self.f_l > 0.0 && self.f_l <= self.f_g) {
            return Err(Error::Config(format!(
                "laser rate {} Hz must be in (0, f_g]",
                self.f_l
            )));
        }
        let ratio = self.f_g / self.f_l;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "f_g / f_l = {ratio} is not an integer"
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu = {} must be >= 0", self.mu)));
        }
        check_unit("pde", self.pde)?;
        check_unit("dcr_per_gate", self.dcr_per_gate)?;
        check_unit("p_ap_internal", self.p_ap_internal)?;
        if !(self.tau_detrap > 0.0 && self.tau_detrap.is_finite()) {
            return Err(Error::Config(format!(
                "tau_detrap = {} must be > 0",
                self.tau_detrap
            )));
        }
        if self.n_gates == 0 {
            return Err(Error::Config("n_gates must be at least 1".into()));
        }
        self.scheme.validate()
    }

    /// Gates between two laser pulses.
    pub fn laser_period_gates(&self) -> u64 {
        (self.f_g / self.f_l).round() as u64
    }

    pub fn laser_schedule(&self) -> LaserSchedule {
        LaserSchedule::new(self.laser_period_gates(), 0)
    }

    /// Click probability of a laser-aligned gate from light alone.
    pub fn photon_click_probability(&self) -> f64 {
        -(-self.mu * self.pde).exp_m1()
    }

    pub fn acquisition_time(&self) -> f64 {
        self.n_gates as f64 / self.f_g
    }
}

/// Registered clicks of one acquisition, on the gate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickTrace {
    /// Gate index of every registered click, strictly increasing.
    pub click_gates: Vec<u64>,
    /// Avalanches that fired while the comparator was latched.
    pub hidden_avalanches: u64,
    pub total_gates: u64,
    pub f_g: f64,
}

impl ClickTrace {
    pub fn click_times(&self) -> impl Iterator<Item = f64> + '_ {
        let period = 1.0 / self.f_g;
        self.click_gates.iter().map(move |&g| g as f64 * period)
    }

    pub fn clicks(&self) -> usize {
        self.click_gates.len()
    }

    /// Registered clicks per second.
    pub fn rate(&self) -> f64 {
        self.click_gates.len() as f64 * self.f_g / self.total_gates as f64
    }

    /// Smallest interval between consecutive clicks, in gates.
    pub fn min_spacing_gates(&self) -> Option<u64> {
        self.click_gates.windows(2).map(|w| w[1] - w[0]).min()
    }
}

/// Pending carrier releases, keyed by the gate at which they take effect.
#[derive(Debug, Default, Clone)]
pub struct TrapQueue {
    pending: BinaryHeap<Reverse<u64>>,
}

impl TrapQueue {
    pub fn push(&mut self, release_gate: u64) {
        self.pending.push(Reverse(release_gate));
    }

    pub fn next_release(&self) -> Option<u64> {
        self.pending.peek().map(|r| r.0)
    }

    /// Remove every release due at `gate`; returns how many there were.
    pub fn drain_at(&mut self, gate: u64) -> usize {
        let mut n = 0;
        while self.next_release() == Some(gate) {
            self.pending.pop();
            n += 1;
        }
        n
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Exponentially distributed carrier release delay with mean `tau_detrap`.
pub fn sample_detrap_delay<R: Rng + ?Sized>(rng: &mut R, tau_detrap: f64) -> f64 {
    Exp::new(1.0 / tau_detrap)
        .expect("tau_detrap must be positive")
        .sample(rng)
}

/// Source of independent per-gate Bernoulli events on a regular gate lattice.
struct GeometricStream {
    dist: Option<Geometric>,
    stride: u64,
    next: u64,
}

impl GeometricStream {
    fn new<R: Rng>(p: f64, stride: u64, rng: &mut R) -> Self {
        let dist = (p > 0.0).then(|| Geometric::new(p).expect("probability in (0, 1]"));
        let mut s = Self {
            dist,
            stride,
            next: u64::MAX,
        };
        if let Some(d) = &s.dist {
            s.next = d.sample(rng).saturating_mul(stride);
        }
        s
    }

    fn advance<R: Rng>(&mut self, rng: &mut R) {
        if let Some(d) = &self.dist {
            let skip = d.sample(rng).saturating_add(1).saturating_mul(self.stride);
            self.next = self.next.saturating_add(skip);
        }
    }
}

enum Phase {
    /// Bias below breakdown: nothing can avalanche.
    HoldOff,
    /// Comparator latched; avalanches happen with the given probability.
    Latched(f64),
    /// Armed; avalanches are registered with the given probability.
    Armed(f64),
}

struct PhaseTable {
    scheme: DeadTimeScheme,
    f_g: f64,
    hold_gates: u64,
    latch_gates: u64,
}

impl PhaseTable {
    fn new(scheme: DeadTimeScheme, f_g: f64) -> Self {
        let hold_gates = match scheme.kind {
            SchemeKind::Lt => 0,
            SchemeKind::LtAr => gates_for(scheme.tau_c, f_g),
        };
        Self {
            scheme,
            f_g,
            hold_gates,
            latch_gates: gates_for(scheme.tau_l, f_g),
        }
    }

    fn recovery(&self, k: u64) -> f64 {
        match self.scheme.kind {
            SchemeKind::Lt => 1.0,
            SchemeKind::LtAr => match self.scheme.ramp {
                Ramp::Step => 1.0,
                Ramp::Linear if self.scheme.tau_er <= 0.0 => 1.0,
                Ramp::Linear => {
                    let t = k as f64 / self.f_g;
                    ((t - self.scheme.tau_c) / self.scheme.tau_er).clamp(0.0, 1.0)
                }
            },
        }
    }

    fn phase(&self, since_click: Option<u64>) -> Phase {
        let Some(k) = since_click else {
            return Phase::Armed(1.0);
        };
        if k < self.hold_gates {
            Phase::HoldOff
        } else if k < self.latch_gates {
            Phase::Latched(self.recovery(k))
        } else {
            Phase::Armed(self.recovery(k))
        }
    }
}

/// Run one acquisition. Deterministic for a given configuration and seed.
pub fn run_simulation(cfg: &SimConfig) -> Result<ClickTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let detrap = Exp::new(1.0 / cfg.tau_detrap).expect("validated");
    let phases = PhaseTable::new(cfg.scheme, cfg.f_g);

    let mut laser = GeometricStream::new(
        cfg.photon_click_probability(),
        cfg.laser_period_gates(),
        &mut rng,
    );
    let mut dark = GeometricStream::new(cfg.dcr_per_gate, 1, &mut rng);
    let mut traps = TrapQueue::default();

    let mut clicks = Vec::new();
    let mut hidden = 0u64;
    let mut last_click: Option<u64> = None;

    let spawn = |gate: u64, rng: &mut ChaCha8Rng, traps: &mut TrapQueue| {
        if cfg.p_ap_internal > 0.0 && rng.random::<f64>() < cfg.p_ap_internal {
            let delay = detrap.sample(rng) * cfg.f_g;
            let release = gate.saturating_add((delay.ceil() as u64).max(1));
            if release < cfg.n_gates {
                traps.push(release);
            }
        }
    };

    loop {
        let gate = laser
            .next
            .min(dark.next)
            .min(traps.next_release().unwrap_or(u64::MAX));
        if gate >= cfg.n_gates {
            break;
        }
        if laser.next == gate {
            laser.advance(&mut rng);
        }
        if dark.next == gate {
            dark.advance(&mut rng);
        }
        // Releases due now are consumed whether or not they avalanche.
        traps.drain_at(gate);

        match phases.phase(last_click.map(|l| gate - l)) {
            Phase::HoldOff => {}
            Phase::Latched(p) => {
                if p >= 1.0 || rng.random::<f64>() < p {
                    hidden += 1;
                    spawn(gate, &mut rng, &mut traps);
                }
            }
            Phase::Armed(p) => {
                if p >= 1.0 || rng.random::<f64>() < p {
                    clicks.push(gate);
                    last_click = Some(gate);
                    spawn(gate, &mut rng, &mut traps);
                }
            }
        }
    }

    Ok(ClickTrace {
        click_gates: clicks,
        hidden_avalanches: hidden,
        total_gates: cfg.n_gates,
        f_g: cfg.f_g,
    })
}
