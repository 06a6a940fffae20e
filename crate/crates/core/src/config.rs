//! TOML run configuration for the command line.
//!
//! Times carry their unit in the key name (`_us`, `_ns`); frequencies are in
//! hertz. Every section and key is optional and falls back to the reference
//! setup: 312.5 MHz gating, 10 kHz laser, one photon per pulse, a 25 µs sweep
//! with 10 ns bins. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::TimeWindow;
use crate::simulator::{
    dcr_per_gate_from_hz, DeadTimeScheme, Ramp, SchemeKind, SimConfig, DEFAULT_GATE_FREQUENCY,
};

const US: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub f_g_hz: f64,
    pub pde: f64,
    pub dcr_hz: f64,
    pub p_ap_internal: f64,
    pub tau_detrap_us: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            f_g_hz: DEFAULT_GATE_FREQUENCY,
            pde: 0.2,
            dcr_hz: 100.0,
            p_ap_internal: 0.1,
            tau_detrap_us: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserSection {
    pub f_l_hz: f64,
    pub mu: f64,
}

impl Default for LaserSection {
    fn default() -> Self {
        Self {
            f_l_hz: 1e4,
            mu: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeadTimeSection {
    pub scheme: SchemeKind,
    pub tau_l_us: f64,
    pub tau_c_us: f64,
    pub tau_er_us: f64,
    pub ramp: Ramp,
}

impl Default for DeadTimeSection {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::LtAr,
            tau_l_us: 0.2,
            tau_c_us: 0.2,
            tau_er_us: 0.0,
            ramp: Ramp::Linear,
        }
    }
}

impl DeadTimeSection {
    pub fn scheme(&self) -> DeadTimeScheme {
        DeadTimeScheme {
            kind: self.scheme,
            tau_l: self.tau_l_us * US,
            tau_c: self.tau_c_us * US,
            tau_er: self.tau_er_us * US,
            ramp: self.ramp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub n_gates: u64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_gates: 50_000_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSection {
    pub sweep_us: u64,
    pub bin_width_ns: u64,
    /// Dark-count baseline window, µs from the trigger.
    pub dcr_window_us: [f64; 2],
    /// Start of the afterpulse sum; defaults to the scheme's dead time.
    pub tau_s_us: Option<f64>,
    /// Resolution of gate histograms written next to sweep histograms.
    pub bins_per_gate: u64,
}

impl Default for HistogramSection {
    fn default() -> Self {
        Self {
            sweep_us: 25,
            bin_width_ns: 10,
            dcr_window_us: [20.0, 25.0],
            tau_s_us: None,
            bins_per_gate: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub mu: Vec<f64>,
    /// Gates per simulation for the custom method.
    pub custom_n_gates: u64,
    /// Gates per simulation for the gate-resolved methods.
    pub gate_n_gates: u64,
    /// Gates per laser period for the Yuan and coincidence methods.
    pub gates_per_period: u64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            mu: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            custom_n_gates: 3_125_000_000,
            gate_n_gates: 20_000_000,
            gates_per_period: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub tau_us: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    /// Total count rate held fixed across the grid, Hz.
    pub rate_hz: f64,
    /// Gates per calibration run used to find `mu` for `rate_hz`.
    pub calibration_gates: u64,
    /// Gates per grid point.
    pub n_gates: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            tau_us: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            schemes: vec![SchemeKind::Lt, SchemeKind::LtAr],
            rate_hz: 2000.0,
            calibration_gates: 1_562_500_000,
            n_gates: 3_125_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub detector: DetectorSection,
    pub laser: LaserSection,
    pub dead_time: DeadTimeSection,
    pub run: RunSection,
    pub histogram: HistogramSection,
    pub compare: CompareSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical serialization.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_toml_string().as_bytes())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            f_g: self.detector.f_g_hz,
            f_l: self.laser.f_l_hz,
            mu: self.laser.mu,
            pde: self.detector.pde,
            dcr_per_gate: dcr_per_gate_from_hz(self.detector.dcr_hz, self.detector.f_g_hz),
            p_ap_internal: self.detector.p_ap_internal,
            tau_detrap: self.detector.tau_detrap_us * US,
            scheme: self.dead_time.scheme(),
            n_gates: self.run.n_gates,
            seed: self.run.seed,
        }
    }

    pub fn sweep_ns(&self) -> u64 {
        self.histogram.sweep_us * 1000
    }

    pub fn dcr_window(&self) -> Result<TimeWindow> {
        let [a, b] = self.histogram.dcr_window_us;
        TimeWindow::new(a * US, b * US)
    }

    /// Start of the afterpulse sum, seconds.
    pub fn tau_s(&self) -> f64 {
        self.histogram
            .tau_s_us
            .map(|t| t * US)
            .unwrap_or_else(|| self.dead_time.scheme().statistical_dead_time())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detector.dcr_hz >= 0.0 && self.detector.dcr_hz.is_finite()) {
            return Err(Error::Config(format!(
                "dcr_hz = {} must be >= 0",
                self.detector.dcr_hz
            )));
        }
        self.sim_config().validate()?;

        let h = &self.histogram;
        if h.bin_width_ns == 0 || self.sweep_ns() <= h.bin_width_ns {
            return Err(Error::Config(format!(
                "sweep of {} µs must exceed the {} ns bin width",
                h.sweep_us, h.bin_width_ns
            )));
        }
        let sweep = self.sweep_ns() as f64 * 1e-9;
        let w = self.dcr_window().map_err(|e| Error::Config(e.to_string()))?;
        if w.end > sweep * (1.0 + 1e-12) || (w.end - w.start) < h.bin_width_ns as f64 * 1e-9 {
            return Err(Error::Config(format!(
                "dark-count window [{}, {}] µs must hold at least one bin inside the sweep",
                h.dcr_window_us[0], h.dcr_window_us[1]
            )));
        }
        let tau_s = self.tau_s();
        if !(tau_s >= 0.0 && tau_s < sweep) {
            return Err(Error::Config(format!(
                "tau_s = {tau_s} s must lie inside the sweep"
            )));
        }
        if h.bins_per_gate == 0 {
            return Err(Error::Config("bins_per_gate must be at least 1".into()));
        }

        let c = &self.compare;
        if c.mu.is_empty() || c.mu.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("compare.mu must list positive values".into()));
        }
        if c.gate_n_gates == 0 || c.custom_n_gates == 0 || c.gates_per_period < 2 {
            return Err(Error::Config(
                "compare needs gate counts >= 1 and gates_per_period >= 2".into(),
            ));
        }

        let s = &self.sweep;
        check_tau_grid(&s.tau_us, sweep)?;
        if s.schemes.is_empty() {
            return Err(Error::Config("sweep.schemes is empty".into()));
        }
        if !(s.rate_hz > 0.0 && s.rate_hz.is_finite()) {
            return Err(Error::Config("sweep.rate_hz must be positive".into()));
        }
        if s.calibration_gates == 0 || s.n_gates == 0 {
            return Err(Error::Config("sweep gate counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dead-time grid in µs: non-empty, strictly increasing, inside the sweep.
pub fn check_tau_grid(tau_us: &[f64], sweep: f64) -> Result<()> {
    if tau_us.is_empty() {
        return Err(Error::Config("dead-time grid is empty".into()));
    }
    if tau_us.iter().any(|t| !(*t > 0.0 && t * US < sweep)) {
        return Err(Error::Config(format!(
            "dead times must lie in (0, {} µs)",
            sweep / US
        )));
    }
    if tau_us.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("dead-time grid must be strictly increasing".into()));
    }
    Ok(())
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_setup() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let sim = cfg.sim_config();
        assert_eq!(sim.f_g, 312.5e6);
        assert_eq!(sim.f_l, 1e4);
        assert_eq!(sim.mu, 1.0);
        assert_eq!(cfg.sweep_ns(), 25_000);
        assert!((cfg.tau_s() - 0.2e-6).abs() < 1e-18);
    }

    #[test]
    fn sections_map_onto_the_simulation() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [detector]
            tau_detrap_us = 2.5
            [dead_time]
            scheme = "lt"
            tau_l_us = 1.0
            [histogram]
            tau_s_us = 1.5
            [run]
            seed = 9
            "#,
        )
        .unwrap();
        let sim = cfg.sim_config();
        assert_eq!(sim.scheme.kind, SchemeKind::Lt);
        assert!((sim.scheme.tau_l - 1e-6).abs() < 1e-18);
        assert!((sim.tau_detrap - 2.5e-6).abs() < 1e-18);
        assert!((cfg.tau_s() - 1.5e-6).abs() < 1e-18);
        assert_eq!(sim.seed, 9);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "[run]\nn_gates = 0",
            "[detector]\nunknown = 1",
            "[nope]\nx = 1",
            "[laser]\nf_l_hz = 7000.0",
            "[histogram]\ndcr_window_us = [20.0, 30.0]",
            "[sweep]\ntau_us = [1.0, 0.5]",
            "[sweep]\nschemes = []",
            "[compare]\nmu = [-1.0]",
            "[dead_time]\nscheme = \"xx\"",
            "[detector]\npde = 1.5",
        ];
        for text in bad {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn serialization_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.histogram.tau_s_us = Some(0.25);
        cfg.run.seed = 77;
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        cfg.run.seed = 78;
        assert_ne!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
