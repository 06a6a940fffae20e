use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Comparator latching only; the SPAD stays biased during dead time.
    #[serde(rename = "lt")]
    Lt,
    /// Latching plus an active reset pulse that pulls the bias below breakdown.
    #[serde(rename = "lt-ar")]
    LtAr,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lt" => Ok(SchemeKind::Lt),
            "lt-ar" | "lt_ar" | "ltar" => Ok(SchemeKind::LtAr),
            _ => Err(Error::Config(format!("unknown dead-time scheme '{s}'"))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Lt => "lt",
            SchemeKind::LtAr => "lt-ar",
        })
    }
}

/// Shape of the efficiency recovery once the reset pulse ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ramp {
    #[default]
    Linear,
    Step,
}

/// Dead-time electronics: latching time, reset pulse width and the
/// bias-recovery transient that follows it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTimeScheme {
    pub kind: SchemeKind,
    /// Comparator latching time, seconds.
    pub tau_l: f64,
    /// Reset pulse width, seconds. Ignored for [`SchemeKind::Lt`].
    pub tau_c: f64,
    /// Recovery transient after the reset pulse, seconds.
    pub tau_er: f64,
    pub ramp: Ramp,
}

impl DeadTimeScheme {
    pub fn lt(tau_l: f64) -> Self {
        Self {
            kind: SchemeKind::Lt,
            tau_l,
            tau_c: 0.0,
            tau_er: 0.0,
            ramp: Ramp::Linear,
        }
    }

    pub fn lt_ar(tau_l: f64, tau_c: f64, tau_er: f64, ramp: Ramp) -> Self {
        Self {
            kind: SchemeKind::LtAr,
            tau_l,
            tau_c,
            tau_er,
            ramp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_l > 0.0 && self.tau_l.is_finite()) {
            return Err(Error::Config(format!("tau_l = {} must be > 0", self.tau_l)));
        }
        if self.kind == SchemeKind::LtAr {
            if !(self.tau_c > 0.0 && self.tau_c.is_finite()) {
                return Err(Error::Config(format!("tau_c = {} must be > 0", self.tau_c)));
            }
            if !(self.tau_er >= 0.0 && self.tau_er.is_finite()) {
                return Err(Error::Config(format!(
                    "tau_er = {} must be >= 0",
                    self.tau_er
                )));
            }
        }
        Ok(())
    }

    /// Shortest possible interval between two registered clicks.
    pub fn statistical_dead_time(&self) -> f64 {
        match self.kind {
            SchemeKind::Lt => self.tau_l,
            SchemeKind::LtAr => self.tau_l.max(self.tau_c),
        }
    }

    /// Relative avalanche probability `t` seconds after a registered click,
    /// ignoring the comparator. Always 1 for the latched-only scheme.
    pub fn bias_recovery(&self, t: f64) -> f64 {
        match self.kind {
            SchemeKind::Lt => 1.0,
            SchemeKind::LtAr => {
                if t < self.tau_c {
                    0.0
                } else {
                    match self.ramp {
                        Ramp::Step => 1.0,
                        Ramp::Linear if self.tau_er <= 0.0 => 1.0,
                        Ramp::Linear => ((t - self.tau_c) / self.tau_er).min(1.0),
                    }
                }
            }
        }
    }
}

/// Probability, relative to a fully recovered detector, that an avalanche at
/// `t_since_click` after a registered click is itself registered.
pub fn effective_efficiency(t_since_click: f64, scheme: &DeadTimeScheme) -> f64 {
    if t_since_click < scheme.tau_l {
        return 0.0;
    }
    scheme.bias_recovery(t_since_click)
}
