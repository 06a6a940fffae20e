//! The `spadap` command line.
//!
//! Every command writes CSV with a one-line header, to `--out` or standard
//! output. Diagnostics go to standard error. Runs are deterministic given the
//! configuration: parallel jobs draw their seeds from the base seed and their
//! grid index, and results are assembled in grid order.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::{check_tau_grid, RunConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    derive_all, estimate_bethune, estimate_coincidence, estimate_custom, estimate_yuan_at,
    CustomEstimate, EstimateBundle, GateHistogram, TimeWindow, DEFAULT_DCR_WINDOW,
};
use crate::fitting::{fit_curve, FitResult, Law};
use crate::histio::{
    format_gate_histogram, format_histogram, read_any, read_gate_histogram, HistogramFile,
    SweepHistogram,
};
use crate::simulator::{
    build_gate_histogram, build_sweep_histogram, run_simulation, ClickTrace, DeadTimeScheme,
    SchemeKind, SimConfig,
};

#[derive(Debug, Parser)]
#[command(name = "spadap", version, about = "Afterpulse analysis for gated SPADs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Custom,
    Bethune,
    Yuan,
    Coincidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeChoice {
    Lt,
    LtAr,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LawChoice {
    Power,
    Exponential,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an acquisition and write its sweep histogram.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a gate histogram folded over the laser period.
        #[arg(long)]
        gate_out: Option<PathBuf>,
    },
    /// Estimate the afterpulse probability from histogram files.
    Estimate {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "custom")]
        method: Method,
        /// Dark gate histogram for the gate-resolved methods.
        #[arg(long)]
        dark: Option<PathBuf>,
        /// Total count rate, Hz. Defaults to the `rate_hz` metadata.
        #[arg(long)]
        rate: Option<f64>,
        /// Dead time, µs. Defaults to the `tau_s_ns` metadata.
        #[arg(long)]
        tau_us: Option<f64>,
        /// Dark-count window as `start,end` in µs.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        window_us: Option<Vec<f64>>,
        #[arg(long)]
        f_g: Option<f64>,
        #[arg(long)]
        f_l: Option<f64>,
        /// Gates between the illuminated gate and the one read by the Yuan method.
        #[arg(long, default_value_t = 1)]
        ni_gate: usize,
    },
    /// Compare all four estimators across laser intensities.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep the dead time at a fixed total count rate and fit both laws.
    SweepDeadtime {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dead times in µs.
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeChoice>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit table; defaults to standard error.
        #[arg(long)]
        fit_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit power-law and exponential curves to a CSV table.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Abscissa column; a `_us` or `_ns` suffix sets its unit.
        #[arg(long, default_value = "tau_us")]
        x: String,
        #[arg(long, default_value = "p2")]
        y: String,
        #[arg(long, value_enum, default_value = "both")]
        law: LawChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            out,
            seed,
            gate_out,
        } => cmd_simulate(config.as_deref(), out.as_deref(), seed, gate_out.as_deref()),
        Command::Estimate {
            input,
            method,
            dark,
            rate,
            tau_us,
            window_us,
            f_g,
            f_l,
            ni_gate,
        } => {
            let window = match window_us {
                Some(w) => TimeWindow::new(w[0] * 1e-6, w[1] * 1e-6)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => DEFAULT_DCR_WINDOW,
            };
            let opts = EstimateOptions {
                method,
                dark,
                rate,
                tau_us,
                window,
                f_g,
                f_l,
                ni_gate,
            };
            emit(None, &cmd_estimate(&input, &opts)?)
        }
        Command::Compare {
            config,
            mu,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let mus = mu.unwrap_or_else(|| cfg.compare.mu.clone());
            emit(out.as_deref(), &format_compare(&compare_rows(&cfg, &mus)?))
        }
        Command::SweepDeadtime {
            config,
            tau,
            scheme,
            out,
            fit_out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let taus = tau.unwrap_or_else(|| cfg.sweep.tau_us.clone());
            let schemes = match scheme {
                Some(SchemeChoice::Lt) => vec![SchemeKind::Lt],
                Some(SchemeChoice::LtAr) => vec![SchemeKind::LtAr],
                Some(SchemeChoice::Both) => vec![SchemeKind::Lt, SchemeKind::LtAr],
                None => cfg.sweep.schemes.clone(),
            };
            let rows = sweep_rows(&cfg, &taus, &schemes)?;
            emit(out.as_deref(), &format_sweep(&rows))?;
            let fits = format_fits(&fit_sweep(&rows));
            match fit_out {
                Some(p) => emit(Some(&p), &fits),
                None => {
                    eprint!("{fits}");
                    Ok(())
                }
            }
        }
        Command::Fit {
            input,
            x,
            y,
            law,
            out,
        } => emit(out.as_deref(), &cmd_fit(&input, &x, &y, law)?),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

/// Seed for job `index` of a run seeded with `base` (SplitMix64 mixing).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One simulated acquisition with its sweep histogram.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub trace: ClickTrace,
    pub histogram: SweepHistogram,
    pub tau_s: f64,
}

impl Acquisition {
    pub fn custom_estimate(&self, window: TimeWindow) -> Result<CustomEstimate> {
        estimate_custom(&self.histogram, self.tau_s, window)
    }

    pub fn bundle(&self, window: TimeWindow) -> Result<(CustomEstimate, EstimateBundle)> {
        let est = self.custom_estimate(window)?;
        let bundle = derive_all(est.p_exp, self.trace.rate(), self.tau_s)?;
        Ok((est, bundle))
    }

    /// Like [`Acquisition::bundle`], but a negative `p_exp` from counting
    /// noise yields NaN model parameters instead of an error.
    pub fn bundle_lenient(&self, window: TimeWindow) -> Result<(CustomEstimate, EstimateBundle)> {
        let est = self.custom_estimate(window)?;
        if est.p_exp >= 0.0 {
            return Ok((est, derive_all(est.p_exp, self.trace.rate(), self.tau_s)?));
        }
        eprintln!(
            "warning: p_exp = {} is negative (C0 = {}); model parameters set to NaN",
            est.p_exp, est.c0
        );
        let nan = f64::NAN;
        let bundle = EstimateBundle {
            p_exp: est.p_exp,
            p_n: self.trace.rate() * self.tau_s,
            p0: nan,
            p_s: nan,
            p1: nan,
            p2: nan,
            p_ap: nan,
        };
        Ok((est, bundle))
    }
}

/// Simulate `sim` and histogram it with the sweep settings of `cfg`.
pub fn acquire(cfg: &RunConfig, sim: &SimConfig, tau_s: f64) -> Result<Acquisition> {
    let trace = run_simulation(sim)?;
    let histogram = build_sweep_histogram(
        &trace,
        cfg.sweep_ns(),
        cfg.histogram.bin_width_ns,
        &sim.laser_schedule(),
    )?
    .with_meta("seed", sim.seed)
    .with_meta("config_hash", format!("{:016x}", cfg.fingerprint()))
    .with_meta("rate_hz", trace.rate())
    .with_meta("tau_s_ns", tau_s * 1e9)
    .with_meta("mu", sim.mu);
    Ok(Acquisition {
        trace,
        histogram,
        tau_s,
    })
}

/// Registered time outside dead time, seconds.
pub fn live_time(trace: &ClickTrace, tau_s: f64) -> f64 {
    let total = trace.total_gates as f64 / trace.f_g;
    (total - trace.clicks() as f64 * tau_s).max(0.0)
}

fn cmd_simulate(
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    gate_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let sim = cfg.sim_config();
    let tau_s = cfg.tau_s();
    let acq = acquire(&cfg, &sim, tau_s)?;
    eprintln!(
        "clicks={} hidden_avalanches={} c0={} live_time_s={} rate_hz={}",
        acq.trace.clicks(),
        acq.trace.hidden_avalanches,
        acq.histogram.c0(),
        live_time(&acq.trace, tau_s),
        acq.trace.rate()
    );
    if let Some(p) = gate_out {
        let mut g = build_gate_histogram(
            &acq.trace,
            sim.laser_period_gates(),
            cfg.histogram.bins_per_gate,
            tau_s,
        )?;
        g.meta.insert("seed".into(), sim.seed.to_string());
        std::fs::write(p, format_gate_histogram(&g)?)?;
    }
    emit(out, &format_histogram(&acq.histogram)?)
}

struct EstimateOptions {
    method: Method,
    dark: Option<PathBuf>,
    rate: Option<f64>,
    tau_us: Option<f64>,
    window: TimeWindow,
    f_g: Option<f64>,
    f_l: Option<f64>,
    ni_gate: usize,
}

fn meta_f64(meta: &std::collections::BTreeMap<String, String>, key: &str) -> Option<f64> {
    meta.get(key).and_then(|v| v.parse().ok())
}

fn cmd_estimate(input: &Path, opts: &EstimateOptions) -> Result<String> {
    let mut out = String::new();
    match (read_any(input)?, opts.method) {
        (HistogramFile::Sweep(h), Method::Custom) => {
            let rate = opts
                .rate
                .or_else(|| meta_f64(&h.meta, "rate_hz"))
                .ok_or_else(|| Error::Config("no count rate: pass --rate".into()))?;
            let tau_s = opts
                .tau_us
                .map(|t| t * 1e-6)
                .or_else(|| meta_f64(&h.meta, "tau_s_ns").map(|t| t * 1e-9))
                .ok_or_else(|| Error::Config("no dead time: pass --tau-us".into()))?;
            let est = estimate_custom(&h, tau_s, opts.window)?;
            if est.suspicious {
                eprintln!(
                    "warning: afterpulse counts are negative beyond 3 sigma; check the window and dead time"
                );
            }
            let b = derive_all(est.p_exp, rate, tau_s)?;
            out.push_str("method,p_exp,p_s,p1,p2,P_ap\n");
            writeln!(
                out,
                "custom,{},{},{},{},{}",
                b.p_exp, b.p_s, b.p1, b.p2, b.p_ap
            )
            .unwrap();
        }
        (HistogramFile::Sweep(_), m) => {
            return Err(Error::Incompatible(format!(
                "method {} needs gate histograms, not a sweep histogram",
                method_name(m)
            )));
        }
        (HistogramFile::Gate(_), Method::Custom) => {
            return Err(Error::Incompatible(
                "the custom method needs a sweep histogram".into(),
            ));
        }
        (HistogramFile::Gate(lit), m) => {
            let dark_path = opts.dark.as_ref().ok_or_else(|| {
                Error::Config(format!("method {} needs --dark", method_name(m)))
            })?;
            let dark = read_gate_histogram(dark_path)?;
            let f_g = opts
                .f_g
                .or_else(|| meta_f64(&lit.meta, "f_g_hz"))
                .unwrap_or(crate::simulator::DEFAULT_GATE_FREQUENCY);
            let f_l = opts.f_l.unwrap_or(f_g / lit.gates_per_period() as f64);
            let e = match m {
                Method::Bethune => estimate_bethune(&lit, &dark)?,
                Method::Yuan => estimate_yuan_at(&lit, &dark, f_g, f_l, opts.ni_gate)?,
                Method::Coincidence => estimate_coincidence(&lit, &dark, f_g, f_l)?,
                Method::Custom => unreachable!(),
            };
            out.push_str("method,P_ap\n");
            writeln!(out, "{},{}", method_name(m), e.value).unwrap();
        }
    }
    Ok(out)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Custom => "custom",
        Method::Bethune => "bethune",
        Method::Yuan => "yuan",
        Method::Coincidence => "coincidence",
    }
}

/// One estimator evaluated at one intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: &'static str,
    pub mu: f64,
    /// `p⁽²⁾` for the custom method, `P_ap` for the others.
    pub value: f64,
    pub sigma: f64,
    pub clicks: usize,
}

/// Counting uncertainty of `p2` propagated from that of `p_exp`.
pub fn p2_sigma(est: &CustomEstimate, rate: f64, tau_s: f64) -> Result<f64> {
    let h = (est.sigma * 1e-3).max(1e-12);
    let lo = (est.p_exp - h).max(0.0);
    let hi = est.p_exp + h;
    let slope = (derive_all(hi, rate, tau_s)?.p2 - derive_all(lo, rate, tau_s)?.p2) / (hi - lo);
    Ok(slope.abs() * est.sigma)
}

fn gate_pair(
    cfg: &RunConfig,
    lit: &SimConfig,
    gates_per_period: u64,
    dark_seed: u64,
) -> Result<(GateHistogram, GateHistogram, usize)> {
    let tau_s = lit.scheme.statistical_dead_time();
    let bins = cfg.histogram.bins_per_gate;
    let lit_trace = run_simulation(lit)?;
    let dark_trace = run_simulation(&SimConfig {
        mu: 0.0,
        seed: dark_seed,
        ..lit.clone()
    })?;
    Ok((
        build_gate_histogram(&lit_trace, gates_per_period, bins, tau_s)?,
        build_gate_histogram(&dark_trace, gates_per_period, bins, tau_s)?,
        lit_trace.clicks(),
    ))
}

/// Run all four estimators at every `mu` on matched simulations.
///
/// The custom method uses the configured laser rate, sweep settings and
/// `compare.custom_n_gates`. The
/// Bethune method runs the laser at `f_g/2`; Yuan and coincidence share runs
/// at `f_g/compare.gates_per_period`. Rows are grouped by method in the order
/// custom, bethune, yuan, coincidence, then by `mu` in input order.
pub fn compare_rows(cfg: &RunConfig, mus: &[f64]) -> Result<Vec<CompareRow>> {
    if mus.is_empty() || mus.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::Config("mu values must be positive".into()));
    }
    let base = cfg.sim_config();
    let seed = cfg.run.seed;
    let window = cfg.dcr_window()?;
    let tau_s = cfg.tau_s();
    let m = cfg.compare.gates_per_period;
    let gate_sim = |f_l: f64, mu: f64, s: u64| SimConfig {
        f_l,
        mu,
        n_gates: cfg.compare.gate_n_gates,
        seed: s,
        ..base.clone()
    };

    // Jobs: 0 custom, 1 bethune, 2 yuan + coincidence; three per mu.
    let jobs: Vec<(usize, usize)> = (0..mus.len())
        .flat_map(|i| (0..3).map(move |k| (i, k)))
        .collect();
    let results: Vec<Result<Vec<CompareRow>>> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let mu = mus[i];
            let s = derive_seed(seed, (i * 3 + kind) as u64);
            let dark_seed = derive_seed(seed, u64::MAX - kind as u64);
            match kind {
                0 => {
                    let sim = SimConfig {
                        mu,
                        seed: s,
                        n_gates: cfg.compare.custom_n_gates,
                        ..base.clone()
                    };
                    let acq = acquire(cfg, &sim, tau_s)?;
                    let (est, b) = acq.bundle_lenient(window)?;
                    let sigma = if b.p2.is_nan() {
                        f64::NAN
                    } else {
                        p2_sigma(&est, acq.trace.rate(), tau_s)?
                    };
                    Ok(vec![CompareRow {
                        method: "custom",
                        mu,
                        value: b.p2,
                        sigma,
                        clicks: acq.trace.clicks(),
                    }])
                }
                1 => {
                    let sim = gate_sim(base.f_g / 2.0, mu, s);
                    let (lit, dark, clicks) = gate_pair(cfg, &sim, 2, dark_seed)?;
                    let e = estimate_bethune(&lit, &dark)?;
                    Ok(vec![CompareRow {
                        method: "bethune",
                        mu,
                        value: e.value,
                        sigma: e.sigma,
                        clicks,
                    }])
                }
                _ => {
                    let f_l = base.f_g / m as f64;
                    let sim = gate_sim(f_l, mu, s);
                    let (lit, dark, clicks) = gate_pair(cfg, &sim, m, dark_seed)?;
                    let y = estimate_yuan_at(&lit, &dark, base.f_g, f_l, 1)?;
                    let c = estimate_coincidence(&lit, &dark, base.f_g, f_l)?;
                    Ok(vec![
                        CompareRow {
                            method: "yuan",
                            mu,
                            value: y.value,
                            sigma: y.sigma,
                            clicks,
                        },
                        CompareRow {
                            method: "coincidence",
                            mu,
                            value: c.value,
                            sigma: c.sigma,
                            clicks,
                        },
                    ])
                }
            }
        })
        .collect();

    let mut flat = Vec::new();
    for r in results {
        flat.extend(r?);
    }
    let order = ["custom", "bethune", "yuan", "coincidence"];
    flat.sort_by_key(|r| order.iter().position(|&m| m == r.method));
    Ok(flat)
}

pub fn format_compare(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,mu,p_ap,sigma,clicks\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.method, r.mu, r.value, r.sigma, r.clicks).unwrap();
    }
    out
}

/// Dead-time scheme used at sweep point `tau` seconds.
pub fn sweep_scheme(cfg: &RunConfig, kind: SchemeKind, tau: f64) -> DeadTimeScheme {
    match kind {
        SchemeKind::Lt => DeadTimeScheme::lt(tau),
        SchemeKind::LtAr => {
            DeadTimeScheme::lt_ar(tau, tau, cfg.dead_time.tau_er_us * 1e-6, cfg.dead_time.ramp)
        }
    }
}

/// Mean photon number giving a total count rate of `rate_hz`, found by
/// bisection in `ln μ` over runs of `n_gates` sharing one seed.
pub fn calibrate_mu(sim: &SimConfig, rate_hz: f64, n_gates: u64) -> Result<f64> {
    let rate_at = |mu: f64| -> Result<f64> {
        Ok(run_simulation(&SimConfig {
            mu,
            n_gates,
            ..sim.clone()
        })?
        .rate())
    };
    let (mut lo, mut hi) = (1e-4f64.ln(), 1e3f64.ln());
    if rate_at(hi.exp())? < rate_hz {
        return Err(Error::Degenerate(format!(
            "count rate {rate_hz} Hz is out of reach at this laser rate and dead time"
        )));
    }
    if rate_at(lo.exp())? > rate_hz {
        return Err(Error::Degenerate(format!(
            "dark and afterpulse counts alone exceed {rate_hz} Hz"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid.exp())? < rate_hz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Custom-method result at one dead time of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: SchemeKind,
    pub tau_us: f64,
    pub mu: f64,
    pub rate_hz: f64,
    pub c0: u64,
    pub p_exp: f64,
    pub sigma: f64,
    pub bundle: EstimateBundle,
    pub min_spacing_gates: Option<u64>,
    pub histogram: SweepHistogram,
}

/// Run the dead-time sweep at the configured fixed total count rate.
pub fn sweep_rows(cfg: &RunConfig, tau_us: &[f64], schemes: &[SchemeKind]) -> Result<Vec<SweepRow>> {
    if schemes.is_empty() {
        return Err(Error::Config("no dead-time scheme selected".into()));
    }
    check_tau_grid(tau_us, cfg.sweep_ns() as f64 * 1e-9)?;
    let base = cfg.sim_config();
    let window = cfg.dcr_window()?;
    let n_gates = cfg.sweep.n_gates;
    let jobs: Vec<(SchemeKind, f64)> = schemes
        .iter()
        .flat_map(|&k| tau_us.iter().map(move |&t| (k, t)))
        .collect();

    jobs.par_iter()
        .enumerate()
        .map(|(i, &(kind, t))| {
            let tau = t * 1e-6;
            let sim = SimConfig {
                scheme: sweep_scheme(cfg, kind, tau),
                seed: derive_seed(cfg.run.seed, 2 * i as u64),
                ..base.clone()
            };
            let mu = calibrate_mu(&sim, cfg.sweep.rate_hz, cfg.sweep.calibration_gates)?;
            let sim = SimConfig {
                mu,
                n_gates,
                seed: derive_seed(cfg.run.seed, 2 * i as u64 + 1),
                ..sim
            };
            let acq = acquire(cfg, &sim, tau)?;
            let (est, bundle) = acq.bundle_lenient(window)?;
            Ok(SweepRow {
                scheme: kind,
                tau_us: t,
                mu,
                rate_hz: acq.trace.rate(),
                c0: est.c0,
                p_exp: est.p_exp,
                sigma: est.sigma,
                bundle,
                min_spacing_gates: acq.trace.min_spacing_gates(),
                histogram: acq.histogram,
            })
        })
        .collect()
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("scheme,tau_us,mu,rate_hz,c0,p_exp,sigma,p_s,p1,p2,P_ap\n");
    for r in rows {
        let b = &r.bundle;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme, r.tau_us, r.mu, r.rate_hz, r.c0, r.p_exp, r.sigma, b.p_s, b.p1, b.p2, b.p_ap
        )
        .unwrap();
    }
    out
}

/// Both laws fitted to `p2` against dead time, per scheme with enough points.
pub fn fit_sweep(rows: &[SweepRow]) -> Vec<(String, FitResult)> {
    let mut schemes: Vec<SchemeKind> = Vec::new();
    for r in rows {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    let mut fits = Vec::new();
    for s in schemes {
        let pts: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.scheme == s && r.bundle.p2.is_finite())
            .collect();
        let xs: Vec<f64> = pts.iter().map(|r| r.tau_us * 1e-6).collect();
        let ys: Vec<f64> = pts.iter().map(|r| r.bundle.p2).collect();
        for law in [Law::PowerLaw, Law::Exponential] {
            match fit_curve(&xs, &ys, law) {
                Ok(f) => fits.push((s.to_string(), f)),
                Err(e) => eprintln!("warning: no {law} fit for {s}: {e}"),
            }
        }
    }
    fits
}

pub fn format_fits(fits: &[(String, FitResult)]) -> String {
    let mut out = String::from("group,law,a,b,c,rss,iterations,converged\n");
    for (group, f) in fits {
        writeln!(
            out,
            "{group},{},{},{},{},{},{},{}",
            f.law, f.a, f.b, f.c, f.rss, f.iterations, f.converged
        )
        .unwrap();
    }
    out
}

fn column_scale(name: &str) -> f64 {
    if name.ends_with("_us") {
        1e-6
    } else if name.ends_with("_ns") {
        1e-9
    } else {
        1.0
    }
}

fn cmd_fit(input: &Path, x: &str, y: &str, law: LawChoice) -> Result<String> {
    let text = std::fs::read_to_string(input)?;
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines
        .next()
        .ok_or(Error::EmptyHistogram)?
        .1
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("no column '{name}' in {}", input.display())))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let gi = header.iter().position(|h| *h == "scheme");
    let scale = column_scale(x);

    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: n + 1,
                    msg: format!("expected a number in column {}", i + 1),
                })
        };
        let group = gi.and_then(|i| fields.get(i)).unwrap_or(&"all").to_string();
        let (xv, yv) = (parse(xi)? * scale, parse(yi)?);
        match groups.iter_mut().find(|g| g.0 == group) {
            Some(g) => {
                g.1.push(xv);
                g.2.push(yv);
            }
            None => groups.push((group, vec![xv], vec![yv])),
        }
    }
    let laws: &[Law] = match law {
        LawChoice::Power => &[Law::PowerLaw],
        LawChoice::Exponential => &[Law::Exponential],
        LawChoice::Both => &[Law::PowerLaw, Law::Exponential],
    };
    let mut fits = Vec::new();
    for (g, xs, ys) in &groups {
        for &l in laws {
            fits.push((g.clone(), fit_curve(xs, ys, l)?));
        }
    }
    Ok(format_fits(&fits))
}
