//! Sweep histograms and their text file format.
//!
//! A histogram file is UTF-8 text. Metadata lines look like `# key = value`;
//! `bin_width_ns`, `sweep_ns` and `c0` are mandatory. Each following line is a
//! record `bin_start_ns,count` with non-negative integers. The trigger bin is
//! kept in `c0` and never appears as a record.
//!
//! Gate-resolved histograms (see [`GateHistogram`]) use the same layout with
//! picosecond keys (`bin_width_ps`, `period_ps`, `gates_per_period`,
//! `acquisition_gates`, `live_time_ps`) and `bin_start_ps,count` records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::GateHistogram;

const SWEEP_KEYS: [&str; 3] = ["bin_width_ns", "sweep_ns", "c0"];
const GATE_KEYS: [&str; 5] = [
    "bin_width_ps",
    "period_ps",
    "gates_per_period",
    "acquisition_gates",
    "live_time_ps",
];

/// Click counts binned by delay after a trigger click.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepHistogram {
    bin_width_ns: u64,
    sweep_ns: u64,
    bins: Vec<u64>,
    c0: u64,
    pub meta: BTreeMap<String, String>,
}

impl SweepHistogram {
    pub fn new(bin_width_ns: u64, sweep_ns: u64, bins: Vec<u64>, c0: u64) -> Result<Self> {
        if bin_width_ns == 0 {
            return Err(Error::Domain("bin width must be positive".into()));
        }
        if bins.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        let covered = bins.len() as u64 * bin_width_ns;
        if covered.abs_diff(sweep_ns) >= bin_width_ns {
            return Err(Error::Domain(format!(
                "{} bins of {bin_width_ns} ns do not cover a {sweep_ns} ns sweep",
                bins.len()
            )));
        }
        Ok(Self {
            bin_width_ns,
            sweep_ns,
            bins,
            c0,
            meta: BTreeMap::new(),
        })
    }

    /// All-zero histogram with `sweep_ns / bin_width_ns` bins.
    pub fn zeros(bin_width_ns: u64, sweep_ns: u64) -> Result<Self> {
        if bin_width_ns == 0 || sweep_ns < bin_width_ns {
            return Err(Error::Domain(format!(
                "need sweep ({sweep_ns} ns) >= bin width ({bin_width_ns} ns) > 0"
            )));
        }
        Self::new(
            bin_width_ns,
            sweep_ns,
            vec![0; (sweep_ns / bin_width_ns) as usize],
            0,
        )
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub(crate) fn bins_mut(&mut self) -> &mut [u64] {
        &mut self.bins
    }

    pub fn c0(&self) -> u64 {
        self.c0
    }

    pub(crate) fn add_trigger(&mut self) {
        self.c0 += 1;
    }

    pub fn bin_width_ns(&self) -> u64 {
        self.bin_width_ns
    }

    pub fn sweep_ns(&self) -> u64 {
        self.sweep_ns
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width_ns as f64 * 1e-9
    }

    pub fn sweep(&self) -> f64 {
        self.sweep_ns as f64 * 1e-9
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Index of the first bin that can hold a click at or after `t` seconds.
    pub fn bin_at(&self, t: f64) -> usize {
        let idx = (t / self.bin_width() + 1e-9).floor();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.bins.len())
        }
    }

    /// Half-open range of bins lying entirely inside `[start, end]` seconds.
    pub fn bins_within(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let w = self.bin_width();
        let first = (start / w - 1e-9).ceil().max(0.0) as usize;
        let last = ((end / w + 1e-9).floor().max(0.0) as usize).min(self.bins.len());
        first.min(last)..last
    }
}

/// Sum consecutive groups of `factor` bins.
pub fn merge_bins(h: &SweepHistogram, factor: usize) -> Result<SweepHistogram> {
    if factor == 0 || h.bins.len() % factor != 0 {
        return Err(Error::Domain(format!(
            "merge factor {factor} does not divide {} bins",
            h.bins.len()
        )));
    }
    let bins = h.bins.chunks(factor).map(|c| c.iter().sum()).collect();
    let mut out = SweepHistogram::new(h.bin_width_ns * factor as u64, h.sweep_ns, bins, h.c0)?;
    out.meta = h.meta.clone();
    Ok(out)
}

/// Bins divided by `c0 − c_dcr`, for display only.
pub fn normalize_for_plot(h: &SweepHistogram, c_dcr: f64) -> Result<Vec<f64>> {
    let norm = h.c0 as f64 - c_dcr;
    if norm <= 0.0 {
        return Err(Error::Degenerate(format!(
            "c0 = {} does not exceed c_dcr = {c_dcr}",
            h.c0
        )));
    }
    Ok(h.bins.iter().map(|&c| c as f64 / norm).collect())
}

/// Either kind of histogram file.
#[derive(Debug, Clone, PartialEq)]
pub enum HistogramFile {
    Sweep(SweepHistogram),
    Gate(GateHistogram),
}

fn check_meta_entry(key: &str, value: &str) -> Result<()> {
    let bad_key = key.is_empty() || key.contains(['=', '\n', '\r']) || key.trim() != key;
    if bad_key || value.contains(['\n', '\r']) || value.trim() != value {
        return Err(Error::Config(format!(
            "metadata entry '{key} = {value}' cannot be written"
        )));
    }
    Ok(())
}

fn write_records(
    out: &mut String,
    header: &[(&str, u64)],
    meta: &BTreeMap<String, String>,
    width: u64,
    bins: &[u64],
) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k} = {v}").unwrap();
    }
    for (k, v) in meta {
        if header.iter().any(|(h, _)| h == k) {
            continue;
        }
        check_meta_entry(k, v)?;
        writeln!(out, "# {k} = {v}").unwrap();
    }
    for (i, c) in bins.iter().enumerate() {
        writeln!(out, "{},{c}", i as u64 * width).unwrap();
    }
    Ok(())
}

/// Serialize a sweep histogram to the text format.
pub fn format_histogram(h: &SweepHistogram) -> Result<String> {
    let mut out = String::with_capacity(h.bins.len() * 12 + 128);
    let header = [
        ("bin_width_ns", h.bin_width_ns),
        ("sweep_ns", h.sweep_ns),
        ("c0", h.c0),
    ];
    write_records(&mut out, &header, &h.meta, h.bin_width_ns, &h.bins)?;
    Ok(out)
}

pub fn format_gate_histogram(h: &GateHistogram) -> Result<String> {
    let mut out = String::with_capacity(h.bins().len() * 12 + 128);
    let header = [
        ("bin_width_ps", h.bin_width_ps()),
        ("period_ps", h.period_ps()),
        ("gates_per_period", h.gates_per_period()),
        ("acquisition_gates", h.acquisition_gates()),
        ("live_time_ps", h.live_time_ps()),
    ];
    write_records(&mut out, &header, &h.meta, h.bin_width_ps(), h.bins())?;
    Ok(out)
}

pub fn write_histogram(h: &SweepHistogram, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_histogram(h)?)?;
    Ok(())
}

pub fn write_gate_histogram(h: &GateHistogram, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_gate_histogram(h)?)?;
    Ok(())
}

struct Table {
    meta: BTreeMap<String, String>,
    records: Vec<(u64, u64, usize)>,
}

fn parse_u64(field: &str, line: usize, what: &str) -> Result<u64> {
    field.parse::<u64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} '{field}' is not a non-negative integer"),
    })
}

fn parse_table(text: &str) -> Result<Table> {
    let mut meta = BTreeMap::new();
    let mut records = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    for (idx, raw) in lines.iter().copied().enumerate() {
        let line = idx + 1;
        if raw.is_empty() {
            // Only the terminating newline may leave an empty final line.
            if idx + 1 == lines.len() {
                continue;
            }
            return Err(Error::Parse {
                line,
                msg: "empty line".into(),
            });
        }
        if let Some(rest) = raw.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                let key = k.trim().to_string();
                if meta.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate key '{key}'"),
                    });
                }
            }
            continue;
        }
        let (start, count) = raw.split_once(',').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected 'bin_start,count', got '{raw}'"),
        })?;
        let start = parse_u64(start, line, "bin start")?;
        let count = parse_u64(count, line, "count")?;
        records.push((start, count, line));
    }
    Ok(Table { meta, records })
}

fn take_key(meta: &mut BTreeMap<String, String>, key: &str) -> Result<u64> {
    let v = meta.remove(key).ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("missing mandatory key '{key}'"),
    })?;
    v.parse::<u64>().map_err(|_| Error::Parse {
        line: 0,
        msg: format!("key '{key}' has non-integer value '{v}'"),
    })
}

fn check_starts(records: &[(u64, u64, usize)], width: u64) -> Result<Vec<u64>> {
    if records.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    records
        .iter()
        .enumerate()
        .map(|(i, &(start, count, line))| {
            if start != i as u64 * width {
                Err(Error::Parse {
                    line,
                    msg: format!("bin start {start} should be {}", i as u64 * width),
                })
            } else {
                Ok(count)
            }
        })
        .collect()
}

/// Parse either histogram kind from text.
pub fn parse_any(text: &str) -> Result<HistogramFile> {
    let Table { mut meta, records } = parse_table(text)?;
    if meta.contains_key("bin_width_ns") {
        let width = take_key(&mut meta, SWEEP_KEYS[0])?;
        let sweep = take_key(&mut meta, SWEEP_KEYS[1])?;
        let c0 = take_key(&mut meta, SWEEP_KEYS[2])?;
        if width == 0 {
            return Err(Error::Parse {
                line: 0,
                msg: "bin_width_ns must be positive".into(),
            });
        }
        let bins = check_starts(&records, width)?;
        let mut h = SweepHistogram::new(width, sweep, bins, c0)?;
        h.meta = meta;
        Ok(HistogramFile::Sweep(h))
    } else if meta.contains_key("bin_width_ps") {
        let width = take_key(&mut meta, GATE_KEYS[0])?;
        let period = take_key(&mut meta, GATE_KEYS[1])?;
        let gates = take_key(&mut meta, GATE_KEYS[2])?;
        let acq = take_key(&mut meta, GATE_KEYS[3])?;
        let live = take_key(&mut meta, GATE_KEYS[4])?;
        if width == 0 {
            return Err(Error::Parse {
                line: 0,
                msg: "bin_width_ps must be positive".into(),
            });
        }
        let bins = check_starts(&records, width)?;
        let mut h = GateHistogram::new(bins, width, period, gates, acq, live)?;
        h.meta = meta;
        Ok(HistogramFile::Gate(h))
    } else {
        Err(Error::Parse {
            line: 0,
            msg: "missing mandatory key 'bin_width_ns'".into(),
        })
    }
}

pub fn parse_histogram(text: &str) -> Result<SweepHistogram> {
    match parse_any(text)? {
        HistogramFile::Sweep(h) => Ok(h),
        HistogramFile::Gate(_) => Err(Error::Incompatible(
            "expected a sweep histogram, found a gate histogram".into(),
        )),
    }
}

pub fn read_histogram(path: impl AsRef<Path>) -> Result<SweepHistogram> {
    parse_histogram(&fs::read_to_string(path)?)
}

pub fn read_gate_histogram(path: impl AsRef<Path>) -> Result<GateHistogram> {
    match parse_any(&fs::read_to_string(path)?)? {
        HistogramFile::Gate(h) => Ok(h),
        HistogramFile::Sweep(_) => Err(Error::Incompatible(
            "expected a gate histogram, found a sweep histogram".into(),
        )),
    }
}

pub fn read_any(path: impl AsRef<Path>) -> Result<HistogramFile> {
    parse_any(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SweepHistogram {
        SweepHistogram::new(10, 50, vec![0, 3, 1, 0, 7], 12)
            .unwrap()
            .with_meta("source", "test")
            .with_meta("seed", 42)
    }

    #[test]
    fn format_is_exact() {
        let text = format_histogram(&sample()).unwrap();
        assert_eq!(
            text,
            "# bin_width_ns = 10\n# sweep_ns = 50\n# c0 = 12\n# seed = 42\n# source = test\n\
             0,0\n10,3\n20,1\n30,0\n40,7\n"
        );
        assert_eq!(parse_histogram(&text).unwrap(), sample());
    }

    #[test]
    fn negative_count_is_a_parse_error_on_its_line() {
        let text = "# bin_width_ns = 10\n# sweep_ns = 30\n# c0 = 1\n0,1\n10,-2\n20,0\n";
        match parse_histogram(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let text = "# bin_width_ns = 10\n# sweep_ns = 30\n# c0 = 1\n";
        assert!(matches!(parse_histogram(text), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn missing_key_and_bad_starts_are_rejected() {
        assert!(parse_histogram("# sweep_ns = 10\n# c0 = 1\n0,1\n").is_err());
        let text = "# bin_width_ns = 10\n# sweep_ns = 20\n# c0 = 1\n0,1\n15,2\n";
        assert!(matches!(
            parse_histogram(text),
            Err(Error::Parse { line: 5, .. })
        ));
        let text = "# bin_width_ns = 10\n# sweep_ns = 20\n# c0 = 1\n0,1\n\n10,2\n";
        assert!(matches!(
            parse_histogram(text),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn merge_examples() {
        let h = sample();
        assert_eq!(merge_bins(&h, 1).unwrap(), h);
        assert!(merge_bins(&h, 2).is_err());
        assert!(merge_bins(&h, 0).is_err());

        let bins: Vec<u64> = (0..2500).map(|i| (i * 7 % 13) as u64).collect();
        let h = SweepHistogram::new(10, 25_000, bins, 99).unwrap();
        let m = merge_bins(&h, 10).unwrap();
        assert_eq!(m.bins().len(), 250);
        assert_eq!(m.bin_width_ns(), 100);
        assert_eq!(m.total(), h.total());
        assert_eq!(m.c0(), 99);
    }

    #[test]
    fn normalization() {
        let h = SweepHistogram::new(10, 30, vec![0, 0, 0], 5).unwrap();
        assert_eq!(normalize_for_plot(&h, 0.0).unwrap(), vec![0.0; 3]);
        let h = SweepHistogram::new(10, 30, vec![10, 20, 0], 1000).unwrap();
        let n = normalize_for_plot(&h, 0.0).unwrap();
        assert!((n[0] - 0.01).abs() < 1e-15);
        assert!(normalize_for_plot(&h, 1000.0).is_err());
    }

    #[test]
    fn bin_ranges() {
        let h = SweepHistogram::zeros(10, 25_000).unwrap();
        assert_eq!(h.bin_at(0.21e-6), 21);
        assert_eq!(h.bin_at(0.215e-6), 21);
        assert_eq!(h.bins_within(20e-6, 25e-6), 2000..2500);
        assert_eq!(h.bins_within(20.005e-6, 25e-6), 2001..2500);
    }

    proptest! {
        #[test]
        fn round_trip_and_merge_conservation(
            counts in proptest::collection::vec(0u64..1_000_000, 1..60),
            width in 1u64..500,
            c0 in 0u64..1_000_000,
            factor in 1usize..6,
        ) {
            let sweep = width * counts.len() as u64;
            let h = SweepHistogram::new(width, sweep, counts, c0).unwrap()
                .with_meta("source", "prop");
            let text = format_histogram(&h).unwrap();
            prop_assert_eq!(&parse_histogram(&text).unwrap(), &h);
            prop_assert_eq!(format_histogram(&parse_histogram(&text).unwrap()).unwrap(), text);
            if h.bins().len() % factor == 0 {
                let m = merge_bins(&h, factor).unwrap();
                prop_assert_eq!(m.total(), h.total());
                prop_assert_eq!(m.c0(), h.c0());
            }
        }
    }
}
