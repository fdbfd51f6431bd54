//! Waveform reductions: RMS, peak-to-peak, gain, supply power, histograms.

use std::fmt::{self, Display, Formatter};
use std::io::Write;

use crate::error::{Error, Result};
use crate::transient::Waveform;
use crate::units::format_sci;

/// A waveform column reference: `v(<node>)` or `i(<branch>)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Probe {
    Voltage(String),
    /// Branch names are stored lowercase.
    Current(String),
}

impl Probe {
    pub fn parse(text: &str) -> Result<Probe> {
        let t = text.trim();
        let inner = |prefix: char| {
            t.strip_prefix(prefix)
                .or_else(|| t.strip_prefix(prefix.to_ascii_uppercase()))
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };
        if let Some(node) = inner('v') {
            Ok(Probe::Voltage(node.to_string()))
        } else if let Some(branch) = inner('i') {
            Ok(Probe::Current(branch.to_ascii_lowercase()))
        } else {
            Err(Error::Argument(format!(
                "bad probe '{text}', expected v(<node>) or i(<branch>)"
            )))
        }
    }

    pub fn units(&self) -> &'static str {
        match self {
            Probe::Voltage(_) => "V",
            Probe::Current(_) => "A",
        }
    }
}

impl Display for Probe {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Probe::Voltage(n) => write!(f, "v({n})"),
            Probe::Current(b) => write!(f, "i({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    Rms(Probe),
    Pp(Probe),
    Gain { input: Probe, output: Probe },
    AvgPow(Vec<String>),
    PeakPow(Vec<String>),
    Hist { probe: Probe, nbins: usize },
}

impl MeasureKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            MeasureKind::Rms(_) => "rms",
            MeasureKind::Pp(_) => "pp",
            MeasureKind::Gain { .. } => "gain",
            MeasureKind::AvgPow(_) => "avgpow",
            MeasureKind::PeakPow(_) => "peakpow",
            MeasureKind::Hist { .. } => "hist",
        }
    }
}

/// A `.measure` request.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub name: String,
    pub kind: MeasureKind,
}

impl MeasureSpec {
    /// Parses the text after `.measure`, e.g. `g gain v(in) v(out)`.
    pub fn parse(text: &str) -> Result<MeasureSpec> {
        let ast = crate::netlist::parse_netlist(&format!("m\n.measure {text}\n"))
            .map_err(|e| Error::Argument(format!("measure '{text}': {e}")))?;
        let spec = ast.measures().next().cloned();
        spec.ok_or_else(|| Error::Argument(format!("measure '{text}' did not parse")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub nbins: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.nbins as f64
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureValue {
    Scalar(f64),
    Bins(Histogram),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub name: String,
    pub kind: &'static str,
    pub value: MeasureValue,
    pub units: &'static str,
}

impl Measurement {
    pub fn scalar(&self) -> Option<f64> {
        match self.value {
            MeasureValue::Scalar(v) => Some(v),
            MeasureValue::Bins(_) => None,
        }
    }

    /// Value as written to reports; histogram counts are `;`-separated.
    pub fn value_text(&self) -> String {
        match &self.value {
            MeasureValue::Scalar(v) => format_sci(*v),
            MeasureValue::Bins(h) => h
                .counts
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    samples
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * dt)
        .sum()
}

/// Root mean square over the record, using the trapezoidal rule on x².
pub fn rms(samples: &[f64], dt: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Argument("rms needs at least 2 samples".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("rms needs dt > 0, got {dt}")));
    }
    let squares: Vec<f64> = samples.iter().map(|v| v * v).collect();
    let span = dt * (samples.len() - 1) as f64;
    Ok((trapezoid(&squares, dt) / span).sqrt())
}

pub fn peak_to_peak(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("peak-to-peak of an empty record".into()));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

/// Ratio of output to input peak-to-peak over the final half of the record.
pub fn gain(wave: &Waveform, input: &Probe, output: &Probe) -> Result<f64> {
    let vin = wave.probe(input)?;
    let vout = wave.probe(output)?;
    let start = vin.len() / 2;
    let pp_in = peak_to_peak(&vin[start..])?;
    if pp_in == 0.0 {
        return Err(Error::Measurement(format!(
            "gain: input {input} has zero swing"
        )));
    }
    Ok(peak_to_peak(&vout[start..])? / pp_in)
}

/// Instantaneous total power delivered by the named voltage sources.
pub fn supply_power(wave: &Waveform, supplies: &[String]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; wave.times.len()];
    for name in supplies {
        let v = wave.source_voltage(name)?;
        let i = wave.probe(&Probe::Current(name.to_ascii_lowercase()))?;
        for (p, (v, i)) in total.iter_mut().zip(v.iter().zip(i)) {
            // MNA branch current flows into the + terminal.
            *p += v * -i;
        }
    }
    Ok(total)
}

pub fn average_power(wave: &Waveform, supplies: &[String]) -> Result<f64> {
    let p = supply_power(wave, supplies)?;
    if p.len() < 2 {
        return Err(Error::Argument("average power needs at least 2 samples".into()));
    }
    let span = wave.times[p.len() - 1] - wave.times[0];
    Ok(trapezoid(&p, wave.meta.dt) / span)
}

pub fn peak_power(wave: &Waveform, supplies: &[String]) -> Result<f64> {
    let p = supply_power(wave, supplies)?;
    p.into_iter()
        .reduce(f64::max)
        .ok_or_else(|| Error::Argument("peak power of an empty record".into()))
}

/// Uniform bins over [min, max]; the last bin is closed on the right.
pub fn histogram(samples: &[f64], nbins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::Argument("histogram of an empty record".into()));
    }
    if nbins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; nbins];
    let width = (hi - lo) / nbins as f64;
    for &v in samples {
        let bin = if width > 0.0 {
            (((v - lo) / width) as usize).min(nbins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        nbins,
        counts,
    })
}

/// Evaluates one `.measure` request against a waveform.
pub fn evaluate(spec: &MeasureSpec, wave: &Waveform) -> Result<Measurement> {
    let (value, units) = match &spec.kind {
        MeasureKind::Rms(p) => (MeasureValue::Scalar(rms(wave.probe(p)?, wave.meta.dt)?), p.units()),
        MeasureKind::Pp(p) => (MeasureValue::Scalar(peak_to_peak(wave.probe(p)?)?), p.units()),
        MeasureKind::Gain { input, output } => {
            (MeasureValue::Scalar(gain(wave, input, output)?), "ratio")
        }
        MeasureKind::AvgPow(s) => (MeasureValue::Scalar(average_power(wave, s)?), "W"),
        MeasureKind::PeakPow(s) => (MeasureValue::Scalar(peak_power(wave, s)?), "W"),
        MeasureKind::Hist { probe, nbins } => {
            (MeasureValue::Bins(histogram(wave.probe(probe)?, *nbins)?), "count")
        }
    };
    Ok(Measurement {
        name: spec.name.clone(),
        kind: spec.kind.keyword(),
        value,
        units,
    })
}

/// Aligned plain-text table.
pub fn report_table(ms: &[Measurement]) -> String {
    let rows: Vec<[String; 4]> = ms
        .iter()
        .map(|m| [m.name.clone(), m.kind.to_string(), m.value_text(), m.units.to_string()])
        .collect();
    let header = ["name", "kind", "value", "units"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line = r
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// `name,kind,value,units` CSV.
pub fn write_csv<W: Write>(ms: &[Measurement], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["name", "kind", "value", "units"])?;
    for m in ms {
        w.write_record([m.name.as_str(), m.kind, &m.value_text(), m.units])?;
    }
    w.flush()?;
    Ok(())
}
