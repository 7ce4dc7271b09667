//! Acceleration records: ingest, preprocessing, and summary measures.
//!
//! Records are uniformly sampled acceleration series in units of g. The
//! preprocessing chain mirrors common strong-motion practice: rotate a
//! horizontal pair into maximally uncorrelated directions and keep the
//! component with the larger Arias intensity, decimate to a sampling rate
//! near 50 Hz, and trim near-zero-energy heads and tails.
//!
//! Arias intensity follows the crate convention `ia = (pi/2) * trapz(a^2)`
//! (units g*s, see [`crate::ARIAS_FACTOR`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, ARIAS_FACTOR, GRAVITY_CM};

/// Uniformly sampled acceleration time series in units of g.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccelRecord {
    pub id: String,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Acceleration samples in g.
    pub samples: Vec<f64>,
    /// Free-form metadata (magnitude, distance, site class, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Cumulative Arias intensity versus time (Husid curve).
#[derive(Debug, Clone)]
pub struct HusidCurve {
    pub times: Vec<f64>,
    pub ia_cum: Vec<f64>,
    pub ia_total: f64,
}

/// Scalar intensity measures of a record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntensityMeasures {
    /// Peak ground acceleration, g.
    pub pga: f64,
    /// Peak ground velocity, cm/s.
    pub pgv: f64,
    /// Arias intensity, g*s.
    pub ia: f64,
    /// Significant duration t95 - t5, s.
    pub d5_95: f64,
}

impl AccelRecord {
    pub fn new(id: impl Into<String>, dt: f64, samples: Vec<f64>) -> Result<Self> {
        let rec = AccelRecord {
            id: id.into(),
            dt,
            samples,
            meta: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid_record(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.samples.len() < 2 {
            return Err(Error::invalid_record(format!(
                "need at least 2 samples, got {}",
                self.samples.len()
            )));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid_record(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record duration `(len - 1) * dt` in seconds.
    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }
}

/// On-disk record formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Json,
}

impl RecordFormat {
    pub fn from_path(path: &Path) -> RecordFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => RecordFormat::Json,
            _ => RecordFormat::Csv,
        }
    }
}

/// Maximum tolerated jitter (s) when a file carries an explicit time column.
const DT_JITTER: f64 = 1e-9;

/// Loads a record from disk.
///
/// CSV layout: `# key=value` header lines (`dt` required, `id` optional),
/// then one acceleration value per line, or `t,a` pairs from which `dt` is
/// inferred. JSON is the serde form of [`AccelRecord`].
pub fn load_record(path: &Path, format: RecordFormat) -> Result<AccelRecord> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
    let fallback_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("record")
        .to_string();
    match format {
        RecordFormat::Json => {
            let rec: AccelRecord = serde_json::from_str(&text)?;
            rec.validate()?;
            Ok(rec)
        }
        RecordFormat::Csv => parse_csv_record(&text, &fallback_id),
    }
}

fn parse_csv_record(text: &str, fallback_id: &str) -> Result<AccelRecord> {
    let mut id: Option<String> = None;
    let mut dt: Option<f64> = None;
    let mut meta = BTreeMap::new();
    let mut samples = Vec::new();
    let mut times: Vec<f64> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((key, value)) = rest.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "id" => id = Some(value.to_string()),
                    "dt" => {
                        dt = Some(value.parse::<f64>().map_err(|_| {
                            Error::parse(format!("line {}: bad dt '{value}'", lineno + 1))
                        })?)
                    }
                    _ => {
                        meta.insert(key.to_string(), value.to_string());
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(format!("line {}: bad number '{s}'", lineno + 1)))
        };
        match fields.len() {
            1 => samples.push(parse(fields[0])?),
            2 => {
                times.push(parse(fields[0])?);
                samples.push(parse(fields[1])?);
            }
            n => {
                return Err(Error::parse(format!(
                    "line {}: expected 1 or 2 fields, got {n}",
                    lineno + 1
                )))
            }
        }
    }

    if !times.is_empty() {
        if times.len() != samples.len() {
            return Err(Error::parse("mixed one- and two-column data rows"));
        }
        let inferred = infer_uniform_dt(&times)?;
        match dt {
            Some(d) if (d - inferred).abs() > DT_JITTER => {
                return Err(Error::parse(format!(
                    "declared dt={d} disagrees with time column dt={inferred}"
                )));
            }
            _ => dt = Some(inferred),
        }
    }

    let dt = dt.ok_or_else(|| Error::parse("missing '# dt=' header"))?;
    let mut rec = AccelRecord::new(id.unwrap_or_else(|| fallback_id.to_string()), dt, samples)?;
    rec.meta = meta;
    Ok(rec)
}

fn infer_uniform_dt(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::parse("time column needs at least 2 rows"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::parse("time column is not increasing"));
    }
    for i in 1..times.len() {
        let step = times[i] - times[i - 1];
        if (step - dt).abs() > DT_JITTER {
            return Err(Error::parse(format!(
                "non-uniform time step at row {}: {step} vs {dt}",
                i + 1
            )));
        }
    }
    Ok(dt)
}

/// Saves a record; CSV uses shortest round-trippable float formatting so a
/// save/load cycle preserves samples bit-exactly.
pub fn save_record(rec: &AccelRecord, path: &Path, format: RecordFormat) -> Result<()> {
    let text = match format {
        RecordFormat::Json => serde_json::to_string_pretty(rec)?,
        RecordFormat::Csv => {
            let mut out = String::new();
            writeln!(out, "# id={}", rec.id).unwrap();
            writeln!(out, "# dt={}", rec.dt).unwrap();
            for (k, v) in &rec.meta {
                writeln!(out, "# {k}={v}").unwrap();
            }
            for s in &rec.samples {
                writeln!(out, "{s}").unwrap();
            }
            out
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Rotates a horizontal pair to the angle that zeroes their cross-covariance
/// and returns the rotated component with the larger Arias intensity.
pub fn rotate_and_select(comp1: &AccelRecord, comp2: &AccelRecord) -> Result<AccelRecord> {
    if comp1.samples.len() != comp2.samples.len() {
        return Err(Error::invalid_record(format!(
            "component lengths differ: {} vs {}",
            comp1.samples.len(),
            comp2.samples.len()
        )));
    }
    if (comp1.dt - comp2.dt).abs() > DT_JITTER {
        return Err(Error::invalid_record(format!(
            "component dt differ: {} vs {}",
            comp1.dt, comp2.dt
        )));
    }
    let n = comp1.samples.len() as f64;
    let m1 = comp1.samples.iter().sum::<f64>() / n;
    let m2 = comp2.samples.iter().sum::<f64>() / n;
    let (mut c11, mut c22, mut c12) = (0.0, 0.0, 0.0);
    for (a, b) in comp1.samples.iter().zip(&comp2.samples) {
        let (x, y) = (a - m1, b - m2);
        c11 += x * x;
        c22 += y * y;
        c12 += x * y;
    }
    // Principal-axes angle: Cov(u, v) = 0.5 sin(2a)(c22 - c11) + cos(2a) c12.
    let angle = 0.5 * (2.0 * c12).atan2(c11 - c22);
    let (s, c) = angle.sin_cos();
    let rot1: Vec<f64> = comp1
        .samples
        .iter()
        .zip(&comp2.samples)
        .map(|(a, b)| c * a + s * b)
        .collect();
    let rot2: Vec<f64> = comp1
        .samples
        .iter()
        .zip(&comp2.samples)
        .map(|(a, b)| -s * a + c * b)
        .collect();
    let ia1 = arias_total(&rot1, comp1.dt);
    let ia2 = arias_total(&rot2, comp1.dt);
    let samples = if ia1 >= ia2 { rot1 } else { rot2 };
    let mut rec = AccelRecord::new(comp1.id.clone(), comp1.dt, samples)?;
    rec.meta = comp1.meta.clone();
    Ok(rec)
}

/// Rotation angle (rad) that zeroes the cross-covariance; exposed for tests.
pub fn decorrelation_angle(comp1: &[f64], comp2: &[f64]) -> f64 {
    let n = comp1.len() as f64;
    let m1 = comp1.iter().sum::<f64>() / n;
    let m2 = comp2.iter().sum::<f64>() / n;
    let (mut c11, mut c22, mut c12) = (0.0, 0.0, 0.0);
    for (a, b) in comp1.iter().zip(comp2) {
        let (x, y) = (a - m1, b - m2);
        c11 += x * x;
        c22 += y * y;
        c12 += x * y;
    }
    0.5 * (2.0 * c12).atan2(c11 - c22)
}

/// Decimates to the integer factor bringing the rate closest to 50 Hz.
///
/// An anti-alias low-pass (fourth-order Butterworth at 0.8x the new Nyquist,
/// run forward and backward for a zero-phase eighth-order response) is
/// applied before subsampling. A factor of 1 is a no-op.
pub fn decimate_to_50hz(rec: &AccelRecord) -> Result<AccelRecord> {
    let rate = 1.0 / rec.dt;
    if rate < 50.0 - 1e-9 {
        return Err(Error::invalid_record(format!(
            "sampling rate {rate:.3} Hz is below 50 Hz"
        )));
    }
    let k = ((rate / 50.0).round() as usize).max(1);
    if k == 1 {
        return Ok(rec.clone());
    }
    let new_dt = rec.dt * k as f64;
    let cutoff = 0.8 * 0.5 / new_dt;
    let filtered = lowpass_zero_phase(&rec.samples, rec.dt, cutoff);
    let samples: Vec<f64> = filtered.iter().step_by(k).copied().collect();
    let mut out = AccelRecord::new(rec.id.clone(), new_dt, samples)?;
    out.meta = rec.meta.clone();
    Ok(out)
}

/// Fourth-order Butterworth low-pass applied forward-backward.
pub fn lowpass_zero_phase(x: &[f64], dt: f64, cutoff_hz: f64) -> Vec<f64> {
    // Butterworth order 4 = two biquads with zeta = cos(pi/8), cos(3pi/8).
    let q = |zeta: f64| 1.0 / (2.0 * zeta);
    let sections = [
        biquad_lowpass(cutoff_hz * dt, q((std::f64::consts::PI / 8.0).cos())),
        biquad_lowpass(cutoff_hz * dt, q((3.0 * std::f64::consts::PI / 8.0).cos())),
    ];
    let pad = (3 * 8).min(x.len().saturating_sub(1));
    let mut y = Vec::with_capacity(x.len() + 2 * pad);
    // Odd reflection padding keeps edge transients off the retained samples.
    for i in (1..=pad).rev() {
        y.push(2.0 * x[0] - x[i]);
    }
    y.extend_from_slice(x);
    for i in (x.len().saturating_sub(pad + 1)..x.len() - 1).rev() {
        y.push(2.0 * x[x.len() - 1] - x[i]);
    }
    for sos in &sections {
        apply_biquad(&mut y, sos);
        y.reverse();
        apply_biquad(&mut y, sos);
        y.reverse();
    }
    y[pad..pad + x.len()].to_vec()
}

/// Biquad coefficients (b0, b1, b2, a1, a2) with a0 normalized to 1.
fn biquad_lowpass(fc_norm: f64, q: f64) -> [f64; 5] {
    let w0 = 2.0 * std::f64::consts::PI * fc_norm;
    let alpha = w0.sin() / (2.0 * q);
    let cosw = w0.cos();
    let a0 = 1.0 + alpha;
    [
        (1.0 - cosw) / 2.0 / a0,
        (1.0 - cosw) / a0,
        (1.0 - cosw) / 2.0 / a0,
        -2.0 * cosw / a0,
        (1.0 - alpha) / a0,
    ]
}

fn apply_biquad(x: &mut [f64], sos: &[f64; 5]) {
    let [b0, b1, b2, a1, a2] = *sos;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let x0 = *v;
        let y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *v = y0;
    }
}

/// Trims samples outside the cumulative-energy window `[lo, hi]` (fractions
/// of total). `lo = 0, hi = 1` is the identity.
pub fn truncate_energy(rec: &AccelRecord, lo: f64, hi: f64) -> Result<AccelRecord> {
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::invalid_params(format!(
            "energy window must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"
        )));
    }
    let energy = cum_trapz(rec.samples.iter().map(|a| a * a), rec.dt);
    let total = *energy.last().unwrap();
    if total <= 0.0 {
        return Err(Error::invalid_record("zero-energy record"));
    }
    let i0 = energy
        .iter()
        .position(|&e| e >= lo * total)
        .unwrap_or(0);
    let i1 = energy
        .iter()
        .rposition(|&e| e <= hi * total)
        .unwrap_or(energy.len() - 1);
    if i1 <= i0 {
        return Err(Error::invalid_record("energy window leaves fewer than 2 samples"));
    }
    let mut out = AccelRecord::new(rec.id.clone(), rec.dt, rec.samples[i0..=i1].to_vec())?;
    out.meta = rec.meta.clone();
    Ok(out)
}

/// Cumulative Arias intensity by trapezoidal quadrature.
pub fn husid(rec: &AccelRecord) -> HusidCurve {
    let ia_cum: Vec<f64> = cum_trapz(rec.samples.iter().map(|a| a * a), rec.dt)
        .into_iter()
        .map(|e| ARIAS_FACTOR * e)
        .collect();
    let ia_total = *ia_cum.last().unwrap();
    let times = (0..rec.samples.len()).map(|i| i as f64 * rec.dt).collect();
    HusidCurve {
        times,
        ia_cum,
        ia_total,
    }
}

impl HusidCurve {
    /// Time at which the curve reaches `frac` of its total, by linear
    /// interpolation between samples.
    pub fn percentile_time(&self, frac: f64) -> f64 {
        let target = frac * self.ia_total;
        if target <= self.ia_cum[0] {
            return self.times[0];
        }
        let n = self.ia_cum.len();
        for i in 1..n {
            if self.ia_cum[i] >= target {
                let (e0, e1) = (self.ia_cum[i - 1], self.ia_cum[i]);
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                if e1 > e0 {
                    return t0 + (t1 - t0) * (target - e0) / (e1 - e0);
                }
                return t0;
            }
        }
        *self.times.last().unwrap()
    }
}

/// PGA, PGV, Arias intensity, and significant duration of a record.
pub fn intensity_measures(rec: &AccelRecord) -> IntensityMeasures {
    let pga = rec.samples.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    // Velocity by cumulative trapezoid with zero initial velocity; samples
    // are in g, so scale to cm/s.
    let mut v = 0.0f64;
    let mut pgv = 0.0f64;
    for i in 1..rec.samples.len() {
        v += 0.5 * (rec.samples[i] + rec.samples[i - 1]) * rec.dt * GRAVITY_CM;
        pgv = pgv.max(v.abs());
    }
    let h = husid(rec);
    let d5_95 = if h.ia_total > 0.0 {
        h.percentile_time(0.95) - h.percentile_time(0.05)
    } else {
        0.0
    };
    IntensityMeasures {
        pga,
        pgv,
        ia: h.ia_total,
        d5_95,
    }
}

fn arias_total(samples: &[f64], dt: f64) -> f64 {
    let e = cum_trapz(samples.iter().map(|a| a * a), dt);
    ARIAS_FACTOR * e.last().copied().unwrap_or(0.0)
}

fn cum_trapz(values: impl Iterator<Item = f64>, dt: f64) -> Vec<f64> {
    let vals: Vec<f64> = values.collect();
    let mut out = Vec::with_capacity(vals.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..vals.len() {
        acc += 0.5 * (vals[i] + vals[i - 1]) * dt;
        out.push(acc);
    }
    out
}
