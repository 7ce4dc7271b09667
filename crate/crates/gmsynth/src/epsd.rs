//! Evolutionary power spectral density estimation and filter fitting.
//!
//! The estimator is a short-time multitaper spectrogram: at each window
//! center the eigenspectra of discrete prolate spheroidal sequence (DPSS)
//! tapers are averaged, giving a low-variance, low-leakage estimate of the
//! one-sided EPSD up to 25 Hz. Slices are then area-normalized, smoothed
//! along time with a Hann window, and fitted per slice by bounded nonlinear
//! least squares to a parametric filter shape. Trend parameters are read
//! off the snapshot series (constant and polyline trends) or estimated by
//! envelope-weighted least squares (linear trends).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::EnvelopeParams;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::records::AccelRecord;
use crate::spectral::{
    eval_filter, FilterMode, FilterParams, FilterSpec, ModelConfig, ModelTrends,
    SpectralModel, Trend, TrendContext, TrendKind, OMEGA_G_MAX, OMEGA_G_MIN, WEIGHT_MIN,
    ZETA_G_MAX, ZETA_G_MIN,
};
use crate::{Error, Result};

/// Discrete time-frequency EPSD estimate (row-major time x frequency).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsdGrid {
    /// Slice times, s.
    pub times: Vec<f64>,
    /// Frequency grid, rad/s, starting at 0 with uniform step.
    pub freqs: Vec<f64>,
    /// S(t_n, omega_k), row-major over times.
    pub values: Vec<f64>,
}

impl EpsdGrid {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn dt_grid(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    pub fn dw_grid(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let k = self.n_freqs();
        &self.values[n * k..(n + 1) * k]
    }

    fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let k = self.n_freqs();
        &mut self.values[n * k..(n + 1) * k]
    }

    /// Long-format CSV export: `t,omega,value` per line.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("t,omega,s\n");
        for (n, &t) in self.times.iter().enumerate() {
            for (k, &w) in self.freqs.iter().enumerate() {
                out.push_str(&format!("{t},{w},{}\n", self.values[n * self.n_freqs() + k]));
            }
        }
        out
    }
}

/// Multitaper spectrogram settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SttmwSettings {
    /// Window length, s.
    pub window_s: f64,
    /// Time-bandwidth product.
    pub nw: f64,
    pub n_tapers: usize,
    /// Hop between window centers, s; `None` hops one sample.
    pub hop_s: Option<f64>,
    /// Upper frequency of the one-sided grid, Hz.
    pub omega_max_hz: f64,
}

impl Default for SttmwSettings {
    fn default() -> Self {
        SttmwSettings {
            window_s: 2.0,
            nw: 2.5,
            n_tapers: 4,
            hop_s: None,
            omega_max_hz: 25.0,
        }
    }
}

/// DPSS tapers via the symmetric tridiagonal eigenproblem; returns the
/// `k` most concentrated tapers, each normalized to unit energy.
pub fn dpss(n: usize, nw: f64, k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || n < 2 || k >= n {
        return Err(Error::invalid_params(format!("dpss: bad sizes n={n}, k={k}")));
    }
    let w = nw / n as f64;
    if !(0.0 < w && w < 0.5) {
        return Err(Error::invalid_params(format!("dpss: bandwidth {w} outside (0, 0.5)")));
    }
    let cos2w = (2.0 * std::f64::consts::PI * w).cos();
    let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let c = (n as f64 - 1.0) / 2.0 - i as f64;
        mat[(i, i)] = c * c * cos2w;
        if i + 1 < n {
            let e = (i + 1) as f64 * (n - 1 - i) as f64 / 2.0;
            mat[(i, i + 1)] = e;
            mat[(i + 1, i)] = e;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut tapers = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut taper: Vec<f64> = col.iter().map(|v| v / norm).collect();
        // Sign convention: non-negative mean, and positive leading lobe for
        // antisymmetric tapers.
        let mean: f64 = taper.iter().sum();
        let flip = if mean.abs() > 1e-9 {
            mean < 0.0
        } else {
            taper[n / 4] < 0.0
        };
        if flip {
            taper.iter_mut().for_each(|v| *v = -*v);
        }
        tapers.push(taper);
    }
    Ok(tapers)
}

/// Short-time Thomson multitaper EPSD of a record.
///
/// Windows are zero-padded at the record edges; the one-sided spectrum is
/// scaled so that `sum_k S(t, w_k) * dw` estimates the instantaneous power
/// E[a^2(t)].
pub fn sttmw(rec: &AccelRecord, settings: &SttmwSettings) -> Result<EpsdGrid> {
    let dt = rec.dt;
    let mut m = (settings.window_s / dt).round() as usize;
    if m % 2 == 0 {
        m += 1;
    }
    if m >= rec.samples.len() {
        return Err(Error::invalid_record(format!(
            "record ({} samples) shorter than window ({m} samples)",
            rec.samples.len()
        )));
    }
    let half = m / 2;
    let tapers = dpss(m, settings.nw, settings.n_tapers)?;
    let hop = settings
        .hop_s
        .map(|h| (h / dt).round() as usize)
        .unwrap_or(1)
        .max(1);

    let df = 1.0 / (m as f64 * dt);
    let nyquist_bin = m / 2;
    let j_max = ((settings.omega_max_hz / df).floor() as usize).min(nyquist_bin);
    let freqs: Vec<f64> = (0..=j_max)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 * df)
        .collect();

    let centers: Vec<usize> = (0..rec.samples.len()).step_by(hop).collect();
    let planner = std::sync::Mutex::new(rustfft::FftPlanner::<f64>::new());
    let fft = planner.lock().unwrap().plan_fft_forward(m);

    let rows: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&c| {
            let mut row = vec![0.0f64; j_max + 1];
            let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); m];
            for taper in &tapers {
                for (i, slot) in buf.iter_mut().enumerate() {
                    let src = c as isize + i as isize - half as isize;
                    let x = if src >= 0 && (src as usize) < rec.samples.len() {
                        rec.samples[src as usize]
                    } else {
                        0.0
                    };
                    *slot = rustfft::num_complex::Complex::new(x * taper[i], 0.0);
                }
                fft.process(&mut buf);
                for (j, r) in row.iter_mut().enumerate() {
                    *r += buf[j].norm_sqr();
                }
            }
            let scale = dt / (std::f64::consts::PI * tapers.len() as f64);
            for (j, r) in row.iter_mut().enumerate() {
                // One-sided density over omega; DC (and Nyquist) carry half.
                let one_sided = if j == 0 || j == nyquist_bin { 0.5 } else { 1.0 };
                *r *= scale * one_sided;
            }
            row
        })
        .collect();

    let times = centers.iter().map(|&c| c as f64 * dt).collect();
    let values = rows.into_iter().flatten().collect();
    Ok(EpsdGrid {
        times,
        freqs,
        values,
    })
}

/// Normalizes each time slice to unit spectral area. Returns the indices of
/// zero-mass slices, which are left untouched.
pub fn normalize_epsd(grid: &EpsdGrid) -> (EpsdGrid, Vec<usize>) {
    let mut out = grid.clone();
    let dw = grid.dw_grid();
    let mut flagged = Vec::new();
    for n in 0..out.n_times() {
        let mass: f64 = out.slice(n).iter().sum::<f64>() * dw;
        if mass > 0.0 {
            out.slice_mut(n).iter_mut().for_each(|v| *v /= mass);
        } else {
            flagged.push(n);
        }
    }
    (out, flagged)
}

/// Smooths the grid along time with a unit-sum Hann window (shrinking at the
/// edges) and re-normalizes each slice.
pub fn smooth_time(grid: &EpsdGrid, window_s: f64) -> EpsdGrid {
    let dtg = grid.dt_grid();
    if dtg <= 0.0 || grid.n_times() < 3 {
        return grid.clone();
    }
    let mut l = (window_s / dtg).round() as usize;
    if l % 2 == 0 {
        l += 1;
    }
    let half = (l / 2) as isize;
    let hann: Vec<f64> = (0..l)
        .map(|i| {
            let x = (i as f64 + 1.0) / (l as f64 + 1.0);
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos())
        })
        .collect();

    let (n_t, n_f) = (grid.n_times(), grid.n_freqs());
    let mut out = grid.clone();
    for n in 0..n_t {
        let row = out.slice_mut(n);
        let mut wsum = 0.0;
        row.iter_mut().for_each(|v| *v = 0.0);
        for (i, &w) in hann.iter().enumerate() {
            let src = n as isize + i as isize - half;
            if src < 0 || src >= n_t as isize {
                continue;
            }
            wsum += w;
            let base = src as usize * n_f;
            for k in 0..n_f {
                row[k] += w * grid.values[base + k];
            }
        }
        if wsum > 0.0 {
            row.iter_mut().for_each(|v| *v /= wsum);
        }
    }
    normalize_epsd(&out).0
}

/// Per-slice fitted filter parameters with fit diagnostics.
#[derive(Debug, Clone)]
pub struct FilterSnapshotSeries {
    pub times: Vec<f64>,
    pub params: Vec<FilterParams>,
    pub residual: Vec<f64>,
    pub converged: Vec<bool>,
}

/// Snapshot-fit controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SnapshotFitSettings {
    pub max_iters: usize,
    pub n_multistarts: usize,
}

impl Default for SnapshotFitSettings {
    fn default() -> Self {
        SnapshotFitSettings {
            max_iters: 500,
            n_multistarts: 5,
        }
    }
}

const OMEGA_START_FACTORS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

fn flatten(spec: &FilterSpec, p: &FilterParams) -> Vec<f64> {
    let mut x = Vec::new();
    for m in &p.modes {
        x.push(m.omega_g);
        x.push(m.zeta_g);
    }
    if spec.has_weights() {
        x.push(p.weights[0]);
    }
    x
}

fn unflatten(spec: &FilterSpec, x: &[f64]) -> FilterParams {
    let j = spec.n_modes();
    let modes = (0..j)
        .map(|i| FilterMode {
            omega_g: x[2 * i],
            zeta_g: x[2 * i + 1],
        })
        .collect();
    let weights = if spec.has_weights() {
        let w = x[2 * j];
        vec![w, 1.0 - w]
    } else {
        Vec::new()
    };
    FilterParams { modes, weights }
}

fn project_flat(spec: &FilterSpec, x: &mut [f64]) {
    let j = spec.n_modes();
    for i in 0..j {
        x[2 * i] = x[2 * i].clamp(OMEGA_G_MIN, OMEGA_G_MAX);
        x[2 * i + 1] = x[2 * i + 1].clamp(ZETA_G_MIN, ZETA_G_MAX);
    }
    if spec.has_weights() {
        x[2 * j] = x[2 * j].clamp(WEIGHT_MIN, 1.0 - WEIGHT_MIN);
    }
}

/// Canonical mode order (ascending omega_g) so trend fits see coherent
/// per-mode series across slices.
fn canonicalize(spec: &FilterSpec, p: &mut FilterParams) {
    if p.modes.len() < 2 {
        return;
    }
    let mut idx: Vec<usize> = (0..p.modes.len()).collect();
    idx.sort_by(|&a, &b| p.modes[a].omega_g.partial_cmp(&p.modes[b].omega_g).unwrap());
    p.modes = idx.iter().map(|&i| p.modes[i]).collect();
    if spec.has_weights() {
        p.weights = idx.iter().map(|&i| p.weights[i]).collect();
    }
}

/// Residual of the best least-squares scaling of the model shape against a
/// target slice; the scale is profiled out in closed form.
fn slice_objective(spec: &FilterSpec, x: &[f64], omega: &[f64], target: &[f64]) -> f64 {
    let params = unflatten(spec, x);
    let shape = match eval_filter(spec, &params, omega) {
        Ok(s) => s,
        Err(_) => return f64::MAX,
    };
    let num: f64 = shape.iter().zip(target).map(|(m, t)| m * t).sum();
    let den: f64 = shape.iter().map(|m| m * m).sum();
    if den <= 0.0 {
        return f64::MAX;
    }
    let scale = (num / den).max(0.0);
    shape
        .iter()
        .zip(target)
        .map(|(m, t)| {
            let r = scale * m - t;
            r * r
        })
        .sum()
}

fn local_maxima(target: &[f64], omega: &[f64]) -> Vec<f64> {
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for j in 1..target.len() - 1 {
        if target[j] >= target[j - 1] && target[j] >= target[j + 1] && target[j] > 0.0 {
            peaks.push((target[j], omega[j]));
        }
    }
    // Rank by height; break ties toward lower frequency.
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    peaks.into_iter().map(|(_, w)| w).collect()
}

fn spectral_centroid(target: &[f64], omega: &[f64]) -> f64 {
    let mass: f64 = target.iter().sum();
    if mass <= 0.0 {
        return omega[omega.len() / 2];
    }
    target.iter().zip(omega).map(|(s, w)| s * w).sum::<f64>() / mass
}

fn slice_starts(
    spec: &FilterSpec,
    target: &[f64],
    omega: &[f64],
    n_starts: usize,
) -> Vec<Vec<f64>> {
    let centroid = spectral_centroid(target, omega).clamp(OMEGA_G_MIN * 2.0, OMEGA_G_MAX);
    let mut starts = Vec::new();
    match spec.n_modes() {
        1 => {
            for &f in OMEGA_START_FACTORS.iter().take(n_starts) {
                starts.push(vec![centroid * f, 0.3]);
            }
        }
        _ => {
            let peaks = local_maxima(target, omega);
            let (w1, w2) = match (peaks.first(), peaks.get(1)) {
                (Some(&a), Some(&b)) => {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    (lo.max(OMEGA_G_MIN * 2.0), hi)
                }
                _ => (0.75 * centroid, 1.5 * centroid),
            };
            for &f in OMEGA_START_FACTORS.iter().take(n_starts) {
                let mut x = vec![w1 * f, 0.3, w2 * f, 0.3];
                if spec.has_weights() {
                    x.push(0.5);
                }
                starts.push(x);
            }
        }
    }
    starts
}

/// Fits filter parameters slice by slice on a normalized, smoothed grid.
///
/// Slices where no multistart converges are flagged and carry the previous
/// slice's solution.
pub fn fit_filter_snapshots(
    grid: &EpsdGrid,
    spec: &FilterSpec,
    settings: &SnapshotFitSettings,
) -> Result<FilterSnapshotSeries> {
    if grid.n_times() == 0 {
        return Err(Error::invalid_params("empty EPSD grid"));
    }
    let opts = NelderMeadOptions {
        max_iters: settings.max_iters,
        ..Default::default()
    };

    struct SliceFit {
        params: FilterParams,
        residual: f64,
        converged: bool,
    }

    let fits: Vec<Option<SliceFit>> = (0..grid.n_times())
        .into_par_iter()
        .map(|n| {
            let target = grid.slice(n);
            if target.iter().all(|&v| v == 0.0) {
                return None;
            }
            let mut best: Option<(Vec<f64>, f64, bool)> = None;
            for start in slice_starts(spec, target, &grid.freqs, settings.n_multistarts) {
                let r = nelder_mead(
                    |x| slice_objective(spec, x, &grid.freqs, target),
                    |x| project_flat(spec, x),
                    &start,
                    &opts,
                );
                if best.as_ref().map_or(true, |(_, f, _)| r.f < *f) {
                    best = Some((r.x, r.f, r.converged));
                }
            }
            best.map(|(x, f, conv)| {
                let mut params = unflatten(spec, &x);
                canonicalize(spec, &mut params);
                SliceFit {
                    params,
                    residual: f,
                    converged: conv,
                }
            })
        })
        .collect();

    // Carry the previous solution through flagged slices.
    let mut params = Vec::with_capacity(fits.len());
    let mut residual = Vec::with_capacity(fits.len());
    let mut converged = Vec::with_capacity(fits.len());
    let first_good = fits
        .iter()
        .position(|f| f.as_ref().map_or(false, |s| s.converged))
        .or_else(|| fits.iter().position(|f| f.is_some()));
    let first_good = first_good.ok_or_else(|| Error::fit("no slice could be fitted"))?;
    let mut last = fits[first_good].as_ref().unwrap().params.clone();
    for fit in &fits {
        match fit {
            Some(s) if s.converged => {
                last = s.params.clone();
                params.push(s.params.clone());
                residual.push(s.residual);
                converged.push(true);
            }
            Some(s) => {
                // Keep the non-converged answer only if it beats carrying the
                // previous parameters.
                params.push(s.params.clone());
                residual.push(s.residual);
                converged.push(false);
            }
            None => {
                params.push(last.clone());
                residual.push(f64::NAN);
                converged.push(false);
            }
        }
    }

    Ok(FilterSnapshotSeries {
        times: grid.times.clone(),
        params,
        residual,
        converged,
    })
}

impl FilterSnapshotSeries {
    /// Linear interpolation of the flattened parameter vector at time t.
    pub fn interp_flat(&self, spec: &FilterSpec, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return flatten(spec, &self.params[0]);
        }
        if t >= self.times[n - 1] {
            return flatten(spec, &self.params[n - 1]);
        }
        let i = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => return flatten(spec, &self.params[i]),
            Err(i) => i,
        };
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = (t - t0) / (t1 - t0);
        let a = flatten(spec, &self.params[i - 1]);
        let b = flatten(spec, &self.params[i]);
        a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect()
    }
}

/// Weighted least-squares estimate of trend parameters from a snapshot
/// series. Constant trends are read at t_45, polyline trends at the five
/// percentile knots, and linear trends solve the envelope-weighted normal
/// equations over [t_5, t_95].
pub fn fit_trends(
    series: &FilterSnapshotSeries,
    config: &ModelConfig,
    env: &EnvelopeParams,
) -> Result<ModelTrends> {
    let ctx = TrendContext::from_envelope(env);
    ctx.validate()?;
    let spec = &config.filter;
    let j = spec.n_modes();
    let n_flat = 2 * j + if spec.has_weights() { 1 } else { 0 };

    // Envelope weights W(t) = q(t) / (Ia(t95) - Ia(t5)) on in-window slices.
    let in_window: Vec<usize> = (0..series.times.len())
        .filter(|&i| series.times[i] >= ctx.t5 && series.times[i] <= ctx.t95)
        .collect();
    let needs_linear = config.omega_trend == TrendKind::Linear
        || config.zeta_trend == TrendKind::Linear
        || config.weight_trend == Some(TrendKind::Linear);
    if needs_linear && in_window.len() < 2 {
        return Err(Error::fit(format!(
            "only {} snapshot(s) inside [t5, t95]; need >= 2 for a linear trend",
            in_window.len()
        )));
    }
    let spline = env.spline();
    let ia_span = 0.9 * env.ia_total;
    let weights: Vec<f64> = in_window
        .iter()
        .map(|&i| {
            let t = series.times[i].min(ctx.tf);
            (spline.derivative(t).max(0.0) / crate::ARIAS_FACTOR).sqrt() / ia_span
        })
        .collect();

    let flat_at = |t: f64| series.interp_flat(spec, t);
    let mid_flat = flat_at(ctx.t45);
    let knot_flats: Vec<Vec<f64>> = ctx.knots().iter().map(|&t| flat_at(t)).collect();

    let linear_fit = |comp: usize| -> (f64, f64) {
        // Weighted LS for value-at-t45 and slope.
        let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&i, &w) in in_window.iter().zip(&weights) {
            let x = series.times[i] - ctx.t45;
            let y = flatten(spec, &series.params[i])[comp];
            sw += w;
            sx += w * x;
            sxx += w * x * x;
            sy += w * y;
            sxy += w * x * y;
        }
        let det = sw * sxx - sx * sx;
        if det.abs() < 1e-30 || sw <= 0.0 {
            return (mid_flat[comp], 0.0);
        }
        let intercept = (sxx * sy - sx * sxy) / det;
        let slope = (sw * sxy - sx * sy) / det;
        (intercept, slope)
    };

    let build = |comp: usize, kind: TrendKind| -> Trend {
        match kind {
            TrendKind::Constant => Trend::Constant {
                value: mid_flat[comp],
            },
            TrendKind::Linear => {
                let (mid, slope) = linear_fit(comp);
                Trend::Linear { mid, slope }
            }
            TrendKind::Polyline => {
                let mut values = [0.0; 5];
                for (v, flat) in values.iter_mut().zip(&knot_flats) {
                    *v = flat[comp];
                }
                Trend::Polyline { values }
            }
        }
    };

    let mut omega = Vec::with_capacity(j);
    let mut zeta = Vec::with_capacity(j);
    for m in 0..j {
        omega.push(build(2 * m, config.omega_trend));
        zeta.push(build(2 * m + 1, config.zeta_trend));
    }
    let weight = config.weight_trend.map(|kind| build(n_flat - 1, kind));
    Ok(ModelTrends {
        omega,
        zeta,
        weight,
    })
}

/// Evaluates the trend set into a parameter matrix for diagnostics.
pub fn trend_values(model: &SpectralModel, times: &[f64], ctx: &TrendContext) -> Vec<FilterParams> {
    times.iter().map(|&t| model.params_at(t, ctx)).collect()
}

/// Convenience check used in tests: weighted residual orthogonality of the
/// linear trend fit, `sum W r [1, (t - t45)] = 0`.
pub fn linear_fit_orthogonality(
    series: &FilterSnapshotSeries,
    spec: &FilterSpec,
    comp: usize,
    trend: &Trend,
    env: &EnvelopeParams,
) -> (f64, f64) {
    let ctx = TrendContext::from_envelope(env);
    let spline = env.spline();
    let ia_span = 0.9 * env.ia_total;
    let (mid, slope) = match trend {
        Trend::Linear { mid, slope } => (*mid, *slope),
        _ => panic!("linear trend expected"),
    };
    let (mut r0, mut r1) = (0.0, 0.0);
    for (i, &t) in series.times.iter().enumerate() {
        if t < ctx.t5 || t > ctx.t95 {
            continue;
        }
        let w = (spline.derivative(t.min(ctx.tf)).max(0.0) / crate::ARIAS_FACTOR).sqrt() / ia_span;
        let y = flatten(spec, &series.params[i])[comp];
        let r = y - (mid + slope * (t - ctx.t45));
        r0 += w * r;
        r1 += w * r * (t - ctx.t45);
    }
    (r0, r1)
}
