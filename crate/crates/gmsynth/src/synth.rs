//! Ground-motion simulation by spectral representation.
//!
//! A realization is built in four steps: (1) the evolutionary PSD
//! `S(t, w) = q^2(t) phi(w | t)` from the envelope and spectral model,
//! (2) the spectral-representation sum over a frequency grid driven by 2K
//! i.i.d. standard normal variables, (3) high-pass filtering through the
//! impulse displacement response `h(t) = t exp(-2 pi fc t)` followed by
//! double differentiation, and (4) scaling by the energy-correction factor
//! that restores the Arias intensity removed by the filter.
//!
//! The corner frequency is fitted by a grid search minimizing the relative
//! bias between a target 5%-damped response spectrum and the simulated
//! spectrum ensemble, with common random numbers across the grid.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::envelope::{sample_q, EnvelopeParams};
use crate::records::AccelRecord;
use crate::response::sdof_linear_peak;
use crate::rng;
use crate::spectral::{eval_filter, SpectralModel, TrendContext};
use crate::{Error, Result, ARIAS_FACTOR};

/// Simulation grid: time step, duration, and the frequency discretization
/// tied to it. `k` frequency points span [0, omega_max]; the choice
/// `k = ceil(t_f / dt)` keeps the simulated process non-periodic
/// (`2 pi / d_omega >= t_f`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimGrid {
    pub dt: f64,
    pub t_f: f64,
    pub k: usize,
    pub omega_max_hz: f64,
}

impl SimGrid {
    pub const DEFAULT_DT: f64 = 0.02;
    pub const DEFAULT_OMEGA_MAX_HZ: f64 = 25.0;

    pub fn new(t_f: f64) -> Result<SimGrid> {
        SimGrid::with(Self::DEFAULT_DT, t_f, Self::DEFAULT_OMEGA_MAX_HZ)
    }

    pub fn with(dt: f64, t_f: f64, omega_max_hz: f64) -> Result<SimGrid> {
        if !(dt > 0.0 && t_f > dt && omega_max_hz > 0.0) {
            return Err(Error::invalid_params(format!(
                "bad grid: dt={dt}, t_f={t_f}, omega_max={omega_max_hz}"
            )));
        }
        let k = (t_f / dt).ceil() as usize;
        let grid = SimGrid {
            dt,
            t_f,
            k,
            omega_max_hz,
        };
        if 2.0 * std::f64::consts::PI / grid.d_omega() < t_f - 1e-9 {
            return Err(Error::invalid_params(
                "grid violates the non-periodicity condition 2 pi / d_omega >= t_f",
            ));
        }
        Ok(grid)
    }

    /// Number of time samples (t_i = i dt, i = 0..n-1).
    pub fn n_time(&self) -> usize {
        self.k
    }

    pub fn d_omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.omega_max_hz / (self.k as f64 - 1.0)
    }

    pub fn omegas(&self) -> Vec<f64> {
        let dw = self.d_omega();
        (0..self.k).map(|j| j as f64 * dw).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_time()).map(|i| i as f64 * self.dt).collect()
    }
}

/// Standard-normal driver of one realization; length is exactly 2K.
#[derive(Debug, Clone)]
pub struct NoiseVector {
    pub z: Vec<f64>,
    pub seed: u64,
}

impl NoiseVector {
    /// Draws 2K i.i.d. standard normals from the stream keyed by
    /// `(seed, tags, index)`.
    pub fn draw(grid: &SimGrid, seed: u64, tags: &[&str], index: u64) -> NoiseVector {
        use rand_distr::{Distribution, StandardNormal};
        let mut stream = rng::stream(seed, tags, &[index]);
        let z = (0..2 * grid.k)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut stream))
            .collect();
        NoiseVector { z, seed }
    }

    pub fn zeros(grid: &SimGrid) -> NoiseVector {
        NoiseVector {
            z: vec![0.0; 2 * grid.k],
            seed: 0,
        }
    }
}

/// Standard deviations of the spectral-representation amplitudes,
/// `sigma(t_i, w_j) = q(t_i) sqrt(phi_norm(w_j | t_i) d_omega)`, stored
/// row-major over time (f32 to keep large grids affordable).
pub struct SigmaMatrix {
    pub n_time: usize,
    pub k: usize,
    pub values: Vec<f32>,
}

/// Precomputes the amplitude matrix shared by all noise draws of a model.
pub fn sigma_matrix(env: &EnvelopeParams, model: &SpectralModel, grid: &SimGrid) -> Result<SigmaMatrix> {
    let omegas = grid.omegas();
    let dw = grid.d_omega();
    let ctx = TrendContext::from_envelope(env);
    ctx.validate()?;
    let n = grid.n_time();
    let q = sample_q(env, grid.dt, n);
    let rows: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 * grid.dt;
            let params = model.params_at(t, &ctx);
            let phi = eval_filter(&model.filter, &params, &omegas)
                .expect("projected trend parameters are feasible");
            phi.iter()
                .map(|&p| ((p * dw).max(0.0).sqrt() * q[i]) as f32)
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(n * grid.k);
    for row in rows {
        values.extend(row);
    }
    Ok(SigmaMatrix {
        n_time: n,
        k: grid.k,
        values,
    })
}

/// Spectral-representation synthesis of the pre-filter process A(t) for a
/// batch of noise vectors sharing one amplitude matrix.
pub fn simulate_core_batch(
    sigma: &SigmaMatrix,
    grid: &SimGrid,
    noises: &[&NoiseVector],
) -> Result<Vec<Vec<f64>>> {
    let k = grid.k;
    for nv in noises {
        if nv.z.len() != 2 * k {
            return Err(Error::invalid_params(format!(
                "noise length {} does not match 2K = {}",
                nv.z.len(),
                2 * k
            )));
        }
    }
    let n = grid.n_time();
    let dw = grid.d_omega();
    let n_draws = noises.len();

    // Row-wise over time; each row rotates e^{i w_j t} recursively instead
    // of calling trig functions K times per draw.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 * grid.dt;
            let (d_sin, d_cos) = (dw * t).sin_cos();
            let sig = &sigma.values[i * k..(i + 1) * k];
            let mut out = vec![0.0f64; n_draws];
            for (d, nv) in noises.iter().enumerate() {
                let (zs, zc) = nv.z.split_at(k);
                let (mut s, mut c) = (0.0f64, 1.0f64); // sin/cos at w_0 = 0
                let mut acc = 0.0f64;
                for j in 0..k {
                    let w = sig[j] as f64;
                    acc += w * (zs[j] * s + zc[j] * c);
                    let s_next = s * d_cos + c * d_sin;
                    c = c * d_cos - s * d_sin;
                    s = s_next;
                }
                out[d] = acc;
            }
            out
        })
        .collect();

    let mut series = vec![vec![0.0f64; n]; n_draws];
    for (i, row) in rows.iter().enumerate() {
        for (d, &v) in row.iter().enumerate() {
            series[d][i] = v;
        }
    }
    Ok(series)
}

/// Single-draw convenience wrapper around [`simulate_core_batch`].
pub fn simulate_core(
    env: &EnvelopeParams,
    model: &SpectralModel,
    grid: &SimGrid,
    noise: &NoiseVector,
) -> Result<Vec<f64>> {
    let sigma = sigma_matrix(env, model, grid)?;
    Ok(simulate_core_batch(&sigma, grid, &[noise])?.remove(0))
}

/// Complex spectra used by the fast-convolution paths.
pub struct FftWorkspace {
    nfft: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FftWorkspace {
    pub fn for_len(n: usize) -> FftWorkspace {
        let nfft = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        FftWorkspace {
            nfft,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        for (b, &v) in buf.iter_mut().zip(x) {
            *b = Complex::new(v, 0.0);
        }
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_complex(&self, x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        buf[..x.len()].copy_from_slice(x);
        self.fwd.process(&mut buf);
        buf
    }

    /// Inverse transform, truncated to `n` samples and normalized.
    pub fn inverse_trunc(&self, spec: &mut [Complex<f64>], n: usize) -> Vec<Complex<f64>> {
        self.inv.process(spec);
        let scale = 1.0 / self.nfft as f64;
        spec[..n].iter().map(|c| c * scale).collect()
    }
}

/// Sampled high-pass kernel `h(t) = t exp(-2 pi fc t)`, scaled by dt so that
/// discrete convolution approximates the continuous one.
pub fn highpass_kernel(fc: f64, dt: f64, n: usize) -> Vec<f64> {
    let alpha = 2.0 * std::f64::consts::PI * fc;
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            t * (-alpha * t).exp() * dt
        })
        .collect()
}

/// Second time derivative: central differences inside, one-sided
/// second-order stencils at the ends.
pub fn second_derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let inv = 1.0 / (dt * dt);
    let mut out = vec![0.0; n];
    if n < 4 {
        return out;
    }
    out[0] = (2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]) * inv;
    for i in 1..n - 1 {
        out[i] = (x[i + 1] - 2.0 * x[i] + x[i - 1]) * inv;
    }
    out[n - 1] = (2.0 * x[n - 1] - 5.0 * x[n - 2] + 4.0 * x[n - 3] - x[n - 4]) * inv;
    out
}

/// High-pass filters an acceleration series: convolve with the displacement
/// kernel, then differentiate twice. Output has the input length.
pub fn highpass(a: &[f64], fc: f64, dt: f64) -> Vec<f64> {
    let n = a.len();
    let ws = FftWorkspace::for_len(n);
    let mut spec = ws.forward(a);
    let hk = ws.forward(&highpass_kernel(fc, dt, n));
    for (s, h) in spec.iter_mut().zip(&hk) {
        *s *= h;
    }
    let disp = ws.inverse_trunc(&mut spec, n);
    let disp_re: Vec<f64> = disp.iter().map(|c| c.re).collect();
    second_derivative(&disp_re, dt)
}

/// Deterministic energy-correction factor: the square root of the expected
/// Arias intensity of A(t) over that of the high-pass-filtered process,
/// never below 1.
pub fn energy_factor(env: &EnvelopeParams, model: &SpectralModel, grid: &SimGrid) -> Result<f64> {
    let sigma = sigma_matrix(env, model, grid)?;
    Ok(energy_factor_from_sigma(&sigma, grid, model.fc))
}

/// Energy factor reusing a precomputed amplitude matrix.
pub fn energy_factor_from_sigma(sigma: &SigmaMatrix, grid: &SimGrid, fc: f64) -> f64 {
    let n = grid.n_time();
    let dt = grid.dt;
    let dw = grid.d_omega();

    // Numerator: expected Arias intensity of A(t) on the discrete grid.
    let mut q2 = vec![0.0f64; n];
    for i in 0..n {
        let row = &sigma.values[i * grid.k..(i + 1) * grid.k];
        q2[i] = row.iter().map(|&v| (v as f64) * (v as f64)).sum();
    }
    let num = ARIAS_FACTOR * trapz(&q2, dt);

    let ws = FftWorkspace::for_len(n);
    let hk = ws.forward(&highpass_kernel(fc, dt, n));

    // Denominator: sum over frequency lines of the filtered deterministic
    // sine/cosine components, integrated over the record window.
    let den_energy: f64 = (0..grid.k)
        .into_par_iter()
        .map(|j| {
            let w = j as f64 * dw;
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for (i, slot) in col.iter_mut().enumerate() {
                let t = i as f64 * dt;
                let s = sigma.values[i * grid.k + j] as f64;
                let (sn, cs) = (w * t).sin_cos();
                *slot = Complex::new(s * cs, s * sn);
            }
            let mut spec = ws.forward_complex(&col);
            for (sp, h) in spec.iter_mut().zip(&hk) {
                *sp *= h;
            }
            let disp = ws.inverse_trunc(&mut spec, n);
            let re: Vec<f64> = disp.iter().map(|c| c.re).collect();
            let im: Vec<f64> = disp.iter().map(|c| c.im).collect();
            let dre = second_derivative(&re, dt);
            let dim = second_derivative(&im, dt);
            let sq: Vec<f64> = dre
                .iter()
                .zip(&dim)
                .map(|(a, b)| a * a + b * b)
                .collect();
            trapz(&sq, dt)
        })
        .sum();
    let den = ARIAS_FACTOR * den_energy;
    if den <= 0.0 {
        return 1.0;
    }
    (num / den).sqrt().max(1.0)
}

pub fn trapz(x: &[f64], dt: f64) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let interior: f64 = x[1..x.len() - 1].iter().sum();
    dt * (interior + 0.5 * (x[0] + x[x.len() - 1]))
}

/// Full simulator: core process, high-pass filter, energy correction.
pub fn simulate_gm(
    env: &EnvelopeParams,
    model: &SpectralModel,
    grid: &SimGrid,
    noise: &NoiseVector,
) -> Result<AccelRecord> {
    let sigma = sigma_matrix(env, model, grid)?;
    let kappa = energy_factor_from_sigma(&sigma, grid, model.fc);
    simulate_gm_with(env, model, grid, noise, &sigma, kappa)
}

/// Simulator variant reusing a cached amplitude matrix and energy factor.
pub fn simulate_gm_with(
    _env: &EnvelopeParams,
    model: &SpectralModel,
    grid: &SimGrid,
    noise: &NoiseVector,
    sigma: &SigmaMatrix,
    kappa: f64,
) -> Result<AccelRecord> {
    let core = simulate_core_batch(sigma, grid, &[noise])?.remove(0);
    let mut filtered = highpass(&core, model.fc, grid.dt);
    for v in &mut filtered {
        *v *= kappa;
    }
    AccelRecord::new(format!("sim-{}", noise.seed), grid.dt, filtered)
}

/// Corner-frequency grid-search settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcOptSettings {
    pub fc_min: f64,
    pub fc_max: f64,
    pub fc_step: f64,
    /// Monte Carlo draws shared across the grid (common random numbers).
    pub n_draws: usize,
    /// Spectrum periods: log-spaced points on [t_lo, t_hi].
    pub n_periods: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub zeta: f64,
    pub seed: u64,
}

impl Default for FcOptSettings {
    fn default() -> Self {
        FcOptSettings {
            fc_min: 0.0,
            fc_max: 2.0,
            fc_step: 0.01,
            n_draws: 100,
            n_periods: 30,
            t_lo: 1.0,
            t_hi: 10.0,
            zeta: 0.05,
            seed: 0,
        }
    }
}

impl FcOptSettings {
    pub fn periods(&self) -> Vec<f64> {
        crate::response::log_periods(self.t_lo, self.t_hi, self.n_periods)
    }

    pub fn fc_grid(&self) -> Vec<f64> {
        let n = ((self.fc_max - self.fc_min) / self.fc_step).round() as usize;
        (0..=n).map(|i| self.fc_min + i as f64 * self.fc_step).collect()
    }
}

/// Result of the corner-frequency search.
#[derive(Debug, Clone)]
pub struct FcOptResult {
    pub fc: f64,
    /// (fc, bias) pairs over the whole grid.
    pub eps: Vec<(f64, f64)>,
}

/// Grid search for the corner frequency minimizing the absolute integrated
/// standardized bias between `target_log_sa` (natural logs of the target
/// spectrum on `settings.periods()`) and the simulated ensemble.
///
/// All grid points share one set of noise draws; the per-fc energy scale is
/// estimated from the same ensemble, which keeps the bias curve smooth in
/// fc. Ties resolve to the smallest fc.
pub fn optimize_fc(
    env: &EnvelopeParams,
    model: &SpectralModel,
    grid: &SimGrid,
    target_log_sa: &[f64],
    settings: &FcOptSettings,
) -> Result<FcOptResult> {
    let periods = settings.periods();
    if target_log_sa.len() != periods.len() {
        return Err(Error::invalid_params(format!(
            "target spectrum has {} points, expected {}",
            target_log_sa.len(),
            periods.len()
        )));
    }
    let sigma = sigma_matrix(env, model, grid)?;
    let noises: Vec<NoiseVector> = (0..settings.n_draws)
        .map(|d| NoiseVector::draw(grid, settings.seed, &["fc-opt"], d as u64))
        .collect();
    let noise_refs: Vec<&NoiseVector> = noises.iter().collect();
    let cores = simulate_core_batch(&sigma, grid, &noise_refs)?;

    let n = grid.n_time();
    let ws = FftWorkspace::for_len(n);
    let core_spectra: Vec<Vec<Complex<f64>>> = cores.par_iter().map(|c| ws.forward(c)).collect();

    // Expected Arias intensity of the unfiltered process (energy target).
    let mut q2 = vec![0.0f64; n];
    for i in 0..n {
        let row = &sigma.values[i * grid.k..(i + 1) * grid.k];
        q2[i] = row.iter().map(|&v| (v as f64) * (v as f64)).sum();
    }
    let ia_target = ARIAS_FACTOR * trapz(&q2, grid.dt);

    // Trapezoid weights over ln T.
    let lnt: Vec<f64> = periods.iter().map(|t| t.ln()).collect();
    let mut wq = vec![0.0f64; lnt.len()];
    for i in 0..lnt.len() - 1 {
        let d = lnt[i + 1] - lnt[i];
        wq[i] += 0.5 * d;
        wq[i + 1] += 0.5 * d;
    }

    let fc_grid = settings.fc_grid();
    let eps: Vec<(f64, f64)> = fc_grid
        .par_iter()
        .map(|&fc| {
            let hk = ws.forward(&highpass_kernel(fc, grid.dt, n));
            let mut log_sa = vec![vec![0.0f64; periods.len()]; settings.n_draws];
            let mut ia_sum = 0.0f64;
            for (d, spec0) in core_spectra.iter().enumerate() {
                let mut spec = spec0.clone();
                for (s, h) in spec.iter_mut().zip(&hk) {
                    *s *= h;
                }
                let disp = ws.inverse_trunc(&mut spec, n);
                let disp_re: Vec<f64> = disp.iter().map(|c| c.re).collect();
                let accel = second_derivative(&disp_re, grid.dt);
                let sq: Vec<f64> = accel.iter().map(|a| a * a).collect();
                ia_sum += ARIAS_FACTOR * trapz(&sq, grid.dt);
                for (j, &t) in periods.iter().enumerate() {
                    let omega = 2.0 * std::f64::consts::PI / t;
                    let peak = sdof_linear_peak(&accel, grid.dt, t, settings.zeta);
                    log_sa[d][j] = (omega * omega * peak).max(1e-300).ln();
                }
            }
            let kappa = (ia_target / (ia_sum / settings.n_draws as f64)).sqrt().max(1.0);
            let log_kappa = kappa.ln();

            let mut bias = 0.0f64;
            for j in 0..periods.len() {
                let mean = log_sa.iter().map(|row| row[j]).sum::<f64>() / settings.n_draws as f64;
                let var = log_sa
                    .iter()
                    .map(|row| (row[j] - mean).powi(2))
                    .sum::<f64>()
                    / (settings.n_draws as f64 - 1.0);
                let sd = var.sqrt();
                if sd < 1e-12 {
                    return (fc, f64::NAN);
                }
                bias += wq[j] * (target_log_sa[j] - (mean + log_kappa)) / sd;
            }
            (fc, bias.abs())
        })
        .collect();

    if let Some(&(fc, e)) = eps.iter().find(|(_, e)| e.is_nan()) {
        let _ = e;
        return Err(Error::numeric(format!(
            "degenerate simulated spectrum dispersion at fc = {fc}"
        )));
    }
    let mut best = eps[0];
    for &p in &eps[1..] {
        if p.1 < best.1 {
            best = p;
        }
    }
    Ok(FcOptResult { fc: best.0, eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{FilterSpec, ModelTrends, Trend};
    use approx::assert_relative_eq;

    fn test_env() -> EnvelopeParams {
        EnvelopeParams::new([0.8, 3.0, 2.0, 4.0, 3.0, 2.2], 0.05).unwrap()
    }

    fn test_model(fc: f64) -> SpectralModel {
        SpectralModel {
            config_id: 1,
            filter: FilterSpec::SecondOrder,
            trends: ModelTrends {
                omega: vec![Trend::Linear {
                    mid: 5.0 * 2.0 * std::f64::consts::PI,
                    slope: -1.0,
                }],
                zeta: vec![Trend::Constant { value: 0.3 }],
                weight: None,
            },
            fc,
        }
    }

    #[test]
    fn grid_respects_non_periodicity() {
        let g = SimGrid::new(30.0).unwrap();
        assert_eq!(g.k, 1500);
        assert!(2.0 * std::f64::consts::PI / g.d_omega() >= g.t_f - 1e-9);
        assert_eq!(g.omegas().len(), g.k);
        assert_relative_eq!(
            *g.omegas().last().unwrap(),
            2.0 * std::f64::consts::PI * 25.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_noise_gives_zero_series() {
        let env = test_env();
        let model = test_model(0.2);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let a = simulate_core(&env, &model, &grid, &NoiseVector::zeros(&grid)).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let env = test_env();
        let model = test_model(0.15);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let n1 = NoiseVector::draw(&grid, 7, &["t"], 0);
        let n2 = NoiseVector::draw(&grid, 7, &["t"], 0);
        let a = simulate_gm(&env, &model, &grid, &n1).unwrap();
        let b = simulate_gm(&env, &model, &grid, &n2).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn scaling_ia_scales_samples() {
        let env = test_env();
        let mut env4 = env.clone();
        env4.ia_total *= 4.0;
        let model = test_model(0.0);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let noise = NoiseVector::draw(&grid, 3, &["t"], 1);
        let a = simulate_core(&env, &model, &grid, &noise).unwrap();
        let b = simulate_core(&env4, &model, &grid, &noise).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(2.0 * x, *y, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn expected_energy_matches_envelope() {
        // Mean Arias intensity over draws ~= ia_total within 3 MC standard
        // errors (pre-filter process).
        let env = test_env();
        let model = test_model(0.0);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let sigma = sigma_matrix(&env, &model, &grid).unwrap();
        let n_draws = 200;
        let noises: Vec<NoiseVector> = (0..n_draws)
            .map(|d| NoiseVector::draw(&grid, 11, &["energy"], d))
            .collect();
        let refs: Vec<&NoiseVector> = noises.iter().collect();
        let series = simulate_core_batch(&sigma, &grid, &refs).unwrap();
        let ias: Vec<f64> = series
            .iter()
            .map(|a| {
                let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
                ARIAS_FACTOR * trapz(&sq, grid.dt)
            })
            .collect();
        let mean = ias.iter().sum::<f64>() / n_draws as f64;
        let sd = (ias.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_draws as f64 - 1.0))
            .sqrt();
        let se = sd / (n_draws as f64).sqrt();
        assert!(
            (mean - env.ia_total).abs() <= 3.0 * se,
            "mean {mean} vs target {} (se {se})",
            env.ia_total
        );
    }

    #[test]
    fn highpass_identity_at_zero_fc() {
        let env = test_env();
        let model = test_model(0.0);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let noise = NoiseVector::draw(&grid, 5, &["hp"], 0);
        let a = simulate_core(&env, &model, &grid, &noise).unwrap();
        let b = highpass(&a, 0.0, grid.dt);
        let n = a.len();
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let diff: Vec<f64> = a[2..n - 2]
            .iter()
            .zip(&b[2..n - 2])
            .map(|(x, y)| x - y)
            .collect();
        assert!(rms(&diff) <= 0.005 * rms(&a[2..n - 2]), "interior rms mismatch");
    }

    #[test]
    fn highpass_attenuates_low_frequencies() {
        let dt = 0.02;
        let n = 4000;
        let sine = |f: f64| -> Vec<f64> {
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 * dt).sin())
                .collect()
        };
        let rms_interior = |x: &[f64]| {
            let m = x.len() / 4;
            (x[m..3 * m].iter().map(|v| v * v).sum::<f64>() / (2 * m) as f64).sqrt()
        };
        let low = sine(0.05);
        let high = sine(5.0);
        let low_out = highpass(&low, 0.5, dt);
        let high_out = highpass(&high, 0.5, dt);
        let gain_low = rms_interior(&low_out) / rms_interior(&low);
        let gain_high = rms_interior(&high_out) / rms_interior(&high);
        let db = 20.0 * (gain_low / gain_high).log10();
        assert!(db < -20.0, "relative attenuation only {db} dB");
    }

    #[test]
    fn highpass_zeroes_final_velocity() {
        let env = test_env();
        let model = test_model(0.1);
        let grid = SimGrid::new(env.t_total() + 10.0).unwrap(); // padded end
        let noise = NoiseVector::draw(&grid, 9, &["vel"], 0);
        let sigma = sigma_matrix(&env, &model, &grid).unwrap();
        let a = simulate_core_batch(&sigma, &grid, &[&noise]).unwrap().remove(0);
        let filtered = highpass(&a, 0.1, grid.dt);
        // Final velocity by cumulative trapezoid.
        let mut v = 0.0;
        let mut pgv = 0.0f64;
        for i in 1..filtered.len() {
            v += 0.5 * (filtered[i] + filtered[i - 1]) * grid.dt;
            pgv = pgv.max(v.abs());
        }
        assert!(v.abs() < 1e-3 * pgv, "residual velocity {v} vs pgv {pgv}");
    }

    #[test]
    fn kappa_is_one_without_filtering() {
        let env = test_env();
        let model = test_model(0.0);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let kappa = energy_factor(&env, &model, &grid).unwrap();
        assert!((kappa - 1.0).abs() <= 1e-3, "kappa(0) = {kappa}");
    }

    #[test]
    fn kappa_monotone_in_fc() {
        let env = test_env();
        let grid = SimGrid::new(env.t_total()).unwrap();
        let mut prev = 0.0;
        for i in 0..=10 {
            let fc = 0.2 * i as f64;
            let kappa = energy_factor(&env, &test_model(fc), &grid).unwrap();
            assert!(kappa >= 1.0);
            assert!(kappa >= prev - 1e-9, "kappa not monotone at fc={fc}");
            prev = kappa;
        }
    }

    #[test]
    fn kappa_matches_monte_carlo_oracle() {
        let env = test_env();
        let model = test_model(0.4);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let sigma = sigma_matrix(&env, &model, &grid).unwrap();
        let kappa = energy_factor_from_sigma(&sigma, &grid, model.fc);

        let n_draws = 500;
        let noises: Vec<NoiseVector> = (0..n_draws)
            .map(|d| NoiseVector::draw(&grid, 13, &["kmc"], d))
            .collect();
        let refs: Vec<&NoiseVector> = noises.iter().collect();
        let series = simulate_core_batch(&sigma, &grid, &refs).unwrap();
        let (mut ia_a, mut ia_f) = (0.0, 0.0);
        for a in &series {
            let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
            ia_a += ARIAS_FACTOR * trapz(&sq, grid.dt);
            let f = highpass(a, model.fc, grid.dt);
            let sqf: Vec<f64> = f.iter().map(|v| v * v).collect();
            ia_f += ARIAS_FACTOR * trapz(&sqf, grid.dt);
        }
        let mc = (ia_a / ia_f).sqrt();
        assert_relative_eq!(kappa, mc, max_relative = 0.02);
    }

    #[test]
    fn simulated_record_restores_energy() {
        let env = test_env();
        let model = test_model(0.3);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let sigma = sigma_matrix(&env, &model, &grid).unwrap();
        let kappa = energy_factor_from_sigma(&sigma, &grid, model.fc);
        let n_draws = 400;
        let ias: Vec<f64> = (0..n_draws)
            .map(|d| {
                let noise = NoiseVector::draw(&grid, 17, &["restore"], d);
                let rec = simulate_gm_with(&env, &model, &grid, &noise, &sigma, kappa).unwrap();
                crate::records::husid(&rec).ia_total
            })
            .collect();
        let mean = ias.iter().sum::<f64>() / n_draws as f64;
        let sd = (ias.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_draws as f64 - 1.0))
            .sqrt();
        let se = sd / (n_draws as f64).sqrt();
        assert!(
            (mean - env.ia_total).abs() <= 3.0 * se,
            "mean {mean} vs {} (se {se})",
            env.ia_total
        );
    }

    #[test]
    fn fc_zero_bias_by_construction() {
        // Evaluating the bias with the simulated mean itself as the target
        // must give zero at that fc.
        let env = test_env();
        let model = test_model(0.0);
        let grid = SimGrid::new(env.t_total()).unwrap();
        let settings = FcOptSettings {
            n_draws: 20,
            fc_min: 0.3,
            fc_max: 0.3,
            fc_step: 0.01,
            seed: 23,
            ..Default::default()
        };
        // Build the target as the ensemble mean at fc = 0.3 via the same path.
        let probe = optimize_fc(&env, &model, &grid, &vec![0.0; 30], &settings).unwrap();
        assert_eq!(probe.eps.len(), 1);
        // Reconstruct mean log Sa: bias(target=0) = |sum w (0 - mu)/sd|; use
        // two evaluations to solve for mu is overkill -- instead just check
        // the self-target property with an explicit ensemble below.
        let sigma = sigma_matrix(&env, &model, &grid).unwrap();
        let noises: Vec<NoiseVector> = (0..settings.n_draws)
            .map(|d| NoiseVector::draw(&grid, settings.seed, &["fc-opt"], d as u64))
            .collect();
        let periods = settings.periods();
        let ws = FftWorkspace::for_len(grid.n_time());
        let hk = ws.forward(&highpass_kernel(0.3, grid.dt, grid.n_time()));
        let refs: Vec<&NoiseVector> = noises.iter().collect();
        let cores = simulate_core_batch(&sigma, &grid, &refs).unwrap();
        let mut ia_sum = 0.0;
        let mut logs = vec![vec![0.0; periods.len()]; cores.len()];
        for (d, core) in cores.iter().enumerate() {
            let mut spec = ws.forward(core);
            for (s, h) in spec.iter_mut().zip(&hk) {
                *s *= h;
            }
            let disp = ws.inverse_trunc(&mut spec, grid.n_time());
            let dre: Vec<f64> = disp.iter().map(|c| c.re).collect();
            let acc = second_derivative(&dre, grid.dt);
            let sq: Vec<f64> = acc.iter().map(|v| v * v).collect();
            ia_sum += ARIAS_FACTOR * trapz(&sq, grid.dt);
            for (j, &t) in periods.iter().enumerate() {
                let om = 2.0 * std::f64::consts::PI / t;
                logs[d][j] = (om * om * sdof_linear_peak(&acc, grid.dt, t, 0.05)).ln();
            }
        }
        let mut q2 = vec![0.0f64; grid.n_time()];
        for i in 0..grid.n_time() {
            let row = &sigma.values[i * grid.k..(i + 1) * grid.k];
            q2[i] = row.iter().map(|&v| (v as f64) * (v as f64)).sum();
        }
        let ia_target = ARIAS_FACTOR * trapz(&q2, grid.dt);
        let kappa = (ia_target / (ia_sum / cores.len() as f64)).sqrt().max(1.0);
        let target: Vec<f64> = (0..periods.len())
            .map(|j| logs.iter().map(|r| r[j]).sum::<f64>() / cores.len() as f64 + kappa.ln())
            .collect();
        let res = optimize_fc(&env, &model, &grid, &target, &settings).unwrap();
        assert!(res.eps[0].1 < 1e-10, "self-target bias {}", res.eps[0].1);
    }
}
