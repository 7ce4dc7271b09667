//! Frequency-filter shapes and their time-varying parameter trends.
//!
//! A filter phi(omega) fixes the instantaneous spectral shape; its
//! parameters (predominant frequency omega_g, bandwidth zeta_g, and mixing
//! weights for multi-mode filters) follow trends in time anchored to the
//! envelope's energy-percentile times. Filters are normalized discretely so
//! that `sum(phi) * d_omega = 1` on the evaluation grid, matching the
//! normalization used by the simulator.

use serde::{Deserialize, Serialize};

use crate::envelope::EnvelopeParams;
use crate::{Error, Result};

/// Feasible range for the filter frequency, rad/s.
pub const OMEGA_G_MIN: f64 = 0.1;
pub const OMEGA_G_MAX: f64 = 2.0 * std::f64::consts::PI * 25.0;
/// Feasible range for the filter bandwidth.
pub const ZETA_G_MIN: f64 = 0.02;
pub const ZETA_G_MAX: f64 = 1.0;
/// Mixing weights stay inside [0.01, 0.99] along a trend.
pub const WEIGHT_MIN: f64 = 0.01;
/// Width of the moving-average window smoothing polyline trends, seconds.
pub const SMOOTH_WINDOW_S: f64 = 2.0;

/// Single-mode filter kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseFilter {
    /// Pseudo-acceleration response of an under-damped oscillator.
    SecondOrder,
    KanaiTajimi,
}

/// Filter family, possibly multi-mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterSpec {
    SecondOrder,
    KanaiTajimi,
    /// Convex combination of `j` single-mode filters.
    Convex { j: usize, base: BaseFilter },
    /// Product of `j` second-order filters.
    Cascade { j: usize },
}

impl FilterSpec {
    pub fn n_modes(&self) -> usize {
        match self {
            FilterSpec::SecondOrder | FilterSpec::KanaiTajimi => 1,
            FilterSpec::Convex { j, .. } | FilterSpec::Cascade { j } => *j,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, FilterSpec::Convex { .. })
    }

    /// Free shape parameters: 2 per mode, plus j-1 weights for convex mixes.
    pub fn n_free_params(&self) -> usize {
        let j = self.n_modes();
        2 * j + if self.has_weights() { j - 1 } else { 0 }
    }
}

/// One filter mode: predominant frequency (rad/s) and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterMode {
    pub omega_g: f64,
    pub zeta_g: f64,
}

/// Instantaneous filter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub modes: Vec<FilterMode>,
    /// Convex weights on the simplex; empty for non-convex filters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
}

impl FilterParams {
    pub fn single(omega_g: f64, zeta_g: f64) -> FilterParams {
        FilterParams {
            modes: vec![FilterMode { omega_g, zeta_g }],
            weights: Vec::new(),
        }
    }

    pub fn validate(&self, spec: &FilterSpec) -> Result<()> {
        if self.modes.len() != spec.n_modes() {
            return Err(Error::invalid_params(format!(
                "expected {} modes, got {}",
                spec.n_modes(),
                self.modes.len()
            )));
        }
        for m in &self.modes {
            if !(m.omega_g > 0.0) {
                return Err(Error::invalid_params(format!("omega_g must be > 0, got {}", m.omega_g)));
            }
            if !(m.zeta_g > 0.0 && m.zeta_g <= 1.0) {
                return Err(Error::invalid_params(format!(
                    "zeta_g must be in (0, 1], got {}",
                    m.zeta_g
                )));
            }
        }
        if spec.has_weights() {
            if self.weights.len() != spec.n_modes() {
                return Err(Error::invalid_params("weight count must match mode count"));
            }
            let sum: f64 = self.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
                return Err(Error::invalid_params("weights must lie in (0,1) and sum to 1"));
            }
        }
        Ok(())
    }
}

fn second_order_raw(w: f64, wg: f64, zg: f64) -> f64 {
    let wg2 = wg * wg;
    let d = wg2 - w * w;
    wg2 * wg2 / (d * d + 4.0 * zg * zg * wg2 * w * w)
}

fn kanai_tajimi_raw(w: f64, wg: f64, zg: f64) -> f64 {
    let wg2 = wg * wg;
    let d = wg2 - w * w;
    let num = wg2 * wg2 + 4.0 * zg * zg * wg2 * w * w;
    num / (d * d + 4.0 * zg * zg * wg2 * w * w)
}

fn base_raw(base: BaseFilter, w: f64, wg: f64, zg: f64) -> f64 {
    match base {
        BaseFilter::SecondOrder => second_order_raw(w, wg, zg),
        BaseFilter::KanaiTajimi => kanai_tajimi_raw(w, wg, zg),
    }
}

/// Unnormalized filter shape on a frequency grid. Convex mixes normalize
/// each mode discretely first so the weights act as energy fractions.
pub fn eval_filter_raw(spec: &FilterSpec, params: &FilterParams, omega: &[f64]) -> Result<Vec<f64>> {
    params.validate(spec)?;
    let dw = grid_step(omega)?;
    let out = match spec {
        FilterSpec::SecondOrder => omega
            .iter()
            .map(|&w| second_order_raw(w, params.modes[0].omega_g, params.modes[0].zeta_g))
            .collect(),
        FilterSpec::KanaiTajimi => omega
            .iter()
            .map(|&w| kanai_tajimi_raw(w, params.modes[0].omega_g, params.modes[0].zeta_g))
            .collect(),
        FilterSpec::Convex { base, .. } => {
            let mut acc = vec![0.0; omega.len()];
            for (mode, &weight) in params.modes.iter().zip(&params.weights) {
                let shape: Vec<f64> = omega
                    .iter()
                    .map(|&w| base_raw(*base, w, mode.omega_g, mode.zeta_g))
                    .collect();
                let mass: f64 = shape.iter().sum::<f64>() * dw;
                for (a, s) in acc.iter_mut().zip(&shape) {
                    *a += weight * s / mass;
                }
            }
            acc
        }
        FilterSpec::Cascade { .. } => omega
            .iter()
            .map(|&w| {
                params
                    .modes
                    .iter()
                    .map(|m| second_order_raw(w, m.omega_g, m.zeta_g))
                    .product()
            })
            .collect(),
    };
    Ok(out)
}

/// Filter shape normalized to unit discrete mass: `sum(phi) * d_omega = 1`.
pub fn eval_filter(spec: &FilterSpec, params: &FilterParams, omega: &[f64]) -> Result<Vec<f64>> {
    let mut shape = eval_filter_raw(spec, params, omega)?;
    let dw = grid_step(omega)?;
    let mass: f64 = shape.iter().sum::<f64>() * dw;
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::numeric("filter has non-positive spectral mass"));
    }
    for v in &mut shape {
        *v /= mass;
    }
    Ok(shape)
}

fn grid_step(omega: &[f64]) -> Result<f64> {
    if omega.len() < 2 {
        return Err(Error::invalid_params("frequency grid needs >= 2 points"));
    }
    Ok(omega[1] - omega[0])
}

/// Projects an optimizer iterate onto the feasible set: omega_g and zeta_g
/// are clamped to their supports, convex weights renormalized to the simplex.
pub fn project_params(spec: &FilterSpec, params: &FilterParams) -> FilterParams {
    let modes = params
        .modes
        .iter()
        .map(|m| FilterMode {
            omega_g: m.omega_g.clamp(OMEGA_G_MIN, OMEGA_G_MAX),
            zeta_g: m.zeta_g.clamp(ZETA_G_MIN, ZETA_G_MAX),
        })
        .collect();
    let weights = if spec.has_weights() {
        let floored: Vec<f64> = params.weights.iter().map(|w| w.max(1e-3)).collect();
        let sum: f64 = floored.iter().sum();
        floored.into_iter().map(|w| w / sum).collect()
    } else {
        Vec::new()
    };
    FilterParams { modes, weights }
}

/// Trend of one scalar filter parameter over the record duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Trend {
    /// Frozen at its strong-shaking value (read at t_45).
    Constant { value: f64 },
    /// Linear in t over [t_5, t_95], held constant outside.
    Linear { mid: f64, slope: f64 },
    /// Polyline through the five percentile knots, smoothed by a 2 s moving
    /// average, held constant outside [t_5, t_95].
    Polyline { values: [f64; 5] },
}

/// Trend shapes available per Table-style configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendKind {
    Constant,
    Linear,
    Polyline,
}

impl TrendKind {
    pub fn n_params(&self) -> usize {
        match self {
            TrendKind::Constant => 1,
            TrendKind::Linear => 2,
            TrendKind::Polyline => 5,
        }
    }
}

impl Trend {
    pub fn kind(&self) -> TrendKind {
        match self {
            Trend::Constant { .. } => TrendKind::Constant,
            Trend::Linear { .. } => TrendKind::Linear,
            Trend::Polyline { .. } => TrendKind::Polyline,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Trend::Constant { value } => vec![*value],
            Trend::Linear { mid, slope } => vec![*mid, *slope],
            Trend::Polyline { values } => values.to_vec(),
        }
    }
}

/// Envelope percentile times anchoring the trends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendContext {
    pub t5: f64,
    pub t30: f64,
    pub t45: f64,
    pub t75: f64,
    pub t95: f64,
    pub tf: f64,
}

impl TrendContext {
    pub fn from_envelope(env: &EnvelopeParams) -> TrendContext {
        let t = env.knot_times();
        TrendContext {
            t5: t[1],
            t30: t[2],
            t45: t[3],
            t75: t[4],
            t95: t[5],
            tf: t[6],
        }
    }

    pub fn knots(&self) -> [f64; 5] {
        [self.t5, self.t30, self.t45, self.t75, self.t95]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.knots();
        if k.windows(2).any(|w| w[1] <= w[0]) || self.tf < self.t95 {
            return Err(Error::invalid_params("trend knot times must be increasing"));
        }
        Ok(())
    }
}

/// Evaluates a trend at time t.
pub fn eval_trend(trend: &Trend, t: f64, ctx: &TrendContext) -> f64 {
    match trend {
        Trend::Constant { value } => *value,
        Trend::Linear { mid, slope } => {
            let tc = t.clamp(ctx.t5, ctx.t95);
            mid + slope * (tc - ctx.t45)
        }
        Trend::Polyline { values } => smoothed_polyline(values, t, ctx),
    }
}

/// Moving average of the knot polyline over [t-w/2, t+w/2] clipped to
/// [0, tf]; the polyline is constant outside [t_5, t_95], so the average of
/// a constant region stays constant.
fn smoothed_polyline(values: &[f64; 5], t: f64, ctx: &TrendContext) -> f64 {
    let half = 0.5 * SMOOTH_WINDOW_S;
    let a = (t - half).max(0.0);
    let b = (t + half).min(ctx.tf);
    if b - a < 1e-12 {
        return polyline_value(values, t, ctx);
    }
    (polyline_integral(values, b, ctx) - polyline_integral(values, a, ctx)) / (b - a)
}

fn polyline_breaks(ctx: &TrendContext) -> [f64; 7] {
    [0.0, ctx.t5, ctx.t30, ctx.t45, ctx.t75, ctx.t95, ctx.tf]
}

fn polyline_values(values: &[f64; 5]) -> [f64; 7] {
    [
        values[0], values[0], values[1], values[2], values[3], values[4], values[4],
    ]
}

fn polyline_value(values: &[f64; 5], t: f64, ctx: &TrendContext) -> f64 {
    let xs = polyline_breaks(ctx);
    let ys = polyline_values(values);
    if t <= xs[0] {
        return ys[0];
    }
    for i in 0..6 {
        if t <= xs[i + 1] {
            let span = xs[i + 1] - xs[i];
            if span <= 0.0 {
                return ys[i + 1];
            }
            let s = (t - xs[i]) / span;
            return ys[i] + s * (ys[i + 1] - ys[i]);
        }
    }
    ys[6]
}

/// Integral of the polyline from 0 to t (piecewise quadratic, exact).
fn polyline_integral(values: &[f64; 5], t: f64, ctx: &TrendContext) -> f64 {
    let xs = polyline_breaks(ctx);
    let ys = polyline_values(values);
    let t = t.clamp(xs[0], xs[6]);
    let mut acc = 0.0;
    for i in 0..6 {
        if t <= xs[i] {
            break;
        }
        let hi = t.min(xs[i + 1]);
        let span = xs[i + 1] - xs[i];
        if span <= 0.0 {
            continue;
        }
        let s = (hi - xs[i]) / span;
        let y_hi = ys[i] + s * (ys[i + 1] - ys[i]);
        acc += 0.5 * (ys[i] + y_hi) * (hi - xs[i]);
    }
    acc
}

/// Trend assignment for every scalar filter parameter of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrends {
    /// Per-mode omega_g trends.
    pub omega: Vec<Trend>,
    /// Per-mode zeta_g trends.
    pub zeta: Vec<Trend>,
    /// First-mode mixing-weight trend (two-mode convex filters only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Trend>,
}

/// One of the eight catalogued model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: u8,
    pub filter: FilterSpec,
    pub omega_trend: TrendKind,
    pub zeta_trend: TrendKind,
    pub weight_trend: Option<TrendKind>,
}

impl ModelConfig {
    pub fn from_id(id: u8) -> Result<ModelConfig> {
        use BaseFilter::SecondOrder as So;
        use FilterSpec as F;
        use TrendKind::*;
        let (filter, omega_trend, zeta_trend, weight_trend) = match id {
            1 => (F::SecondOrder, Linear, Constant, None),
            2 => (F::SecondOrder, Linear, Linear, None),
            3 => (F::SecondOrder, Polyline, Polyline, None),
            4 => (F::KanaiTajimi, Linear, Constant, None),
            5 => (F::Convex { j: 2, base: So }, Linear, Linear, Some(Linear)),
            6 => (F::Convex { j: 2, base: So }, Polyline, Polyline, Some(Polyline)),
            7 => (F::Cascade { j: 2 }, Linear, Linear, None),
            8 => (F::Cascade { j: 2 }, Polyline, Polyline, None),
            _ => return Err(Error::invalid_params(format!("model id must be 1..=8, got {id}"))),
        };
        Ok(ModelConfig {
            id,
            filter,
            omega_trend,
            zeta_trend,
            weight_trend,
        })
    }

    pub fn all() -> Vec<ModelConfig> {
        (1..=8).map(|i| ModelConfig::from_id(i).unwrap()).collect()
    }

    /// Number of trend parameters theta_F.
    pub fn n_trend_params(&self) -> usize {
        let j = self.filter.n_modes();
        j * (self.omega_trend.n_params() + self.zeta_trend.n_params())
            + self.weight_trend.map_or(0, |w| w.n_params())
    }

    /// Total parameter count: 7 envelope + trend + corner frequency.
    pub fn n_total_params(&self) -> usize {
        7 + self.n_trend_params() + 1
    }
}

/// A fitted spectral model: filter family, trends, and corner frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub config_id: u8,
    pub filter: FilterSpec,
    pub trends: ModelTrends,
    /// Corner frequency of the high-pass filter, Hz.
    pub fc: f64,
}

impl SpectralModel {
    pub fn validate(&self) -> Result<()> {
        let config = ModelConfig::from_id(self.config_id)?;
        let j = self.filter.n_modes();
        if self.filter != config.filter {
            return Err(Error::invalid_params("filter does not match configuration id"));
        }
        if self.trends.omega.len() != j || self.trends.zeta.len() != j {
            return Err(Error::invalid_params("trend count must match mode count"));
        }
        if self.trends.omega.iter().any(|t| t.kind() != config.omega_trend)
            || self.trends.zeta.iter().any(|t| t.kind() != config.zeta_trend)
        {
            return Err(Error::invalid_params("trend kinds do not match configuration id"));
        }
        match (config.weight_trend, &self.trends.weight) {
            (None, None) => {}
            (Some(kind), Some(t)) if t.kind() == kind => {}
            _ => return Err(Error::invalid_params("weight trend does not match configuration id")),
        }
        if !(0.0..=2.0).contains(&self.fc) {
            return Err(Error::invalid_params(format!("fc must be in [0, 2] Hz, got {}", self.fc)));
        }
        Ok(())
    }

    /// Filter parameters at time t, projected onto the feasible set.
    pub fn params_at(&self, t: f64, ctx: &TrendContext) -> FilterParams {
        let modes = self
            .trends
            .omega
            .iter()
            .zip(&self.trends.zeta)
            .map(|(ot, zt)| FilterMode {
                omega_g: eval_trend(ot, t, ctx).clamp(OMEGA_G_MIN, OMEGA_G_MAX),
                zeta_g: eval_trend(zt, t, ctx).clamp(ZETA_G_MIN, ZETA_G_MAX),
            })
            .collect();
        let weights = match &self.trends.weight {
            Some(wt) => {
                let w1 = eval_trend(wt, t, ctx).clamp(WEIGHT_MIN, 1.0 - WEIGHT_MIN);
                vec![w1, 1.0 - w1]
            }
            None if self.filter.has_weights() => {
                let j = self.filter.n_modes();
                vec![1.0 / j as f64; j]
            }
            None => Vec::new(),
        };
        FilterParams { modes, weights }
    }

    /// Flat trend-parameter vector, mode-major: omega then zeta per mode,
    /// weight trend last.
    pub fn theta_f(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (ot, zt) in self.trends.omega.iter().zip(&self.trends.zeta) {
            out.extend(ot.params());
            out.extend(zt.params());
        }
        if let Some(w) = &self.trends.weight {
            out.extend(w.params());
        }
        out
    }
}

/// Column labels for the flat trend-parameter vector of a configuration.
pub fn theta_f_names(config: &ModelConfig) -> Vec<String> {
    let j = config.filter.n_modes();
    let mut names = Vec::new();
    let push = |names: &mut Vec<String>, stem: &str, kind: TrendKind| match kind {
        TrendKind::Constant => names.push(format!("{stem}_mid")),
        TrendKind::Linear => {
            names.push(format!("{stem}_mid"));
            names.push(format!("{stem}_slope"));
        }
        TrendKind::Polyline => {
            for p in [5, 30, 45, 75, 95] {
                names.push(format!("{stem}_p{p}"));
            }
        }
    };
    for m in 1..=j {
        let suffix = if j > 1 { format!("{m}") } else { String::new() };
        push(&mut names, &format!("omega{suffix}"), config.omega_trend);
        push(&mut names, &format!("zeta{suffix}"), config.zeta_trend);
    }
    if let Some(w) = config.weight_trend {
        push(&mut names, "pi", w);
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn grid(n: usize, dw: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dw).collect()
    }

    #[test]
    fn second_order_peak_to_dc_ratio() {
        // phi(omega_g)/phi(0) = 1/(4 zeta^2); grid contains both points.
        let dw = 0.5;
        let omega = grid(320, dw);
        let wg = 40.0 * dw;
        for zeta in [0.1, 0.3, 0.6] {
            let params = FilterParams::single(wg, zeta);
            let phi = eval_filter(&FilterSpec::SecondOrder, &params, &omega).unwrap();
            assert_relative_eq!(phi[40] / phi[0], 1.0 / (4.0 * zeta * zeta), max_relative = 1e-12);
        }
    }

    #[test]
    fn kanai_tajimi_matches_second_order_at_dc() {
        let omega = grid(320, 0.5);
        let params = FilterParams::single(12.0, 0.4);
        let so = eval_filter_raw(&FilterSpec::SecondOrder, &params, &omega).unwrap();
        let kt = eval_filter_raw(&FilterSpec::KanaiTajimi, &params, &omega).unwrap();
        assert_relative_eq!(so[0], kt[0], max_relative = 1e-12);
        assert_relative_eq!(so[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn convex_degenerate_weight_equals_base() {
        let omega = grid(320, 0.5);
        let spec = FilterSpec::Convex {
            j: 2,
            base: BaseFilter::SecondOrder,
        };
        let params = FilterParams {
            modes: vec![
                FilterMode { omega_g: 10.0, zeta_g: 0.3 },
                FilterMode { omega_g: 50.0, zeta_g: 0.5 },
            ],
            weights: vec![1.0 - 1e-15, 1e-15],
        };
        let mix = eval_filter(&spec, &params, &omega).unwrap();
        let single = eval_filter(
            &FilterSpec::SecondOrder,
            &FilterParams::single(10.0, 0.3),
            &omega,
        )
        .unwrap();
        for (a, b) in mix.iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cascade_single_mode_equals_second_order() {
        let omega = grid(320, 0.5);
        let spec = FilterSpec::Cascade { j: 1 };
        let params = FilterParams {
            modes: vec![FilterMode { omega_g: 15.0, zeta_g: 0.25 }],
            weights: Vec::new(),
        };
        let cascade = eval_filter(&spec, &params, &omega).unwrap();
        let so = eval_filter(
            &FilterSpec::SecondOrder,
            &FilterParams::single(15.0, 0.25),
            &omega,
        )
        .unwrap();
        for (a, b) in cascade.iter().zip(&so) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn all_configs_normalize_to_unit_mass() {
        let omega = grid(1251, 2.0 * std::f64::consts::PI * 25.0 / 1250.0);
        let dw = omega[1] - omega[0];
        let mut rng = crate::rng::stream(31, &["filters"], &[]);
        for config in ModelConfig::all() {
            for _ in 0..20 {
                let j = config.filter.n_modes();
                let modes: Vec<FilterMode> = (0..j)
                    .map(|_| FilterMode {
                        omega_g: rng.gen_range(1.0..140.0),
                        zeta_g: rng.gen_range(0.05..1.0),
                    })
                    .collect();
                let weights = if config.filter.has_weights() {
                    let w: f64 = rng.gen_range(0.05..0.95);
                    vec![w, 1.0 - w]
                } else {
                    Vec::new()
                };
                let params = FilterParams { modes, weights };
                let phi = eval_filter(&config.filter, &params, &omega).unwrap();
                let mass: f64 = phi.iter().sum::<f64>() * dw;
                assert_relative_eq!(mass, 1.0, epsilon = 1e-9);
                assert!(phi.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn grid_refinement_converges() {
        // Halving the step changes the normalized shape at common points by
        // well under 0.5% once the grid resolves the peak.
        let spec = FilterSpec::SecondOrder;
        let params = FilterParams::single(5.0 * 2.0 * std::f64::consts::PI, 0.3);
        let coarse = grid(1001, 2.0 * std::f64::consts::PI * 25.0 / 1000.0);
        let fine = grid(2001, 2.0 * std::f64::consts::PI * 25.0 / 2000.0);
        let pc = eval_filter(&spec, &params, &coarse).unwrap();
        let pf = eval_filter(&spec, &params, &fine).unwrap();
        for k in (0..coarse.len()).step_by(37) {
            assert_relative_eq!(pc[k], pf[2 * k], max_relative = 5e-3);
        }
    }

    #[test]
    fn project_clamps_and_renormalizes() {
        let spec = FilterSpec::Convex {
            j: 2,
            base: BaseFilter::SecondOrder,
        };
        let params = FilterParams {
            modes: vec![
                FilterMode { omega_g: 10.0, zeta_g: 1.5 },
                FilterMode { omega_g: 0.0001, zeta_g: 0.3 },
            ],
            weights: vec![0.5, 0.7],
        };
        let p = project_params(&spec, &params);
        assert_eq!(p.modes[0].zeta_g, 1.0);
        assert_eq!(p.modes[1].omega_g, OMEGA_G_MIN);
        assert_relative_eq!(p.weights[0], 5.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(p.weights[1], 7.0 / 12.0, max_relative = 1e-12);

        // Feasible input is unchanged.
        let ok = FilterParams {
            modes: vec![
                FilterMode { omega_g: 10.0, zeta_g: 0.4 },
                FilterMode { omega_g: 20.0, zeta_g: 0.6 },
            ],
            weights: vec![0.25, 0.75],
        };
        assert_eq!(project_params(&spec, &ok), ok);
    }

    fn ctx() -> TrendContext {
        TrendContext {
            t5: 1.0,
            t30: 3.0,
            t45: 5.0,
            t75: 9.0,
            t95: 12.0,
            tf: 14.0,
        }
    }

    #[test]
    fn linear_trend_clamps_outside_strong_phase() {
        let ctx = ctx();
        let tr = Trend::Linear { mid: 10.0, slope: -0.5 };
        assert_relative_eq!(eval_trend(&tr, 0.0, &ctx), 10.0 - 0.5 * (1.0 - 5.0));
        assert_relative_eq!(eval_trend(&tr, 13.5, &ctx), 10.0 - 0.5 * (12.0 - 5.0));
        assert_relative_eq!(eval_trend(&tr, 7.0, &ctx), 10.0 - 0.5 * 2.0);
        // Zero slope equals a constant.
        let flat = Trend::Linear { mid: 3.0, slope: 0.0 };
        for t in [0.0, 2.0, 5.0, 13.0] {
            assert_relative_eq!(eval_trend(&flat, t, &ctx), 3.0);
        }
    }

    #[test]
    fn polyline_constant_stays_constant() {
        let ctx = ctx();
        let tr = Trend::Polyline { values: [4.0; 5] };
        for i in 0..200 {
            let t = ctx.tf * i as f64 / 199.0;
            assert_relative_eq!(eval_trend(&tr, t, &ctx), 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn polyline_smoothing_is_continuous() {
        let ctx = ctx();
        let tr = Trend::Polyline {
            values: [2.0, 8.0, 3.0, 9.0, 1.0],
        };
        let n = 4000;
        let mut prev = eval_trend(&tr, 0.0, &ctx);
        let mut max_jump: f64 = 0.0;
        for i in 1..=n {
            let t = ctx.tf * i as f64 / n as f64;
            let v = eval_trend(&tr, t, &ctx);
            max_jump = max_jump.max((v - prev).abs());
            prev = v;
        }
        // ~ max slope * dt; far below any discontinuity.
        assert!(max_jump < 0.05, "max jump {max_jump}");
    }

    #[test]
    fn config_parameter_counts() {
        let want = [11, 12, 18, 11, 18, 33, 16, 28];
        for (config, w) in ModelConfig::all().iter().zip(want) {
            assert_eq!(config.n_total_params(), w, "config {}", config.id);
        }
    }

    #[test]
    fn spectral_model_json_roundtrip() {
        let model = SpectralModel {
            config_id: 5,
            filter: FilterSpec::Convex {
                j: 2,
                base: BaseFilter::SecondOrder,
            },
            trends: ModelTrends {
                omega: vec![
                    Trend::Linear { mid: 30.0, slope: -1.0 },
                    Trend::Linear { mid: 60.0, slope: 0.5 },
                ],
                zeta: vec![
                    Trend::Linear { mid: 0.3, slope: 0.0 },
                    Trend::Linear { mid: 0.5, slope: 0.01 },
                ],
                weight: Some(Trend::Linear { mid: 0.6, slope: -0.01 }),
            },
            fc: 0.25,
        };
        model.validate().unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: SpectralModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
        assert_eq!(model.theta_f().len(), 10);
    }
}
