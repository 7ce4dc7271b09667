//! Derivative-free minimization used by the per-slice filter fits.
//!
//! Plain Nelder-Mead with an optional projection applied to every candidate
//! point, so constrained problems stay feasible without penalty terms.

/// Stop criteria and simplex controls.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Converged when the simplex f-spread and x-spread drop below these.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Relative size of the initial simplex (per coordinate).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iters: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`, projecting every iterate with `project`.
pub fn nelder_mead<F, P>(
    f: F,
    project: P,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let eval = |x: &mut Vec<f64>| -> f64 {
        project(x);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    // Initial simplex: x0 plus a perturbation along each axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut base = x0.to_vec();
    let f0 = eval(&mut base);
    simplex.push((base.clone(), f0));
    for i in 0..n {
        let mut xi = base.clone();
        let step = if xi[i].abs() > 1e-12 {
            xi[i].abs() * opts.initial_step
        } else {
            opts.initial_step
        };
        xi[i] += step;
        let fi = eval(&mut xi);
        simplex.push((xi, fi));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        iters += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let x_spread = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|(x, _)| x[i])
                    .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        if (f_worst - f_best).abs() <= opts.f_tol * (1.0 + f_best.abs()) && x_spread <= opts.x_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }

        let worst = simplex[n].clone();
        let mut reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_ref = eval(&mut reflected);

        if f_ref < simplex[0].1 {
            let mut expanded: Vec<f64> = centroid
                .iter()
                .zip(&reflected)
                .map(|(c, r)| c + gamma * (r - c))
                .collect();
            let f_exp = eval(&mut expanded);
            simplex[n] = if f_exp < f_ref {
                (expanded, f_exp)
            } else {
                (reflected, f_ref)
            };
            continue;
        }
        if f_ref < simplex[n - 1].1 {
            simplex[n] = (reflected, f_ref);
            continue;
        }
        let mut contracted: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + rho * (w - c))
            .collect();
        let f_con = eval(&mut contracted);
        if f_con < worst.1 {
            simplex[n] = (contracted, f_con);
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].0.clone();
        for (x, fx) in simplex.iter_mut().skip(1) {
            for (v, b) in x.iter_mut().zip(&best) {
                *v = b + sigma * (*v - b);
            }
            *fx = eval(x);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    NelderMeadResult {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        iters,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let r = nelder_mead(f, |_| {}, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!((r.x[0] - 3.0).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] + 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.converged);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        };
        let opts = NelderMeadOptions {
            max_iters: 4000,
            ..Default::default()
        };
        let r = nelder_mead(f, |_| {}, &[-1.2, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn respects_projection() {
        // Constrain x >= 2; unconstrained minimum is at 1.
        let f = |x: &[f64]| (x[0] - 1.0).powi(2);
        let r = nelder_mead(
            f,
            |x| {
                if x[0] < 2.0 {
                    x[0] = 2.0
                }
            },
            &[5.0],
            &NelderMeadOptions::default(),
        );
        assert!((r.x[0] - 2.0).abs() < 1e-6, "{:?}", r.x);
    }
}
