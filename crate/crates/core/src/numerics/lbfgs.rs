//! Limited-memory BFGS with a strong Wolfe line search.

use super::NumericsError;
use nalgebra::DVector;
use std::collections::VecDeque;

/// Tuning knobs for [`lbfgs_minimize`]. The defaults (memory 10, tolerance
/// 1e-6 on the gradient infinity norm, 500 iterations, Wolfe constants
/// c1 = 1e-4 and c2 = 0.9) are used everywhere in this crate.
#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            tol: 1e-6,
            max_iter: 500,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

/// Result of an L-BFGS run. `converged` is true exactly when the gradient
/// infinity norm reached the tolerance; otherwise the iteration budget ran out
/// or the line search could make no further progress.
#[derive(Clone, Debug)]
pub struct LbfgsSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes a smooth objective. The closure writes the gradient into its
/// second argument and returns the value. The final value never exceeds the
/// starting value because only sufficient-decrease steps are accepted.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: DVector<f64>,
    opts: &LbfgsOptions,
) -> Result<LbfgsSolution, NumericsError>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let dim = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(dim);
    let mut fx = objective(&x, &mut g);
    ensure_finite(fx, &g, 0)?;

    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if g.amax() <= opts.tol {
            break;
        }

        let mut d = two_loop_direction(&g, &history);
        let mut dg = d.dot(&g);
        if dg >= 0.0 {
            // Curvature information went stale; restart from steepest descent.
            history.clear();
            d = -&g;
            dg = -g.norm_squared();
        }

        iterations += 1;
        match wolfe_search(&mut objective, &x, &d, fx, dg, opts, iterations)? {
            Some((x_new, f_new, g_new)) => {
                let s = &x_new - &x;
                let y = &g_new - &g;
                let sy = s.dot(&y);
                if sy > 1e-10 * s.norm() * y.norm() {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                x = x_new;
                fx = f_new;
                g = g_new;
            }
            None => break,
        }
    }

    let grad_norm = g.amax();
    Ok(LbfgsSolution {
        converged: grad_norm <= opts.tol,
        x,
        value: fx,
        grad_norm,
        iterations,
    })
}

/// Central finite-difference gradient with per-coordinate step
/// 1e-6 * (1 + |x_i|), for verifying analytic gradients in tests.
pub fn fd_gradient<F>(mut f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn ensure_finite(f: f64, g: &DVector<f64>, iteration: usize) -> Result<(), NumericsError> {
    if f.is_finite() && g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFiniteObjective { iteration })
    }
}

fn two_loop_direction(
    g: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    // Initial Hessian scaling from the most recent curvature pair.
    let gamma = history
        .back()
        .map(|(s, y, _)| s.dot(y) / y.dot(y))
        .unwrap_or(1.0);
    q *= gamma;
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let beta = rho * y.dot(&q);
        q.axpy(a - beta, s, 1.0);
    }
    -q
}

#[derive(Clone, Copy)]
struct Probe {
    alpha: f64,
    f: f64,
    dg: f64,
}

/// Strong Wolfe line search (bracket then bisection zoom). Returns the
/// accepted point or None when no acceptable step exists numerically.
/// Accepted step: the new point, its objective value, and its gradient.
type LineStep = Option<(DVector<f64>, f64, DVector<f64>)>;

fn wolfe_search<F>(
    objective: &mut F,
    x: &DVector<f64>,
    d: &DVector<f64>,
    f0: f64,
    dg0: f64,
    opts: &LbfgsOptions,
    iteration: usize,
) -> Result<LineStep, NumericsError>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let mut x_buf = x.clone();
    let mut g_buf = DVector::zeros(x.len());
    let mut eval = |alpha: f64, x_buf: &mut DVector<f64>, g_buf: &mut DVector<f64>| {
        x_buf.copy_from(x);
        x_buf.axpy(alpha, d, 1.0);
        let f = objective(x_buf, g_buf);
        ensure_finite(f, g_buf, iteration)?;
        Ok::<(f64, f64), NumericsError>((f, g_buf.dot(d)))
    };

    let armijo = |alpha: f64, f: f64| f <= f0 + opts.c1 * alpha * dg0;
    let curvature = |dg: f64| dg.abs() <= -opts.c2 * dg0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        dg: dg0,
    };
    let mut alpha = 1.0;
    let mut bracket = None;
    for _ in 0..20 {
        let (f, dg) = eval(alpha, &mut x_buf, &mut g_buf)?;
        let here = Probe { alpha, f, dg };
        if !armijo(alpha, f) || (prev.alpha > 0.0 && f >= prev.f) {
            bracket = Some((prev, here));
            break;
        }
        if curvature(dg) {
            return Ok(Some((x_buf, f, g_buf)));
        }
        if dg >= 0.0 {
            bracket = Some((here, prev));
            break;
        }
        prev = here;
        alpha *= 2.0;
        if alpha > 1e8 {
            break;
        }
    }

    let Some((mut lo, mut hi)) = bracket else {
        // Monotone descent without a curvature point; accept the last probe.
        if prev.alpha > 0.0 {
            let (f, _) = eval(prev.alpha, &mut x_buf, &mut g_buf)?;
            return Ok(Some((x_buf, f, g_buf)));
        }
        return Ok(None);
    };

    for _ in 0..50 {
        let mid = 0.5 * (lo.alpha + hi.alpha);
        if (hi.alpha - lo.alpha).abs() < 1e-16 || mid == lo.alpha || mid == hi.alpha {
            break;
        }
        let (f, dg) = eval(mid, &mut x_buf, &mut g_buf)?;
        let here = Probe { alpha: mid, f, dg };
        if !armijo(mid, f) || f >= lo.f {
            hi = here;
        } else {
            if curvature(dg) {
                return Ok(Some((x_buf, f, g_buf)));
            }
            if dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = Probe {
                    alpha: lo.alpha,
                    f: lo.f,
                    dg: lo.dg,
                };
            }
            lo = here;
        }
    }

    if lo.alpha > 0.0 && armijo(lo.alpha, lo.f) && lo.f < f0 {
        let (f, _) = eval(lo.alpha, &mut x_buf, &mut g_buf)?;
        return Ok(Some((x_buf, f, g_buf)));
    }
    Ok(None)
}
