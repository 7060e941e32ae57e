//! Small numerical optimizers: Brent root finding, golden-section search and a
//! damped Newton ascent for low-dimensional smooth objectives.

/// Brent's method for a root of `f` on `[a, b]` where `f(a)` and `f(b)` have
/// opposite signs. Returns the root and the iteration count.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iter: usize,
) -> Option<(f64, usize)> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some((a, 0));
    }
    if fb == 0.0 {
        return Some((b, 0));
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some((b, iter));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return None;
        }
    }
    Some((b, max_iter))
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iter: usize,
) -> (f64, usize) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a).abs() > xtol && iter < max_iter {
        iter += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b), iter)
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Stop when a full step is shorter than this in every coordinate.
    pub step_tol: f64,
    /// Finite-difference step for the Hessian of the gradient.
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 500,
            step_tol: 1e-8,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub z: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes a smooth function of a few unconstrained variables.
///
/// `objective` returns the value and gradient; the Hessian comes from central
/// differences of the gradient. Newton steps are used when the Hessian is
/// negative definite, gradient steps otherwise, both with backtracking.
/// `done` decides convergence from the current point and gradient.
pub fn newton_maximize<F, C>(
    objective: F,
    z0: &[f64],
    opts: NewtonOptions,
    done: C,
) -> NewtonOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    C: Fn(&[f64], &[f64]) -> bool,
{
    let dim = z0.len();
    let mut z = z0.to_vec();
    let (mut value, mut grad) = objective(&z);
    let mut iterations = 0;
    if !value.is_finite() {
        return NewtonOutcome {
            z,
            value,
            gradient: grad,
            iterations,
            converged: false,
        };
    }
    while iterations < opts.max_iter {
        if done(&z, &grad) {
            return NewtonOutcome {
                z,
                value,
                gradient: grad,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let hess = fd_hessian(&objective, &z, opts.fd_step);
        let mut step = newton_direction(&hess, &grad)
            .unwrap_or_else(|| gradient_direction(&grad));
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&step).map(|(a, s)| a + s).collect();
            let (v, g) = objective(&trial);
            if v.is_finite() && v >= value + 1e-4 * slope.max(0.0) {
                let small = step.iter().all(|s| s.abs() < opts.step_tol);
                z = trial;
                value = v;
                grad = g;
                accepted = true;
                if small {
                    let conv = done(&z, &grad);
                    return NewtonOutcome {
                        z,
                        value,
                        gradient: grad,
                        iterations,
                        converged: conv,
                    };
                }
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        if !accepted {
            let conv = done(&z, &grad);
            return NewtonOutcome {
                z,
                value,
                gradient: grad,
                iterations,
                converged: conv,
            };
        }
        debug_assert_eq!(z.len(), dim);
    }
    let conv = done(&z, &grad);
    NewtonOutcome {
        z,
        value,
        gradient: grad,
        iterations,
        converged: conv,
    }
}

fn fd_hessian<F>(objective: &F, z: &[f64], h0: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = z.len();
    let mut hess = vec![vec![0.0; n]; n];
    for j in 0..n {
        let h = h0 * z[j].abs().max(1.0);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let gp = objective(&zp).1;
        let gm = objective(&zm).1;
        for i in 0..n {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = s;
            hess[j][i] = s;
        }
    }
    hess
}

/// Solves `(-H) s = g` by Cholesky; `None` unless `-H` is positive definite.
fn newton_direction(hess: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = -hess[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = grad[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

fn gradient_direction(grad: &[f64]) -> Vec<f64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
    grad.iter().map(|g| g * scale).collect()
}
