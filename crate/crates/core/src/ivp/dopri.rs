//! Dormand-Prince 5(4) with the standard 4th-order continuous extension.

use crate::config::IntegratorSettings;
use crate::error::{Result, SpectralError};
use crate::matfun::CMat;
use num_complex::Complex64;

const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn r(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `y + h * sum(coef_i * k_i)` without intermediate allocations beyond the result.
fn combine(y: &CMat, h: f64, terms: &[(f64, &CMat)]) -> CMat {
    let mut out = y.clone();
    for &(a, k) in terms {
        if a != 0.0 {
            out.zip_apply(k, |o, kv| *o += kv * (a * h));
        }
    }
    out
}

fn error_norm(err: &CMat, y0: &CMat, y1: &CMat, s: &IntegratorSettings) -> f64 {
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
        let sc = s.atol + s.rtol * a.norm().max(b.norm());
        let q = e.norm() / sc;
        acc += q * q;
    }
    (acc / err.len().max(1) as f64).sqrt()
}

fn weighted_norm(v: &CMat, y: &CMat, s: &IntegratorSettings) -> f64 {
    let mut acc = 0.0;
    for (e, a) in v.iter().zip(y.iter()) {
        let q = e.norm() / (s.atol + s.rtol * a.norm());
        acc += q * q;
    }
    (acc / v.len().max(1) as f64).sqrt()
}

/// Integrates `y' = f(x, y)` from `x0` to `x1` and samples the dense output at
/// `outputs`, which must be ordered in the direction of integration and lie
/// within `[x0, x1]`.
pub fn integrate<F>(
    settings: &IntegratorSettings,
    mut f: F,
    x0: f64,
    y0: CMat,
    x1: f64,
    outputs: &[f64],
) -> Result<(CMat, Vec<CMat>)>
where
    F: FnMut(f64, &CMat) -> CMat,
{
    let mut dense = Vec::with_capacity(outputs.len());
    if x1 == x0 {
        for _ in outputs {
            dense.push(y0.clone());
        }
        return Ok((y0, dense));
    }
    let dir = (x1 - x0).signum();
    let span = (x1 - x0).abs();
    let mut x = x0;
    let mut y = y0;
    let mut k1 = f(x, &y);
    let mut next_out = 0;

    // initial step (Hairer & Wanner, hinit)
    let d0 = weighted_norm(&y, &y, settings);
    let d1 = weighted_norm(&k1, &y, settings);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);
    {
        let y_e = combine(&y, dir * h, &[(1.0, &k1)]);
        let k_e = f(x + dir * h, &y_e);
        let mut diff = k_e.clone();
        diff -= &k1;
        let d2 = weighted_norm(&diff, &y, settings) / h;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        h = (100.0 * h).min(h1).min(span);
    }

    let mut steps = 0usize;
    let mut rejected_last = false;
    let mut err_old = 1e-4f64;
    loop {
        let remaining = (x1 - x).abs();
        if remaining <= 1e-14 * x1.abs().max(1.0) {
            break;
        }
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let hmin = settings.h_min * x.abs().max(1.0);
        if h < hmin {
            return Err(SpectralError::StepSizeUnderflow { x, h });
        }
        steps += 1;
        if steps > settings.max_steps {
            return Err(SpectralError::StepSizeUnderflow { x, h });
        }
        let hs = dir * h;
        let k2 = f(x + C2 * hs, &combine(&y, hs, &[(A21, &k1)]));
        let k3 = f(x + C3 * hs, &combine(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            x + C4 * hs,
            &combine(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            x + C5 * hs,
            &combine(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let x_new = if last { x1 } else { x + hs };
        let k6 = f(
            x_new,
            &combine(
                &y,
                hs,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = combine(
            &y,
            hs,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = f(x_new, &y_new);
        let err = combine(
            &CMat::zeros(y.nrows(), y.ncols()),
            hs,
            &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        );
        let en = error_norm(&err, &y, &y_new, settings);
        if !en.is_finite() {
            h *= 0.25;
            rejected_last = true;
            continue;
        }
        if en <= 1.0 {
            // dense output over (x, x_new]
            while next_out < outputs.len() {
                let xo = outputs[next_out];
                let beyond = (xo - x_new) * dir > 1e-14 * x_new.abs().max(1.0);
                if beyond {
                    break;
                }
                let theta = (((xo - x) * dir) / h).clamp(0.0, 1.0);
                dense.push(interpolate(&y, &y_new, &k1, &k3, &k4, &k5, &k6, &k7, hs, theta));
                next_out += 1;
            }
            x = x_new;
            y = y_new;
            k1 = k7;
            // PI step-size control
            let fac = 0.9 * en.max(1e-10).powf(-0.17) * err_old.powf(0.04);
            let mut fac = fac.clamp(0.2, 10.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            err_old = en.max(1e-4);
            h *= fac;
            rejected_last = false;
            if last {
                break;
            }
        } else {
            h *= (0.9 * en.powf(-0.2)).max(0.2);
            rejected_last = true;
        }
    }
    while next_out < outputs.len() {
        dense.push(y.clone());
        next_out += 1;
    }
    Ok((y, dense))
}

#[allow(clippy::too_many_arguments)]
fn interpolate(
    y0: &CMat,
    y1: &CMat,
    k1: &CMat,
    k3: &CMat,
    k4: &CMat,
    k5: &CMat,
    k6: &CMat,
    k7: &CMat,
    h: f64,
    theta: f64,
) -> CMat {
    let t1 = 1.0 - theta;
    let mut out = y0.clone();
    let n = out.len();
    let (sy0, sy1) = (y0.as_slice(), y1.as_slice());
    let (s1, s3, s4, s5, s6, s7) = (
        k1.as_slice(),
        k3.as_slice(),
        k4.as_slice(),
        k5.as_slice(),
        k6.as_slice(),
        k7.as_slice(),
    );
    let o = out.as_mut_slice();
    for i in 0..n {
        let ydiff = sy1[i] - sy0[i];
        let bspl = s1[i] * r(h) - ydiff;
        let c3 = ydiff - s7[i] * r(h) - bspl;
        let c4 = (s1[i] * r(D1) + s3[i] * r(D3) + s4[i] * r(D4) + s5[i] * r(D5) + s6[i] * r(D6)
            + s7[i] * r(D7))
            * r(h);
        o[i] = sy0[i] + (ydiff + (bspl + (c3 + c4 * r(t1)) * r(theta)) * r(t1)) * r(theta);
    }
    out
}
