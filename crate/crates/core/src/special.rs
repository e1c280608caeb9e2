//! Special functions: the Airy function `Ai` and the Bessel functions `J1`, `Y1`
//! used by the direct Rayleigh-Sommerfeld quadrature.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Ai(0)
pub const AI_ZERO: f64 = 0.355_028_053_887_817_2;
/// -Ai'(0)
pub const AI_PRIME_ZERO_NEG: f64 = 0.258_819_403_792_806_8;

/// Arguments with |x| above this use the asymptotic expansions.
const AIRY_SWITCH: f64 = 6.0;

/// The Airy function of the first kind, Ai(x).
///
/// Power series for |x| <= 6, asymptotic expansions beyond. Absolute error is
/// below 1e-10 on [-20, 10]; large positive arguments underflow to 0.
pub fn airy_ai(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() <= AIRY_SWITCH {
        airy_series(x)
    } else if x > 0.0 {
        airy_asymptotic_positive(x)
    } else {
        airy_asymptotic_negative(x)
    }
}

fn airy_series(x: f64) -> f64 {
    // Ai(x) = c1 f(x) - c2 g(x) with
    // f = sum 3^k (1/3)_k x^{3k} / (3k)!, g = sum 3^k (2/3)_k x^{3k+1} / (3k+1)!
    let x3 = x * x * x;
    let (mut f, mut g) = (1.0, x);
    let (mut tf, mut tg) = (1.0, x);
    for k in 1..200 {
        let k = k as f64;
        tf *= x3 / ((3.0 * k - 1.0) * (3.0 * k));
        tg *= x3 / ((3.0 * k) * (3.0 * k + 1.0));
        f += tf;
        g += tg;
        if tf.abs() <= 1e-18 * f.abs().max(1.0) && tg.abs() <= 1e-18 * g.abs().max(1.0) {
            break;
        }
    }
    AI_ZERO * f - AI_PRIME_ZERO_NEG * g
}

/// u_k coefficients of the Airy asymptotic series.
fn airy_u(count: usize) -> Vec<f64> {
    let mut u = Vec::with_capacity(count);
    u.push(1.0);
    for k in 1..count {
        let kf = k as f64;
        let prev = u[k - 1];
        u.push(
            prev * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
                / ((2.0 * kf - 1.0) * 216.0 * kf),
        );
    }
    u
}

fn airy_asymptotic_positive(x: f64) -> f64 {
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    if zeta > 740.0 {
        return 0.0;
    }
    let u = airy_u(60);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut sign = 1.0;
    let mut zpow = 1.0;
    for uk in u {
        let term = uk / zpow;
        if term > prev {
            break;
        }
        sum += sign * term;
        prev = term;
        sign = -sign;
        zpow *= zeta;
    }
    (-zeta).exp() / (2.0 * PI.sqrt() * x.powf(0.25)) * sum
}

fn airy_asymptotic_negative(x: f64) -> f64 {
    let ax = -x;
    let zeta = 2.0 / 3.0 * ax.powf(1.5);
    let u = airy_u(80);
    let (mut p, mut q) = (0.0, 0.0);
    let mut prev = f64::INFINITY;
    for k in 0..40 {
        let even = u[2 * k] / zeta.powi(2 * k as i32);
        let odd = u[2 * k + 1] / zeta.powi(2 * k as i32 + 1);
        let size = even.max(odd);
        if size > prev {
            break;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        p += sign * even;
        q += sign * odd;
        prev = size;
    }
    let phase = zeta + PI / 4.0;
    (phase.sin() * p - phase.cos() * q) / (PI.sqrt() * ax.powf(0.25))
}

/// Bessel functions (J1(x), Y1(x)) for x > 0.
pub fn bessel_j1_y1(x: f64) -> (f64, f64) {
    assert!(x > 0.0, "bessel_j1_y1 requires x > 0, got {x}");
    if x < 12.0 {
        bessel_series(x)
    } else {
        bessel_asymptotic(x)
    }
}

fn bessel_series(x: f64) -> (f64, f64) {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let half = 0.5 * x;
    let q = -half * half;
    // term_k = (-x^2/4)^k (x/2) / (k! (k+1)!)
    let mut term = half;
    let mut j1 = 0.0;
    let mut digamma_sum_acc = 0.0;
    // psi(k+1) + psi(k+2) = -2 gamma + H_k + H_{k+1}
    let mut harmonic = 0.0;
    for k in 0..120 {
        let kf = k as f64;
        let h_next = harmonic + 1.0 / (kf + 1.0);
        j1 += term;
        digamma_sum_acc += term * (-2.0 * EULER_GAMMA + harmonic + h_next);
        if term.abs() < 1e-18 * j1.abs().max(1e-300) && k > 2 {
            break;
        }
        harmonic = h_next;
        term *= q / ((kf + 1.0) * (kf + 2.0));
    }
    let y1 = -2.0 / (PI * x) + 2.0 / PI * half.ln() * j1 - digamma_sum_acc / PI;
    (j1, y1)
}

fn bessel_asymptotic(x: f64) -> (f64, f64) {
    // Hankel expansion with mu = 4 nu^2 = 4.
    let mu = 4.0;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0; // a_k / x^k
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            let odd = 2.0 * kf - 1.0;
            a *= (mu - odd * odd) / (kf * 8.0 * x);
        }
        if a.abs() > prev {
            break;
        }
        prev = a.abs();
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - 0.75 * PI;
    let amp = (2.0 / (PI * x)).sqrt();
    let (s, c) = chi.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// Hankel function of the second kind, order one: J1(x) - j Y1(x).
pub fn hankel2_1(x: f64) -> Complex64 {
    let (j, y) = bessel_j1_y1(x);
    Complex64::new(j, -y)
}
