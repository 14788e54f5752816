//! Special functions: modified Bessel functions of the first kind, the error
//! function, and the von Mises distribution function.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 30.0;

/// Exponentially scaled `e^{-|x|} I_ν(|x|)` for ν ∈ {0, 1}.
fn bessel_scaled(nu: u32, x: f64) -> f64 {
    let x = x.abs();
    if x <= SERIES_LIMIT {
        // I_ν(x) = (x/2)^ν Σ (x²/4)^k / (k! (k+ν)!)
        let q = 0.25 * x * x;
        let mut term = if nu == 0 { 1.0 } else { 0.5 * x };
        let mut sum = term;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + nu as f64));
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        // I_ν(x) ~ e^x / sqrt(2πx) Σ (-1)^k a_k(ν) / x^k
        let mu = 4.0 * (nu as f64).powi(2);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            let next = -term * (mu - odd * odd) / (kf * 8.0 * x);
            if next.abs() > term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// `e^{-|x|} I₀(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    bessel_scaled(0, x)
}

/// `e^{-|x|} I₁(x)`.
pub fn bessel_i1e(x: f64) -> f64 {
    bessel_scaled(1, x).copysign(x)
}

pub fn bessel_i0(x: f64) -> f64 {
    bessel_i0e(x) * x.abs().exp()
}

pub fn bessel_i1(x: f64) -> f64 {
    bessel_i1e(x) * x.abs().exp()
}

/// `ln I₀(x)`, finite for all finite `x`.
pub fn log_bessel_i0(x: f64) -> f64 {
    x.abs() + bessel_i0e(x).ln()
}

/// Mean resultant length of a von Mises distribution, `I₁(κ)/I₀(κ)`.
pub fn bessel_ratio(kappa: f64) -> f64 {
    bessel_i1e(kappa) / bessel_i0e(kappa)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

const VM_TOL: f64 = 1e-12;

fn vm_density_scaled(kappa: f64) -> impl Fn(f64) -> f64 {
    let norm = 1.0 / (2.0 * PI * bessel_i0e(kappa));
    move |t: f64| (kappa * (t.cos() - 1.0)).exp() * norm
}

/// Von Mises CDF with mean 0 and concentration `kappa`, measured from the cut at −π.
/// `u` must lie in [−π, π].
pub fn von_mises_cdf(u: f64, kappa: f64) -> f64 {
    let dens = vm_density_scaled(kappa);
    // Integrate outward from the mode so the peak is always sampled.
    let half = adaptive_simpson(&dens, 0.0, u.abs().min(PI), VM_TOL);
    (0.5 + half.copysign(u)).clamp(0.0, 1.0)
}

/// ∂/∂κ of [`von_mises_cdf`].
pub fn von_mises_cdf_dkappa(u: f64, kappa: f64) -> f64 {
    let dens = vm_density_scaled(kappa);
    let a = bessel_ratio(kappa);
    let g = move |t: f64| (t.cos() - a) * dens(t);
    adaptive_simpson(&g, 0.0, u.abs().min(PI), VM_TOL).copysign(u)
}

/// Wrap an angle into [−π, π).
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = (theta + PI).rem_euclid(two_pi) - PI;
    if w >= PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        // Tabulated: I0(1) = 1.2660658777520082, I0(10) = 2815.716628466254
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
        assert!((bessel_i0(10.0) / 2815.716628466254 - 1.0).abs() < 1e-13);
        // I1(1) = 0.5651591039924851
        assert!((bessel_i1(1.0) - 0.5651591039924851).abs() < 1e-14);
    }

    #[test]
    fn series_and_asymptotic_agree_at_switch() {
        for nu in 0..2 {
            let below = bessel_scaled(nu, SERIES_LIMIT);
            let above = bessel_scaled(nu, SERIES_LIMIT + 1e-9);
            assert!((below / above - 1.0).abs() < 1e-10, "nu={nu} {below} {above}");
        }
    }

    #[test]
    fn ratio_large_kappa() {
        // A(κ) ≈ 1 − 1/(2κ) − 1/(8κ²) for large κ
        let k = 1e4;
        let approx = 1.0 - 1.0 / (2.0 * k) - 1.0 / (8.0 * k * k);
        assert!((bessel_ratio(k) - approx).abs() < 1e-10);
        assert!(log_bessel_i0(1e6).is_finite());
    }

    #[test]
    fn von_mises_cdf_edges() {
        assert!((von_mises_cdf(0.0, 2.0) - 0.5).abs() < 1e-14);
        assert!((von_mises_cdf(PI, 2.0) - 1.0).abs() < 1e-10);
        assert!(von_mises_cdf(-PI, 2.0).abs() < 1e-10);
        assert!((von_mises_cdf(0.01, 1e6) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
