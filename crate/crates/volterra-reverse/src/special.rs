//! Special functions: the Gamma function and the Gauss hypergeometric 2F1.
//!
//! Only the parameter ranges this crate actually needs are supported:
//! `gamma_fn` on the positive half line, and `gauss_2f1` for arguments
//! `z <= 0` (via the Pfaff transformation) or `0 <= z < 1` (direct series).

use crate::error::{Result, VolterraError};

/// Lanczos coefficients, g = 7, 9 terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Γ(x) for x > 0, relative accuracy ~1e-13.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(VolterraError::Domain(format!(
            "gamma_fn requires x > 0, got {x}"
        )));
    }
    Ok(lanczos_gamma(x))
}

fn lanczos_gamma(x: f64) -> f64 {
    // Recurrence down to x >= 1 keeps the approximation on its sweet spot.
    if x < 1.0 {
        return lanczos_gamma(x + 1.0) / x;
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Gauss hypergeometric function F(a, b; c; z).
///
/// For `z < 0` the Pfaff transformation
/// `F(a,b;c;z) = (1-z)^{-a} F(a, c-b; c; z/(z-1))` maps the argument into
/// `[0, 1)` where the series converges. The iteration budget adapts to the
/// transformed argument (terms decay like `w^k` once `k` is large).
pub fn gauss_2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if c <= 0.0 && c == c.floor() {
        return Err(VolterraError::Domain(format!(
            "2F1 undefined for non-positive integer c = {c}"
        )));
    }
    if !z.is_finite() {
        return Err(VolterraError::Domain(format!("2F1 argument must be finite, got {z}")));
    }
    if z < 0.0 {
        let w = z / (z - 1.0); // in [0, 1)
        let value = series_2f1(a, c - b, c, w)?;
        Ok((1.0 - z).powf(-a) * value)
    } else if z < 1.0 {
        series_2f1(a, b, c, z)
    } else {
        Err(VolterraError::Domain(format!(
            "2F1 supported for z <= 0 or 0 <= z < 1, got {z}"
        )))
    }
}

fn series_2f1(a: f64, b: f64, c: f64, w: f64) -> Result<f64> {
    debug_assert!((0.0..1.0).contains(&w));
    if a == 0.0 || b == 0.0 || w == 0.0 {
        return Ok(1.0);
    }
    // Terms behave like w^k for large k; budget a safe multiple of the
    // geometric horizon 1/(1-w).
    let cap = (2_000.0_f64.max(80.0 / (1.0 - w)) as usize).min(5_000_000);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut small_streak = 0u32;
    for k in 0..cap {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * w;
        sum += term;
        if term.abs() <= f64::EPSILON * sum.abs() {
            small_streak += 1;
            if small_streak >= 3 {
                return Ok(sum);
            }
        } else {
            small_streak = 0;
        }
        if !sum.is_finite() {
            return Err(VolterraError::Numerical(format!(
                "2F1 series overflow at k={k} for (a={a}, b={b}, c={c}, w={w})"
            )));
        }
    }
    Err(VolterraError::Numerical(format!(
        "2F1 series did not converge within {cap} terms (a={a}, b={b}, c={c}, w={w}, last term {term:.3e})"
    )))
}

/// Terms of the (Pfaff-transformed) series, exposed for the termination
/// property tests: returns |t_k| for k = 0..len.
pub fn series_terms_2f1(a: f64, b: f64, c: f64, z: f64, len: usize) -> Result<Vec<f64>> {
    let (a, b, w) = if z < 0.0 {
        (a, c - b, z / (z - 1.0))
    } else if z < 1.0 {
        (a, b, z)
    } else {
        return Err(VolterraError::Domain(format!("argument {z} outside supported range")));
    };
    let mut terms = Vec::with_capacity(len);
    let mut term = 1.0_f64;
    terms.push(term.abs());
    for k in 0..len.saturating_sub(1) {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * w;
        terms.push(term.abs());
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_PI: f64 = 1.7724538509055160273;

    #[test]
    fn gamma_basic_values() {
        assert!((gamma_fn(1.0).unwrap() - 1.0).abs() <= 1e-12);
        assert!((gamma_fn(5.0).unwrap() - 24.0).abs() <= 24.0 * 1e-12);
        assert!((gamma_fn(0.5).unwrap() - SQRT_PI).abs() <= SQRT_PI * 1e-12);
    }

    #[test]
    fn gamma_recurrence_property() {
        // Γ(x+1) = x Γ(x) across the range used by the kernels.
        let mut x = 0.11;
        while x < 10.0 {
            let lhs = gamma_fn(x + 1.0).unwrap();
            let rhs = x * gamma_fn(x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        assert!(gamma_fn(0.0).is_err());
        assert!(gamma_fn(-1.5).is_err());
    }

    #[test]
    fn hypergeometric_at_zero_is_one() {
        assert_eq!(gauss_2f1(0.3, -0.2, 1.1, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn hypergeometric_a_zero_is_one() {
        // a = 0 kills every k >= 1 term; this is the H = 1/2 kernel case.
        for z in [-5.0, -1.0, 0.0, 0.5] {
            assert_eq!(gauss_2f1(0.0, 0.25, 1.0, z).unwrap(), 1.0);
        }
    }

    #[test]
    fn hypergeometric_log_identity() {
        // F(1,1;2;z) = -ln(1-z)/z, checked at z = -1.
        let v = gauss_2f1(1.0, 1.0, 2.0, -1.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() <= 1e-10 * std::f64::consts::LN_2);
    }

    #[test]
    fn hypergeometric_deep_negative_argument() {
        // K_H evaluates 2F1 at z = 1 - t/r which is very negative for r << t.
        // Reference values computed with mpmath (50 digits).
        let cases = [
            // (H, z, value of F(1/2-H, H-1/2; H+1/2; z))
            (0.6, -1023.0, 1.2590181714315168),
            (0.75, -1023.0, 2.9429533575490897),
            (0.9, -1023.0, 8.06987684477566),
            (0.7, -63.0, 1.3990792003623597),
        ];
        for (h, z, want) in cases {
            let got = gauss_2f1(0.5 - h, h - 0.5, h + 0.5, z).unwrap();
            assert!(
                (got - want).abs() <= 1e-10 * want.abs(),
                "H={h} z={z}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn hypergeometric_rejects_bad_c_and_z() {
        assert!(gauss_2f1(0.5, 0.5, 0.0, 0.5).is_err());
        assert!(gauss_2f1(0.5, 0.5, -2.0, 0.5).is_err());
        assert!(gauss_2f1(0.5, 0.5, 1.5, 1.0).is_err());
        assert!(gauss_2f1(0.5, 0.5, 1.5, 2.0).is_err());
    }

    #[test]
    fn series_terms_decay_geometrically_for_kernel_family() {
        // Beyond k > |a|+|b|+|c| the term ratio is below the transformed
        // argument w, so the tail is dominated by a geometric series.
        for h in [0.55, 0.6, 0.75, 0.9, 0.99] {
            let (a, b, c) = (0.5 - h, h - 0.5, h + 0.5);
            for z in [-0.5, -3.0, -9.0] {
                let w = z / (z - 1.0);
                let terms = series_terms_2f1(a, b, c, z, 60).unwrap();
                let start = (a.abs() + b.abs() + c.abs()).ceil() as usize + 1;
                for k in start..terms.len() - 1 {
                    assert!(
                        terms[k + 1] <= w * terms[k] + f64::MIN_POSITIVE,
                        "H={h} z={z} k={k}: ratio {} vs w={w}",
                        terms[k + 1] / terms[k]
                    );
                }
            }
        }
    }
}
