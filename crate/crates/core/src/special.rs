//! Scalar helpers shared by the model and the sampler.

use statrs::function::erf::erfc;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `e^x` for `x` in [-708, 708], branch-free so loops over slices
/// vectorize. Relative error below 2e-16.
#[inline(always)]
fn exp_core(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let bits = t.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(1023) << 52;
    p * f64::from_bits(bits)
}

/// `tanh`, accurate to about 2e-16 absolute, written to vectorize.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    // tanh rounds to ±1 beyond |x| ≈ 19.1.
    let a = x.abs().min(20.0);
    let e = exp_core(-2.0 * a);
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline(always)]
pub(crate) fn tanh_loop(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = tanh(*x);
    }
}

/// The same loop compiled with wider vectors. AVX2 without FMA performs the
/// same IEEE operations, so results are bit-identical to the fallback.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_loop_avx2(xs: &mut [f64]) {
    tanh_loop(xs)
}

/// Elementwise [`tanh`] in place.
pub(crate) fn tanh_slice(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { tanh_loop_avx2(xs) };
    }
    tanh_loop(xs)
}

/// Standard normal log density.
pub(crate) fn log_phi(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `log Φ(x)`, accurate far into the lower tail.
pub(crate) fn log_ndtr(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
        log_phi(x) - (-x).ln() + series.ln()
    }
}

/// `log(e^a - e^b)` for `a > b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    a + (-(b - a).exp()).ln_1p()
}

/// `log(Φ(b) - Φ(a))` for `a < b`, with partial derivatives with respect to
/// `a` and `b`. Either end may be infinite.
pub(crate) fn log_normal_mass(a: f64, b: f64) -> (f64, f64, f64) {
    let log_z = if a == f64::NEG_INFINITY {
        log_ndtr(b)
    } else if b == f64::INFINITY {
        log_ndtr(-a)
    } else if a > 0.0 {
        // Both in the upper tail: mirror to keep precision.
        log_diff_exp(log_ndtr(-a), log_ndtr(-b))
    } else {
        log_diff_exp(log_ndtr(b), log_ndtr(a))
    };
    let da = if a.is_finite() { -(log_phi(a) - log_z).exp() } else { 0.0 };
    let db = if b.is_finite() { (log_phi(b) - log_z).exp() } else { 0.0 };
    (log_z, da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_std() {
        let mut worst: f64 = 0.0;
        for i in -40_000..=40_000 {
            let x = i as f64 * 5e-4;
            worst = worst.max((tanh(x) - x.tanh()).abs());
        }
        assert!(worst < 5e-16, "{worst}");
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert!((tanh(1e-12) - 1e-12).abs() < 2e-16);
        for x in [-700.0, -1.0, -1e-3, 0.0, 0.5, 3.0, 700.0] {
            assert!((exp_core(x) / x.exp() - 1.0).abs() < 4e-16, "{x}");
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-20.0, -1.0, 0.0, 0.5, 3.0, 20.0] {
            let naive: f64 = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn log_ndtr_tail_is_continuous() {
        let below = log_ndtr(-30.0 - 1e-9);
        let above = log_ndtr(-30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} {above}");
        assert!((log_ndtr(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn normal_mass_gradients_match_finite_differences() {
        for &(a, b) in &[(-1.0, 0.5), (2.0, 3.0), (-40.0, -35.0), (f64::NEG_INFINITY, 0.3), (-0.2, f64::INFINITY)] {
            let (_, da, db) = log_normal_mass(a, b);
            let h = 1e-6;
            if a.is_finite() {
                let fd = (log_normal_mass(a + h, b).0 - log_normal_mass(a - h, b).0) / (2.0 * h);
                assert!((fd - da).abs() < 1e-5 * (1.0 + da.abs()), "{a} {b}: {fd} vs {da}");
            }
            if b.is_finite() {
                let fd = (log_normal_mass(a, b + h).0 - log_normal_mass(a, b - h).0) / (2.0 * h);
                assert!((fd - db).abs() < 1e-5 * (1.0 + db.abs()), "{a} {b}: {fd} vs {db}");
            }
        }
    }
}
