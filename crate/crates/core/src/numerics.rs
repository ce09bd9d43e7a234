//! Log-space arithmetic and numerical verification primitives.
//!
//! All probabilities and chart values in this crate live in the log domain as
//! `f64`, with `f64::NEG_INFINITY` standing for probability zero. Everything
//! here is a pure function.

/// A score in the log domain. `NEG_INFINITY` represents probability zero.
pub type LogScore = f64;

/// log(exp(a) + exp(b)), computed without overflow.
///
/// `-inf` is the identity: `log_add(NEG_INFINITY, v) == v`. Never produces
/// NaN for non-NaN inputs.
#[inline]
pub fn log_add(a: LogScore, b: LogScore) -> LogScore {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log Σ exp(vᵢ) over a slice, via max-shift. Empty input yields `-inf`.
pub fn log_sum_exp(values: &[LogScore]) -> LogScore {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // Empty list or all terms are probability zero.
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Outcome of a single finite-difference coordinate check.
#[derive(Debug, Clone)]
pub struct FdCoordinate {
    /// Human-readable coordinate name, e.g. `pot.V[3]`.
    pub name: String,
    pub estimate: f64,
    /// Set when f evaluated to a non-finite value at a probe point.
    pub failure: Option<String>,
}

/// Central-difference gradient estimate of a scalar function, one coordinate
/// at a time: (f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h.
///
/// The probe closure receives the coordinate index and a signed step, applies
/// it, evaluates f, and undoes it. Non-finite evaluations are reported as a
/// per-coordinate failure instead of propagating NaN.
pub fn finite_difference_gradient<F>(
    coords: &[String],
    step: f64,
    mut probe: F,
) -> Vec<FdCoordinate>
where
    F: FnMut(usize, f64) -> f64,
{
    let mut out = Vec::with_capacity(coords.len());
    for (idx, name) in coords.iter().enumerate() {
        let plus = probe(idx, step);
        let minus = probe(idx, -step);
        let failure = if !plus.is_finite() || !minus.is_finite() {
            Some(format!("non-finite evaluation (f+={plus}, f-={minus})"))
        } else {
            None
        };
        out.push(FdCoordinate {
            name: name.clone(),
            estimate: (plus - minus) / (2.0 * step),
            failure,
        });
    }
    out
}

/// Relative error between an analytic and an estimated derivative, floored so
/// that tiny gradients are compared absolutely at the floor scale.
#[inline]
pub fn relative_error(analytic: f64, estimate: f64) -> f64 {
    let denom = analytic.abs().max(estimate.abs()).max(1e-4);
    (analytic - estimate).abs() / denom
}
