use serde::Serialize;

use super::ModelError;
use crate::expr::{EvalError, UnivariateFn};
use crate::quad::{integrate_tail, Cumulative, QuadOptions, TailOptions, TailVerdict};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KoReport {
    pub converges: bool,
    /// `∫_1^∞ H^{-1/2}` when convergent, else the partial integral reached.
    pub integral: f64,
    pub error_estimate: f64,
    pub decay_exponent: f64,
    pub t_split: f64,
}

/// Keller–Osserman test: does `∫_1^∞ H(t)^{-1/2} dt` converge, where
/// `H(t) = ∫_0^t h`?
///
/// Points where `H` overflows contribute zero. A fitted decay exponent
/// inside the undecidable band around −1 is an error, not a guess.
pub fn keller_osserman(h: &dyn UnivariateFn, opts: &TailOptions) -> Result<KoReport, ModelError> {
    let primitive = Cumulative::new(|t: f64| h.value(t), 1.0, QuadOptions::default());
    let integrand = |t: f64| -> Result<f64, ModelError> {
        match primitive.at(t) {
            Ok(big) if big > 0.0 => Ok(1.0 / big.sqrt()),
            Ok(big) => Err(ModelError::NonPositive { what: "H", t, value: big }),
            Err(EvalError::Overflow(_)) => Ok(0.0),
            Err(e) => Err(e.into()),
        }
    };
    let out = integrate_tail(&integrand, 1.0, opts)?;
    match out.verdict {
        TailVerdict::Inconclusive => Err(ModelError::Inconclusive {
            exponent: out.decay_exponent,
        }),
        verdict => Ok(KoReport {
            converges: verdict == TailVerdict::Converges,
            integral: out.value,
            error_estimate: out.error_estimate,
            decay_exponent: out.decay_exponent,
            t_split: out.t_split,
        }),
    }
}

fn tail_value(g: &dyn UnivariateFn, s: f64, opts: &TailOptions) -> Result<f64, ModelError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(ModelError::InvalidGrid(format!("tail start must be positive and finite, got {s}")));
    }
    let integrand = |t: f64| -> Result<f64, ModelError> {
        match g.value(t) {
            Ok(v) if v > 0.0 => Ok(1.0 / v),
            Ok(v) => Err(ModelError::NonPositive { what: "g", t, value: v }),
            Err(EvalError::Overflow(_)) => Ok(0.0),
            Err(e) => Err(e.into()),
        }
    };
    let out = integrate_tail(&integrand, s, opts)?;
    match out.verdict {
        TailVerdict::Converges => Ok(out.value),
        TailVerdict::Diverges => Err(ModelError::TailDiverges {
            s,
            exponent: out.decay_exponent,
        }),
        TailVerdict::Inconclusive => Err(ModelError::Inconclusive {
            exponent: out.decay_exponent,
        }),
    }
}

/// `G(s) = ∫_s^∞ dt / g(t)`.
pub fn g_tail(g: &dyn UnivariateFn, s: f64) -> Result<f64, ModelError> {
    g_tail_with(g, s, &TailOptions::default())
}

pub fn g_tail_with(g: &dyn UnivariateFn, s: f64, opts: &TailOptions) -> Result<f64, ModelError> {
    tail_value(g, s, opts)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InvertOptions {
    /// Smallest admissible preimage; `G(t_min)` bounds the invertible range.
    pub t_min: f64,
    /// Relative tolerance on `|G(w) - z|`.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub tail: TailOptions,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            t_min: 1e-8,
            rel_tol: 1e-10,
            max_iter: 200,
            tail: TailOptions::default(),
        }
    }
}

/// Solves `G(w) = z` for `w`.
pub fn invert_tail(g: &dyn UnivariateFn, z: f64) -> Result<f64, ModelError> {
    invert_tail_with(g, z, &InvertOptions::default())
}

/// Bracketing followed by Illinois false position on `ln G` against
/// `ln w`, which is close to linear for power-like `g`; bisection takes
/// over whenever the secant step stalls.
pub fn invert_tail_with(g: &dyn UnivariateFn, z: f64, opts: &InvertOptions) -> Result<f64, ModelError> {
    let g_min = tail_value(g, opts.t_min, &opts.tail)?;
    if !(z > 0.0 && z < g_min) {
        return Err(ModelError::OutOfRange { z, max: g_min });
    }
    let lz = z.ln();
    let residual = |lw: f64| -> Result<f64, ModelError> { Ok(tail_value(g, lw.exp(), &opts.tail)?.ln() - lz) };
    let close = |r: f64| r.abs() <= opts.rel_tol;

    // residual is decreasing in ln w: positive at t_min
    let mut lo = opts.t_min.ln();
    let mut f_lo = g_min.ln() - lz;
    let mut hi = lo.max(0.0) + 1.0;
    let mut f_hi = residual(hi)?;
    while f_hi > 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi += (hi - opts.t_min.ln()).max(1.0);
        if hi > 700.0 {
            return Err(ModelError::OutOfRange { z, max: g_min });
        }
        f_hi = residual(hi)?;
    }
    if close(f_hi) {
        return Ok(hi.exp());
    }
    let mut side = 0i8;
    for _ in 0..opts.max_iter {
        let mut mid = (f_lo * hi - f_hi * lo) / (f_lo - f_hi);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let f_mid = residual(mid)?;
        if close(f_mid) || (hi - lo) <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return Ok(mid.exp());
        }
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            f_hi = f_mid;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
