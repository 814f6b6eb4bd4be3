//! Adaptive Gauss–Kronrod quadrature and improper tail integrals.
//!
//! The tail integrator walks dyadic panels `[a 2^k, a 2^(k+1)]`, each
//! integrated in the variable `s = 1/t`, and decides convergence from a
//! log–log fit of the integrand's decay over the last two decades. The
//! unresolved remainder is extrapolated geometrically from the ratio of the
//! last two panel integrals, which is exact for pure power laws.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-12,
            max_subdivisions: 400,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<E>(f: &mut dyn FnMut(f64) -> Result<f64, E>, a: f64, b: f64) -> Result<Panel, E> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx)? + f(center + dx)?;
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok(Panel { a, b, value, error })
}

/// Adaptive Gauss–Kronrod (10/21) integration of `f` over `[a, b]`.
pub fn integrate<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    opts: &QuadOptions,
) -> Result<QuadResult, E> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        });
    }
    let first = gk21(f, a, b)?;
    let mut evaluations = 21;
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let target = |v: f64| opts.abs_tol.max(opts.rel_tol * v.abs()).max(50.0 * f64::EPSILON * v.abs());
    while total_err > target(total) && heap.len() < opts.max_subdivisions {
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let left = gk21(f, worst.a, mid)?;
        let right = gk21(f, mid, worst.b)?;
        evaluations += 42;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed accumulated cancellation in the running totals
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    Ok(QuadResult {
        value,
        error,
        evaluations,
        converged: error <= target(value),
    })
}

/// `F(s) = ∫_0^s f` evaluated through a cached dyadic ladder `0, h, 2h, 4h, …`,
/// so queries at large `s` never integrate a huge interval in one piece.
pub struct Cumulative<F> {
    f: F,
    first_step: f64,
    opts: QuadOptions,
    ladder: RefCell<Vec<(f64, f64)>>,
}

impl<F, E> Cumulative<F>
where
    F: Fn(f64) -> Result<f64, E>,
{
    pub fn new(f: F, first_step: f64, opts: QuadOptions) -> Self {
        Cumulative {
            f,
            first_step,
            opts,
            ladder: RefCell::new(vec![(0.0, 0.0)]),
        }
    }

    fn piece(&self, a: f64, b: f64) -> Result<f64, E> {
        let mut g = |t: f64| (self.f)(t);
        Ok(integrate(&mut g, a, b, &self.opts)?.value)
    }

    pub fn at(&self, s: f64) -> Result<f64, E> {
        assert!(s >= 0.0, "cumulative integral queried at negative {s}");
        loop {
            let (top, top_value) = *self.ladder.borrow().last().unwrap();
            if top >= s {
                break;
            }
            let next = if top == 0.0 { self.first_step } else { 2.0 * top };
            let add = self.piece(top, next)?;
            self.ladder.borrow_mut().push((next, top_value + add));
        }
        let ladder = self.ladder.borrow();
        let idx = ladder.partition_point(|(p, _)| *p <= s) - 1;
        let (base, base_value) = ladder[idx];
        drop(ladder);
        if base == s {
            return Ok(base_value);
        }
        Ok(base_value + self.piece(base, s)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailVerdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailOptions {
    /// Width of the band around decay exponent −1 in which convergence is
    /// not asserted.
    pub exponent_margin: f64,
    /// Relative change of the extrapolated total that ends the doubling.
    pub tail_tol: f64,
    /// Fits closer than this to −1 count as exactly harmonic (divergent).
    pub fit_noise: f64,
    pub max_doublings: usize,
    /// The decay fit is not trusted before the split point passes this
    /// absolute scale, so a power law that only holds near `a` cannot end
    /// the walk early.
    pub min_split: f64,
    /// Consecutive doublings that must agree before a verdict is returned.
    pub stable_doublings: usize,
    pub quad: QuadOptions,
}

impl Default for TailOptions {
    fn default() -> Self {
        TailOptions {
            exponent_margin: 0.02,
            tail_tol: 1e-12,
            fit_noise: 1e-6,
            max_doublings: 160,
            min_split: 1e3,
            stable_doublings: 3,
            quad: QuadOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailOutcome {
    pub verdict: TailVerdict,
    /// `∫_a^∞ f` (partial integral plus extrapolated remainder) when
    /// converging, otherwise the last partial integral.
    pub value: f64,
    pub error_estimate: f64,
    /// Fitted exponent `p` in `f(t) ~ C t^p` over the last two decades.
    pub decay_exponent: f64,
    /// Last split point reached.
    pub t_split: f64,
    pub doublings: usize,
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn decay_exponent<E>(
    f: &dyn Fn(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>, E> {
    const SAMPLES: usize = 21;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut xs = Vec::with_capacity(SAMPLES);
    let mut ys = Vec::with_capacity(SAMPLES);
    for k in 0..SAMPLES {
        let lt = llo + (lhi - llo) * k as f64 / (SAMPLES - 1) as f64;
        let v = f(lt.exp())?;
        if v > 0.0 && v.is_finite() {
            xs.push(lt);
            ys.push(v.ln());
        }
    }
    if xs.len() < 3 {
        return Ok(None);
    }
    Ok(Some(linear_fit(&xs, &ys).0))
}

/// `∫_a^∞ f(t) dt` for `a > 0` and eventually positive `f`.
pub fn integrate_tail<E>(
    f: &dyn Fn(f64) -> Result<f64, E>,
    a: f64,
    opts: &TailOptions,
) -> Result<TailOutcome, E> {
    assert!(a > 0.0, "tail integration needs a positive lower limit, got {a}");
    let mut partial = 0.0;
    let mut quad_err = 0.0;
    let mut prev_panel: Option<f64> = None;
    let mut prev_total: Option<f64> = None;
    let mut converge_streak = 0;
    let mut diverge_streak = 0;
    let mut exponent = f64::NAN;
    let mut lo = a;
    let mut last_change = f64::INFINITY;
    for k in 0..opts.max_doublings {
        let hi = 2.0 * lo;
        // panel in s = 1/t
        let mut g = |s: f64| -> Result<f64, E> {
            let t = 1.0 / s;
            Ok(f(t)? * t * t)
        };
        let panel = integrate(&mut g, 1.0 / hi, 1.0 / lo, &opts.quad)?;
        partial += panel.value;
        quad_err += panel.error;
        let outcome = |verdict, value, error_estimate, exponent| TailOutcome {
            verdict,
            value,
            error_estimate,
            decay_exponent: exponent,
            t_split: hi,
            doublings: k + 1,
        };
        if hi < (100.0 * a).max(opts.min_split) {
            prev_panel = Some(panel.value);
            lo = hi;
            continue;
        }
        match decay_exponent(f, hi / 100.0, hi)? {
            // integrand underflowed: nothing left beyond hi
            None => {
                return Ok(outcome(TailVerdict::Converges, partial, quad_err, f64::NEG_INFINITY))
            }
            Some(e) => exponent = e,
        }
        if exponent >= -1.0 - opts.fit_noise {
            diverge_streak += 1;
            converge_streak = 0;
            if diverge_streak >= opts.stable_doublings {
                return Ok(outcome(TailVerdict::Diverges, partial, f64::INFINITY, exponent));
            }
        } else if exponent < -1.0 - opts.exponent_margin {
            diverge_streak = 0;
            let ratio = prev_panel.map_or(f64::NAN, |p| panel.value / p);
            let remainder = if ratio.is_finite() && (0.0..1.0).contains(&ratio) {
                panel.value * ratio / (1.0 - ratio)
            } else {
                // fall back to the fitted power law
                f(hi)? * hi / (-exponent - 1.0)
            };
            let total = partial + remainder;
            if let Some(prev) = prev_total {
                last_change = (total - prev).abs();
                if last_change <= opts.tail_tol * total.abs().max(f64::MIN_POSITIVE) {
                    converge_streak += 1;
                } else {
                    converge_streak = 0;
                }
            }
            prev_total = Some(total);
            if converge_streak >= opts.stable_doublings.saturating_sub(1).max(1) {
                return Ok(outcome(
                    TailVerdict::Converges,
                    total,
                    quad_err + last_change,
                    exponent,
                ));
            }
        } else {
            converge_streak = 0;
            diverge_streak = 0;
        }
        prev_panel = Some(panel.value);
        lo = hi;
    }
    // out of doublings: a clear exponent still decides, the accuracy target does not
    let t_split = lo;
    if exponent < -1.0 - opts.exponent_margin {
        if let Some(total) = prev_total {
            return Ok(TailOutcome {
                verdict: TailVerdict::Converges,
                value: total,
                error_estimate: quad_err + last_change,
                decay_exponent: exponent,
                t_split,
                doublings: opts.max_doublings,
            });
        }
    }
    Ok(TailOutcome {
        verdict: TailVerdict::Inconclusive,
        value: partial,
        error_estimate: f64::INFINITY,
        decay_exponent: exponent,
        t_split,
        doublings: opts.max_doublings,
    })
}
