//! Numerical Laplace inversion of the distribution function of a sum of
//! `c` independent copies of `W`.
//!
//! With `F(z) = z x + c log phi(z)` and any real `p`,
//!
//! ```text
//! P(S < x)      = (1/2 pi) Int e^{F(p+it)} / (p+it) dt        (p > 0)
//! P(S >= x)     = -(1/2 pi) Int e^{F(p+it)} / (p+it) dt       (p < 0)
//! ```
//!
//! The second line is the first with the contour moved across the pole at
//! zero. The factor `e^{F(p)}` is pulled out analytically and only the
//! bounded remainder `e^{F(p+it) - F(p)}` is integrated, so probabilities
//! far below the floating-point range keep full relative accuracy. The
//! contour is placed at the minimizer of `F` over real `p` (the saddle),
//! pushed away from zero by a few local standard deviations so that the
//! pole stays well separated from the Gaussian core.

use serde::Serialize;

use super::{LogProb, Method};
use crate::analytic::Model;
use crate::cmath::{re, C};
use crate::error::{GwError, Result};
use crate::real::Real;

/// A fixed uniform trapezoid on `[-window_halfwidth, window_halfwidth]`
/// along the vertical line `Re z = contour_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InversionPlan<T> {
    pub contour_p: T,
    pub window_halfwidth: T,
    pub step: T,
    /// `log` of the number of summed copies.
    pub copies_log: T,
}

impl<T: Real> InversionPlan<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.contour_p > T::zero()
            && self.window_halfwidth > T::zero()
            && self.step > T::zero()
            && self.step < self.window_halfwidth / T::lit(50.0)
            && self.copies_log.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GwError::InvalidConfig(format!("invalid inversion plan {self:?}")))
        }
    }
}

/// Standard deviations by which the contour is kept away from the pole.
const POLE_CLEARANCE: f64 = 2.0;
const INITIAL_STEP: f64 = 1.0 / 16.0;
const MAX_REFINEMENTS: usize = 8;
const TAU_MAX: f64 = 30.0;
const RELATIVE_TARGET: f64 = 1e-13;
/// Gaussian standard deviations covered by the automatic uniform plan.
const AUTO_WINDOW_SDS: f64 = 12.0;

struct Contour<'a, T> {
    model: &'a Model<T>,
    x: T,
    copies: T,
    p: T,
    f_p: T,
}

impl<'a, T: Real> Contour<'a, T> {
    fn new(model: &'a Model<T>, x: T, copies: T, p: T) -> Result<Self> {
        let f_p = p * x + copies * model.log_phi_any(re(p))?.re;
        Ok(Self {
            model,
            x,
            copies,
            p,
            f_p,
        })
    }

    /// `e^{F(p+it) - F(p)} / (p+it)`.
    fn integrand(&self, t: T) -> Result<C<T>> {
        let z = C::new(self.p, t);
        let l = self.model.log_phi_any(z)?;
        let e = z * self.x + l * self.copies - re(self.f_p);
        Ok(e.exp() / z)
    }

    /// Rounding floor on the log result: the prefactor exponent and the
    /// integrand exponent are both differences of terms of this size.
    fn rounding_floor(&self) -> T {
        let depth = (self.p.abs() / self.model.cfg.u_small)
            .ln()
            .max(T::one())
            / self.model.dist.mean().ln();
        let size = (self.p * self.x).abs()
            + self.copies * self.model.log_phi_any(re(self.p)).map_or(T::zero(), |l| l.re.abs());
        (depth + T::lit(4.0)) * T::epsilon() * size
    }
}

/// `Re Int_0^inf g(t) dt` by the trapezoid rule in `tau` with
/// `t = s sinh(tau)`, refined until successive halvings agree.
/// Returns `(value, error_estimate)`.
fn sinh_trapezoid<T: Real>(g: impl Fn(T) -> Result<C<T>>, s: T) -> Result<(T, T)> {
    // (real part, modulus) of the mapped integrand
    let big = |tau: T| -> Result<(T, T)> {
        let v = g(s * tau.sinh())? * (s * tau.cosh());
        Ok((v.re, v.norm()))
    };
    let mut h = T::lit(INITIAL_STEP);
    let first = big(T::zero())?;
    let mut samples = vec![first.0];
    let mut peak = first.1;
    let mut running = first.0 * T::lit(0.5);
    let mut prev_env = first.1;
    let mut prev2_env = first.1;
    let mut quiet = 0;
    let mut k = 1;
    // bound on the part of the integral beyond the last sample
    let mut tail = T::zero();
    loop {
        let tau = h * T::from_int(k);
        if tau > T::lit(TAU_MAX) {
            return Err(GwError::QuadratureDiverged(
                "integrand did not decay inside the mapped range".into(),
            ));
        }
        let (v, env) = match big(tau) {
            Ok(s) => s,
            // Algebraically decaying integrands (minimal offspring one) can
            // reach the scaling-depth limit first; stop if the geometric
            // decay of the envelope bounds the rest well enough.
            Err(GwError::DepthExceeded { .. }) if tau > T::lit(2.0) => {
                let q = prev_env / prev2_env;
                let est = prev_env * h * q / (T::one() - q);
                if q < T::one() && est < T::lit(1e-6) * running.abs() {
                    tail = est;
                    break;
                }
                return Err(GwError::QuadratureDiverged(
                    "scaling depth reached before the integrand decayed".into(),
                ));
            }
            Err(e) => return Err(e),
        };
        samples.push(v);
        running += v;
        peak = peak.max(env);
        prev2_env = prev_env;
        prev_env = env;
        if env < T::lit(1e-20) * peak && tau > T::lit(2.0) {
            quiet += 1;
            if quiet >= 4 {
                break;
            }
        } else {
            quiet = 0;
        }
        k += 1;
    }
    let tau_end = h * T::from_int(samples.len() as i64 - 1);
    let tail = tail + samples.last().map_or(T::zero(), |v| v.abs()) * T::lit(10.0) * h;
    let mut sum = samples[0] * T::lit(0.5) + samples[1..].iter().fold(T::zero(), |a, &b| a + b);
    let mut value = sum * h;
    let mut err = T::infinity();
    for _ in 0..MAX_REFINEMENTS {
        let half = h * T::lit(0.5);
        let mut odd = T::zero();
        let mut tau = half;
        while tau < tau_end {
            odd += big(tau)?.0;
            tau += h;
        }
        sum += odd;
        h = half;
        let refined = sum * h;
        err = (refined - value).abs();
        value = refined;
        if err <= T::lit(RELATIVE_TARGET) * value.abs() {
            break;
        }
    }
    Ok((value, err + tail))
}

impl<T: Real> Model<T> {
    /// `(p*, F''(p*))` for `F(p) = p x + c log phi(p)`.
    fn inversion_saddle(&self, x: T, copies: T) -> Result<(T, T)> {
        let deriv = |p: T| -> Result<(T, T)> {
            let j = self.log_phi_jet(p)?;
            Ok((x + copies * j.d1, copies * j.d2))
        };
        let (g0, c0) = deriv(T::zero())?;
        if g0 == T::zero() {
            return Ok((T::zero(), c0));
        }
        // F' is increasing; the root lies on the side where F' changes sign
        let dir = if g0 < T::zero() { T::one() } else { -T::one() };
        let (mut near, mut far) = (T::zero(), dir);
        let mut expansions = 0;
        while deriv(far)?.0 * dir < T::zero() {
            near = far;
            far *= T::lit(4.0);
            expansions += 1;
            if expansions > 60 {
                return Err(GwError::BracketFailure {
                    lo: near.as_f64(),
                    hi: far.as_f64(),
                });
            }
        }
        let (mut lo, mut hi) = if dir > T::zero() { (near, far) } else { (far, near) };
        let mut p = (lo + hi) * T::lit(0.5);
        for _ in 0..300 {
            let (g, c) = deriv(p)?;
            if g == T::zero() {
                return Ok((p, c));
            }
            if g < T::zero() {
                lo = p;
            } else {
                hi = p;
            }
            let newton = p - g / c;
            let next = if c > T::zero() && newton > lo && newton < hi {
                newton
            } else if lo > T::zero() && hi > T::zero() {
                (lo * hi).sqrt()
            } else if lo < T::zero() && hi < T::zero() {
                -(lo * hi).sqrt()
            } else {
                (lo + hi) * T::lit(0.5)
            };
            let done = (next - p).abs() <= T::lit(4.0) * T::epsilon() * p.abs();
            p = next;
            if done || hi - lo <= T::lit(4.0) * T::epsilon() * hi.abs().max(lo.abs()) {
                break;
            }
        }
        Ok((p, deriv(p)?.1))
    }

    /// `log P(S < x)` for `S` a sum of `copies` independent copies of `W`.
    ///
    /// With `plan = None` the contour sits at the saddle and a sinh-mapped,
    /// adaptively refined trapezoid covers the whole line; otherwise the
    /// given uniform plan is used as is.
    pub fn tail_sum_numeric(
        &self,
        x: T,
        copies: T,
        plan: Option<&InversionPlan<T>>,
    ) -> Result<LogProb<T>> {
        if !(x > T::zero()) {
            return Err(GwError::DomainError(format!("x = {x} must be positive")));
        }
        if !(copies > T::zero()) || !copies.is_finite() {
            return Err(GwError::DomainError(format!("copies = {copies} must be positive")));
        }
        if let Some(plan) = plan {
            return self.tail_sum_planned(x, copies, plan);
        }
        let (p_star, curv) = self.inversion_saddle(x, copies)?;
        let sd = curv.sqrt().recip();
        let clearance = T::lit(POLE_CLEARANCE) * sd;
        let upper = p_star < T::zero();
        let p = if upper {
            p_star.min(-clearance)
        } else {
            p_star.max(clearance)
        };
        let contour = Contour::new(self, x, copies, p)?;
        let curv_p = copies * self.log_phi_jet(p)?.d2;
        let s = curv_p.sqrt().recip();
        let (value, err) = sinh_trapezoid(|t| contour.integrand(t), s)?;
        let sign = if upper { -T::one() } else { T::one() };
        let r = sign * value / T::PI();
        let r_err = err / T::PI();
        if !(r > T::zero()) || !(r_err < r) || !r.is_finite() {
            return Err(GwError::QuadratureDiverged(format!(
                "remainder {r} with error {r_err} at x = {x}, copies = {copies}"
            )));
        }
        let floor = contour.rounding_floor();
        if upper {
            // P = 1 - Q with Q = e^{F(p)} r
            let log_q = contour.f_p + r.ln();
            let q = log_q.exp();
            if !(q < T::one()) {
                return Err(GwError::QuadratureDiverged(format!(
                    "upper tail {q} not below one at x = {x}"
                )));
            }
            let log_value = (-q).ln_1p();
            let abs_err = q / (T::one() - q) * (r_err / r + floor);
            Ok(LogProb::new(log_value, abs_err, Method::Inversion))
        } else {
            let log_value = contour.f_p + r.ln();
            Ok(LogProb::new(log_value, r_err / r + floor, Method::Inversion))
        }
    }

    /// The uniform plan matching the automatic contour: saddle abscissa,
    /// a window of twelve local standard deviations and 400 steps.
    pub fn auto_plan(&self, x: T, copies: T) -> Result<InversionPlan<T>> {
        let (p_star, curv) = self.inversion_saddle(x, copies)?;
        let sd = curv.sqrt().recip();
        let p = p_star.max(T::lit(POLE_CLEARANCE) * sd);
        let sd_p = (copies * self.log_phi_jet(p)?.d2).sqrt().recip();
        let halfwidth = T::lit(AUTO_WINDOW_SDS) * sd_p;
        Ok(InversionPlan {
            contour_p: p,
            window_halfwidth: halfwidth,
            step: halfwidth / T::lit(200.0),
            copies_log: copies.ln(),
        })
    }

    fn tail_sum_planned(&self, x: T, copies: T, plan: &InversionPlan<T>) -> Result<LogProb<T>> {
        plan.validate()?;
        if (plan.copies_log - copies.ln()).abs() > T::lit(1e-9) * copies.ln().abs().max(T::one()) {
            return Err(GwError::InvalidConfig(
                "plan copies_log disagrees with copies".into(),
            ));
        }
        let contour = Contour::new(self, x, copies, plan.contour_p)?;
        let h = plan.step;
        let steps = (plan.window_halfwidth / h).floor().to_i64().unwrap_or(0);
        let mut sum = contour.integrand(T::zero())?.re * T::lit(0.5);
        let mut last = T::zero();
        let mut coarse = sum;
        for k in 1..=steps {
            let v = contour.integrand(h * T::from_int(k))?;
            sum += v.re;
            if k % 2 == 0 {
                coarse += v.re;
            }
            last = v.norm();
        }
        let value = sum * h / T::PI();
        let coarse = coarse * (h + h) / T::PI();
        // Gaussian decay beyond the window: Int_W^inf e^{-c (t^2 - W^2)/2} ~ 1/(c W)
        let curv = copies * self.log_phi_jet(plan.contour_p)?.d2;
        let tail = last / (curv * plan.window_halfwidth) / T::PI();
        let err = (value - coarse).abs() + tail;
        if !(value > T::zero()) || !(err < value) {
            return Err(GwError::QuadratureDiverged(format!(
                "uniform plan unresolved: remainder {value}, error {err}"
            )));
        }
        Ok(LogProb::new(
            contour.f_p + value.ln(),
            err / value + contour.rounding_floor(),
            Method::Inversion,
        ))
    }
}
