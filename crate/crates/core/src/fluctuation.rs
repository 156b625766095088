//! Fluctuation identities of the refracted-reflected process `V`: reflected at 0
//! (capital injection `R`) and refracted at `b` (dividends `L` paid at rate
//! `delta` while `V > b`).
//!
//! Every quantity is assembled from closed-form mixture integrals; nothing here
//! discretizes except [`apply_generator`], whose jump integral is adaptive
//! quadrature.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{Process, ValidatedModel, VariationClass};
use crate::mixture::ExpMixture;
use crate::quadrature::integrate_with_breaks;
use crate::scale::{ScaleFamily, ScalePair};

/// A value that may be `+inf` for structural reasons (e.g. zero discounting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Extended::Infinite)
    }

    fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(f(v)),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Up to the first passage above `a`.
    ToA,
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    GammaB,
    GammaBPrime,
    GammaBarA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVariant {
    I,
    IPrime,
    II,
    IIPrime,
}

/// Barrier layout and rates for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub b: f64,
    pub a: Option<f64>,
    pub delta: f64,
    pub q: f64,
    pub p: Option<f64>,
}

impl Geometry {
    pub fn new(b: f64, delta: f64, q: f64) -> Self {
        Self {
            b,
            a: None,
            delta,
            q,
            p: None,
        }
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = Some(a);
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::GeometryViolation(format!("b must be > 0 (got {})", self.b)));
        }
        if let Some(a) = self.a {
            if !(a > self.b && a.is_finite()) {
                return Err(Error::GeometryViolation(format!(
                    "a must exceed b (a = {a}, b = {})",
                    self.b
                )));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0 (got {})", self.delta)));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be >= 0 (got {})", self.q)));
        }
        if let Some(p) = self.p {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!("p must be >= 0 (got {p})")));
            }
            if self.q <= 0.0 {
                return Err(Error::InvalidParameter("occupation transforms need q > 0".into()));
            }
        }
        Ok(())
    }

    fn require_a(&self) -> Result<f64> {
        self.validate()?;
        self.a
            .ok_or_else(|| Error::GeometryViolation("upper level a is required".into()))
    }
}

/// Finite union of disjoint half-open intervals `[lo, hi)` in `[0, inf)`.
/// `hi` may be `+inf`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        for &(lo, hi) in &intervals {
            if !(lo.is_finite() && lo >= 0.0 && hi > lo) {
                return Err(Error::InvalidParameter(format!("bad interval [{lo}, {hi})")));
            }
        }
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidParameter(format!(
                    "intervals [{}, {}) and [{}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn lebesgue(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn is_bounded(&self) -> bool {
        self.intervals.iter().all(|(_, hi)| hi.is_finite())
    }

    pub fn upper(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.1)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x < hi)
    }

    /// Pieces of the set inside `[lo, hi]`.
    pub fn clip(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        self.intervals
            .iter()
            .filter_map(|&(s, e)| {
                let s = s.max(lo);
                let e = e.min(hi);
                (e > s).then_some((s, e))
            })
            .collect()
    }

    /// Complement inside `[0, inf)`.
    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::new();
        let mut cursor = 0.0;
        for &(lo, hi) in &self.intervals {
            if lo > cursor {
                out.push((cursor, lo));
            }
            cursor = hi;
        }
        if cursor.is_finite() {
            out.push((cursor, f64::INFINITY));
        }
        IntervalSet { intervals: out }
    }
}

impl FromStr for IntervalSet {
    type Err = Error;

    /// Parses `"l1,u1;l2,u2"`; `inf` is accepted as an upper end.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let mut it = part.split(',').map(str::trim);
            let (Some(lo), Some(hi), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::InvalidParameter(format!("interval '{part}' is not 'lo,hi'")));
            };
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("'{v}' is not a number")))
            };
            out.push((parse(lo)?, parse(hi)?));
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("empty interval set".into()));
        }
        IntervalSet::new(out)
    }
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .intervals
            .iter()
            .map(|(lo, hi)| format!("{lo},{hi}"))
            .collect();
        write!(f, "{}", parts.join(";"))
    }
}

fn check_family(family: &ScaleFamily, geometry: &Geometry) -> Result<()> {
    geometry.validate()?;
    if family.delta() != geometry.delta || family.q() != geometry.q {
        return Err(Error::InvalidParameter(format!(
            "scale family built for (delta, q) = ({}, {}) but geometry has ({}, {})",
            family.delta(),
            family.q(),
            geometry.delta,
            geometry.q
        )));
    }
    Ok(())
}

fn check_x(x: f64, a: f64) -> Result<()> {
    if !(x >= 0.0 && x <= a) {
        return Err(Error::GeometryViolation(format!("x = {x} must lie in [0, {a}]")));
    }
    Ok(())
}

fn check_ab(b: f64, a: f64) -> Result<()> {
    if !(b > 0.0 && a > b) {
        return Err(Error::GeometryViolation(format!("need 0 < b < a (b = {b}, a = {a})")));
    }
    Ok(())
}

/// `int_lo^hi A(X - z) B(z) dz`.
fn conv(a: &ExpMixture, b: &ExpMixture, x: f64, lo: f64, hi: f64) -> f64 {
    a.convolve_at(b, x, lo, hi)
}

/// `r(l; a) = W(l) + delta int_{a-b}^l Wbb(l - z) W'(z) dz`.
pub fn kernel_r(family: &ScaleFamily, b: f64, l: f64, a: f64) -> Result<f64> {
    check_ab(b, a)?;
    let w = &family.x;
    let wbb = &family.y;
    let mut v = w.w(l);
    if l > a - b && family.delta() != 0.0 {
        v += family.delta() * conv(&wbb.w, &w.w_prime, l, a - b, l);
    }
    Ok(v)
}

/// Right derivative of `r(l; a)` in `l`.
pub fn kernel_r_prime(family: &ScaleFamily, b: f64, l: f64, a: f64) -> Result<f64> {
    check_ab(b, a)?;
    let w = &family.x;
    let wbb = &family.y;
    let delta = family.delta();
    if l < a - b || delta == 0.0 {
        return Ok(w.w_prime(l));
    }
    Ok((1.0 + delta * wbb.w0) * w.w_prime(l) + delta * conv(&wbb.w_prime, &w.w_prime, l, a - b, l))
}

fn require_phi(family: &ScaleFamily) -> Result<f64> {
    let phi = family.big_phi();
    if phi == 0.0 {
        return Err(Error::DegenerateDiscount);
    }
    Ok(phi)
}

/// `int_0^l e^{-Phi u} Wbb(u) du`.
fn weighted_wbb(family: &ScaleFamily, phi: f64, l: f64) -> f64 {
    family
        .y
        .w
        .weighted_integral(0.0, l.max(0.0), Complex64::new(-phi, 0.0))
        .re
}

/// `r_hat(l) = e^{-Phi (b - l)} (1 + delta Phi int_0^l e^{-Phi u} Wbb(u) du)`.
pub fn kernel_r_hat(family: &ScaleFamily, b: f64, l: f64) -> Result<f64> {
    let phi = require_phi(family)?;
    let inner = 1.0 + family.delta() * phi * weighted_wbb(family, phi, l);
    Ok((-phi * (b - l)).exp() * inner)
}

/// `r_hat'(l) = Phi r_hat(l) + delta Phi e^{-Phi b} Wbb(l)`.
pub fn kernel_r_hat_prime(family: &ScaleFamily, b: f64, l: f64) -> Result<f64> {
    let phi = require_phi(family)?;
    Ok(phi * kernel_r_hat(family, b, l)? + family.delta() * phi * (-phi * b).exp() * family.y.w(l))
}

pub fn kernel_r_hat_second(family: &ScaleFamily, b: f64, l: f64) -> Result<f64> {
    let phi = require_phi(family)?;
    Ok(phi * kernel_r_hat_prime(family, b, l)?
        + family.delta() * phi * (-phi * b).exp() * family.y.w_prime(l))
}

/// `R^{(p,q)}(a)` with `wbb` the `Y` scale pair at rate `p + q`, `w` the `X` pair
/// at rate `q`, and `p` signed (negative for the index swap used by occupation
/// above `b`).
pub fn kernel_cal_r_pairs(wbb: &ScalePair, w: &ScalePair, delta: f64, p: f64, b: f64, a: f64) -> Result<f64> {
    check_ab(b, a)?;
    let q = w.roots.q;
    let mut v = (1.0 + delta * wbb.w0) * w.w(a) + delta * conv(&w.w, &wbb.w_prime, a, 0.0, b);
    if p != 0.0 {
        if q == 0.0 {
            return Err(Error::DegenerateDiscount);
        }
        v += p / q * wbb.w(b) * w.z(a - b) + p * conv(&w.w, &wbb.w, a, 0.0, b);
    }
    Ok(v)
}

/// Derivative of [`kernel_cal_r_pairs`] in `a`.
pub fn kernel_cal_r_prime_pairs(wbb: &ScalePair, w: &ScalePair, delta: f64, p: f64, b: f64, a: f64) -> Result<f64> {
    check_ab(b, a)?;
    let mut v = (1.0 + delta * wbb.w0) * w.w_prime(a) + delta * conv(&w.w_prime, &wbb.w_prime, a, 0.0, b);
    if p != 0.0 {
        v += p * (wbb.w(b) * w.w(a - b) + conv(&w.w_prime, &wbb.w, a, 0.0, b));
    }
    Ok(v)
}

/// `R^{(p,q)}(a)` from the family at rate `q` and the family at rate `p + q`.
pub fn kernel_cal_r(family_q: &ScaleFamily, family_pq: &ScaleFamily, p: f64, b: f64, a: f64) -> Result<f64> {
    check_pq_families(family_q, family_pq, p)?;
    kernel_cal_r_pairs(&family_pq.y, &family_q.x, family_q.delta(), p, b, a)
}

pub fn kernel_cal_r_prime(family_q: &ScaleFamily, family_pq: &ScaleFamily, p: f64, b: f64, a: f64) -> Result<f64> {
    check_pq_families(family_q, family_pq, p)?;
    kernel_cal_r_prime_pairs(&family_pq.y, &family_q.x, family_q.delta(), p, b, a)
}

fn check_pq_families(family_q: &ScaleFamily, family_pq: &ScaleFamily, p: f64) -> Result<()> {
    let pq = family_q.q() + p;
    if pq < 0.0 {
        return Err(Error::IndexViolation(pq));
    }
    if (family_pq.q() - pq).abs() > 1e-14 * (1.0 + pq) || family_pq.delta() != family_q.delta() {
        return Err(Error::InvalidParameter(format!(
            "second family has rate {} but p + q = {pq}",
            family_pq.q()
        )));
    }
    Ok(())
}

/// `Gamma_b(l; B)`, `Gamma_b'(l; B)` (with `level = b`) or `Gamma_bar_a(l; B)`
/// (with `level = a`).
pub fn gamma_kernel(family: &ScaleFamily, kind: GammaKind, l: f64, level: f64, set: &IntervalSet) -> f64 {
    let start = level - l;
    match kind {
        GammaKind::GammaB => set
            .clip(start, level)
            .iter()
            .map(|&(s, e)| family.y.w_bar(e - start) - family.y.w_bar(s - start))
            .sum(),
        GammaKind::GammaBPrime => {
            let atom = if set.contains(start) { family.y.w0 } else { 0.0 };
            atom + set
                .clip(start, level)
                .iter()
                .map(|&(s, e)| family.y.w(e - start) - family.y.w(s - start))
                .sum::<f64>()
        }
        GammaKind::GammaBarA => set
            .clip(start, level)
            .iter()
            .map(|&(s, e)| family.x.w_bar(e - start) - family.x.w_bar(s - start))
            .sum(),
    }
}

/// `int_lo^hi r'(u; u) du` for `b <= lo <= hi`.
fn integral_r_prime_diag(family: &ScaleFamily, b: f64, lo: f64, hi: f64) -> f64 {
    let w = &family.x;
    let wbb = &family.y;
    let delta = family.delta();
    let mut v = (1.0 + delta * wbb.w0) * (w.w(hi) - w.w(lo));
    if delta != 0.0 {
        v += delta * (conv(&w.w, &wbb.w_prime, hi, 0.0, b) - conv(&w.w, &wbb.w_prime, lo, 0.0, b));
    }
    v
}

/// `int_lo^hi r(u - x; u) du` for `b <= lo <= hi`.
fn integral_r_shifted(family: &ScaleFamily, b: f64, x: f64, lo: f64, hi: f64) -> f64 {
    let w = &family.x;
    let wbb = &family.y;
    let delta = family.delta();
    let mut v = w.w_bar(hi - x) - w.w_bar(lo - x);
    if x < b && delta != 0.0 {
        v += delta * (conv(&w.w, &wbb.w, hi - x, 0.0, b - x) - conv(&w.w, &wbb.w, lo - x, 0.0, b - x));
    }
    v
}

/// Ratio `r(a - x; a) / r'(a; a)`.
fn finite_ratio(family: &ScaleFamily, b: f64, a: f64, x: f64) -> Result<f64> {
    Ok(kernel_r(family, b, a - x, a)? / kernel_r_prime(family, b, a, a)?)
}

/// Ratio `r_hat(b - x) / r_hat'(b)`.
fn infinite_ratio(family: &ScaleFamily, b: f64, x: f64) -> Result<f64> {
    Ok(kernel_r_hat(family, b, b - x)? / kernel_r_hat_prime(family, b, b)?)
}

/// Shared body of the finite and infinite resolvents for a bounded set.
fn resolvent_body(family: &ScaleFamily, b: f64, x: f64, set: &IntervalSet, ratio: f64) -> f64 {
    let mut v = -gamma_kernel(family, GammaKind::GammaB, b - x, b, set)
        + gamma_kernel(family, GammaKind::GammaBPrime, b, b, set) * ratio;
    for (lo, hi) in set.clip(b, f64::INFINITY) {
        v += ratio * integral_r_prime_diag(family, b, lo, hi) - integral_r_shifted(family, b, x, lo, hi);
    }
    v
}

/// `E_x int_0^{T_a^+} e^{-qt} 1{V_t in B} dt`. Negative `x` is evaluated at 0.
pub fn resolvent_finite(family: &ScaleFamily, geometry: &Geometry, x: f64, set: &IntervalSet) -> Result<f64> {
    check_family(family, geometry)?;
    let a = geometry.require_a()?;
    let x = x.max(0.0);
    check_x(x, a)?;
    if set.upper() > a {
        return Err(Error::BOutOfRange { upper: a });
    }
    let ratio = finite_ratio(family, geometry.b, a, x)?;
    Ok(resolvent_body(family, geometry.b, x, set, ratio))
}

/// `E_x int_0^inf e^{-qt} 1{V_t in B} dt`. Unbounded sets use
/// `1/q - resolvent(complement)`.
pub fn resolvent_infinite(family: &ScaleFamily, b: f64, x: f64, set: &IntervalSet) -> Result<Extended> {
    if !(b > 0.0) {
        return Err(Error::GeometryViolation(format!("b must be > 0 (got {b})")));
    }
    let x = x.max(0.0);
    let q = family.q();
    if family.big_phi() == 0.0 {
        return Ok(if set.lebesgue() > 0.0 {
            Extended::Infinite
        } else {
            Extended::Finite(0.0)
        });
    }
    if !set.is_bounded() {
        if q == 0.0 {
            return Ok(Extended::Infinite);
        }
        let rest = resolvent_infinite(family, b, x, &set.complement())?;
        return Ok(rest.map(|r| 1.0 / q - r));
    }
    let ratio = infinite_ratio(family, b, x)?;
    Ok(Extended::Finite(resolvent_body(family, b, x, set, ratio)))
}

/// `E_x e^{-q T_a^+}`.
pub fn exit_laplace(family: &ScaleFamily, geometry: &Geometry, x: f64) -> Result<f64> {
    check_family(family, geometry)?;
    let a = geometry.require_a()?;
    let b = geometry.b;
    let x = x.max(0.0);
    check_x(x, a)?;
    let q = family.q();
    if q == 0.0 {
        return Ok(1.0);
    }
    let w = &family.x;
    let wbb = &family.y;
    let delta = family.delta();
    let ratio = finite_ratio(family, b, a, x)?;
    let cal_r = kernel_cal_r_pairs(wbb, w, delta, 0.0, b, a)?;
    Ok(w.z(a - x) + q * delta * conv(&w.w, &wbb.w, a - x, 0.0, b - x) - q * ratio * cal_r)
}

/// Expected discounted dividends.
pub fn dividends_npv(family: &ScaleFamily, geometry: &Geometry, x: f64, horizon: Horizon) -> Result<Extended> {
    check_family(family, geometry)?;
    let b = geometry.b;
    let delta = family.delta();
    let q = family.q();
    let x = x.max(0.0);
    let w = &family.x;
    let wbb = &family.y;
    match horizon {
        Horizon::ToA => {
            let a = geometry.require_a()?;
            check_x(x, a)?;
            let ratio = finite_ratio(family, b, a, x)?;
            let cal_r = kernel_cal_r_pairs(wbb, w, delta, 0.0, b, a)?;
            let direct = wbb.w_bar(b - x) - w.w_bar(a - x) - delta * conv(&w.w, &wbb.w, a - x, 0.0, b - x);
            Ok(Extended::Finite(delta * direct + delta * ratio * (cal_r - wbb.w(b))))
        }
        Horizon::Infinite => {
            if q == 0.0 {
                return Ok(Extended::Infinite);
            }
            let ratio = infinite_ratio(family, b, x)?;
            Ok(Extended::Finite(delta * (wbb.z(b - x) / q - ratio * wbb.w(b))))
        }
    }
}

/// Expected discounted capital injections; `x < 0` adds the initial `|x|`.
pub fn injection_npv(family: &ScaleFamily, geometry: &Geometry, x: f64, horizon: Horizon) -> Result<Extended> {
    check_family(family, geometry)?;
    let b = geometry.b;
    let shift = (-x).max(0.0);
    let x = x.max(0.0);
    match horizon {
        Horizon::ToA => {
            let a = geometry.require_a()?;
            check_x(x, a)?;
            Ok(Extended::Finite(finite_ratio(family, b, a, x)? + shift))
        }
        Horizon::Infinite => {
            if family.big_phi() == 0.0 {
                return Ok(Extended::Infinite);
            }
            Ok(Extended::Finite(infinite_ratio(family, b, x)? + shift))
        }
    }
}

/// Occupation transform with `wbb` at rate `p + q`, `w` at rate `q`, signed `p`.
fn occupation_pairs(wbb: &ScalePair, w: &ScalePair, delta: f64, p: f64, b: f64, a: f64, x: f64) -> Result<f64> {
    let q = w.roots.q;
    let span = b - x;
    let ax = a - x;
    let head = w.z(ax)
        + p * wbb.w_bar(span)
        + q * (p * conv(&w.w_bar, &wbb.w, ax, 0.0, span) + delta * conv(&w.w, &wbb.w, ax, 0.0, span));
    let cal_r = kernel_cal_r_pairs(wbb, w, delta, p, b, a)?;
    let cal_r_prime = kernel_cal_r_prime_pairs(wbb, w, delta, p, b, a)?;
    let tail = w.w(ax) + p * conv(&w.w, &wbb.w, ax, 0.0, span) + delta * conv(&w.w_prime, &wbb.w, ax, 0.0, span);
    Ok(head - q * cal_r / cal_r_prime * tail)
}

/// `E_x exp(-q T_a^+ - p * time spent below / above b before T_a^+)`.
///
/// `family_q` has rate `q`, `family_pq` rate `p + q`; the "above" transform runs
/// the "below" formula with indices `(-p, p + q)`.
pub fn occupation_laplace(
    family_q: &ScaleFamily,
    family_pq: &ScaleFamily,
    geometry: &Geometry,
    x: f64,
    side: Side,
) -> Result<f64> {
    check_family(family_q, geometry)?;
    let a = geometry.require_a()?;
    let p = geometry.p.unwrap_or(0.0);
    check_pq_families(family_q, family_pq, p)?;
    let x = x.max(0.0);
    check_x(x, a)?;
    let delta = geometry.delta;
    match side {
        Side::Below => occupation_pairs(&family_pq.y, &family_q.x, delta, p, geometry.b, a, x),
        Side::Above => occupation_pairs(&family_q.y, &family_pq.x, delta, -p, geometry.b, a, x),
    }
}

/// Reflected process (no refraction) resolvent up to its first passage above
/// `level`: `Wbb(level - x) / Wbb'(level) Gamma'(level; B) - Gamma(level - x; B)`.
pub fn reflected_resolvent(family: &ScaleFamily, level: f64, x: f64, set: &IntervalSet) -> f64 {
    let wbb = &family.y;
    wbb.w(level - x) / wbb.w_prime(level) * gamma_kernel(family, GammaKind::GammaBPrime, level, level, set)
        - gamma_kernel(family, GammaKind::GammaB, level - x, level, set)
}

/// `E_x e^{-q eta^+}` for the reflected process.
pub fn reflected_upcrossing(family: &ScaleFamily, level: f64, x: f64) -> f64 {
    let wbb = &family.y;
    wbb.z(level - x) - family.q() * wbb.w(level - x) / wbb.w_prime(level) * wbb.w(level)
}

/// Discounted injections of the reflected process up to its first passage above `level`.
pub fn reflected_injection(family: &ScaleFamily, level: f64, x: f64) -> f64 {
    let wbb = &family.y;
    wbb.w(level - x) / wbb.w_prime(level)
}

/// Both sides of one of the four bounded-variation convolution identities.
///
/// `family_p` supplies `Wbb` at rate `p~` (its `Y` half), `family_q` supplies `W`
/// at rate `q~` (its `X` half). Double integrals against the jump measure are done
/// in closed form through the matrix-exponential form of the jump density.
pub fn identity_probe(
    family_p: &ScaleFamily,
    family_q: &ScaleFamily,
    variant: ProbeVariant,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<(f64, f64)> {
    let model = family_q.model();
    if model.variation_class() != VariationClass::Bounded {
        return Err(Error::UnboundedVariationModel);
    }
    let primed = matches!(variant, ProbeVariant::IPrime | ProbeVariant::IIPrime);
    if !(alpha < beta && beta <= gamma) || (primed && beta >= gamma) {
        return Err(Error::InvalidParameter(format!(
            "need alpha < beta <= gamma (strict for primed variants); got ({alpha}, {beta}, {gamma})"
        )));
    }
    if family_p.delta() != family_q.delta() {
        return Err(Error::InvalidParameter("families must share delta".into()));
    }
    let delta = family_q.delta();
    let pt = family_p.q();
    let qt = family_q.q();
    let w = &family_q.x;
    let wbb = &family_p.y;
    let wbb0 = wbb.w0;
    let c_y = 1.0 / wbb0;
    let l = beta - alpha;
    let m = gamma - beta;
    let total = l + m;

    let z_type = matches!(variant, ProbeVariant::II | ProbeVariant::IIPrime);
    let inner_fn = if z_type { &w.z } else { &w.w };
    let outer_fn = if primed { &wbb.w_prime } else { &wbb.w };

    // The jump density factorizes as f(u + v) = alpha e^{Tu} e^{Tv} t, so both
    // integrals become matrix-valued convolutions.
    let jump = model.jump();
    let t = jump.subgenerator().map(|v| Complex64::new(v, 0.0));
    let e_l = (jump.subgenerator() * l).exp().map(|v| Complex64::new(v, 0.0));
    let e_m = (jump.subgenerator() * m).exp().map(|v| Complex64::new(v, 0.0));
    let mut inner = matrix_convolution(inner_fn, &t, &e_l, l)?;
    if z_type {
        let t_inv = t.clone().lu().try_inverse().ok_or_else(|| Error::QuadratureFailure("singular T".into()))?;
        inner -= t_inv * &e_l;
    }
    let mut outer = matrix_convolution(outer_fn, &t, &e_m, m)?;
    if primed {
        outer += e_m * Complex64::new(wbb0, 0.0);
    }
    let alpha = jump.alpha().map(|v| Complex64::new(v, 0.0));
    let exit = jump.exit_rates().map(|v| Complex64::new(v, 0.0));
    let lhs = (alpha.transpose() * inner * outer * exit)[(0, 0)] * model.kappa();

    let one = Complex64::new(1.0, 0.0);
    let rhs = match variant {
        ProbeVariant::I => {
            let g = w.w.scaled(one * (qt - pt)).plus(&w.w_prime.scaled(one * -delta));
            c_y * w.w(l) * wbb.w(m) - w.w(total) + conv(&wbb.w, &g, total, l, total)
        }
        ProbeVariant::IPrime => {
            let g = w.w.scaled(one * (qt - pt)).plus(&w.w_prime.scaled(one * -delta));
            c_y * w.w(l) * wbb.w_prime(m) - w.w_prime(total)
                + conv(&wbb.w_prime, &g, total, l, total)
                + wbb0 * ((qt - pt) * w.w(total) - delta * w.w_prime(total))
        }
        ProbeVariant::II => {
            let h = w.w_bar.scaled(one * (qt - pt)).plus(&w.w.scaled(one * -delta));
            c_y * w.z(l) * wbb.w(m) - w.z(total) - (pt - qt) * wbb.w_bar(m)
                + qt * conv(&wbb.w, &h, total, l, total)
        }
        ProbeVariant::IIPrime => {
            let h = w.w_bar.scaled(one * (qt - pt)).plus(&w.w.scaled(one * -delta));
            c_y * w.z(l) * wbb.w_prime(m) - qt * (delta * wbb0 + 1.0) * w.w(total)
                + (qt - pt) * wbb.w(m)
                + qt * wbb0 * (qt - pt) * w.w_bar(total)
                + qt * conv(&wbb.w_prime, &h, total, l, total)
        }
    };
    Ok((lhs.re, rhs))
}

/// `int_0^l g(l - u) e^{Tu} du` for a mixture `g` of pure exponentials.
fn matrix_convolution(g: &ExpMixture, t: &CMatrix, e_tl: &CMatrix, l: f64) -> Result<CMatrix> {
    let n = t.nrows();
    let id = CMatrix::identity(n, n);
    let mut out = CMatrix::zeros(n, n);
    for term in g.terms() {
        if term.power != 0 {
            return Err(Error::InvalidParameter("polynomial-exponential terms are not supported here".into()));
        }
        let shifted = t - &id * term.rate;
        let rhs = e_tl - &id * (term.rate * l).exp();
        let solved = shifted
            .lu()
            .solve(&rhs)
            .ok_or(Error::PoleAtEigenvalue { s: term.rate })?;
        out += solved * term.coef;
    }
    Ok(out)
}

type CMatrix = nalgebra::DMatrix<Complex64>;

/// A function with first and second derivatives, as fed to [`apply_generator`].
pub trait SmoothFn {
    fn value(&self, x: f64) -> f64;
    fn first(&self, x: f64) -> f64;
    fn second(&self, x: f64) -> f64;
}

/// Adapter from three closures.
pub struct FnTriple<F, G, H> {
    pub value: F,
    pub first: G,
    pub second: H,
}

impl<F, G, H> SmoothFn for FnTriple<F, G, H>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }
    fn first(&self, x: f64) -> f64 {
        (self.first)(x)
    }
    fn second(&self, x: f64) -> f64 {
        (self.second)(x)
    }
}

const JUMP_TAIL_CUTOFF: f64 = 1e-14;

/// `(L - q) g(x) = -c g'(x) + sigma^2/2 g''(x) + int (g(x+z) - g(x)) Pi(dz) - q g(x)`
/// with `c = c_Y` for `Y` and `c_Y + delta` for `X`.
///
/// `kinks` lists points where `g` may lose smoothness; they become quadrature
/// breakpoints. The jump integral is cut where the jump tail drops below 1e-14
/// and the remaining `-g(x) Pi((Z, inf))` is added back.
pub fn apply_generator<G: SmoothFn + ?Sized>(
    model: &ValidatedModel,
    delta: f64,
    process: Process,
    g: &G,
    q: f64,
    x: f64,
    kinks: &[f64],
) -> Result<f64> {
    let c = model.drift(delta, process);
    let sigma2 = model.sigma() * model.sigma();
    let gx = g.value(x);
    let mut cutoff = 1.0 / model.jump().mean().max(1e-300);
    while model.jump().tail(cutoff) > JUMP_TAIL_CUTOFF {
        cutoff *= 2.0;
    }
    let density = |z: f64| model.jump_density(z);
    let mut points = vec![0.0];
    points.extend(kinks.iter().map(|k| k - x).filter(|z| *z > 0.0 && *z < cutoff));
    points.push(cutoff);
    points.sort_by(f64::total_cmp);
    let jump = integrate_with_breaks(|z| (g.value(x + z) - gx) * density(z), &points, 1e-12, 1e-10)?;
    let tail = -gx * model.jump_tail(cutoff);
    Ok(-c * g.first(x) + 0.5 * sigma2 * g.second(x) + jump + tail - q * gx)
}
