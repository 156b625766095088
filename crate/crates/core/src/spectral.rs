//! Roots of `psi(s) = q`: the positive root and the roots with negative real part.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_model::{Process, ValidatedModel};

const REPEAT_TOL: f64 = 1e-7;
const REAL_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSet {
    pub q: f64,
    pub process: Process,
    /// `phi(q)` for `Y`, `Phi(q)` for `X`.
    pub positive_root: f64,
    /// Remaining roots, conjugate-closed, sorted by (real part, |imag|, imag).
    /// At `q = 0` this list may contain the root at the origin.
    #[serde(skip)]
    pub negative_roots: Vec<Complex64>,
    pub multiplicity_ok: bool,
    /// Set when `q = 0` and `psi'(0+) >= 0`, so the positive root is 0.
    pub degenerate_zero_root: bool,
}

impl RootSet {
    /// Positive root followed by the negative ones.
    pub fn all_roots(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.negative_roots.len() + 1);
        out.push(Complex64::new(self.positive_root, 0.0));
        out.extend_from_slice(&self.negative_roots);
        out
    }
}

pub fn psi_derivative(model: &ValidatedModel, delta: f64, process: Process, s: Complex64) -> Result<Complex64> {
    model.psi_derivative(delta, process, s)
}

/// Solves `psi(s) = q` for all roots via the companion matrix of
/// `(psi(s) - q) det(sI - T)`, then Newton-polishes on `psi` itself.
pub fn characteristic_roots(model: &ValidatedModel, delta: f64, process: Process, q: f64) -> Result<RootSet> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::InvalidParameter(format!("q must be >= 0 (got {q})")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0 (got {delta})")));
    }
    let poly = model.characteristic_polynomial(delta, process, q);
    let raw = poly.roots()?;
    let f = |s: Complex64| -> Result<(Complex64, Complex64)> {
        Ok((
            model.laplace_exponent(delta, process, s)? - q,
            model.psi_derivative(delta, process, s)?,
        ))
    };

    let mut roots: Vec<Complex64> = Vec::with_capacity(raw.len());
    for r0 in raw {
        let mut r = polish(&f, r0);
        if r.im.abs() <= REAL_SNAP * (1.0 + r.re.abs()) {
            r = polish(&f, Complex64::new(r.re, 0.0));
            r.im = 0.0;
        }
        roots.push(r);
    }

    // Enforce exact conjugate pairs.
    let mut paired = vec![false; roots.len()];
    for i in 0..roots.len() {
        if roots[i].im <= 0.0 || paired[i] {
            continue;
        }
        let target = roots[i].conj();
        let partner = (0..roots.len())
            .filter(|&j| j != i && !paired[j] && roots[j].im < 0.0)
            .min_by(|&a, &b| (roots[a] - target).norm().total_cmp(&(roots[b] - target).norm()));
        match partner {
            Some(j) => {
                roots[j] = target;
                paired[i] = true;
                paired[j] = true;
            }
            None => return Err(Error::NoConvergence(format!("root {} has no conjugate", roots[i]))),
        }
    }
    if roots.iter().zip(&paired).any(|(r, p)| r.im != 0.0 && !p) {
        return Err(Error::NoConvergence("unpaired complex root".into()));
    }

    if q == 0.0 {
        if let Some(z) = roots.iter_mut().min_by(|a, b| a.norm().total_cmp(&b.norm())) {
            if z.norm() < 1e-8 {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    for i in 0..roots.len() {
        for j in 0..i {
            if (roots[i] - roots[j]).norm() < REPEAT_TOL * (1.0 + roots[i].norm()) {
                return Err(Error::RepeatedRoots(roots[j], roots[i]));
            }
        }
    }

    for r in &roots {
        let (res, d) = f(*r)?;
        // Far-out roots of steep exponents carry terms of size |r psi'(r)|.
        let tol = 1e-9 * q.max(1.0).max(r.norm() * d.norm());
        if res.norm() >= tol {
            return Err(Error::NoConvergence(format!("root {r} has residual {:e}", res.norm())));
        }
    }

    let (idx, _) = roots
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .ok_or_else(|| Error::NoConvergence("no roots".into()))?;
    let top = roots.swap_remove(idx);
    if top.im != 0.0 || top.re < 0.0 {
        return Err(Error::NoConvergence(format!("dominant root {top} is not real and nonnegative")));
    }
    let others_ok = roots
        .iter()
        .all(|r| if q > 0.0 { r.re < 0.0 } else { r.re <= 0.0 });
    if !others_ok || (q > 0.0 && top.re <= 0.0) {
        return Err(Error::NoConvergence("more than one root in the right half-plane".into()));
    }
    roots.sort_by(|a, b| {
        a.re.total_cmp(&b.re)
            .then(a.im.abs().total_cmp(&b.im.abs()))
            .then(a.im.total_cmp(&b.im))
    });

    Ok(RootSet {
        q,
        process,
        positive_root: top.re,
        negative_roots: roots,
        multiplicity_ok: true,
        degenerate_zero_root: q == 0.0 && top.re == 0.0,
    })
}

fn polish<F>(f: &F, start: Complex64) -> Complex64
where
    F: Fn(Complex64) -> Result<(Complex64, Complex64)>,
{
    let mut r = start;
    let Ok((mut val, mut der)) = f(r) else {
        return r;
    };
    for _ in 0..30 {
        if der.norm() == 0.0 {
            break;
        }
        let next = r - val / der;
        match f(next) {
            Ok((v, d)) if v.norm() < val.norm() => {
                r = next;
                val = v;
                der = d;
            }
            _ => break,
        }
        if val.norm() == 0.0 {
            break;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{validate_model, LevyModelSpec};

    fn exp_model() -> ValidatedModel {
        validate_model(&LevyModelSpec::exponential(1.0, 0.0, 1.0, 2.0)).unwrap()
    }

    #[test]
    fn exponential_model_roots_match_quadratic() {
        let rs = characteristic_roots(&exp_model(), 0.0, Process::Y, 0.1).unwrap();
        // s^2 + (1 - q) s - 2q = 0
        let disc = (0.9f64 * 0.9 + 0.8).sqrt();
        assert!((rs.positive_root - (-0.9 + disc) / 2.0).abs() < 1e-12);
        assert!((rs.positive_root - 0.184429).abs() < 1e-6);
        assert_eq!(rs.negative_roots.len(), 1);
        assert!((rs.negative_roots[0].re - (-0.9 - disc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_with_downward_drift() {
        let rs = characteristic_roots(&exp_model(), 0.0, Process::Y, 0.0).unwrap();
        assert_eq!(rs.positive_root, 0.0);
        assert!(rs.degenerate_zero_root);
        assert!((rs.negative_roots[0].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_normal_fit_root_counts() {
        let m = validate_model(&LevyModelSpec::half_normal_fit()).unwrap();
        let ry = characteristic_roots(&m, 1.0, Process::Y, 0.05).unwrap();
        let rx = characteristic_roots(&m, 1.0, Process::X, 0.05).unwrap();
        assert_eq!(ry.negative_roots.len(), 7);
        assert_eq!(rx.negative_roots.len(), 7);
        assert!(ry.positive_root > rx.positive_root && rx.positive_root > 0.0);
    }
}
