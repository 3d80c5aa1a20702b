//! Central finite-difference comparison against tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Rounding budget of one forward evaluation, in ulps of its value.
pub const FORWARD_NOISE_ULPS: Real = 16.0;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: Real,
    /// Coordinates whose perturbation by this much changes any discrete
    /// branch (rectifier sign, argmax winner, neighbour set) are skipped.
    /// Zero disables the guard beyond the ±step evaluations themselves.
    pub kink_radius: Real,
    /// Check a random subset of this many coordinates instead of all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// When set, coordinates whose gradient is too small for the central
    /// difference to resolve to this relative tolerance are skipped. One
    /// ulp of `f` moves the difference quotient by `eps·|f| / 2h`; a deep
    /// forward pass accumulates up to [`FORWARD_NOISE_ULPS`] of them, so
    /// gradients below `FORWARD_NOISE_ULPS·eps·|f| / (2h·tol)` are noise.
    pub resolution_tol: Option<Real>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, kink_radius: 1e-4, max_coords: None, seed: 0, resolution_tol: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: Real,
    pub checked: usize,
    /// Coordinates next to a branch change.
    pub skipped: usize,
    /// Coordinates below the finite-difference resolution.
    pub unresolved: usize,
}

/// Largest relative error between tape and finite-difference gradients of
/// a scalar function, `|a - n| / max(|a|, |n|, 1e-8)` per coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, step: Real) -> Result<Real>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_with(f, x, &GradCheckOptions { step, ..Default::default() })?;
    if report.checked == 0 {
        return Err(Error::Numeric(
            "every coordinate sits next to a non-differentiable point".into(),
        ));
    }
    Ok(report.max_rel_error)
}

fn evaluate<F>(f: &F, x: Tensor) -> Result<(Real, u64)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.variable(x)?;
    let out = f(&mut tape, xv)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    Ok((value, tape.branch_signature()))
}

pub fn grad_check_with<F>(f: F, x: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !x.is_finite() {
        return Err(Error::Numeric("grad_check input is not finite".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone())?;
    let out = f(&mut tape, xv)?;
    let base_value = tape.value(out).item()?;
    let base_signature = tape.branch_signature();
    let analytic = tape.backward(out)?.wrt(xv);
    drop(tape);

    let coords: Vec<usize> = match opts.max_coords {
        Some(limit) if limit < x.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked = rand::seq::index::sample(&mut rng, x.len(), limit).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..x.len()).collect(),
    };

    let shifted = |c: usize, delta: Real| {
        let mut t = x.clone();
        t.data_mut()[c] += delta;
        t
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0, unresolved: 0 };
    for c in coords {
        let (fp, sp) = evaluate(&f, shifted(c, opts.step))?;
        let (fm, sm) = evaluate(&f, shifted(c, -opts.step))?;
        let mut smooth = sp == base_signature && sm == base_signature;
        if smooth && opts.kink_radius > opts.step {
            smooth = evaluate(&f, shifted(c, opts.kink_radius))?.1 == base_signature
                && evaluate(&f, shifted(c, -opts.kink_radius))?.1 == base_signature;
        }
        if !smooth {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic.data()[c];
        if let Some(tol) = opts.resolution_tol {
            let floor = FORWARD_NOISE_ULPS * Real::EPSILON * base_value.abs().max(fp.abs()) / (2.0 * opts.step * tol);
            if a.abs().max(numeric.abs()) < floor {
                report.unresolved += 1;
                continue;
            }
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x) = 1000 + 1e-9·x0 + x1: the first slope drowns in the rounding of
    // the constant, the second is resolved exactly.
    fn offset_linear(t: &mut Tape, x: Var) -> Result<Var> {
        let w = t.constant(Tensor::new(vec![2], vec![1e-9, 1.0])?)?;
        let c = t.constant(Tensor::new(vec![2], vec![1000.0, 0.0])?)?;
        let y = t.mul(x, w)?;
        let y = t.add(y, c)?;
        t.sum(y)
    }

    #[test]
    fn resolution_guard_skips_noise_bound_coordinates() {
        let x = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let plain = grad_check_with(offset_linear, &x, &GradCheckOptions::default()).unwrap();
        assert_eq!((plain.checked, plain.unresolved), (2, 0));
        assert!(plain.max_rel_error > 1e-6);

        let opts = GradCheckOptions { resolution_tol: Some(1e-6), ..GradCheckOptions::default() };
        let guarded = grad_check_with(offset_linear, &x, &opts).unwrap();
        assert_eq!((guarded.checked, guarded.unresolved), (1, 1));
        assert!(guarded.max_rel_error < 1e-6);
    }
}
