//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use num_traits::ToPrimitive;

use super::{Dd, Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central,
    /// Fourth-order central stencil `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
    FivePoint,
}

/// Arithmetic used for the finite-difference evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    F64,
    /// Double-double ([`Dd`]); resolves loss changes far below one f64 ulp.
    DoubleDouble,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub stencil: Stencil,
    /// Check a seeded random subset of entries per parameter instead of all of them.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    /// Only honoured by [`grad_check_objective`]; closures are always f64.
    pub reference: Reference,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            stencil: Stencil::Central,
            max_entries_per_param: None,
            seed: 0,
            reference: Reference::F64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamError {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub params: Vec<ParamError>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// A scalar loss that can be evaluated at any [`Scalar`] precision.
pub trait Objective {
    /// `params` holds one leaf per parameter, in order; returns a single-element loss.
    fn eval<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

fn run<T: Scalar>(f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>, values: &[Tensor<T>]) -> Result<T> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

fn deterministic<T: PartialEq + std::fmt::Debug>(first: T, second: T) -> Result<()> {
    if first == second {
        Ok(())
    } else {
        Err(TensorError::Contract(format!(
            "function is not deterministic: {first:?} vs {second:?}"
        )))
    }
}

/// Gradient of the f64 loss `f` on the tape, compared against f64 finite
/// differences for every named parameter.
pub fn grad_check<F>(f: F, params: &[(String, Tensor<f64>)], opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let base: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let analytic = analytic_grads(&f, &base)?;
    compare(params, &analytic, opts, |p, i, delta| {
        let mut values = base.clone();
        values[p].data_mut()[i] += delta;
        Ok(Dd::from_f64(run(&f, &values)?))
    })
}

/// Like [`grad_check`], with the finite differences evaluated at
/// `opts.reference` precision. Analytic gradients always come from f64.
pub fn grad_check_objective<O: Objective>(
    obj: &O,
    params: &[(String, Tensor<f64>)],
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let base: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let analytic = analytic_grads(&|t: &mut Tape<f64>, v: &[Var]| obj.eval(t, v), &base)?;
    match opts.reference {
        Reference::F64 => compare(params, &analytic, opts, |p, i, delta| {
            let mut values = base.clone();
            values[p].data_mut()[i] += delta;
            Ok(Dd::from_f64(run(|t: &mut Tape<f64>, v: &[Var]| obj.eval(t, v), &values)?))
        }),
        Reference::DoubleDouble => {
            let base_dd: Vec<Tensor<Dd>> = base.iter().map(Tensor::cast).collect();
            let f = |t: &mut Tape<Dd>, v: &[Var]| obj.eval(t, v);
            deterministic(run(f, &base_dd)?, run(f, &base_dd)?)?;
            compare(params, &analytic, opts, |p, i, delta| {
                let mut values = base_dd.clone();
                let entry = &mut values[p].data_mut()[i];
                *entry = *entry + Dd::from_f64(delta);
                run(f, &values)
            })
        }
    }
}

fn analytic_grads(f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, base: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = base.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let first = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    deterministic(first.to_bits(), run(f, base)?.to_bits())?;
    Ok(vars.iter().map(|v| grads.wrt(*v)).collect())
}

fn compare(
    params: &[(String, Tensor<f64>)],
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    at: impl Fn(usize, usize, f64) -> Result<Dd>,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::with_capacity(params.len());
    for (p, (name, tensor)) in params.iter().enumerate() {
        let n = tensor.numel();
        let indices: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < n => {
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let mut worst = ParamError {
            name: name.clone(),
            checked: indices.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for i in indices {
            let h = opts.eps;
            let numeric = match opts.stencil {
                Stencil::Central => (at(p, i, h)? - at(p, i, -h)?) / Dd::from_f64(2.0 * h),
                Stencil::FivePoint => {
                    let (a, b, c, d) = (at(p, i, 2.0 * h)?, at(p, i, h)?, at(p, i, -h)?, at(p, i, -2.0 * h)?);
                    let eight = Dd::from_f64(8.0);
                    (eight * (b - c) - (a - d)) / Dd::from_f64(12.0 * h)
                }
            };
            let numeric = numeric.to_f64().unwrap_or(f64::NAN);
            let a = analytic[p].data()[i];
            let err = rel_err(a, numeric);
            worst.max_abs_err = worst.max_abs_err.max((a - numeric).abs());
            if err > worst.max_rel_err || err.is_nan() {
                worst.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                worst.worst_index = i;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric;
            }
        }
        report.push(worst);
    }
    Ok(GradReport { params: report })
}
