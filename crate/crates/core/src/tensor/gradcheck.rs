//! Central-difference gradient checking.

use super::{Graph, Module, Param, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Parameter (and flat element index) where the maximum was attained.
    pub offending_param: String,
    pub offending_index: usize,
    pub components_checked: usize,
    pub tolerance: f64,
    /// Loss value at the unperturbed parameters.
    pub loss: f64,
    /// Worst error with the denominator floored at the finite-difference
    /// resolution instead of `1e-8`; see [`resolved_error`].
    pub max_resolved_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    pub fn resolved_passed(&self) -> bool {
        self.max_resolved_error < self.tolerance
    }

    /// Folds another report in, keeping the worst component.
    pub fn merge(&mut self, other: &GradcheckReport) {
        self.components_checked += other.components_checked;
        self.max_resolved_error = self.max_resolved_error.max(other.max_resolved_error);
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.offending_param = other.offending_param.clone();
            self.offending_index = other.offending_index;
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Relative size, against `max(1, |loss|)`, below which a gradient component
/// cannot be resolved by central differences at `h = 1e-6` in f64.
pub const RESOLUTION: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RESOLUTION * max(1, |loss|))`.
///
/// Rounding leaves a few ulps of `|loss|` in each loss evaluation, so a
/// central difference at `h = 1e-6` carries up to about `1e-9 * |loss|` of
/// absolute error. Components smaller than `RESOLUTION * |loss|` are therefore
/// compared on an absolute scale instead of a relative one.
pub fn resolved_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = RESOLUTION * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Plain list of parameters, handy for checking raw ops on leaf inputs.
#[derive(Debug, Clone, Default)]
pub struct ParamList(pub Vec<Param>);

impl Module for ParamList {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.0.iter().for_each(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.0.iter_mut().for_each(f);
    }
}

fn with_element<M: Module + ?Sized>(module: &mut M, name: &str, idx: usize, f: impl FnOnce(&mut f64)) {
    let mut f = Some(f);
    module.visit_mut(&mut |p| {
        if p.name == name {
            if let Some(f) = f.take() {
                f(&mut p.value.data_mut()[idx]);
            }
        }
    });
}

fn eval<M: Module + ?Sized>(module: &M, loss_fn: &dyn Fn(&M, &mut Graph) -> Result<Var>, name: &str) -> Result<f64> {
    let mut g = Graph::new();
    let loss = loss_fn(module, &mut g)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::Contract("gradcheck loss must be scalar".into()));
    }
    if !v[0].is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss while perturbing parameter {name}"
        )));
    }
    Ok(v[0])
}

/// Compares analytic gradients of every trainable parameter against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`.
///
/// Parameters are restored bit-for-bit after each perturbation.
pub fn gradcheck<M: Module + ?Sized>(
    module: &mut M,
    loss_fn: &dyn Fn(&M, &mut Graph) -> Result<Var>,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let mut g = Graph::new();
    let loss = loss_fn(module, &mut g)?;
    let loss_value = g.value(loss).first().copied().unwrap_or(0.0);
    let grads = g.backward(loss)?;

    let mut targets = Vec::new();
    module.visit(&mut |p| {
        if p.value.requires_grad {
            let analytic = grads
                .param(&p.name)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.value.numel()]);
            targets.push((p.name.clone(), analytic));
        }
    });

    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        offending_param: String::new(),
        offending_index: 0,
        components_checked: 0,
        tolerance,
        loss: loss_value,
        max_resolved_error: 0.0,
    };
    for (name, analytic) in &targets {
        for (i, &a) in analytic.iter().enumerate() {
            let mut orig = 0.0;
            with_element(module, name, i, |x| {
                orig = *x;
                *x = orig + step;
            });
            let plus = eval(module, loss_fn, name);
            with_element(module, name, i, |x| *x = orig - step);
            let minus = eval(module, loss_fn, name);
            with_element(module, name, i, |x| *x = orig);
            let numeric = (plus? - minus?) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.components_checked += 1;
            report.max_resolved_error = report.max_resolved_error.max(resolved_error(a, numeric, loss_value));
            if err > report.max_relative_error || report.offending_param.is_empty() {
                report.max_relative_error = err;
                report.offending_param = name.clone();
                report.offending_index = i;
            }
        }
    }
    Ok(report)
}
