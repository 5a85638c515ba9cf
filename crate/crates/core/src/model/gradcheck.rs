//! Central finite-difference validation of the analytic gradients.

use super::forward::{value_and_grad, Gradients, ScalarFn};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Denominator floor of the relative discrepancy `|a − n| / max(|a|, |n|, floor)`.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_per_group: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: 1e-4,
            max_per_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDiscrepancy {
    pub name: String,
    pub max_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupDiscrepancy>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GroupDiscrepancy> {
        self.groups.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }

    pub fn max_rel(&self) -> f64 {
        self.worst().map_or(0.0, |g| g.max_rel)
    }

    pub fn group(&self, name: &str) -> Option<&GroupDiscrepancy> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub fn relative_discrepancy(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn sample_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => (0..c).map(|k| k * len / c).collect(),
        _ => (0..len).collect(),
    }
}

fn eval(params: &Parameters, tokens: &[u32], scalar: ScalarFn<'_>, offset: Option<&Matrix>) -> Result<f64> {
    Ok(value_and_grad(params, tokens, scalar, offset, false)?.value)
}

/// Compares the model's own analytic gradients with finite differences.
pub fn gradient_check(
    params: &Parameters,
    tokens: &[u32],
    scalar: ScalarFn<'_>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = value_and_grad(params, tokens, scalar, None, true)?;
    gradient_check_against(params, tokens, scalar, &analytic, opts)
}

/// Compares a supplied analytic gradient with finite differences, so that
/// corrupted gradients can be fed in to exercise the failure path.
pub fn gradient_check_against(
    params: &Parameters,
    tokens: &[u32],
    scalar: ScalarFn<'_>,
    analytic: &Gradients,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let h = opts.step;
    let analytic_params = analytic
        .params
        .as_ref()
        .ok_or_else(|| Error::input("gradient check needs parameter gradients"))?;
    let mut groups = Vec::new();
    let mut probe = params.clone();
    let names: Vec<(String, usize)> = params.named().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let analytic_named = analytic_params.named();
    for (gi, (name, len)) in names.iter().enumerate() {
        let mut worst = GroupDiscrepancy {
            name: name.clone(),
            max_rel: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        for idx in sample_indices(*len, opts.max_per_group) {
            let orig = params.named()[gi].1[idx];
            probe.named_mut()[gi].1[idx] = orig + h;
            let fp = eval(&probe, tokens, scalar, None)?;
            probe.named_mut()[gi].1[idx] = orig - h;
            let fm = eval(&probe, tokens, scalar, None)?;
            probe.named_mut()[gi].1[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic_named[gi].1[idx];
            let rel = relative_discrepancy(a, numeric);
            worst.checked += 1;
            if rel > worst.max_rel || worst.checked == 1 {
                worst.max_rel = rel;
                worst.worst_index = idx;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        groups.push(worst);
    }

    // Input (embedded sequence) gradient.
    let d = params.config.d_model;
    let mut offset = Matrix::zeros(tokens.len(), d);
    let mut worst = GroupDiscrepancy {
        name: "input".into(),
        max_rel: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for idx in sample_indices(tokens.len() * d, opts.max_per_group) {
        offset.as_mut_slice()[idx] = h;
        let fp = eval(params, tokens, scalar, Some(&offset))?;
        offset.as_mut_slice()[idx] = -h;
        let fm = eval(params, tokens, scalar, Some(&offset))?;
        offset.as_mut_slice()[idx] = 0.0;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.input.as_slice()[idx];
        let rel = relative_discrepancy(a, numeric);
        worst.checked += 1;
        if rel > worst.max_rel || worst.checked == 1 {
            worst.max_rel = rel;
            worst.worst_index = idx;
            worst.analytic = a;
            worst.numeric = numeric;
        }
    }
    groups.push(worst);

    let report = GradCheckReport { groups };
    if let Some(w) = report.worst() {
        if w.max_rel > opts.tolerance {
            return Err(Error::GradientCheck(format!(
                "group {} index {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e} > {:.1e})",
                w.name, w.worst_index, w.analytic, w.numeric, w.max_rel, opts.tolerance
            )));
        }
    }
    Ok(report)
}
