//! Central finite-difference verification of reverse-mode gradients.

use std::fmt;

use super::{Graph, NodeId, ParameterStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    /// Largest relative error over the parameter's entries, see [`check_gradients`].
    pub max_rel_error: f64,
    /// Flat index where the largest error occurred.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{}",
                p.name,
                p.entries,
                p.max_rel_error,
                if p.passed { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8)
}

/// Compare the reverse-mode gradient of the scalar built by `build` against central
/// differences, perturbing every entry of every parameter in `store`.
///
/// `build` must be deterministic: it is called once per perturbation.
///
/// Per entry the error is `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`, except that
/// the part of `|g_ad - g_fd|` below the round-off of the central difference,
/// `4 eps (|f+| + |f-|) / 2h`, is not counted. Without that allowance an entry whose
/// true gradient is exactly zero fails whenever the loss is large.
pub fn check_gradients<F>(
    store: &ParameterStore,
    build: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let analytic = g.backward(loss)?;

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let n = store.get(&name)?.numel();
        let ad = analytic.param(&name).map(|t| t.data().to_vec());
        let mut worst = (0.0, 0);
        for k in 0..n {
            let orig = store.get(&name)?.data()[k];
            work.get_mut(&name)?.data_mut()[k] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[k] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * opts.step);
            let adk = ad.as_ref().map_or(0.0, |v| v[k]);
            let roundoff = 4.0 * f64::EPSILON * (plus.abs() + minus.abs()) / (2.0 * opts.step);
            let err = ((adk - fd).abs() - roundoff).max(0.0) / (adk.abs() + fd.abs()).max(1e-8);
            if err > worst.0 {
                worst = (err, k);
            }
        }
        params.push(ParamCheck {
            name,
            entries: n,
            max_rel_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}
