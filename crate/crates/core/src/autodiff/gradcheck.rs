//! Central finite-difference verification of analytic gradients.

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, LeafKind, Var};
use super::params::{BoundParams, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which scalar entries of each parameter tensor get a two-sided probe.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    /// Every entry of every tensor.
    All,
    /// Up to `per_tensor` entries per tensor (all of them if the tensor is
    /// smaller), plus one random-direction probe per tensor that exercises
    /// every entry at once.
    Sampled { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so that entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    pub coverage: Coverage,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { step: 1e-5, tol: 1e-4, floor: 1e-6, coverage: Coverage::All }
    }
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    /// Flat index into the tensor, or `None` for a random-direction probe.
    pub index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn offenders(&self, tol: f64) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !(e.rel_err <= tol))
            .map(|e| match e.index {
                Some(i) => format!("{}[{i}] (rel {:.3e})", e.name, e.rel_err),
                None => format!("{}[dir] (rel {:.3e})", e.name, e.rel_err),
            })
            .collect()
    }

    pub fn ensure(self, tol: f64) -> Result<Self> {
        let offenders = self.offenders(tol);
        if offenders.is_empty() {
            Ok(self)
        } else {
            Err(Error::ToleranceExceeded { offenders })
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(f: &F, params: &ParamStore<f64>, detached: &[ArrayD<f64>]) -> Result<f64>
where
    F: Fn(&Graph<f64>, &BoundParams) -> Result<Var>,
{
    let g = Graph::with_pinned_detached(true, detached.to_vec());
    let bound = params.bind(&g, LeafKind::Constant);
    let loss = f(&g, &bound)?;
    if let Some(err) = g.fault() {
        return Err(err);
    }
    Ok(g.scalar(loss))
}

fn perturbed(params: &ParamStore<f64>, name: &str, delta: &[f64], sign: f64) -> ParamStore<f64> {
    let mut p = params.clone();
    let t = p.get(name).unwrap();
    let shape = t.shape().to_vec();
    let data = t.as_slice().iter().zip(delta).map(|(v, d)| v + sign * d).collect();
    p.insert(name, Tensor::from_vec(&shape, data).unwrap());
    p
}

fn perturbed_entry(params: &ParamStore<f64>, name: &str, index: usize, h: f64) -> ParamStore<f64> {
    let mut p = params.clone();
    let t = p.get(name).unwrap();
    let shape = t.shape().to_vec();
    let mut data = t.to_vec();
    data[index] += h;
    p.insert(name, Tensor::from_vec(&shape, data).unwrap());
    p
}

/// Compares analytic gradients of `f` against `(f(p+h) - f(p-h)) / 2h`.
///
/// `f` must build a scalar loss from the bound parameters and be
/// deterministic in them. Every value `f` detaches is held at its
/// unperturbed value in the probes, so stop-gradient paths are treated as
/// constants on both sides of the comparison.
pub fn finite_difference_report<F>(f: F, params: &ParamStore<f64>, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&Graph<f64>, &BoundParams) -> Result<Var>,
{
    let g = Graph::with_finite_checks(true);
    let bound = params.bind(&g, LeafKind::Trainable);
    let loss = f(&g, &bound)?;
    let grads = g.backward(loss)?;
    let analytic = params.collect_grads(&g, &bound, &grads);
    let detached = g.detached_values();
    let h = opts.step;

    let mut report = FdReport::default();
    let mut rng = match opts.coverage {
        Coverage::All => None,
        Coverage::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).unwrap().as_slice();
        let indices: Vec<usize> = match (&opts.coverage, rng.as_mut()) {
            (Coverage::Sampled { per_tensor, .. }, Some(rng)) if tensor.len() > *per_tensor => {
                let mut idx = sample(rng, tensor.len(), *per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..tensor.len()).collect(),
        };
        for i in indices {
            let up = eval(&f, &perturbed_entry(params, name, i, h), &detached)?;
            let down = eval(&f, &perturbed_entry(params, name, i, -h), &detached)?;
            let numeric = (up - down) / (2.0 * h);
            report.entries.push(FdEntry {
                name: name.to_string(),
                index: Some(i),
                analytic: grad[i],
                numeric,
                rel_err: relative_error(grad[i], numeric, opts.floor),
            });
        }
        if let Some(rng) = rng.as_mut() {
            let mut dir: Vec<f64> = (0..tensor.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| *d *= h / norm);
            let up = eval(&f, &perturbed(params, name, &dir, 1.0), &detached)?;
            let down = eval(&f, &perturbed(params, name, &dir, -1.0), &detached)?;
            let numeric = (up - down) / (2.0 * h);
            let analytic_dir = grad.iter().zip(&dir).map(|(g, d)| g * d / h).sum::<f64>();
            report.entries.push(FdEntry {
                name: name.to_string(),
                index: None,
                analytic: analytic_dir,
                numeric,
                rel_err: relative_error(analytic_dir, numeric, opts.floor),
            });
        }
    }
    Ok(report)
}

/// Like [`finite_difference_report`], failing with `ToleranceExceeded`
/// when any probe is over `opts.tol`.
pub fn finite_difference_check<F>(f: F, params: &ParamStore<f64>, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&Graph<f64>, &BoundParams) -> Result<Var>,
{
    finite_difference_report(f, params, opts)?.ensure(opts.tol)
}
