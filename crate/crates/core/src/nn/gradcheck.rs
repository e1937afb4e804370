use rand::seq::index::sample;

use super::{Graph, ParamTree, Var};
use crate::error::{Error, Result};
use crate::util::seeded;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor, in tree order.
    pub per_tensor: Vec<(String, f64)>,
    pub coordinates: usize,
}

/// Compares the tape gradient of `f` against central differences.
///
/// Up to `per_tensor` coordinates of every parameter are sampled with `seed`.
/// `f` must be deterministic; relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<F>(params: &ParamTree, f: F, eps: f64, per_tensor: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    let grads = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |p: &ParamTree| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };
    let mut rng = seeded(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, per_tensor: Vec::new(), coordinates: 0 };
    for i in 0..params.len() {
        let (name, t) = params.by_index(i);
        let n = t.numel();
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut rng, n, per_tensor).into_vec() };
        let mut worst = 0.0f64;
        for j in coords {
            let orig = t.data()[j];
            work.by_index_mut(i).1.data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work.by_index_mut(i).1.data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work.by_index_mut(i).1.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.param(i).map_or(0.0, |g| g[j]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            report.coordinates += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((name.to_owned(), worst));
    }
    Ok(report)
}
