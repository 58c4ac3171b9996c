use super::{Graph, NumericError, Tensor, Var};
use crate::seed;
use rand::seq::index::sample;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates to probe; all of them if the parameters are smaller.
    pub coords: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is zero are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            coords: 100,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compare the tape gradient of the scalar built by `f` with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` on a random subset of coordinates.
/// `f` must be deterministic (seed any dropout inside it).
pub fn grad_check<F>(params: &[Tensor<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&mut Graph<f64>) -> Result<Var, NumericError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let root = f(&mut g)?;
        check_finite(g.scalar(root), "loss at θ")?;
        g.backward(root)
    };

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.len();
            Some(o)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::len).sum();
    let picks: Vec<usize> = if total <= cfg.coords {
        (0..total).collect()
    } else {
        let mut rng = seed::rng(cfg.seed, &[seed::stream::VALIDATION]);
        let mut v = sample(&mut rng, total, cfg.coords).into_vec();
        v.sort_unstable();
        v
    };

    let eval = |p: &[Tensor<f64>]| -> Result<f64, NumericError> {
        let mut g = Graph::new(p);
        let root = f(&mut g)?;
        Ok(g.scalar(root))
    };
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for flat in picks {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let off = flat - offsets[pi];
        let name = format!("parameter {pi}[{off}]");
        let orig = work[pi].data()[off];
        work[pi].data_mut()[off] = orig + cfg.eps;
        let up = eval(&work)?;
        work[pi].data_mut()[off] = orig - cfg.eps;
        let down = eval(&work)?;
        work[pi].data_mut()[off] = orig;
        check_finite(up, &name)?;
        check_finite(down, &name)?;
        let numeric = (up - down) / (2.0 * cfg.eps);
        let a = analytic[pi].as_ref().map_or(0.0, |t| t.data()[off]);
        check_finite(a, &name)?;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((pi, off));
            }
        }
        report.checked += 1;
    }
    Ok(report)
}

fn check_finite(x: f64, what: &str) -> Result<(), NumericError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(NumericError::NonFinite(what.to_string()))
    }
}
