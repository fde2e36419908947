use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose `±h` probes straddle a non-differentiable point.
    pub skipped: usize,
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences with step `h`, entry by entry over all `inputs`.
///
/// Entries where the `+h` and `-h` evaluations take different branches at a
/// kink (leaky-relu or abs sign, pooling argmax, log clamp) are skipped.
///
/// ```
/// use sta::tensor::{grad_check, Tensor};
/// let x = Tensor::vector(vec![2.0]);
/// let report = grad_check(|g, v| { let s = g.square(v[0])?; g.sum(s) }, &[x], 1e-6).unwrap();
/// assert!(report.max_rel_error < 1e-6);
/// ```
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::Contract(format!(
            "finite-difference step {h} outside [1e-8, 1e-4]"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<(f64, Vec<u64>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.kink_signature().to_vec()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let base_kinks = g.kink_signature().to_vec();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let (fp, kp) = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let (fm, km) = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            if kp != base_kinks || km != base_kinks {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = (analytic.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_two() {
        let r = grad_check(
            |g, v| {
                let s = g.square(v[0])?;
                g.sum(s)
            },
            &[Tensor::vector(vec![2.0])],
            1e-6,
        )
        .unwrap();
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn leaky_relu_kink_is_skipped() {
        let r = grad_check(
            |g, v| {
                let y = g.leaky_relu(v[0])?;
                g.sum(y)
            },
            &[Tensor::vector(vec![0.0, 1.0, -1.0])],
            1e-6,
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let r = grad_check(|g, v| g.sum(v[0]), &[Tensor::vector(vec![1.0])], 1e-2);
        assert!(r.is_err());
    }
}
