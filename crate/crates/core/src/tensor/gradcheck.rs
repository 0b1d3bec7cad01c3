use super::{Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Checks the gradient of a scalar function at `x` coordinate by coordinate.
///
/// The numeric estimate is `(f(x + h·e) − f(x − h·e)) / 2h`, and the error per
/// coordinate is `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&Var<T>) -> Result<Var<T>>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let leaf = Var::parameter(x.clone());
    let root = f(&leaf)?;
    root.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: Tensor<T>| -> Result<f64> {
        let out = f(&Var::constant(probe))?;
        if out.value().numel() != 1 {
            return Err(Error::shape("grad_check needs a scalar-valued function"));
        }
        Ok(out.item().as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: x.numel(),
        pass: true,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + T::lit(h);
        let up = eval(probe.clone())?;
        probe.data_mut()[i] = orig - T::lit(h);
        let down = eval(probe.clone())?;
        probe.data_mut()[i] = orig;

        let n = (up - down) / (2.0 * h);
        let a = analytic.data()[i].as_f64();
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        if rel > report.max_rel_err || !rel.is_finite() {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    report.pass = report.max_rel_err.is_finite() && report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(&[12], -2.0, 2.0, &mut rng);
        let r = grad_check(|v| Ok(v.square().sum()), &x, 1e-5, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_rel_err < 1e-6);
    }

    #[test]
    fn conv_sum_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let k = Var::constant(Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng));
        let r = grad_check(|v| Ok(v.conv2d(&k, 1, 1)?.sum()), &x, 1e-5, 1e-4).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn constant_function_passes() {
        let x = Tensor::<f64>::ones(&[4]);
        let r = grad_check(
            |v| Ok(v.scale(0.0).sum().add_scalar(3.0)),
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // abs has a kink at 0: analytic says 0, central difference says 0 too,
        // but a shifted kink inside the step is caught.
        let x = Tensor::<f64>::new(&[1], vec![2e-6]).unwrap();
        let r = grad_check(|v| Ok(v.abs().sum()), &x, 1e-5, 1e-4).unwrap();
        assert!(!r.pass);
    }
}
