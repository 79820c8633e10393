use super::param::ParamSet;
use crate::error::Result;
use crate::scalar::Scalar;

/// Worst relative error between analytic and central-difference gradients,
/// per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradients currently stored in `params` against central
/// differences of `loss` with step `h`.
///
/// Every entry of every parameter is probed; values are restored afterwards.
pub fn grad_check<T, F>(params: &mut ParamSet<T>, h: f64, mut loss: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> Result<T>,
{
    let mut per_param = Vec::with_capacity(params.len());
    let ids: Vec<_> = (0..params.len()).map(super::ParamId).collect();
    for id in ids {
        let mut worst = 0.0f64;
        for i in 0..params.get(id).value.len() {
            let original = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = original + T::lit(h);
            let up = loss(params)?.as_f64();
            params.get_mut(id).value.data_mut()[i] = original - T::lit(h);
            let down = loss(params)?.as_f64();
            params.get_mut(id).value.data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let analytic = params.get(id).grad.data()[i].as_f64();
            worst = worst.max(relative_error(analytic, numeric));
        }
        per_param.push((params.get(id).name.clone(), worst));
    }
    Ok(GradCheckReport { per_param })
}
