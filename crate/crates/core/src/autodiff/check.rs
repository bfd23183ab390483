use alloc::vec::Vec;

use super::{AdError, Array, Tape, Var};

/// Gradient of a scalar function of several array inputs.
///
/// `f` receives a fresh tape and the leaf handles of `at`, in order, and
/// returns the handle of its scalar output.
pub fn grad<F>(f: F, at: &[Array]) -> Result<Vec<Array>, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = at.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;
    Ok(leaves
        .iter()
        .zip(at)
        .map(|(&v, a)| grads.get_or_zeros(v, a))
        .collect())
}

fn eval<F>(f: &F, at: &[Array]) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = at.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    tape.scalar(out).ok_or(AdError::NonScalar {
        shape: tape.value(out).shape(),
    })
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// entry of every input.
pub fn finite_diff_check<F>(f: F, at: &[Array], step: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(AdError::InvalidArgument {
            op: "finite_diff_check",
            reason: "step must be positive",
        });
    }
    let analytic = grad(&f, at)?;
    let mut point: Vec<Array> = at.to_vec();
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = point[p].data()[i];
            point[p].data_mut()[i] = orig + step;
            let up = eval(&f, &point)?;
            point[p].data_mut()[i] = orig - step;
            let down = eval(&f, &point)?;
            point[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = g.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
