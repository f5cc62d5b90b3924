//! Central finite differences against recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::par;

/// Coordinates checked per parameter at most.
pub const MAX_COORDS: usize = 50;

/// Below this magnitude errors are measured absolutely rather than
/// relative to the gradient.
pub const ABS_FLOOR: f64 = 1e-6;

/// Rounding error of one loss evaluation, in units of `EPSILON * |loss|`.
pub const ROUNDOFF_ULPS: f64 = 4.0;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate, recorded gradient and finite difference at the worst point.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tolerance: f64,
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

/// `|a - b| / max(|a|, |b|, ABS_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_floor(a, b, ABS_FLOOR)
}

pub fn relative_error_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Floor for a check of `loss` at step `h`: a central difference cannot
/// resolve anything below `ROUNDOFF_ULPS * EPSILON * |loss| / h`, and an
/// error of that size is scored exactly `tolerance`.
pub fn error_floor(loss: f64, h: f64, tolerance: f64) -> f64 {
    let resolution = ROUNDOFF_ULPS * f64::EPSILON * loss.abs() / h;
    if tolerance > 0.0 {
        ABS_FLOOR.max(resolution / tolerance)
    } else {
        ABS_FLOOR
    }
}

/// Compares the gradients stored in `params` with central differences
/// `(f(θ+h) - f(θ-h)) / 2h` on up to [`MAX_COORDS`] random coordinates per
/// parameter. The check passes when the largest relative error is strictly
/// below `tolerance`.
pub fn finite_diff_check<F>(
    loss_fn: F,
    params: &ParamStore,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64> + Sync + Send,
{
    let base = loss_fn(params)?;
    let again = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Determinism {
            first: base,
            second: again,
        });
    }
    let floor = error_floor(base, h, tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (id, p) in params.iter() {
        let n = p.value.len();
        if n <= MAX_COORDS {
            coords.extend((0..n).map(|c| (id.0, c)));
        } else {
            let mut picked = sample(&mut rng, n, MAX_COORDS).into_vec();
            picked.sort_unstable();
            coords.extend(picked.into_iter().map(|c| (id.0, c)));
        }
    }
    let diffs = par::map_collect_min(coords.len(), 2, |i| -> Result<f64> {
        let (pid, c) = coords[i];
        let mut local = params.clone();
        let x = &mut local.get_mut(super::ParamId(pid)).value.data_mut()[c];
        let orig = *x;
        *x = orig + h;
        let plus = loss_fn(&local)?;
        local.get_mut(super::ParamId(pid)).value.data_mut()[c] = orig - h;
        let minus = loss_fn(&local)?;
        Ok((plus - minus) / (2.0 * h))
    });
    let mut reports: Vec<ParamCheck> = params
        .iter()
        .map(|(_, p)| ParamCheck {
            name: p.name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
        })
        .collect();
    for (&(pid, c), fd) in coords.iter().zip(diffs) {
        let fd = fd?;
        let g = params.get(super::ParamId(pid)).grad.data()[c];
        let err = relative_error_floor(g, fd, floor);
        let r = &mut reports[pid];
        r.checked += 1;
        if err > r.max_rel_error || r.worst.is_none() {
            r.max_rel_error = r.max_rel_error.max(err);
            r.worst = Some((c, g, fd));
        }
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        h,
        tolerance,
        loss: base,
        floor,
        max_rel_error,
        passed: max_rel_error < tolerance,
        params: reports,
    })
}
