use crate::qfunction::ConstantQ;

/// Step-dependent constant control variate: scale * r_floor summed with
/// discounting over the remaining steps. At gamma = 1 the geometric sum
/// degenerates to (H - t + 1) * scale * r_floor.
pub fn constant_baseline_q(
    r_floor: f64,
    scale: f64,
    gamma: f64,
    horizon: usize,
    n_actions: usize,
) -> ConstantQ {
    let per_step = (1..=horizon)
        .map(|t| {
            let remaining = (horizon + 1 - t) as f64;
            if gamma == 1.0 {
                remaining * scale * r_floor
            } else {
                scale * r_floor * (1.0 - gamma.powf(remaining)) / (1.0 - gamma)
            }
        })
        .collect();
    ConstantQ::new(per_step, n_actions)
}
