use super::{FeatureVector, MlpModel};

/// Magnitude below which gradient differences are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between backpropagated gradients and central
/// finite differences of the squared error, over every weight and bias.
///
/// The relative error of a parameter is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(model: &MlpModel, x: &FeatureVector, label: f64, epsilon: f64) -> f64 {
    let analytic = model.gradient(x, label).flatten();
    let xn = model.norm_stats().apply(x);
    let loss = |m: &MlpModel| (m.forward_normalized(&xn) - label).powi(2);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = orig + epsilon;
        let up = loss(&probe);
        *probe.parameter_mut(i) = orig - epsilon;
        let down = loss(&probe);
        *probe.parameter_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
