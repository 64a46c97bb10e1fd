//! Central finite-difference check of the analytic gradient.

use super::model::Model;
use super::NeuralError;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const MIN_CHECKED_COORDINATES: usize = 200;
/// Central differences at h = 1e-5 carry about 1e-11 of rounding noise, so
/// gradients below this size are judged on absolute error.
const DENOMINATOR_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over sampled coordinates of |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-6)
    pub max_relative_deviation: f64,
    pub coordinates: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Checks [`Model::backward`] for one example.
pub fn gradient_check(
    model: &Model,
    tokens: &[usize],
    gold: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, NeuralError> {
    gradient_check_with(model, tokens, gold, h, seed, |m, t, g| {
        let trace = m.trace(t, None)?;
        let mut grad = vec![0.0; m.params.values.len()];
        m.backward(&trace, g, &mut grad);
        Ok(grad)
    })
}

/// Same as [`gradient_check`] with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    model: &Model,
    tokens: &[usize],
    gold: usize,
    h: f64,
    seed: u64,
    analytic: F,
) -> Result<GradCheckReport, NeuralError>
where
    F: Fn(&Model, &[usize], usize) -> Result<Vec<f64>, NeuralError>,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(NeuralError::InvalidConfig(format!("finite-difference step {h} not in (0, 1e-3]")));
    }
    let grad = analytic(model, tokens, gold)?;
    let coordinates = sample_coordinates(model, tokens, seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_relative_deviation: 0.0, coordinates: coordinates.len(), worst: None };
    for (tensor, index) in coordinates {
        let original = probe.params.values[index];
        probe.params.values[index] = original + h;
        let plus = probe.loss(tokens, gold)?;
        probe.params.values[index] = original - h;
        let minus = probe.loss(tokens, gold)?;
        probe.params.values[index] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let deviation = (grad[index] - numeric).abs() / grad[index].abs().max(numeric.abs()).max(DENOMINATOR_GUARD);
        if deviation > report.max_relative_deviation || report.worst.is_none() {
            report.max_relative_deviation = report.max_relative_deviation.max(deviation);
            report.worst = Some((model.params.layout.tensors[tensor].name.clone(), index));
        }
    }
    Ok(report)
}

/// At least `MIN_CHECKED_COORDINATES` coordinates, spread evenly over every
/// tensor. Embedding coordinates are drawn from rows the example touches.
fn sample_coordinates(model: &Model, tokens: &[usize], seed: u64) -> Vec<(usize, usize)> {
    let layout = &model.params.layout;
    let per_tensor = MIN_CHECKED_COORDINATES.div_ceil(layout.tensors.len()) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    let mut leftovers = Vec::new();
    for (t, spec) in layout.tensors.iter().enumerate() {
        let candidates: Vec<usize> = if t == layout.embedding {
            let mut rows: Vec<usize> = tokens.to_vec();
            rows.sort_unstable();
            rows.dedup();
            rows.iter().flat_map(|&r| (0..spec.cols).map(move |c| spec.offset + r * spec.cols + c)).collect()
        } else {
            spec.range().collect()
        };
        let mut candidates = candidates;
        candidates.shuffle(&mut rng);
        let take = per_tensor.min(candidates.len());
        picked.extend(candidates.drain(..take).map(|i| (t, i)));
        leftovers.extend(candidates.into_iter().map(|i| (t, i)));
    }
    // Small tensors cannot supply their share; top up from the rest.
    let missing = MIN_CHECKED_COORDINATES.saturating_sub(picked.len());
    leftovers.shuffle(&mut rng);
    picked.extend(leftovers.into_iter().take(missing));
    picked
}
