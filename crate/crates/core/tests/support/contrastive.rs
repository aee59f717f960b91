//! Hand-checkable InfoNCE cases.

use megan_core::engine::Matrix;
use megan_core::training::contrastive_loss;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Anchor and positive coincide, two orthogonal negatives, temperature 1.
pub fn orthogonal_negatives() -> f64 {
    let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    contrastive_loss(&a, &a, 1.0).unwrap()
}

pub const ORTHOGONAL_NEGATIVES: f64 = 0.5514;

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Matrix {
    let mut m = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0f64..1.0));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

/// Rotates the first positive from opposite the anchor onto it, the other
/// rows fixed, and checks the loss falls at every step.
pub fn decreasing_in_positive_cosine(seed: u64, batch: usize, tau: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let anchors = unit_rows(&mut rng, batch, d);
    let mut positives = unit_rows(&mut rng, batch, d);
    let a0 = anchors.row(0).to_owned();
    // unit direction orthogonal to the first anchor
    let mut u = unit_rows(&mut rng, 1, d).row(0).to_owned();
    let along = u.dot(&a0);
    u.scaled_add(-along, &a0);
    let n = u.dot(&u).sqrt();
    if n < 1e-6 {
        return Ok(());
    }
    u /= n;
    let mut last = f64::INFINITY;
    let steps = 24;
    for s in 0..=steps {
        let theta = std::f64::consts::PI * (1.0 - s as f64 / steps as f64);
        let row = &a0 * theta.cos() + &u * theta.sin();
        positives.row_mut(0).assign(&row);
        let l = contrastive_loss(&anchors, &positives, tau).map_err(|e| e.to_string())?;
        if !(l < last) {
            return Err(format!("loss {l} did not fall below {last} at cosine {:.3}", theta.cos()));
        }
        last = l;
    }
    Ok(())
}
