//! Central finite-difference checks of analytic gradients.

use std::sync::Arc;

use megan_core::engine::{Matrix, Tape, Var};
use megan_core::graph::{Graph, TaskKind};
use megan_core::model::{MaskOverride, Megan, ModelConfig};
use megan_core::synthetic;
use megan_core::training::{self, PositiveView};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    // relative error with a small absolute floor for vanishing gradients
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + 1e-7
}

/// Matrix with entries whose magnitude lies in `[lo, hi]` and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(lo..hi);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.2..3.0))
}

/// Scalar `Σ f(inputs) ⊙ W` for a fixed pseudo-random `W`.
pub fn weighted(tape: &mut Tape, out: Var) -> Var {
    let (r, c) = tape.shape(out);
    let w = Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin() + 0.5);
    let w = tape.constant(w).unwrap();
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

pub fn check<F>(inputs: &[Matrix], build: F) -> Result<(), String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.constant(m.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars);
        let loss = weighted(&mut tape, out);
        tape.scalar_value(loss)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted(&mut tape, out);
    let grads = tape.backward(loss).unwrap();
    for (n, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *var);
        for idx in 0..inputs[n].len() {
            let (i, j) = (idx / inputs[n].ncols(), idx % inputs[n].ncols());
            let mut plus = inputs.to_vec();
            plus[n][[i, j]] += STEP;
            let mut minus = inputs.to_vec();
            minus[n][[i, j]] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic[[i, j]];
            if !close(a, numeric, 1e-4) {
                return Err(format!("input {n} entry ({i},{j}): analytic {a} numeric {numeric}"));
            }
        }
    }
    Ok(())
}

pub fn ids(rng: &mut ChaCha8Rng, len: usize, segments: usize) -> Arc<[usize]> {
    (0..len).map(|_| rng.random_range(0..segments)).collect::<Vec<_>>().into()
}

pub fn matmul_and_transpose(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 3, 4, 0.1, 1.5);
    let b = away_from_zero(&mut rng, 4, 2, 0.1, 1.5);
    check(&[a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap())?;
    check(&[a], |t, v| t.transpose(v[0]).unwrap())?;
    Ok(())
}

pub fn elementwise_binary_with_broadcast(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 4, 3, 0.1, 1.5);
    let b = away_from_zero(&mut rng, 4, 3, 0.1, 1.5);
    let col = away_from_zero(&mut rng, 4, 1, 0.1, 1.5);
    let row = away_from_zero(&mut rng, 1, 3, 0.1, 1.5);
    check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap())?;
    check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap())?;
    check(&[a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap())?;
    check(&[a.clone(), col.clone()], |t, v| t.mul(v[0], v[1]).unwrap())?;
    check(&[a.clone(), row.clone()], |t, v| t.add(v[0], v[1]).unwrap())?;
    check(&[a.clone(), row], |t, v| t.mul(v[0], v[1]).unwrap())?;
    check(&[a.clone(), col], |t, v| t.add(v[0], v[1]).unwrap())?;
    check(&[a.clone()], |t, v| t.scale(v[0], -1.7).unwrap())?;
    check(&[a], |t, v| t.add_scalar(v[0], 0.3).unwrap())?;
    Ok(())
}

pub fn elementwise_unary(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 3, 3, 0.05, 2.0);
    check(&[a.clone()], |t, v| t.leaky_relu(v[0], 0.2).unwrap())?;
    check(&[a.clone()], |t, v| t.sigmoid(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.tanh(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.exp(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.softplus(v[0]).unwrap())?;
    check(&[a], |t, v| t.abs(v[0]).unwrap())?;
    check(&[positive(&mut rng, 3, 3)], |t, v| t.log(v[0]).unwrap())?;
    Ok(())
}

pub fn reductions(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 4, 3, 0.1, 2.0);
    check(&[a.clone()], |t, v| t.sum(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.mean(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.sum_rows(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.sum_cols(v[0]).unwrap())?;
    check(&[a.clone()], |t, v| t.logsumexp_rows(v[0]).unwrap())?;
    check(&[a], |t, v| t.l2_normalize(v[0]).unwrap())?;
    Ok(())
}

pub fn structural(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 4, 3, 0.1, 2.0);
    let b = away_from_zero(&mut rng, 2, 3, 0.1, 2.0);
    let c = away_from_zero(&mut rng, 4, 2, 0.1, 2.0);
    check(&[a.clone(), b], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap())?;
    check(&[a.clone(), c], |t, v| t.concat_cols(&[v[0], v[1]]).unwrap())?;
    check(&[a.clone()], |t, v| t.slice_cols(v[0], 1, 3).unwrap())?;
    let gather = ids(&mut rng, 6, 4);
    check(&[a], |t, v| t.gather_rows(v[0], gather.clone()).unwrap())?;
    Ok(())
}

pub fn segment_ops(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = away_from_zero(&mut rng, 7, 2, 0.1, 2.0);
    let scores = away_from_zero(&mut rng, 7, 1, 0.1, 2.0);
    let seg = ids(&mut rng, 7, 3);
    check(&[a], |t, v| t.segment_sum(v[0], seg.clone(), 3).unwrap())?;
    check(&[scores], |t, v| t.segment_softmax(v[0], seg.clone(), 3).unwrap())?;
    Ok(())
}

/// Every differentiable operation, grouped.
pub const OPERATION_GROUPS: &[(&str, fn(u64) -> Result<(), String>)] = &[
    ("matmul_and_transpose", matmul_and_transpose),
    ("elementwise_binary_with_broadcast", elementwise_binary_with_broadcast),
    ("elementwise_unary", elementwise_unary),
    ("reductions", reductions),
    ("structural", structural),
    ("segment_ops", segment_ops),
];

/// Every entry, biases included, is randomized: zero biases put an empty
/// positive view exactly on the singular point of the L2 normalization.
pub fn small_model(seed: u64) -> Megan {
    let mut model = Megan::new(ModelConfig {
        hidden_dim: 6,
        projection_dim: 12,
        head_hidden: vec![5],
        layers: 2,
        seed,
        ..ModelConfig::for_task(TaskKind::Regression, 3, 1, 1)
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        model.params_mut().value_mut(id).mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
    }
    model
}

/// Prediction, explanation, sparsity and contrastive terms for a batch of
/// graphs recorded on one tape. Noise is off so repeated evaluations see
/// identical augmented views.
pub fn model_loss(model: &Megan, graphs: &[Graph], targets: &[f64], view: PositiveView) -> (Tape, Var) {
    let config = training::TrainConfig {
        noise_std: 0.0,
        tau: 0.5,
        positive_view: view,
        ..training::TrainConfig::default()
    };
    let mut tape = Tape::new();
    let mut locals = Vec::new();
    let mut anchors = vec![Vec::new(); model.channels()];
    let mut positives = vec![Vec::new(); model.channels()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (g, &y) in graphs.iter().zip(targets) {
        let vars = model.forward_on_tape(&mut tape, g, &MaskOverride::none()).unwrap();
        let target = [y];
        let pred = training::prediction_loss(&mut tape, vars.prediction, &target, TaskKind::Regression).unwrap();
        let b = training::channel_targets(&target, TaskKind::Regression, model.channels(), 0.0, config.delta);
        let expl = training::explanation_loss(&mut tape, vars.node_mask, &b, config.shift).unwrap();
        let spar = training::sparsity_loss(&mut tape, vars.node_mask).unwrap();
        let spar = tape.scale(spar, config.gamma).unwrap();
        let local = tape.add(pred, expl).unwrap();
        locals.push(tape.add(local, spar).unwrap());
        let mask = tape.value(vars.node_mask).clone();
        for k in 0..model.channels() {
            let col: Vec<f64> = mask.column(k).to_vec();
            let aug = training::augment_mask(&col, config.threshold, 0.0, &mut rng);
            let keep: Vec<usize> = (0..col.len()).filter(|&i| col[i] > config.threshold).collect();
            let z = if view == PositiveView::Subgraph && !keep.is_empty() {
                let sub = g.induced_subgraph(&keep);
                let over = MaskOverride::channel(k, vec![1.0; keep.len()]);
                model.forward_on_tape(&mut tape, &sub, &over).unwrap().projections[k]
            } else {
                let c = tape.constant(Array2::from_shape_vec((aug.len(), 1), aug).unwrap()).unwrap();
                model.pool_and_project(&mut tape, vars.embeddings, c, k).unwrap().1
            };
            anchors[k].push(vars.projections[k]);
            positives[k].push(z);
        }
    }
    let stacked = tape.concat_cols(&locals).unwrap();
    let mut total = tape.mean(stacked).unwrap();
    for k in 0..model.channels() {
        let a = tape.concat_rows(&anchors[k]).unwrap();
        let p = tape.concat_rows(&positives[k]).unwrap();
        let c = training::contrastive_on_tape(&mut tape, a, p, 0.5).unwrap();
        let c = tape.scale(c, 1.0 / model.channels() as f64).unwrap();
        total = tape.add(total, c).unwrap();
    }
    (tape, total)
}

pub fn full_model_check(seed: u64, view: PositiveView) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = small_model(seed);
    let graphs: Vec<Graph> = (0..3).map(|_| synthetic::random_color_graph(10, &mut rng)).collect();
    let targets: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();

    let (tape, loss) = model_loss(&model, &graphs, &targets, view);
    let grads = tape.backward(loss).unwrap();
    let mut analytic = model.params().zeros_like();
    grads.accumulate_params(&tape, &mut analytic);

    let value = |m: &Megan| {
        let (t, l) = model_loss(m, &graphs, &targets, view);
        t.scalar_value(l)
    };
    for id in model.params().ids() {
        let shape = model.params().value(id).dim();
        let (i, j) = (rng.random_range(0..shape.0), rng.random_range(0..shape.1));
        let mut plus = model.clone();
        plus.params_mut().value_mut(id)[[i, j]] += STEP;
        let mut minus = model.clone();
        minus.params_mut().value_mut(id)[[i, j]] -= STEP;
        let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
        let a = analytic[id.index()][[i, j]];
        if !close(a, numeric, 1e-3) {
            return Err(format!("{}[{i},{j}]: analytic {a} numeric {numeric}", model.params().name(id)));
        }
    }
    Ok(())
}
