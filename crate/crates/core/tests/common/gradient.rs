//! Finite-difference oracle for the analytic training gradient.
//!
//! The loss is re-implemented here from the flat parameter vector, without
//! touching the library's forward pass, and differentiated numerically.

use std::time::{Duration, Instant};

use splitclass::encoder::{mine_triplets, EncoderConfig, EncoderModel, NegativePolicy, Triplet};
use splitclass::{Matrix, Rng};

pub const STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-3;
/// Draws with a ReLU pre-activation, embedding norm or hinge distance this close to zero are
/// redrawn, since the loss is not differentiable there.
pub const KINK_GUARD: f64 = 1e-4;

struct Case {
    cfg: EncoderConfig,
    outputs: usize,
    batch: Matrix,
    labels: Vec<usize>,
    triplets: Option<Vec<Triplet>>,
    margin: f64,
}

/// Independent evaluation of the combined objective. Returns the loss and
/// the smallest |kink argument| seen along the way.
fn oracle_loss(case: &Case, params: &[f64]) -> (f64, f64) {
    let cfg = &case.cfg;
    let mut widths = vec![cfg.input_dim];
    widths.extend(&cfg.hidden);
    widths.push(cfg.embed_dim);
    let mut closest_kink = f64::INFINITY;

    let mut off = 0;
    let mut take = |n: usize| {
        let s = &params[off..off + n];
        off += n;
        s.to_vec()
    };
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        layers.push((take(w[0] * w[1]), take(w[1]), w[0], w[1]));
    }
    let head_w = take(cfg.embed_dim * case.outputs);
    let head_b = take(case.outputs);

    let n = case.batch.rows();
    let mut emb = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = case.batch.row(i).to_vec();
        for (l, (w, b, din, dout)) in layers.iter().enumerate() {
            let mut y = vec![0.0; *dout];
            for o in 0..*dout {
                let mut s = b[o];
                for k in 0..*din {
                    s += w[o * din + k] * x[k];
                }
                y[o] = s;
            }
            if l + 1 < layers.len() {
                for v in y.iter_mut() {
                    closest_kink = closest_kink.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        if cfg.normalize {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            closest_kink = closest_kink.min(norm);
            if norm < KINK_GUARD {
                return (f64::NAN, 0.0);
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        emb.push(x);
    }

    let mut ce = 0.0;
    for (i, e) in emb.iter().enumerate() {
        let logits: Vec<f64> = (0..case.outputs)
            .map(|o| head_b[o] + (0..cfg.embed_dim).map(|k| head_w[o * cfg.embed_dim + k] * e[k]).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - logits[case.labels[i]];
    }
    ce /= n as f64;

    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut trip = 0.0;
    if let Some(ts) = &case.triplets {
        for t in ts {
            let dp = dist(&emb[t.anchor], &emb[t.positive]);
            let dn = dist(&emb[t.anchor], &emb[t.negative]);
            let arg = dp - dn + case.margin;
            closest_kink = closest_kink.min(arg.abs()).min(dp).min(dn);
            trip += arg.max(0.0);
        }
        if !ts.is_empty() {
            trip /= ts.len() as f64;
        }
    }
    (ce + trip, closest_kink)
}

fn random_case(rng: &mut Rng) -> (Case, EncoderModel) {
    let input_dim = 1 + rng.below(5);
    let hidden: Vec<usize> = (0..rng.below(3)).map(|_| 1 + rng.below(6)).collect();
    let embed_dim = 1 + rng.below(4);
    let outputs = 2 + rng.below(4);
    let cfg = EncoderConfig {
        input_dim,
        hidden,
        embed_dim,
        normalize: rng.below(2) == 1 && embed_dim > 1,
    };
    let model = EncoderModel::new(cfg.clone(), outputs, rng).unwrap();
    let rows = 3 + rng.below(6);
    let batch = Matrix::from_vec(rows, input_dim, rng.gaussian(rows * input_dim, 0.0, 1.5).unwrap()).unwrap();
    let labels: Vec<usize> = (0..rows).map(|_| rng.below(outputs)).collect();
    let parents: Vec<usize> = labels.iter().map(|l| l / 2).collect();
    let use_triplet = rng.below(4) != 0;
    let triplets = use_triplet.then(|| {
        let emb = model.embed(&batch).unwrap();
        mine_triplets(&emb, &labels, &parents, NegativePolicy::OtherPseudo).unwrap()
    });
    let margin = 0.05 + rng.next_f64();
    (
        Case {
            cfg,
            outputs,
            batch,
            labels,
            triplets,
            margin,
        },
        model,
    )
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub struct GradientSummary {
    pub checked: usize,
    pub with_triplets: usize,
    pub redrawn: usize,
    pub worst_rel_err: f64,
    /// Largest |library loss − oracle loss| relative to max(|loss|, 1).
    pub worst_loss_gap: f64,
    pub elapsed: Duration,
}

/// Checks `configs` random encoders; returns the worst errors seen.
pub fn run_gradient_check(configs: usize, seed: u64) -> GradientSummary {
    let started = Instant::now();
    let mut rng = Rng::new(seed);
    let mut s = GradientSummary {
        checked: 0,
        with_triplets: 0,
        redrawn: 0,
        worst_rel_err: 0.0,
        worst_loss_gap: 0.0,
        elapsed: Duration::ZERO,
    };
    while s.checked < configs {
        let (case, model) = random_case(&mut rng);
        let params = model.flat_params();
        let (loss_ref, kink) = oracle_loss(&case, &params);
        if kink < KINK_GUARD {
            s.redrawn += 1;
            continue;
        }
        let (loss, grads) = model
            .loss_and_gradients(&case.batch, &case.labels, case.triplets.as_deref(), case.margin)
            .unwrap();
        s.worst_loss_gap = s
            .worst_loss_gap
            .max((loss.total - loss_ref).abs() / loss_ref.abs().max(1.0));

        let analytic = grads.flatten();
        let mut numeric = vec![0.0; params.len()];
        let mut p = params.clone();
        for j in 0..params.len() {
            p[j] = params[j] + STEP;
            let (up, _) = oracle_loss(&case, &p);
            p[j] = params[j] - STEP;
            let (down, _) = oracle_loss(&case, &p);
            p[j] = params[j];
            numeric[j] = (up - down) / (2.0 * STEP);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic) + norm(&numeric);
        let rel = if scale < 1e-12 { 0.0 } else { norm(&diff) / scale };
        s.worst_rel_err = s.worst_rel_err.max(rel);
        if case.triplets.as_ref().is_some_and(|t| !t.is_empty()) {
            s.with_triplets += 1;
        }
        s.checked += 1;
    }
    s.elapsed = started.elapsed();
    s
}
