#![allow(dead_code)]

//! Helpers shared by the integration test targets: finite-difference
//! gradient checks and brute-force oracles written independently of the
//! library code paths they check.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulab::numgrad::{ce_loss_with_offset, Activation, MlpModel};
use ulab::sslpre::{infonce_batch, infonce_loss, l2_normalize_backward, l2_normalize_rows};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self, min_instances: usize) -> bool {
        self.instances >= min_instances && self.max_rel_err < GRAD_TOL
    }
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussianish(rng: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms: smooth enough for test inputs, no extra dependency.
    (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.9
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gaussianish(rng))
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    l2_normalize_rows(random_matrix(rng, rows, cols).view()).0
}

/// Smallest |pre-activation| over the ReLU layers of a forward pass.
fn relu_margin(net: &MlpModel<f64>, x: &Array2<f64>) -> f64 {
    let pass = net.forward_pass(x.view()).unwrap();
    let mut margin = f64::INFINITY;
    for l in 0..net.num_layers() {
        if net.activations()[l] != Activation::Relu {
            continue;
        }
        let input = if l == 0 { pass.input() } else { pass.layer_output(l - 1) };
        let pre = input.dot(&net.weights(l)) + net.bias(l);
        margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

/// MLP forward/backward: parameter and input gradients of `Σ dout ⊙ f(x)`.
/// Instances whose ReLU pre-activations sit within a finite-difference step
/// of a kink are redrawn.
pub fn check_mlp(instances: usize, seed: u64) -> Vec<GradCheck> {
    let mut r = rng(seed);
    let (mut worst_p, mut worst_x) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < instances {
        let sizes = [r.random_range(2..6), r.random_range(3..7), r.random_range(3..6), r.random_range(2..5)];
        let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
        let mut net = MlpModel::<f64>::he_uniform(&sizes, &acts, &mut r).unwrap();
        for p in net.params_mut() {
            *p += 0.1 * gaussianish(&mut r);
        }
        let b = r.random_range(1..5);
        let x = random_matrix(&mut r, b, sizes[0]);
        let dout = random_matrix(&mut r, b, sizes[3]);
        if relu_margin(&net, &x) < 1e-3 {
            continue;
        }
        let objective = |net: &MlpModel<f64>, x: &Array2<f64>| (net.forward(x.view()).unwrap() * &dout).sum();

        let pass = net.forward_pass(x.view()).unwrap();
        let grads = net.backward_partial(&pass, dout.view(), 0, true).unwrap();
        assert_eq!(grads.params, net.backward(&pass, dout.view()).unwrap());

        let num_p = numeric_grad(net.params(), |p| {
            let probe = MlpModel::from_params(&sizes, &acts, p.to_vec()).unwrap();
            objective(&probe, &x)
        });
        let num_x = numeric_grad(x.as_slice().unwrap(), |xs| {
            objective(&net, &Array2::from_shape_vec(x.dim(), xs.to_vec()).unwrap())
        });
        worst_p = worst_p.max(rel_err(&grads.params, &num_p));
        worst_x = worst_x.max(rel_err(grads.input.unwrap().as_slice().unwrap(), &num_x));
        done += 1;
    }
    vec![
        GradCheck { name: "mlp backward (parameters)", instances, max_rel_err: worst_p },
        GradCheck { name: "mlp backward (input)", instances, max_rel_err: worst_x },
    ]
}

/// Cross-entropy with additive offsets, gradient with respect to the logits.
pub fn check_ce_loss(instances: usize, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (b, k) = (r.random_range(1..7), r.random_range(2..8));
        let logits = random_matrix(&mut r, b, k) * 2.0;
        let offsets = Array2::from_shape_fn((b, k), |_| {
            if r.random_bool(0.1) {
                -30.0
            } else {
                r.random_range(-4.0..0.0)
            }
        });
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
        let (_, grad) = ce_loss_with_offset(logits.view(), offsets.view(), &labels).unwrap();
        let num = numeric_grad(logits.as_slice().unwrap(), |l| {
            let l = Array2::from_shape_vec((b, k), l.to_vec()).unwrap();
            ce_loss_with_offset(l.view(), offsets.view(), &labels).unwrap().0
        });
        worst = worst.max(rel_err(grad.as_slice().unwrap(), &num));
    }
    GradCheck { name: "ce_loss_with_offset", instances, max_rel_err: worst }
}

/// Single-query InfoNCE composed with L2 normalization, gradient with
/// respect to the unnormalized query.
pub fn check_infonce(instances: usize, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = r.random_range(2..9);
        let n = r.random_range(1..12);
        let tau = r.random_range(0.1..1.0);
        let z = random_matrix(&mut r, 1, d);
        let k_pos = unit_rows(&mut r, 1, d).row(0).to_owned();
        let negs = unit_rows(&mut r, n, d);
        let loss_of = |z: &Array2<f64>| {
            let (q, norms) = l2_normalize_rows(z.view());
            let (loss, dq) = infonce_loss(q.row(0), k_pos.view(), negs.view(), tau).unwrap();
            (loss, q, norms, dq)
        };
        let (_, q, norms, dq) = loss_of(&z);
        let dq = dq.insert_axis(ndarray::Axis(0));
        let dz = l2_normalize_backward(q.view(), norms.view(), dq.view());
        let num = numeric_grad(z.as_slice().unwrap(), |zs| {
            loss_of(&Array2::from_shape_vec((1, d), zs.to_vec()).unwrap()).0
        });
        worst = worst.max(rel_err(dz.as_slice().unwrap(), &num));
    }
    GradCheck { name: "infonce_loss + l2 normalization", instances, max_rel_err: worst }
}

/// Batched InfoNCE with an optional queue, composed with L2 normalization.
pub fn check_infonce_batch(instances: usize, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (b, d) = (r.random_range(2..6), r.random_range(2..7));
        let tau = r.random_range(0.1..1.0);
        let z = random_matrix(&mut r, b, d);
        let keys = unit_rows(&mut r, b, d);
        let m = r.random_range(1..6);
        let queue = (i % 2 == 0).then(|| unit_rows(&mut r, m, d));
        let loss_of = |z: &Array2<f64>| {
            let (q, norms) = l2_normalize_rows(z.view());
            let (loss, dq) = infonce_batch(q.view(), keys.view(), queue.as_ref().map(|a| a.view()), tau).unwrap();
            (loss, q, norms, dq)
        };
        let (_, q, norms, dq) = loss_of(&z);
        let dz = l2_normalize_backward(q.view(), norms.view(), dq.view());
        let num = numeric_grad(z.as_slice().unwrap(), |zs| {
            loss_of(&Array2::from_shape_vec((b, d), zs.to_vec()).unwrap()).0
        });
        worst = worst.max(rel_err(dz.as_slice().unwrap(), &num));
    }
    GradCheck { name: "infonce_batch + l2 normalization", instances, max_rel_err: worst }
}

pub fn all_gradient_checks(instances: usize, seed: u64) -> Vec<GradCheck> {
    let mut out = check_mlp(instances, seed);
    out.push(check_ce_loss(instances, seed + 1));
    out.push(check_infonce(instances, seed + 2));
    out.push(check_infonce_batch(instances, seed + 3));
    out
}

/// Expected joint of labels and temperature-scaled proxy predictions,
/// accumulated one sample and one cell at a time.
pub fn brute_soft_confusion(logits: &Array2<f64>, labels: &[usize], k: usize, tau: f64) -> Array2<f64> {
    let n = labels.len();
    let mut joint = Array2::<f64>::zeros((k, k));
    for i in 0..n {
        let row: Vec<f64> = logits.row(i).iter().map(|v| v / tau).collect();
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = row.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (b, w) in weights.iter().enumerate() {
            joint[[labels[i], b]] += w / total / n as f64;
        }
    }
    joint
}

/// Normalized count matrix of `(label, argmax)` pairs, lowest index on ties.
pub fn count_confusion(logits: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut joint = Array2::<f64>::zeros((k, k));
    for (i, &y) in labels.iter().enumerate() {
        let mut best = 0;
        for b in 1..k {
            if logits[[i, b]] > logits[[i, best]] {
                best = b;
            }
        }
        joint[[y, best]] += 1.0;
    }
    joint / labels.len() as f64
}

pub fn label_marginal(labels: &[usize], k: usize) -> Array1<f64> {
    let mut p = Array1::<f64>::zeros(k);
    for &y in labels {
        p[y] += 1.0 / labels.len() as f64;
    }
    p
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Two classes, two bias values, `x = (a, b)` with four values each. The
/// bias `b` tracks `z`, which is strongly tied to `y` in training.
pub fn factorized_toy() -> ulab::metrics::EnumerableToy {
    use ndarray::array;
    let p_yz = array![[0.45, 0.05], [0.05, 0.45]];
    let p_a = array![[0.4, 0.3, 0.2, 0.1], [0.1, 0.2, 0.3, 0.4]];
    let p_b = array![[0.55, 0.3, 0.1, 0.05], [0.05, 0.1, 0.3, 0.55]];
    ulab::metrics::EnumerableToy::from_factors(p_yz, p_a.view(), p_b.view()).unwrap()
}

/// Trains a per-`x` logit table on samples of `toy` with the library trainer
/// (one-hot inputs through a frozen identity layer) and returns the
/// `X × K` logits. `supervised` selects `log p(y|z)` offsets over plain ERM.
pub fn train_toy_logits(toy: &ulab::metrics::EnumerableToy, n: usize, supervised: bool, seed: u64) -> Array2<f64> {
    use ulab::adjust::{AdjustSpec, AdjustedTrainer, FinetuneConfig, OffsetSource};
    use ulab::synthdata::TrainView;

    let (nx, k) = (toy.num_x(), toy.num_classes());
    let samples = toy.sample(n, &mut rng(seed));
    let mut features = Array2::<f32>::zeros((n, nx));
    for (i, &(x, _, _)) in samples.iter().enumerate() {
        features[[i, x]] = 1.0;
    }
    let labels: Vec<u16> = samples.iter().map(|s| s.1 as u16).collect();
    let z: Vec<u16> = samples.iter().map(|s| s.2 as u16).collect();
    let view = TrainView { features: features.view(), labels: &labels, num_classes: k };

    let eye = Array2::<f64>::eye(nx).into_raw_vec_and_offset().0;
    let identity = MlpModel::from_params(&[nx, nx], &[Activation::Identity], [eye, vec![0.0; nx]].concat()).unwrap();
    let model = ulab::DebiasedModel64::new(&identity, k, seed).unwrap();
    let y_given_z = toy.y_given_z();
    let (spec, source) = if supervised {
        (AdjustSpec::sla(), OffsetSource::GroupLabels { y_given_z: &y_given_z, z: &z })
    } else {
        (AdjustSpec::erm(), OffsetSource::None)
    };
    let offsets = spec.train_offsets::<f64>(&source, n, k).unwrap();
    let cfg = FinetuneConfig {
        lr: 0.05,
        weight_decay: 0.0,
        batch: 256,
        max_epochs: 20,
        head_only: true,
        encoder_lr_scale: 1.0,
        seed,
    };
    let mut trainer = AdjustedTrainer::new(model, &view, offsets, &cfg).unwrap();
    for _ in 0..cfg.max_epochs {
        trainer.run_epoch().unwrap();
    }
    let onehots = Array2::<f32>::eye(nx);
    trainer.model().logits(onehots.view()).unwrap()
}

pub fn argmax_table(logits: &Array2<f64>) -> Vec<usize> {
    logits.rows().into_iter().map(ulab::numgrad::argmax_row).collect()
}

/// Colored glyphs at the task's render style, small enough for unit-speed tests.
pub fn small_colored(k: usize, beta: f64, n: usize, seed: u64) -> ulab::synthdata::Dataset {
    ulab::synthdata::gen_colored_patterns(k, beta, n, ulab::synthdata::RenderStyle::new(0.3, 0.25), seed).unwrap()
}

/// Runs `steps` optimizer steps of ERM and of η=0 proxy adjustment from the
/// same initialization over the same batches. Returns the number of steps
/// after which the two parameter vectors were bit-identical.
pub fn erm_identity_steps(steps: usize, seed: u64) -> usize {
    use ulab::adjust::{AdjustSpec, AdjustedTrainer, FinetuneConfig, OffsetSource};
    use ulab::biasproxy::JointEstimate;

    let data = small_colored(5, 0.05, 400, seed);
    let train = data.view();
    let (n, k) = (train.len(), train.num_classes);
    let encoder = ulab::sslpre::EncoderSpec { hidden: vec![32, 16] }.init::<f32>(data.dim(), seed).unwrap();
    let model = ulab::DebiasedModel::new(&encoder, k, seed).unwrap();

    let joint = Array2::from_shape_fn((k, k), |(y, b)| if y == b { 0.9 } else { 0.1 / (k - 1) as f64 } / k as f64);
    let estimate = JointEstimate::from_joint(joint, None, n).unwrap();
    let predictions: Vec<usize> = (0..n).map(|i| (i * 7) % k).collect();
    let source = OffsetSource::Proxy { estimate: &estimate, predictions: &predictions };
    let erm_offsets = AdjustSpec::erm().train_offsets::<f32>(&OffsetSource::None, n, k).unwrap();
    let ula_offsets = AdjustSpec::ula(0.0).train_offsets::<f32>(&source, n, k).unwrap();

    let cfg = FinetuneConfig { lr: 1e-3, batch: 32, max_epochs: 10, seed, ..FinetuneConfig::default() };
    let mut a = AdjustedTrainer::new(model.clone(), &train, erm_offsets, &cfg).unwrap();
    let mut b = AdjustedTrainer::new(model, &train, ula_offsets, &cfg).unwrap();
    let mut shuffle = ulab::rng::substream(seed, ulab::rng::Stream::Shuffle, "identity-check");
    let mut identical = 0;
    'outer: loop {
        for idx in ulab::train::epoch_batches(n, cfg.batch, &mut shuffle) {
            if identical == steps {
                break 'outer;
            }
            let la = a.step(&idx).unwrap();
            let lb = b.step(&idx).unwrap();
            let same = la.to_bits() == lb.to_bits()
                && a.model().net().params().iter().zip(b.model().net().params()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                break 'outer;
            }
            identical += 1;
        }
    }
    identical
}
