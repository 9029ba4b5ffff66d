//! Adam, minibatch training, evaluation and the finite-difference gradient check.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward, cross_entropy, forward, softmax, Fault, Params, Scalar, TENSOR_NAMES};
use super::ProbeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// `None` takes the aspect default.
    pub epochs: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 64,
            epochs: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs != Some(0)
            && self.hidden > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ProbeError::Config(format!(
                "non-positive or out-of-range hyperparameter in {self:?}"
            )))
        }
    }
}

pub struct Adam<F> {
    m: Params<F>,
    v: Params<F>,
    pub step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &Params<F>, config: &TrainConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut Params<F>, grads: &Params<F>, lr: f64) {
        self.step += 1;
        let c = |v: f64| F::from(v).unwrap();
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let one = F::one();
        let bc1 = c(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = c(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (c(lr), c(self.epsilon));
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        for ((p, g), (m, v)) in tensors.zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut())) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// One probe input: a `T × D` feature matrix and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Array2<f32>,
    pub label: usize,
    pub source: String,
}

fn stack(data: &[FeatureSequence], idx: &[usize]) -> (Array3<f32>, Vec<usize>) {
    let (t, d) = data[idx[0]].features.dim();
    let mut x = Array3::<f32>::zeros((t, idx.len(), d));
    for (b, &i) in idx.iter().enumerate() {
        x.index_axis_mut(Axis(1), b).assign(&data[i].features);
    }
    (x, idx.iter().map(|&i| data[i].label).collect())
}

fn argmax(row: ndarray::ArrayView1<f32>) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    #[serde(skip)]
    pub model: Option<Params<f32>>,
    pub initial_loss: f64,
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub epochs: usize,
    pub steps: u64,
}

fn check_dataset(data: &[FeatureSequence], classes: usize) -> Result<(), ProbeError> {
    let Some(first) = data.first() else {
        return Err(ProbeError::EmptyDataset);
    };
    let shape = first.features.dim();
    let mut seen = vec![false; classes];
    for s in data {
        if s.features.dim() != shape {
            return Err(ProbeError::ShapeMismatch {
                expected: shape.1,
                found: s.features.dim().1,
            });
        }
        if s.label >= classes {
            return Err(ProbeError::InvalidLabel {
                label: s.label,
                classes,
            });
        }
        if !s.features.iter().all(|v| v.is_finite()) {
            return Err(ProbeError::NonFiniteInput(s.source.clone()));
        }
        seen[s.label] = true;
    }
    if seen.iter().filter(|&&b| b).count() < 2 {
        return Err(ProbeError::SingleClass);
    }
    Ok(())
}

/// Mean loss over `data` in chunks of `batch`.
pub fn dataset_loss(params: &Params<f32>, data: &[FeatureSequence], batch: usize) -> Result<f64, ProbeError> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = stack(data, chunk);
        let cache = forward(params, x.view())?;
        total += cross_entropy(&cache.logits, &y) as f64 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch Adam on mean cross-entropy; single-threaded and bitwise reproducible.
pub fn train_probe(
    data: &[FeatureSequence],
    classes: usize,
    epochs: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    check_dataset(data, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input = data[0].features.ncols();
    let mut params = Params::<f32>::init(input, config.hidden, classes, &mut rng);
    let mut adam = Adam::new(&params, config);
    let initial_loss = dataset_loss(&params, data, config.batch_size)?;
    let mut outcome = TrainOutcome {
        model: None,
        initial_loss,
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
        epochs,
        steps: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = stack(data, chunk);
            let cache = forward(&params, x.view())?;
            let (loss, grads) = backward(&params, x.view(), &cache, &y, Fault::None);
            if !loss.is_finite() {
                return Err(ProbeError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += cache
                .logits
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(row, &label)| argmax(*row) == label)
                .count();
            adam.update(&mut params, &grads, config.learning_rate);
        }
        outcome.epoch_loss.push(loss_sum / data.len() as f64);
        outcome.epoch_accuracy.push(correct as f64 / data.len() as f64);
        log::debug!("epoch {epoch}: loss {:.5}", outcome.epoch_loss[epoch]);
    }
    outcome.steps = adam.step;
    outcome.model = Some(params);
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

pub fn predict(params: &Params<f32>, data: &[FeatureSequence], batch: usize) -> Result<Vec<usize>, ProbeError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = stack(data, chunk);
        let cache = forward(params, x.view())?;
        out.extend(cache.logits.rows().into_iter().map(argmax));
    }
    Ok(out)
}

pub fn evaluate(predictions: &[usize], labels: &[usize], classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    EvalReport {
        count: labels.len(),
        accuracy: if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        },
        per_class_accuracy: confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect(),
        confusion,
    }
}

pub fn eval_probe(params: &Params<f32>, data: &[FeatureSequence]) -> Result<EvalReport, ProbeError> {
    let predictions = predict(params, data, 64)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    Ok(evaluate(&predictions, &labels, params.classes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Worst error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
}

/// Relative error with a floor so that two tiny gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on `per_tensor`
/// random entries of each parameter tensor.
pub fn grad_check<R: Rng>(
    params: &Params<f64>,
    seq: ArrayView2<f64>,
    label: usize,
    step: f64,
    per_tensor: usize,
    fault: Fault,
    rng: &mut R,
) -> Result<GradCheckReport, ProbeError> {
    let (t, d) = seq.dim();
    let x = seq.to_shape((t, 1, d)).unwrap().into_owned();
    let cache = forward(params, x.view())?;
    let (_, grads) = backward(params, x.view(), &cache, &[label], fault);
    let loss_at =
        |p: &Params<f64>| -> Result<f64, ProbeError> { Ok(cross_entropy(&forward(p, x.view())?.logits, &[label])) };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        step,
        checked: 0,
        max_relative_error: 0.0,
        per_tensor: Vec::new(),
    };
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let len = params.tensors()[k].len();
        let mut worst: f64 = 0.0;
        for _ in 0..per_tensor {
            let i = rng.random_range(0..len);
            let original = params.tensors()[k][i];
            probe.tensors_mut()[k][i] = original + step;
            let up = loss_at(&probe)?;
            probe.tensors_mut()[k][i] = original - step;
            let down = loss_at(&probe)?;
            probe.tensors_mut()[k][i] = original;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grads.tensors()[k][i], numeric));
            report.checked += 1;
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_tensor.push((name.to_string(), worst));
    }
    Ok(report)
}

/// Class probabilities for each sequence.
pub fn probabilities(params: &Params<f32>, data: &[FeatureSequence]) -> Result<Array2<f32>, ProbeError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, _) = stack(data, &idx);
    Ok(softmax(&forward(params, x.view())?.logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> Vec<FeatureSequence> {
        // Class is whether the sequence's last step is high or low.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let features = Array2::from_shape_fn((6, 4), |(t, _)| {
                    let base = if t == 5 { label as f32 } else { 0.5 };
                    base + rng.random_range(-0.1..0.1)
                });
                FeatureSequence {
                    features,
                    label,
                    source: format!("toy{i}"),
                }
            })
            .collect()
    }

    #[test]
    fn adam_single_step_matches_closed_form() {
        // With bias correction the first step moves every weight by lr·sign(g).
        let mut p = Params::<f64>::zeros(2, 1, 2);
        let mut g = p.zeros_like();
        g.w_ih.fill(0.3);
        g.b_out[0] = -2.0;
        let mut adam = Adam::new(&p, &TrainConfig::default());
        adam.update(&mut p, &g, 0.01);
        assert!((p.w_ih[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((p.b_out[0] - 0.01).abs() < 1e-9);
        assert_eq!(p.b_out[1], 0.0);
    }

    #[test]
    fn training_lowers_loss_and_repeats_exactly() {
        let data = toy(64, 1);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            hidden: 8,
            seed: 5,
            ..Default::default()
        };
        let a = train_probe(&data, 2, 10, &cfg).unwrap();
        assert!(a.epoch_loss[0] < a.initial_loss);
        assert!(a.epoch_loss[9] < a.epoch_loss[0]);
        let b = train_probe(&data, 2, 10, &cfg).unwrap();
        assert_eq!(a.epoch_loss, b.epoch_loss);
        assert_eq!(a.model, b.model);
        let report = eval_probe(a.model.as_ref().unwrap(), &toy(40, 2)).unwrap();
        assert!(report.accuracy > 0.9, "{report:?}");
    }

    #[test]
    fn dataset_preconditions() {
        let cfg = TrainConfig::default();
        assert!(matches!(train_probe(&[], 2, 1, &cfg), Err(ProbeError::EmptyDataset)));
        let one: Vec<_> = toy(8, 0).into_iter().filter(|s| s.label == 0).collect();
        assert!(matches!(train_probe(&one, 2, 1, &cfg), Err(ProbeError::SingleClass)));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        assert!(train_probe(&toy(8, 0), 2, 1, &bad).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let r = evaluate(&[0; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion, vec![vec![5, 0], vec![5, 0]]);
        for (row, want) in r.confusion.iter().zip([5, 5]) {
            assert_eq!(row.iter().sum::<usize>(), want);
        }
    }

    #[test]
    fn gradient_check_small_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Params::<f64>::init(6, 5, 3, &mut rng);
        let seq = Array2::from_shape_fn((7, 6), |_| rng.random_range(-1.0..1.0));
        let ok = grad_check(&p, seq.view(), 2, 1e-5, 20, Fault::None, &mut rng).unwrap();
        assert_eq!(ok.checked, 100);
        assert!(ok.max_relative_error < 1e-5, "{ok:?}");
        let broken = grad_check(&p, seq.view(), 2, 1e-5, 20, Fault::ZeroRecurrentGradient, &mut rng).unwrap();
        assert!(broken.max_relative_error > 0.5);
    }
}
