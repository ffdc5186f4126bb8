//! Plain minibatch SGD and the epoch loop.

use std::io::Write;

use crate::error::{Error, Result};
use crate::layers::{cross_entropy_loss, softmax_forward, Mode, ParamTensor};
use crate::mnist::Dataset;
use crate::network::Network;
use crate::tensor::{Matrix, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Rejects a negative or non-finite rate, and batches too small for batch norm.
    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be positive".into()));
        }
        if self.batch_size < 2 && !net.batch_norms().is_empty() {
            return Err(Error::BatchSize(self.batch_size));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Loss of this batch divided by its size.
    pub loss: f64,
    /// Fraction of samples classified correctly so far this epoch.
    pub accuracy: f64,
}

pub trait MetricsSink {
    fn record(&mut self, r: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        self.push(*r);
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Writes `epoch,batch,loss,accuracy` lines.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub const HEADER: &'static str = "epoch,batch,loss,accuracy";

    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", Self::HEADER).map_err(|e| Error::io("metrics", e))?;
        Ok(CsvSink { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{},{},{},{}", r.epoch, r.batch, r.loss, r.accuracy).map_err(|e| Error::io("metrics", e))
    }
}

/// `P ← P − λ·grad` for every tensor. Nothing is updated if any gradient is
/// non-finite.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut ParamTensor>, learning_rate: f64) -> Result<()> {
    let mut params: Vec<&mut ParamTensor> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numeric(format!("gradient of {}", p.name)));
    }
    for p in params.iter_mut() {
        let ParamTensor { value, grad, .. } = &mut **p;
        value.iter_mut().zip(grad.iter()).for_each(|(v, g)| *v -= learning_rate * g);
    }
    Ok(())
}

/// Summed loss and hit count of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
}

fn count_correct(probs: &Matrix, labels: &Matrix) -> usize {
    (0..probs.rows()).filter(|&i| probs.argmax_row(i) == labels.argmax_row(i)).count()
}

/// Forward (train), loss, backward and one SGD update on a single batch.
pub fn train_step(net: &mut Network, x: &Tensor4, y: &Matrix, learning_rate: f64) -> Result<StepOutcome> {
    let pass = net.forward(x, Mode::Train)?;
    let probs = softmax_forward(&pass.logits)?;
    let ce = cross_entropy_loss(&probs, y)?;
    net.backward(&probs, y)?;
    sgd_step(net.params_mut(), learning_rate)?;
    Ok(StepOutcome {
        loss: ce.total,
        correct: count_correct(&probs, y),
    })
}

/// One pass over `data`; records one metrics line per batch.
pub fn train_epoch(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    sink: &mut dyn MetricsSink,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate(net)?;
    let order = cfg.shuffle.then_some((cfg.seed, epoch));
    let (mut seen, mut correct) = (0usize, 0usize);
    let mut records = Vec::new();
    for (batch, (x, y)) in data.batches(cfg.batch_size, order).enumerate() {
        let step = train_step(net, &x, &y, cfg.learning_rate).map_err(|e| e.in_batch(batch))?;
        seen += x.n();
        correct += step.correct;
        let r = MetricsRecord {
            epoch,
            batch,
            loss: step.loss / x.n() as f64,
            accuracy: correct as f64 / seen as f64,
        };
        sink.record(&r)?;
        records.push(r);
    }
    Ok(records)
}

/// Mean per-sample loss and accuracy in inference mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let (mut total, mut correct) = (0.0, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.gather(chunk);
        let probs = softmax_forward(&net.infer(&x)?)?;
        total += cross_entropy_loss(&probs, &y)?.total;
        correct += count_correct(&probs, &y);
    }
    Ok(Evaluation {
        loss: total / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        samples: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::Split;
    use crate::network::{ArchSpec, LayerSpec};

    fn scalar(p: f64, g: f64) -> ParamTensor {
        let mut t = ParamTensor::new("p", vec![1], vec![p]).unwrap();
        t.grad = vec![g];
        t
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = scalar(1.0, 2.0);
        sgd_step([&mut p], 0.1).unwrap();
        assert!((p.value[0] - 0.8).abs() < 1e-15);

        let mut p = scalar(1.5, 0.0);
        sgd_step([&mut p], 0.1).unwrap();
        assert_eq!(p.value[0], 1.5);

        let mut q = scalar(1.0, 0.0);
        for _ in 0..10 {
            q.grad = vec![q.value[0]];
            sgd_step([&mut q], 0.1).unwrap();
        }
        assert!((q.value[0] - 0.9f64.powi(10)).abs() < 1e-15);
        assert!((q.value[0] - 0.34868).abs() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step() {
        let mut a = scalar(1.0, 1.0);
        let mut b = scalar(1.0, f64::NAN);
        b.name = "fc.w".into();
        let err = sgd_step([&mut a, &mut b], 0.1).unwrap_err();
        assert!(err.to_string().contains("fc.w"));
        assert_eq!(a.value[0], 1.0);
    }

    #[test]
    fn affine_in_learning_rate() {
        let mut a = scalar(0.3, 0.7);
        let mut b = a.clone();
        sgd_step([&mut a], 0.01).unwrap();
        sgd_step([&mut b], 0.02).unwrap();
        assert!((a.value[0] - 0.01 * 0.7 - b.value[0]).abs() <= 1e-15);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // f(p) = 2 p², curvature 4, so any λ < 0.5 descends
        let mut p = scalar(3.0, 0.0);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let f = 2.0 * p.value[0] * p.value[0];
            assert!(f < last);
            last = f;
            p.grad = vec![4.0 * p.value[0]];
            sgd_step([&mut p], 0.4).unwrap();
        }
    }

    fn tiny_net() -> Network {
        let arch = ArchSpec {
            input_depth: 1,
            input_size: 28,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 16 },
                LayerSpec::Relu,
                LayerSpec::BatchNorm,
                LayerSpec::Dense { outputs: 10 },
            ],
            shortcuts: vec![],
        };
        Network::build(arch, 3).unwrap()
    }

    #[test]
    fn zero_rate_epoch_keeps_parameters() {
        let data = Dataset::synthetic(Split::Train).take(40);
        let mut net = tiny_net();
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let recs = train_epoch(&mut net, &data, &cfg, 0, &mut NullSink).unwrap();
        assert_eq!(recs.len(), 5);
        let after: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn epochs_are_deterministic_and_learn() {
        let data = Dataset::synthetic(Split::Train);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = tiny_net();
            let mut out = Vec::new();
            for e in 0..3 {
                out.extend(train_epoch(&mut net, &data, &cfg, e, &mut NullSink).unwrap());
            }
            (out, net)
        };
        let (a, net) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(a.last().unwrap().loss < a[0].loss);
        assert!(evaluate(&net, &data, 64).unwrap().accuracy > 0.5);
    }

    #[test]
    fn evaluate_rules() {
        let data = Dataset::synthetic(Split::Test).take(10);
        let arch = ArchSpec {
            input_depth: 1,
            input_size: 28,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { outputs: 10 }],
            shortcuts: vec![],
        };
        let mut net = Network::build(arch, 0).unwrap();
        for p in net.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let ev = evaluate(&net, &data, 3).unwrap();
        assert!((ev.loss - 10f64.ln()).abs() < 1e-12);
        assert_eq!(ev.samples, 10);
        assert!(matches!(evaluate(&net, &data.take(0), 3), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_lines() {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        sink.record(&MetricsRecord {
            epoch: 0,
            batch: 2,
            loss: 0.5,
            accuracy: 0.25,
        })
        .unwrap();
        assert_eq!(String::from_utf8(sink.into_inner()).unwrap(), "epoch,batch,loss,accuracy\n0,2,0.5,0.25\n");
    }
}
