//! Second stage: a fixed classifier trained on synthesized soft labels.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EndModelConfig, EndModelLoss};
use crate::data::{FeatureMatrix, SoftLabelMatrix};
use crate::error::{ensure_dim, Error, Result};
use crate::model::{backward, forward, init_params, predict_probs, Architecture, ForwardMode, LabelModelSpec, OutputHead};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;

/// Probabilities are kept this far from 0 and 1 inside cross-entropy gradients.
const CE_CLAMP: f64 = 1e-7;

fn end_model_spec(config: &EndModelConfig, n_columns: usize) -> LabelModelSpec {
    LabelModelSpec {
        architecture: Architecture::ThreeLayer,
        hidden_units: config.hidden_units,
        dropout_rate: 0.0,
        output_head: OutputHead::for_columns(n_columns),
        n_outputs: n_columns,
    }
}

/// `dLoss/df` of the mean per-example loss.
fn loss_gradient<T: Scalar>(loss: EndModelLoss, f: &Array2<T>, y: &Array2<T>) -> Array2<T> {
    let inv_n = T::one() / T::of(f.nrows() as f64);
    let eps = T::of(CE_CLAMP);
    let binary = f.ncols() == 1;
    let mut g = Array2::zeros(f.raw_dim());
    ndarray::Zip::from(&mut g).and(f).and(y).for_each(|g, &f, &y| {
        *g = match loss {
            EndModelLoss::SquaredError => T::of(2.0) * (f - y) * inv_n,
            EndModelLoss::CrossEntropy => {
                let f = f.max(eps).min(T::one() - eps);
                if binary {
                    (f - y) / (f * (T::one() - f)) * inv_n
                } else {
                    -y / f * inv_n
                }
            }
        };
    });
    g
}

/// Train the end classifier on `(train_x, soft_labels)` and predict `test_x` in eval mode.
pub fn train_end_model<T: Scalar>(
    train_x: &FeatureMatrix<T>,
    soft_labels: &SoftLabelMatrix<T>,
    test_x: &FeatureMatrix<T>,
    config: &EndModelConfig,
    seed: u64,
) -> Result<SoftLabelMatrix<T>> {
    config.validate()?;
    ensure_dim("end model: training rows", train_x.n_examples(), soft_labels.n_examples())?;
    ensure_dim("end model: feature count", train_x.n_features(), test_x.n_features())?;
    let spec = end_model_spec(config, soft_labels.n_columns());
    let mut params = init_params(&spec, train_x.n_features(), seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &params);
    // no dropout, so the forward pass never draws from this
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = soft_labels.view().to_owned();
    for _ in 0..config.epochs {
        let cache = forward(&spec, &params, train_x.view(), ForwardMode::Train, &mut rng)?;
        let g = loss_gradient(config.loss, cache.output(), &targets);
        let grads = backward(&params, &cache, g.view())?;
        adam.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(Error::NonFinite("end model parameters"));
        }
    }
    SoftLabelMatrix::new(predict_probs(&spec, &params, test_x.view())?)
}
