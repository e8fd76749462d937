//! Scaled-IoU supervision and plain minibatch SGD.

use rand::seq::SliceRandom;

use super::network::{self, FirstLayer, Group, Params};
use super::{cell_bounds, valid_mask, BlindTanConfig, BlindTanModel, Vocabulary};
use crate::corpus::{Corpus, Moment};
use crate::error::BlindTanError;
use crate::metrics::iou;
use crate::seed;

/// Full-training-set loss before training (epoch 0) and after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<(usize, f64)>,
}

impl TrainingLog {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0].1
    }

    pub fn final_loss(&self) -> f64 {
        self.losses[self.losses.len() - 1].1
    }

    /// CSV with header `epoch,loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (epoch, loss) in &self.losses {
            out.push_str(&format!("{epoch},{loss}\n"));
        }
        out
    }
}

struct Example {
    sorted_ids: Vec<usize>,
    ids: Vec<usize>,
    ground_truth: Moment,
}

fn examples(vocab: &Vocabulary, corpus: &Corpus) -> Vec<Example> {
    corpus
        .samples()
        .iter()
        .map(|s| {
            let ids = vocab.ids(&s.query);
            let mut sorted_ids = ids.clone();
            sorted_ids.sort_unstable();
            let loc = s.location();
            Example {
                sorted_ids,
                ids,
                ground_truth: Moment::new(loc.start, loc.end()).expect("normalized location is ordered"),
            }
        })
        .collect()
}

/// `y_ij = clamp((IoU(cell, gt) - t_min) / (t_max - t_min), 0, 1)` on valid
/// cells, 0 elsewhere.
pub(crate) fn targets(ground_truth: &Moment, config: &BlindTanConfig) -> Vec<f64> {
    let n = config.map_size;
    let span = config.iou_scale_max - config.iou_scale_min;
    (0..n * n)
        .map(|c| {
            let (i, j) = (c / n, c % n);
            if i > j {
                return 0.0;
            }
            let (s, e) = cell_bounds(i, j, n);
            let cell = Moment::new(s, e).expect("cell bounds are ordered");
            ((iou(&cell, ground_truth) - config.iou_scale_min) / span).clamp(0.0, 1.0)
        })
        .collect()
}

fn groups<'a>(batch: impl Iterator<Item = &'a Example>, config: &BlindTanConfig) -> Vec<Group<'a>> {
    network::group_examples(batch.map(|ex| (ex.sorted_ids.as_slice(), ex.ids.as_slice(), targets(&ex.ground_truth, config))))
}

fn full_objective(model: &BlindTanModel, corpus: &Corpus, path: FirstLayer, want_grad: bool) -> (f64, Option<Params>) {
    let examples = examples(model.vocab(), corpus);
    let groups = groups(examples.iter(), model.config());
    let valid = valid_mask(model.config().map_size);
    network::objective(
        model.params(),
        &model.config().dims(),
        &groups,
        &valid,
        examples.len().max(1),
        path,
        want_grad,
    )
}

/// Mean binary cross-entropy over samples and valid cells.
pub fn loss(model: &BlindTanModel, corpus: &Corpus) -> f64 {
    let path = FirstLayer::auto(model.params(), &model.config().dims());
    full_objective(model, corpus, path, false).0
}

/// Loss and its analytic gradient over the whole corpus, evaluated through
/// the requested first-layer path.
pub fn loss_and_gradient(model: &BlindTanModel, corpus: &Corpus, path: FirstLayer) -> (f64, Params) {
    let (loss, grads) = full_objective(model, corpus, path, true);
    (loss, grads.expect("gradient requested"))
}

/// Sign of every hidden (pre-ReLU) activation for every distinct query of
/// `corpus`. Finite-difference checks use it to detect perturbations that
/// cross a ReLU kink, where central differences are not valid.
pub fn hidden_activation_signs(model: &BlindTanModel, corpus: &Corpus) -> Vec<bool> {
    let examples = examples(model.vocab(), corpus);
    let groups = groups(examples.iter(), model.config());
    let dims = model.config().dims();
    let mut out = Vec::new();
    for g in &groups {
        let (_, q) = network::encode(model.params(), &dims, g.token_ids);
        let acts = network::forward(model.params(), &dims, &q, None);
        for z in &acts.z[..acts.z.len() - 1] {
            out.extend(z.iter().map(|v| *v > 0.0));
        }
    }
    out
}

fn step_size(config: &BlindTanConfig, group: &str) -> f64 {
    config.learning_rate
        * match group {
            "prior_map" => config.prior_map_lr_scale,
            "token_embeddings" | "query_projection" => config.encoder_lr_scale,
            _ => 1.0,
        }
}

/// Builds the vocabulary from `corpus`, initializes from `config.seed` and
/// runs `config.epochs` epochs of minibatch SGD.
pub fn train(config: &BlindTanConfig, corpus: &Corpus) -> Result<(BlindTanModel, TrainingLog), BlindTanError> {
    train_with_path(config, corpus, None)
}

/// As [`train`], optionally forcing the first-layer evaluation path.
pub fn train_with_path(
    config: &BlindTanConfig,
    corpus: &Corpus,
    path: Option<FirstLayer>,
) -> Result<(BlindTanModel, TrainingLog), BlindTanError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(BlindTanError::EmptyCorpus);
    }
    let vocab = Vocabulary::build(
        corpus.samples().iter().map(|s| s.query.as_str()),
        config.vocab_size,
        config.min_token_count,
    );
    let mut model = BlindTanModel::init(config.clone(), vocab)?;
    let dims = config.dims();
    let path = path.unwrap_or_else(|| FirstLayer::auto(model.params(), &dims));
    let examples = examples(model.vocab(), corpus);
    let valid = valid_mask(config.map_size);

    let evaluate = |params: &Params| {
        let groups = groups(examples.iter(), config);
        network::objective(params, &dims, &groups, &valid, examples.len(), path, false).0
    };
    let initial = evaluate(model.params());
    if !initial.is_finite() {
        return Err(BlindTanError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let mut log = TrainingLog {
        losses: vec![(0, initial)],
    };
    log::info!("blindtan epoch 0 loss {initial:.6}");

    let order_seed = seed::derive(config.seed, "order");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive_index(order_seed, epoch as u64)));
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let groups = groups(chunk.iter().map(|&i| &examples[i]), config);
            let (loss, grads) =
                network::objective(model.params(), &dims, &groups, &valid, chunk.len(), path, true);
            let grads = grads.expect("gradient requested");
            if !loss.is_finite() || !grads.all_finite() {
                return Err(BlindTanError::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            model.params_mut().sgd_step(&grads, |group| step_size(config, group));
        }
        let loss = evaluate(model.params());
        if !loss.is_finite() {
            return Err(BlindTanError::NonFiniteLoss { epoch, batch: 0 });
        }
        log::info!("blindtan epoch {epoch} loss {loss:.6}");
        log.losses.push((epoch, loss));
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::synthetic::verb_biased_corpus;

    fn small() -> BlindTanConfig {
        BlindTanConfig {
            map_size: 8,
            channels: 4,
            vocab_size: 40,
            embed_dim: 4,
            kernel_size: 3,
            epochs: 3,
            batch_size: 16,
            ..BlindTanConfig::default()
        }
    }

    #[test]
    fn targets_peak_on_the_matching_cell() {
        let config = small();
        let gt = Moment::new(0.25, 0.5).unwrap();
        let y = targets(&gt, &config);
        assert_eq!(y[2 * 8 + 3], 1.0);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y[3 * 8 + 2], 0.0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::new(vec![], Split::Train, None).unwrap();
        assert!(matches!(train(&small(), &corpus), Err(BlindTanError::EmptyCorpus)));
    }

    #[test]
    fn huge_learning_rate_reports_the_batch() {
        let corpus = verb_biased_corpus(64, Split::Train, 1);
        let config = BlindTanConfig {
            learning_rate: 1e200,
            ..small()
        };
        let err = train(&config, &corpus).unwrap_err();
        assert!(matches!(err, BlindTanError::NonFiniteLoss { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn paths_train_identically_up_to_rounding() {
        let corpus = verb_biased_corpus(64, Split::Train, 2);
        let (a, la) = train_with_path(&small(), &corpus, Some(FirstLayer::Factored)).unwrap();
        let (b, lb) = train_with_path(&small(), &corpus, Some(FirstLayer::Direct)).unwrap();
        assert!((la.final_loss() - lb.final_loss()).abs() < 1e-9);
        let diff = a
            .params()
            .prior_map
            .iter()
            .zip(&b.params().prior_map)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9);
    }
}
