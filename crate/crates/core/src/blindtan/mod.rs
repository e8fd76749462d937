//! Blind-TAN-lite: a query-only localizer. A learnable `d × N × N` prior map
//! is fused with a pooled query embedding by a Hadamard product, and a small
//! conv stack turns the fused map into an `N × N` score map over candidate
//! moments. Videos are never read.
//!
//! The query encoder averages token embeddings, so word order is ignored —
//! a known gap compared to a recurrent encoder.

mod checkpoint;
pub(crate) mod conv;
mod network;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::RankedPrediction;
use crate::corpus::{Corpus, Moment, QuerySample};
use crate::error::BlindTanError;
use crate::lexicon::tokenize;
use crate::seed;
use crate::shuffle::{FeatureSequence, Predictor};

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, to_checkpoint_json, CHECKPOINT_VERSION};
pub use network::{ConvLayer, FirstLayer, Params};
pub use train::{hidden_activation_signs, loss, loss_and_gradient, train, train_with_path, TrainingLog};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlindTanConfig {
    /// `N`: sampling points per axis of the score map.
    pub map_size: usize,
    /// `d`: prior-map channels.
    pub channels: usize,
    /// Upper bound on vocabulary rows, UNK included.
    pub vocab_size: usize,
    /// Tokens seen fewer times than this map to UNK.
    pub min_token_count: usize,
    pub embed_dim: usize,
    pub conv_layers: usize,
    pub kernel_size: usize,
    pub learning_rate: f64,
    /// Step-size multiplier for the prior map. Each prior-map cell reaches
    /// only a `kernel_size`-wide neighbourhood of the score map while the
    /// shared weights reach every cell, so its gradients are orders of
    /// magnitude smaller.
    pub prior_map_lr_scale: f64,
    /// Step-size multiplier for the token embeddings and query projection.
    pub encoder_lr_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub iou_scale_min: f64,
    pub iou_scale_max: f64,
    pub seed: u64,
}

impl Default for BlindTanConfig {
    fn default() -> Self {
        BlindTanConfig {
            map_size: 64,
            channels: 32,
            vocab_size: 2000,
            min_token_count: 1,
            embed_dim: 32,
            conv_layers: 2,
            kernel_size: 5,
            learning_rate: 1.0,
            prior_map_lr_scale: 10000.0,
            encoder_lr_scale: 30.0,
            epochs: 10,
            batch_size: 128,
            iou_scale_min: 0.5,
            iou_scale_max: 1.0,
            seed: 0,
        }
    }
}

impl BlindTanConfig {
    pub fn validate(&self) -> Result<(), BlindTanError> {
        let fail = |m: &str| Err(BlindTanError::Config(m.to_string()));
        if self.map_size < 2 {
            return fail("map_size must be at least 2");
        }
        if self.channels == 0 || self.embed_dim == 0 || self.vocab_size == 0 {
            return fail("channels, embed_dim and vocab_size must be positive");
        }
        if self.conv_layers == 0 {
            return fail("conv_layers must be at least 1");
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return fail("kernel_size must be odd");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.prior_map_lr_scale.is_finite() && self.prior_map_lr_scale > 0.0)
            || !(self.encoder_lr_scale.is_finite() && self.encoder_lr_scale > 0.0)
        {
            return fail("learning-rate scales must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.iou_scale_min) {
            return fail("iou_scale_min must lie in [0, 1)");
        }
        if !(self.iou_scale_max > self.iou_scale_min && self.iou_scale_max <= 1.0) {
            return fail("iou_scale_max must lie in (iou_scale_min, 1]");
        }
        Ok(())
    }

    fn dims(&self) -> network::Dims {
        network::Dims {
            n: self.map_size,
            d: self.channels,
            embed: self.embed_dim,
            k: self.kernel_size,
        }
    }
}

/// Token table; row 0 is always UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Most frequent tokens first (ties lexical), at most `max_size - 1` of
    /// them, each seen at least `min_count` times.
    pub fn build<'a>(queries: impl IntoIterator<Item = &'a str>, max_size: usize, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for q in queries {
            for t in tokenize(q) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size.saturating_sub(1));
        Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    /// Builds from the non-UNK tokens in id order (ids start at 1).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = std::iter::once(UNK_TOKEN.to_string()).chain(tokens).collect();
        let index = tokens.iter().enumerate().skip(1).map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token ids of a query; a query with no tokens encodes as `[UNK]`.
    pub fn ids(&self, query: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(query).map(|t| self.index.get(&t).copied().unwrap_or(UNK)).collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }
}

/// Normalized `[start, end]` of cell `(i, j)` on an `n`-point map:
/// `[i / n, (j + 1) / n]`. Shared by training targets and prediction.
pub fn cell_bounds(i: usize, j: usize, n: usize) -> (f64, f64) {
    (i as f64 / n as f64, (j + 1) as f64 / n as f64)
}

/// Row-major `n × n` mask, true where `i <= j`.
pub fn valid_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|c| c / n <= c % n).collect()
}

#[derive(Debug)]
pub struct BlindTanModel {
    config: BlindTanConfig,
    vocab: Vocabulary,
    params: Params,
    responses: OnceLock<Option<Vec<f64>>>,
}

impl Clone for BlindTanModel {
    fn clone(&self) -> Self {
        BlindTanModel::from_parts(self.config.clone(), self.vocab.clone(), self.params.clone())
            .expect("cloned model was valid")
    }
}

impl PartialEq for BlindTanModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl BlindTanModel {
    /// Randomly initialized model for `config` and `vocab`.
    pub fn init(config: BlindTanConfig, vocab: Vocabulary) -> Result<Self, BlindTanError> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(config.seed, "init"));
        let (n, d, e, k) = (config.map_size, config.channels, config.embed_dim, config.kernel_size);
        let mut gaussian = |len: usize, sd: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, sd).expect("positive sd");
            (0..len).map(|_| dist.sample(&mut rng)).collect()
        };
        let prior_map = gaussian(d * n * n, 1.0);
        let token_embeddings = gaussian(vocab.len() * e, 1.0);
        let query_projection = gaussian(e * d, 1.0 / (e as f64).sqrt());
        let fan_in = (d * k * k) as f64;
        let mut conv = Vec::with_capacity(config.conv_layers);
        for l in 0..config.conv_layers {
            let last = l + 1 == config.conv_layers;
            let out_ch = if last { 1 } else { d };
            let sd = if last { (1.0 / fan_in).sqrt() } else { (2.0 / fan_in).sqrt() };
            conv.push(ConvLayer {
                in_ch: d,
                out_ch,
                weight: gaussian(out_ch * d * k * k, sd),
                bias: vec![if last { -2.0 } else { 0.0 }; out_ch],
            });
        }
        let params = Params {
            prior_map,
            token_embeddings,
            query_projection,
            conv,
        };
        BlindTanModel::from_parts(config, vocab, params)
    }

    /// Assembles a model, checking that every array has the right shape and
    /// every value is finite.
    pub fn from_parts(config: BlindTanConfig, vocab: Vocabulary, params: Params) -> Result<Self, BlindTanError> {
        config.validate()?;
        let (n, d, e, k) = (config.map_size, config.channels, config.embed_dim, config.kernel_size);
        let bad = |what: &str| Err(BlindTanError::Checkpoint(format!("{what} has the wrong shape")));
        if vocab.len() > config.vocab_size {
            return Err(BlindTanError::Checkpoint("vocabulary exceeds vocab_size".into()));
        }
        if params.prior_map.len() != d * n * n {
            return bad("prior_map");
        }
        if params.token_embeddings.len() != vocab.len() * e {
            return bad("token_embeddings");
        }
        if params.query_projection.len() != e * d {
            return bad("query_projection");
        }
        if params.conv.len() != config.conv_layers {
            return bad("conv stack");
        }
        for (l, layer) in params.conv.iter().enumerate() {
            let out_ch = if l + 1 == config.conv_layers { 1 } else { d };
            if layer.in_ch != d
                || layer.out_ch != out_ch
                || layer.weight.len() != out_ch * d * k * k
                || layer.bias.len() != out_ch
            {
                return bad(&format!("conv{l}"));
            }
        }
        if !params.all_finite() {
            return Err(BlindTanError::Checkpoint("non-finite parameter".into()));
        }
        Ok(BlindTanModel {
            config,
            vocab,
            params,
            responses: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &BlindTanConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for optimizers and finite-difference checks.
    pub fn params_mut(&mut self) -> &mut Params {
        self.responses = OnceLock::new();
        &mut self.params
    }

    fn dims(&self) -> network::Dims {
        self.config.dims()
    }

    /// Mean of the query's token embeddings, projected to `d` dimensions.
    pub fn encode_query(&self, query: &str) -> Vec<f64> {
        network::encode(&self.params, &self.dims(), &self.vocab.ids(query)).1
    }

    fn cached_responses(&self) -> Option<&[f64]> {
        self.responses
            .get_or_init(|| {
                let dims = self.dims();
                (FirstLayer::auto(&self.params, &dims) == FirstLayer::Factored)
                    .then(|| network::factored_responses(&self.params, &dims))
            })
            .as_deref()
    }

    /// Row-major `N × N` scores in `(0, 1)` for valid cells and exactly 0 on
    /// masked cells (`i > j`).
    pub fn score_map(&self, query_vec: &[f64]) -> Vec<f64> {
        assert_eq!(query_vec.len(), self.config.channels, "query vector has the wrong length");
        let acts = network::forward(&self.params, &self.dims(), query_vec, self.cached_responses());
        let n = self.config.map_size;
        acts.logits()
            .iter()
            .enumerate()
            .map(|(c, &z)| if c / n <= c % n { network::sigmoid(z) } else { 0.0 })
            .collect()
    }

    /// Top-`k` valid cells, best first, ties broken by `(i, j)` ascending.
    pub fn predict(&self, sample: &QuerySample, k: usize) -> RankedPrediction {
        let scores = self.score_map(&self.encode_query(&sample.query));
        let n = self.config.map_size;
        let mut cells: Vec<usize> = (0..n * n).filter(|c| c / n <= c % n).collect();
        cells.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
        cells.truncate(k.max(1));
        let d = sample.video_duration;
        let moments = cells
            .iter()
            .map(|&c| {
                let (s, e) = cell_bounds(c / n, c % n, n);
                let end = (e * d).min(d);
                Moment::new((s * d).min(end), end).expect("cell bounds are ordered")
            })
            .collect();
        let scores = cells.iter().map(|&c| scores[c]).collect();
        RankedPrediction::new(&sample.sample_id, moments, scores)
    }

    pub fn predict_corpus(&self, corpus: &Corpus, k: usize) -> Vec<RankedPrediction> {
        corpus.samples().iter().map(|s| self.predict(s, k)).collect()
    }
}

impl Predictor for BlindTanModel {
    fn predict(&self, sample: &QuerySample, _: Option<&FeatureSequence>, k: usize) -> crate::error::Result<RankedPrediction> {
        Ok(BlindTanModel::predict(self, sample, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BlindTanConfig {
        BlindTanConfig {
            map_size: 6,
            channels: 3,
            vocab_size: 10,
            embed_dim: 4,
            kernel_size: 3,
            ..BlindTanConfig::default()
        }
    }

    fn tiny_model() -> BlindTanModel {
        let vocab = Vocabulary::build(["open the door", "close the door"], 10, 1);
        BlindTanModel::init(tiny_config(), vocab).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BlindTanConfig::default().validate().is_ok());
        for bad in [
            BlindTanConfig { conv_layers: 0, ..tiny_config() },
            BlindTanConfig { map_size: 1, ..tiny_config() },
            BlindTanConfig { kernel_size: 4, ..tiny_config() },
            BlindTanConfig { iou_scale_min: 0.7, iou_scale_max: 0.7, ..tiny_config() },
            BlindTanConfig { learning_rate: 0.0, ..tiny_config() },
        ] {
            assert!(matches!(bad.validate(), Err(BlindTanError::Config(_))));
        }
    }

    #[test]
    fn vocabulary_orders_by_frequency() {
        let v = Vocabulary::build(["b a a", "c a b"], 3, 1);
        assert_eq!(v.tokens(), ["<unk>", "a", "b"]);
        assert_eq!(v.ids("a c zzz"), vec![1, UNK, UNK]);
        assert_eq!(v.ids("  123 "), vec![UNK]);
    }

    #[test]
    fn encoder_ignores_word_order() {
        let m = tiny_model();
        assert_eq!(m.encode_query("open the door"), m.encode_query("door the open"));
        assert_eq!(m.encode_query(""), m.encode_query("qqq"));
    }

    #[test]
    fn zero_prior_map_gives_constant_scores() {
        let mut m = tiny_model();
        m.params_mut().prior_map.iter_mut().for_each(|v| *v = 0.0);
        let map = m.score_map(&m.encode_query("open the door"));
        let valid: Vec<f64> = map.iter().zip(valid_mask(6)).filter(|(_, v)| *v).map(|(s, _)| *s).collect();
        assert!(valid.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn scores_in_open_unit_interval_and_masked_zero() {
        let m = tiny_model();
        let map = m.score_map(&m.encode_query("close the door"));
        for (s, v) in map.iter().zip(valid_mask(6)) {
            if v {
                assert!(*s > 0.0 && *s < 1.0);
            } else {
                assert_eq!(*s, 0.0);
            }
        }
    }

    #[test]
    fn predict_returns_argmax_first() {
        let m = tiny_model();
        let sample = QuerySample {
            sample_id: "s".into(),
            video_id: "v".into(),
            video_duration: 12.0,
            query: "open the door".into(),
            ground_truth: Moment::new(0.0, 1.0).unwrap(),
        };
        let all = m.predict(&sample, 100);
        assert_eq!(all.moments.len(), 21);
        assert!(all.is_valid(12.0));
        let map = m.score_map(&m.encode_query(&sample.query));
        let best = map.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(m.predict(&sample, 1).scores, vec![best]);
    }

    #[test]
    fn factored_and_direct_scores_agree() {
        let m = tiny_model();
        let q = m.encode_query("open the door");
        let dims = m.dims();
        let resp = network::factored_responses(&m.params, &dims);
        let a = network::forward(&m.params, &dims, &q, Some(&resp));
        let b = network::forward(&m.params, &dims, &q, None);
        for (x, y) in a.logits().iter().zip(b.logits()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
