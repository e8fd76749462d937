//! First-verb extraction and verb-frequency statistics.
//!
//! Extraction is deliberately crude: the query is lowercased, split on
//! non-alphabetic characters, and the first token that the lexicon knows and
//! whose lemma is not an auxiliary wins. "He is seen speaking to the camera"
//! therefore yields `see`, not `speak`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, LexiconError, Result};

const BUNDLED_VERBS: &str = include_str!("../resources/verbs.csv");

/// Auxiliary and modal lemmas skipped during extraction.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "be", "have", "do", "will", "would", "can", "could", "shall", "should", "may", "might", "must",
];

#[derive(Debug, Clone, PartialEq)]
pub struct VerbLexicon {
    lemma_map: HashMap<String, String>,
    stoplist: BTreeSet<String>,
}

impl VerbLexicon {
    /// The bundled English lexicon (~780 lemmas with inflections).
    pub fn bundled() -> Self {
        VerbLexicon::from_csv(BUNDLED_VERBS).expect("bundled lexicon is well formed")
    }

    /// Parses `inflected,lemma` rows (header optional). Lemmas that do not
    /// appear as their own row are added as fixed points.
    pub fn from_csv(text: &str) -> Result<Self, LexiconError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut lemma_map = HashMap::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| LexiconError::Row {
                row: idx + 1,
                message: e.to_string(),
            })?;
            if row.len() != 2 {
                return Err(LexiconError::Row {
                    row: idx + 1,
                    message: format!("expected 2 fields, got {}", row.len()),
                });
            }
            if idx == 0 && &row[0] == "inflected" && &row[1] == "lemma" {
                continue;
            }
            let inflected = row[0].to_lowercase();
            let lemma = row[1].to_lowercase();
            if inflected.is_empty() || lemma.is_empty() || !inflected.chars().all(char::is_alphabetic) {
                return Err(LexiconError::Row {
                    row: idx + 1,
                    message: format!("bad entry `{inflected},{lemma}`"),
                });
            }
            lemma_map.insert(inflected, lemma);
        }
        let stoplist = DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect();
        VerbLexicon::new(lemma_map, stoplist)
    }

    pub fn new(mut lemma_map: HashMap<String, String>, stoplist: BTreeSet<String>) -> Result<Self, LexiconError> {
        let lemmas: BTreeSet<String> = lemma_map.values().cloned().collect();
        for lemma in lemmas {
            match lemma_map.get(&lemma) {
                Some(other) if *other != lemma => {
                    return Err(LexiconError::LemmaNotFixedPoint {
                        lemma,
                        other: other.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    lemma_map.insert(lemma.clone(), lemma);
                }
            }
        }
        Ok(VerbLexicon { lemma_map, stoplist })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(VerbLexicon::from_csv(&text)?)
    }

    pub fn lemma(&self, token: &str) -> Option<&str> {
        self.lemma_map.get(token).map(String::as_str)
    }

    pub fn is_stopped(&self, lemma: &str) -> bool {
        self.stoplist.contains(lemma)
    }

    pub fn len(&self) -> usize {
        self.lemma_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lemma_map.is_empty()
    }

    pub fn lemma_map(&self) -> &HashMap<String, String> {
        &self.lemma_map
    }

    pub fn extract_first_verb(&self, query: &str) -> Option<String> {
        tokenize(query).find_map(|tok| match self.lemma(&tok) {
            Some(lemma) if !self.is_stopped(lemma) => Some(lemma.to_string()),
            _ => None,
        })
    }
}

/// Lowercased alphabetic tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerbStats {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

/// Share of verb occurrences (tokens) and of distinct verbs (types) covered by
/// the `k` most frequent verbs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub k: usize,
    pub token: f64,
    pub types: f64,
}

impl VerbStats {
    pub fn from_verbs<I, S>(verbs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut stats = VerbStats::default();
        for v in verbs {
            *stats.counts.entry(v.into()).or_default() += 1;
            stats.total += 1;
        }
        stats
    }

    /// Verbs by count descending, ties broken lexicographically.
    pub fn top_k(&self, k: usize) -> Vec<String> {
        let mut ranked: Vec<(&String, usize)> = self.counts.iter().map(|(v, &c)| (v, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.into_iter().take(k).map(|(v, _)| v.clone()).collect()
    }

    pub fn coverage(&self, k: usize) -> Coverage {
        let top = self.top_k(k);
        let covered: usize = top.iter().map(|v| self.counts[v]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Coverage {
            k,
            token: ratio(covered, self.total),
            types: ratio(top.len(), self.counts.len()),
        }
    }
}

pub fn verb_stats(corpus: &Corpus, lexicon: &VerbLexicon) -> VerbStats {
    VerbStats::from_verbs(
        corpus
            .samples()
            .iter()
            .filter_map(|s| lexicon.extract_first_verb(&s.query)),
    )
}

pub fn top_k_verbs(stats: &VerbStats, k: usize) -> Vec<String> {
    stats.top_k(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Moment, QuerySample, Split};

    #[test]
    fn bundled_lemmas_are_fixed_points() {
        let lex = VerbLexicon::bundled();
        assert!(lex.len() > 2000);
        for lemma in lex.lemma_map().values() {
            assert_eq!(lex.lemma(lemma), Some(lemma.as_str()));
        }
        assert_eq!(lex.lemma("putting"), Some("put"));
    }

    #[test]
    fn first_verb_examples() {
        let lex = VerbLexicon::bundled();
        assert_eq!(lex.extract_first_verb("a person is putting a book on a shelf").as_deref(), Some("put"));
        assert_eq!(lex.extract_first_verb("the the the"), None);
        assert_eq!(lex.extract_first_verb("He is seen speaking to the camera").as_deref(), Some("see"));
        assert_eq!(lex.extract_first_verb("Person OPENS the door.").as_deref(), Some("open"));
    }

    #[test]
    fn rejects_non_fixed_point_lemma() {
        let err = VerbLexicon::from_csv("ran,run\nrun,sprint\n").unwrap_err();
        assert!(matches!(err, LexiconError::LemmaNotFixedPoint { .. }));
        let lex = VerbLexicon::from_csv("inflected,lemma\nran,run\n").unwrap();
        assert_eq!(lex.lemma("run"), Some("run"));
    }

    #[test]
    fn top_k_ties_are_lexicographic() {
        let stats = VerbStats {
            counts: [("run", 5), ("eat", 5), ("open", 7)]
                .into_iter()
                .map(|(v, c)| (v.to_string(), c))
                .collect(),
            total: 17,
        };
        assert_eq!(top_k_verbs(&stats, 2), vec!["open", "eat"]);
        assert_eq!(top_k_verbs(&stats, 10).len(), 3);
        assert!(top_k_verbs(&VerbStats::default(), 3).is_empty());
    }

    #[test]
    fn stats_over_corpus() {
        let lex = VerbLexicon::bundled();
        let samples = ["person opens a door", "someone opened the fridge", "they open it", "nothing here"]
            .iter()
            .enumerate()
            .map(|(i, q)| QuerySample {
                sample_id: i.to_string(),
                video_id: "v".into(),
                video_duration: 10.0,
                query: q.to_string(),
                ground_truth: Moment::new(0.0, 1.0).unwrap(),
            })
            .collect();
        let corpus = Corpus::new(samples, Split::Train, None).unwrap();
        let stats = verb_stats(&corpus, &lex);
        assert_eq!(stats.total, 3);
        assert_eq!(stats.counts["open"], 3);
        let cov = stats.coverage(1);
        assert_eq!((cov.token, cov.types), (1.0, 1.0));
    }
}
