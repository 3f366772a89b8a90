//! Bag-of-words corpora: TF-IDF vectors, document-frequency filtering,
//! information-gain vocabulary selection and top-word topic reports.
//!
//! Corpus files hold one document per line:
//!
//! ```text
//! label<TAB>term:count term:count ...
//! ```
//!
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::coremath::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sparse rows of (term id, count), term ids ascending.
    pub docs: Vec<Vec<(usize, u32)>>,
    pub vocab: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Corpus {
    /// Builds a corpus from labeled documents given as (term, count) pairs.
    /// Vocabulary and class names are sorted so ids do not depend on input order.
    pub fn from_documents<L, T>(docs: &[(L, Vec<(T, u32)>)]) -> Result<Self>
    where
        L: AsRef<str>,
        T: AsRef<str>,
    {
        let vocab: Vec<String> = docs
            .iter()
            .flat_map(|(_, terms)| terms.iter().map(|(t, _)| t.as_ref().to_owned()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let class_names: Vec<String> = docs
            .iter()
            .map(|(l, _)| l.as_ref().to_owned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let term_id: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(docs.len());
        let mut labels = Vec::with_capacity(docs.len());
        for (line, (label, terms)) in docs.iter().enumerate() {
            let mut row: BTreeMap<usize, u32> = BTreeMap::new();
            for (t, c) in terms {
                if *c == 0 {
                    return Err(Error::Corpus {
                        line: line + 1,
                        reason: format!("term {} has zero count", t.as_ref()),
                    });
                }
                *row.entry(term_id[t.as_ref()]).or_default() += c;
            }
            rows.push(row.into_iter().collect());
            labels.push(
                class_names
                    .binary_search_by(|c| c.as_str().cmp(label.as_ref()))
                    .unwrap(),
            );
        }
        Ok(Corpus {
            docs: rows,
            vocab,
            labels,
            class_names,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, rest) = line.split_once('\t').ok_or_else(|| Error::Corpus {
                line: line_no,
                reason: "missing tab after label".into(),
            })?;
            if label.trim().is_empty() {
                return Err(Error::Corpus {
                    line: line_no,
                    reason: "empty label".into(),
                });
            }
            let mut terms = Vec::new();
            for tok in rest.split_whitespace() {
                let (term, count) = tok.rsplit_once(':').ok_or_else(|| Error::Corpus {
                    line: line_no,
                    reason: format!("token {tok:?} is not term:count"),
                })?;
                let count: u32 = count.parse().map_err(|_| Error::Corpus {
                    line: line_no,
                    reason: format!("bad count in {tok:?}"),
                })?;
                if term.is_empty() {
                    return Err(Error::Corpus {
                        line: line_no,
                        reason: format!("empty term in {tok:?}"),
                    });
                }
                terms.push((term.to_owned(), count));
            }
            docs.push((label.trim().to_owned(), terms));
        }
        Self::from_documents(&docs).map_err(|e| match e {
            // from_documents counts documents, not file lines
            Error::Corpus { reason, .. } => Error::Corpus { line: 0, reason },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (doc, &label) in self.docs.iter().zip(&self.labels) {
            out.push_str(&self.class_names[label]);
            out.push('\t');
            let terms: Vec<String> = doc.iter().map(|&(t, c)| format!("{}:{c}", self.vocab[t])).collect();
            out.push_str(&terms.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0; self.vocab.len()];
        for doc in &self.docs {
            for &(t, _) in doc {
                df[t] += 1;
            }
        }
        df
    }

    pub fn total_counts(&self) -> Vec<u64> {
        let mut tc = vec![0u64; self.vocab.len()];
        for doc in &self.docs {
            for &(t, c) in doc {
                tc[t] += c as u64;
            }
        }
        tc
    }

    /// Keeps only the listed terms, in the given order, renumbering ids.
    pub fn restrict_vocab(&self, keep: &[usize]) -> Corpus {
        let mut remap = vec![None; self.vocab.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = Some(new);
        }
        let docs = self
            .docs
            .iter()
            .map(|doc| {
                let mut row: Vec<(usize, u32)> = doc.iter().filter_map(|&(t, c)| remap[t].map(|n| (n, c))).collect();
                row.sort_unstable_by_key(|&(t, _)| t);
                row
            })
            .collect();
        Corpus {
            docs,
            vocab: keep.iter().map(|&t| self.vocab[t].clone()).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Raw TF-IDF weights: tf = count / document total, idf = ln(m / df).
pub fn tfidf_unnormalized(corpus: &Corpus) -> Result<Matrix> {
    if corpus.is_empty() {
        return Err(Error::Data("TF-IDF of an empty corpus".into()));
    }
    let m = corpus.len() as f64;
    let idf: Vec<f64> = corpus
        .document_frequencies()
        .into_iter()
        .map(|df| if df == 0 { 0.0 } else { (m / df as f64).ln() })
        .collect();
    let mut out = Matrix::zeros((corpus.len(), corpus.vocab.len()));
    for (d, doc) in corpus.docs.iter().enumerate() {
        let total: u64 = doc.iter().map(|&(_, c)| c as u64).sum();
        if total == 0 {
            warn!("document {d} is empty; emitting a zero row");
            continue;
        }
        let mut row = out.row_mut(d);
        for &(t, c) in doc {
            row[t] = c as f64 / total as f64 * idf[t];
        }
    }
    Ok(out)
}

/// TF-IDF with each document divided by its largest entry, so values land in [0,1].
pub fn tfidf(corpus: &Corpus) -> Result<Matrix> {
    let mut out = tfidf_unnormalized(corpus)?;
    for mut row in out.rows_mut() {
        let max = row.fold(0.0_f64, |a, &v| a.max(v));
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
    Ok(out)
}

/// Which per-term count the frequency band applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyKind {
    /// Number of documents containing the term.
    #[default]
    Document,
    /// Total occurrences across the corpus.
    Total,
}

pub const DEFAULT_LOW: u64 = 4;
pub const DEFAULT_HIGH: u64 = 70;

/// Drops terms whose frequency lies outside `[low, high]`.
pub fn frequency_filter(corpus: &Corpus, low: u64, high: u64, kind: FrequencyKind) -> Result<Corpus> {
    if low > high {
        return Err(Error::Config(format!("frequency band [{low}, {high}] is empty")));
    }
    let freq: Vec<u64> = match kind {
        FrequencyKind::Document => corpus.document_frequencies().into_iter().map(|d| d as u64).collect(),
        FrequencyKind::Total => corpus.total_counts(),
    };
    let keep: Vec<usize> = (0..corpus.vocab.len())
        .filter(|&t| (low..=high).contains(&freq[t]))
        .collect();
    Ok(corpus.restrict_vocab(&keep))
}

fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Information gain of binary term presence with respect to the class, in nats.
pub fn information_gain(corpus: &Corpus) -> Vec<f64> {
    let k = corpus.class_count();
    let m = corpus.len();
    let mut class_totals = vec![0usize; k];
    for &l in &corpus.labels {
        class_totals[l] += 1;
    }
    let mut present = vec![vec![0usize; k]; corpus.vocab.len()];
    for (doc, &l) in corpus.docs.iter().zip(&corpus.labels) {
        for &(t, _) in doc {
            present[t][l] += 1;
        }
    }
    let h = entropy(&class_totals);
    present
        .iter()
        .map(|with| {
            let n_with: usize = with.iter().sum();
            let without: Vec<usize> = class_totals.iter().zip(with).map(|(a, b)| a - b).collect();
            let p_with = n_with as f64 / m as f64;
            let ig = h - p_with * entropy(with) - (1.0 - p_with) * entropy(&without);
            // cancellation can leave a tiny negative residue
            ig.max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabSelection {
    pub kept_term_ids: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Top `target_dim` terms by information gain; ties go to the
/// lexicographically smaller term.
pub fn information_gain_select(corpus: &Corpus, target_dim: usize) -> Result<VocabSelection> {
    if corpus.is_empty() {
        return Err(Error::Data("information gain of an empty corpus".into()));
    }
    if target_dim > corpus.vocab.len() {
        return Err(Error::Config(format!(
            "target dimension {target_dim} exceeds vocabulary size {}",
            corpus.vocab.len()
        )));
    }
    let ig = information_gain(corpus);
    let mut order: Vec<usize> = (0..ig.len()).collect();
    order.sort_by(|&a, &b| {
        ig[b]
            .total_cmp(&ig[a])
            .then_with(|| corpus.vocab[a].cmp(&corpus.vocab[b]))
    });
    order.truncate(target_dim);
    Ok(VocabSelection {
        scores: order.iter().map(|&t| ig[t]).collect(),
        kept_term_ids: order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitWords {
    pub unit: usize,
    pub words: Vec<(String, f64)>,
}

/// For every hidden unit (row of `w1`), the `k` terms with the largest
/// connecting weights, sorted descending.
pub fn top_k_words(w1: &Matrix, vocab: &[String], k: usize) -> Result<Vec<UnitWords>> {
    if vocab.len() != w1.ncols() {
        return Err(Error::shape("vocabulary", w1.ncols(), vocab.len()));
    }
    if k > vocab.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds vocabulary size {}",
            vocab.len()
        )));
    }
    Ok(w1
        .rows()
        .into_iter()
        .enumerate()
        .map(|(unit, row)| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| vocab[a].cmp(&vocab[b])));
            UnitWords {
                unit,
                words: idx[..k].iter().map(|&t| (vocab[t].clone(), row[t])).collect(),
            }
        })
        .collect())
}

pub fn top_words_json(units: &[UnitWords]) -> Result<String> {
    serde_json::to_string_pretty(units).map_err(|e| Error::Format(e.to_string()))
}

pub fn top_words_text(units: &[UnitWords]) -> String {
    let mut out = String::new();
    for u in units {
        let words: Vec<String> = u.words.iter().map(|(w, v)| format!("{w}({v:.4})")).collect();
        let _ = writeln!(out, "unit {}: {}", u.unit, words.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn corpus(lines: &str) -> Corpus {
        Corpus::parse(lines).unwrap()
    }

    #[test]
    fn parse_and_roundtrip() {
        let c = corpus("b\tzeta:2 alpha:1\n# comment\n\na\talpha:3 alpha:1\n");
        assert_eq!(c.vocab, vec!["alpha", "zeta"]);
        assert_eq!(c.class_names, vec!["a", "b"]);
        assert_eq!(c.labels, vec![1, 0]);
        assert_eq!(c.docs, vec![vec![(0, 1), (1, 2)], vec![(0, 4)]]);
        assert_eq!(Corpus::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_errors_name_the_line() {
        assert!(matches!(
            Corpus::parse("a\tx:1\nno tab here"),
            Err(Error::Corpus { line: 2, .. })
        ));
        assert!(matches!(Corpus::parse("a\tx:one"), Err(Error::Corpus { line: 1, .. })));
        assert!(matches!(Corpus::parse("a\tx"), Err(Error::Corpus { line: 1, .. })));
        assert!(Corpus::parse("a\tx:0").is_err());
    }

    #[test]
    fn tfidf_examples() {
        let c = corpus("a\tcommon:1 rare:1\nb\tcommon:2\n");
        let x = tfidf(&c).unwrap();
        // common is everywhere: idf 0
        assert_eq!(x.column(0).to_vec(), vec![0.0, 0.0]);
        // rare: tf 0.5, idf ln 2, then max-normalized to 1
        assert_eq!(x[[0, 1]], 1.0);

        let single = corpus("a\tonly:3\n");
        // single doc has idf ln(1)=0, so the row stays zero
        assert_eq!(tfidf(&single).unwrap()[[0, 0]], 0.0);

        let c = corpus("a\tx:1 y:3\nb\tz:1\n");
        let x = tfidf(&c).unwrap();
        // pre-normalization x = 0.25 ln2, y = 0.75 ln2
        assert_abs_diff_eq!(x[[0, 0]], 0.25 / 0.75, epsilon = 1e-15);
        assert_eq!(x[[0, 1]], 1.0);
    }

    #[test]
    fn tfidf_prenormalization_arithmetic() {
        // two docs, term present in one with tf 0.5; the other term in both
        let c = corpus("a\tt:1 u:1\nb\tu:1\n");
        let x = tfidf_unnormalized(&c).unwrap();
        assert_abs_diff_eq!(x[[0, 0]], 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_eq!(x.row(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_document_gives_zero_row() {
        let c = corpus("a\tx:1\nb\t\nc\ty:1\n");
        let x = tfidf(&c).unwrap();
        assert!(x.row(1).iter().all(|&v| v == 0.0));
        assert!(tfidf(&Corpus::from_documents::<&str, &str>(&[]).unwrap()).is_err());
    }

    fn df_corpus(dfs: &[(&str, usize)], docs: usize) -> Corpus {
        let rows: Vec<(String, Vec<(String, u32)>)> = (0..docs)
            .map(|d| {
                let terms = dfs
                    .iter()
                    .filter(|(_, df)| d < *df)
                    .map(|(t, _)| (t.to_string(), 1))
                    .collect();
                ("c".to_string(), terms)
            })
            .collect();
        Corpus::from_documents(&rows).unwrap()
    }

    #[test]
    fn frequency_band_edges() {
        let c = df_corpus(
            &[
                ("three", 3),
                ("four", 4),
                ("forty", 40),
                ("seventy", 70),
                ("seventyone", 71),
            ],
            80,
        );
        let f = frequency_filter(&c, DEFAULT_LOW, DEFAULT_HIGH, FrequencyKind::Document).unwrap();
        assert_eq!(f.vocab, vec!["forty", "four", "seventy"]);
        assert_eq!(frequency_filter(&f, 4, 70, FrequencyKind::Document).unwrap(), f);
        assert!(frequency_filter(&c, 5, 4, FrequencyKind::Document).is_err());
    }

    #[test]
    fn total_count_mode() {
        let c = corpus("a\tx:5\nb\ty:1\n");
        let f = frequency_filter(&c, 4, 70, FrequencyKind::Total).unwrap();
        assert_eq!(f.vocab, vec!["x"]);
        assert!(frequency_filter(&c, 4, 70, FrequencyKind::Document)
            .unwrap()
            .vocab
            .is_empty());
    }

    #[test]
    fn information_gain_examples() {
        let c = corpus("a\tsplit:1 all:1\na\tsplit:1 all:1\nb\tall:1\nb\tall:1\n");
        let ig = information_gain(&c);
        assert_eq!(ig[0], 0.0);
        assert_abs_diff_eq!(ig[1], 2f64.ln(), epsilon = 1e-15);
        let sel = information_gain_select(&c, 2).unwrap();
        assert_eq!(sel.kept_term_ids, vec![1, 0]);
        assert!(information_gain_select(&c, 3).is_err());
    }

    #[test]
    fn information_gain_ties_are_lexicographic() {
        let c = corpus("a\tzz:1 aa:1\nb\tmm:1\n");
        let sel = information_gain_select(&c, 3).unwrap();
        let names: Vec<&str> = sel.kept_term_ids.iter().map(|&t| c.vocab[t].as_str()).collect();
        assert_eq!(names, vec!["aa", "mm", "zz"]);
    }

    #[test]
    fn top_words_examples() {
        let vocab: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let w = ndarray::array![[0.1, 5.0, 0.2], [1.0, 1.0, -3.0]];
        let top = top_k_words(&w, &vocab, 2).unwrap();
        assert_eq!(top[0].words[0].0, "b");
        assert_eq!(top[1].words, vec![("a".to_string(), 1.0), ("b".to_string(), 1.0)]);
        assert!(top.iter().all(|u| u.words.len() == 2));
        assert!(top_k_words(&w, &vocab, 4).is_err());
        assert!(top_words_text(&top).starts_with("unit 0: b(5.0000)"));
        assert!(top_words_json(&top).unwrap().contains("\"unit\": 1"));
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        proptest::collection::vec(
            (0usize..3, proptest::collection::vec((0usize..8, 1u32..4), 0..6)),
            1..25,
        )
        .prop_map(|docs| {
            let rows: Vec<(String, Vec<(String, u32)>)> = docs
                .into_iter()
                .map(|(l, terms)| {
                    (
                        format!("c{l}"),
                        terms.into_iter().map(|(t, c)| (format!("w{t}"), c)).collect(),
                    )
                })
                .collect();
            Corpus::from_documents(&rows).unwrap()
        })
    }

    proptest! {
        #[test]
        fn tfidf_in_unit_interval(c in arb_corpus()) {
            let x = tfidf(&c).unwrap();
            prop_assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn ig_nonnegative_and_bounded(c in arb_corpus()) {
            let mut totals = vec![0; c.class_count()];
            for &l in &c.labels { totals[l] += 1; }
            let h = entropy(&totals);
            for ig in information_gain(&c) {
                prop_assert!(ig >= 0.0 && ig <= h + 1e-12);
            }
        }

        #[test]
        fn filter_idempotent(c in arb_corpus(), low in 0u64..4, span in 0u64..10) {
            let once = frequency_filter(&c, low, low + span, FrequencyKind::Document).unwrap();
            let twice = frequency_filter(&once, low, low + span, FrequencyKind::Document).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn selection_scores_sorted(c in arb_corpus()) {
            let sel = information_gain_select(&c, c.vocab.len()).unwrap();
            prop_assert!(sel.scores.windows(2).all(|w| w[0] >= w[1]));
            let mut ids = sel.kept_term_ids.clone();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), c.vocab.len());
        }
    }
}
