//! Latent Dirichlet allocation by collapsed Gibbs sampling.
//!
//! Unit `d` is document `d`: its values are the smoothed document-topic
//! distribution `(n_dk + alpha) / (len_d + K alpha)`, and its token-topic
//! assignments live in [`LdaAux`]. Word-topic counts are derived state and
//! can always be recomputed from the assignments.

use rand::Rng;

use crate::datagen::BagOfWords;
use crate::error::{Result, ScarError};
use crate::params::{Aux, NormMetric, ParameterState, ParameterUnit, UnitGroup};
use crate::rng::{self, Stream};

use super::SolverConfig;

/// Token-topic assignments and the count tables derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaAux {
    pub topics: usize,
    /// One vector of topic ids per document, in unit order.
    pub assignments: Vec<Vec<u32>>,
    /// `docs x topics`, row-major.
    pub doc_topic: Vec<u32>,
    /// `vocab x topics`, row-major.
    pub word_topic: Vec<u32>,
    pub topic_totals: Vec<u64>,
}

impl LdaAux {
    fn recount(&mut self, corpus: &BagOfWords) {
        let k = self.topics;
        self.doc_topic = vec![0; corpus.docs.len() * k];
        self.word_topic = vec![0; corpus.vocab * k];
        self.topic_totals = vec![0; k];
        for (d, (doc, z)) in corpus.docs.iter().zip(&self.assignments).enumerate() {
            for (&w, &t) in doc.iter().zip(z) {
                let t = t as usize;
                self.doc_topic[d * k + t] += 1;
                self.word_topic[w as usize * k + t] += 1;
                self.topic_totals[t] += 1;
            }
        }
    }
}

/// Smoothed topic distribution of one document given its assignments.
pub fn doc_topic_distribution(assignments: &[u32], topics: usize, alpha: f64) -> Vec<f64> {
    let mut counts = vec![0u32; topics];
    for &t in assignments {
        counts[t as usize] += 1;
    }
    let denom = assignments.len() as f64 + topics as f64 * alpha;
    counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

#[derive(Debug)]
pub(crate) struct Lda<'a> {
    corpus: &'a BagOfWords,
}

impl<'a> Lda<'a> {
    pub(crate) fn new(corpus: &'a BagOfWords) -> Self {
        Self { corpus }
    }

    pub(crate) fn unit_count(&self) -> usize {
        self.corpus.docs.len()
    }

    pub(crate) fn norm_metric(&self) -> NormMetric {
        NormMetric::scaled_tv(
            self.corpus
                .docs
                .iter()
                .enumerate()
                .map(|(d, doc)| (d as u64, doc.len().max(1) as f64)),
        )
        .expect("document lengths are positive")
    }

    pub(crate) fn init(&self, cfg: &SolverConfig) -> Result<ParameterState> {
        let mut rng = rng::keyed(cfg.seed, Stream::Init, 0);
        let assignments: Vec<Vec<u32>> = self
            .corpus
            .docs
            .iter()
            .map(|doc| doc.iter().map(|_| rng.random_range(0..cfg.topics as u32)).collect())
            .collect();
        let units = self
            .corpus
            .docs
            .iter()
            .enumerate()
            .map(|(d, _)| ParameterUnit::new(d as u64, UnitGroup::LdaDoc, vec![0.0; cfg.topics]))
            .collect();
        let mut state = ParameterState::new(0, units)?.with_aux(Aux::Lda(LdaAux {
            topics: cfg.topics,
            assignments,
            doc_topic: Vec::new(),
            word_topic: Vec::new(),
            topic_totals: Vec::new(),
        }));
        self.rebuild(&mut state, cfg)?;
        Ok(state)
    }

    fn aux_mut<'s>(&self, state: &'s mut ParameterState) -> Result<&'s mut LdaAux> {
        state
            .aux
            .as_lda_mut()
            .ok_or_else(|| ScarError::structural("LDA state is missing token-topic assignments"))
    }

    fn refresh_units(&self, state: &mut ParameterState, alpha: f64) {
        let aux = state.aux.as_lda().expect("checked by caller").clone();
        let k = aux.topics;
        for d in 0..self.corpus.docs.len() {
            let denom = self.corpus.docs[d].len() as f64 + k as f64 * alpha;
            let counts = &aux.doc_topic[d * k..(d + 1) * k];
            for (v, &c) in state.values_mut(d).iter_mut().zip(counts) {
                *v = (c as f64 + alpha) / denom;
            }
        }
    }

    pub(crate) fn rebuild(&self, state: &mut ParameterState, cfg: &SolverConfig) -> Result<()> {
        let corpus = self.corpus;
        let aux = self.aux_mut(state)?;
        if aux.topics != cfg.topics {
            return Err(ScarError::structural(format!(
                "state has {} topics, config {}",
                aux.topics, cfg.topics
            )));
        }
        if aux.assignments.len() != corpus.docs.len() {
            return Err(ScarError::structural(format!(
                "assignments for {} documents, corpus has {}",
                aux.assignments.len(),
                corpus.docs.len()
            )));
        }
        for (d, (doc, z)) in corpus.docs.iter().zip(&aux.assignments).enumerate() {
            if doc.len() != z.len() {
                return Err(ScarError::structural(format!(
                    "document {d} has {} tokens but {} assignments",
                    doc.len(),
                    z.len()
                )));
            }
            if z.iter().any(|t| *t as usize >= aux.topics) {
                return Err(ScarError::structural(format!("document {d} has an invalid topic id")));
            }
        }
        aux.recount(corpus);
        self.refresh_units(state, cfg.dirichlet_alpha);
        Ok(())
    }

    pub(crate) fn step(&self, state: &mut ParameterState, cfg: &SolverConfig) -> Result<()> {
        let corpus = self.corpus;
        let mut rng = rng::keyed(cfg.seed, Stream::Gibbs, state.iteration);
        let (alpha, beta) = (cfg.dirichlet_alpha, cfg.dirichlet_beta);
        let vbeta = corpus.vocab as f64 * beta;
        let aux = self.aux_mut(state)?;
        let k = aux.topics;
        let mut cumulative = vec![0.0; k];
        for (d, doc) in corpus.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = aux.assignments[d][i] as usize;
                aux.doc_topic[d * k + old] -= 1;
                aux.word_topic[w * k + old] -= 1;
                aux.topic_totals[old] -= 1;

                let mut acc = 0.0;
                for t in 0..k {
                    acc += (aux.doc_topic[d * k + t] as f64 + alpha) * (aux.word_topic[w * k + t] as f64 + beta)
                        / (aux.topic_totals[t] as f64 + vbeta);
                    cumulative[t] = acc;
                }
                let u = rng.random::<f64>() * acc;
                let new = cumulative.iter().position(|c| u < *c).unwrap_or(k - 1);

                aux.assignments[d][i] = new as u32;
                aux.doc_topic[d * k + new] += 1;
                aux.word_topic[w * k + new] += 1;
                aux.topic_totals[new] += 1;
            }
        }
        self.refresh_units(state, alpha);
        Ok(())
    }

    /// Negative log-likelihood `-sum log sum_k theta_dk phi_kw` over tokens.
    pub(crate) fn loss(&self, state: &ParameterState, cfg: &SolverConfig) -> Result<f64> {
        let aux = state
            .aux
            .as_lda()
            .ok_or_else(|| ScarError::structural("LDA state is missing token-topic assignments"))?;
        let k = aux.topics;
        let beta = cfg.dirichlet_beta;
        let vbeta = self.corpus.vocab as f64 * beta;
        let phi: Vec<f64> = (0..self.corpus.vocab * k)
            .map(|i| (aux.word_topic[i] as f64 + beta) / (aux.topic_totals[i % k] as f64 + vbeta))
            .collect();
        let mut nll = 0.0;
        for (d, doc) in self.corpus.docs.iter().enumerate() {
            let theta = state.values(d);
            for &w in doc {
                let row = &phi[w as usize * k..(w as usize + 1) * k];
                let p: f64 = theta.iter().zip(row).map(|(a, b)| a * b).sum();
                nll -= p.ln();
            }
        }
        Ok(nll)
    }
}
