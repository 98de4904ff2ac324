//! Hard-similarity accuracy, transitive Spearman correlation, zero-shot
//! narrative cloze, alignment/uniformity, and the case-study table.
//!
//! Every metric L2-normalizes embeddings itself, so all results are invariant
//! to positive rescaling of any individual vector.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{render, Event, WordOrder};
use crate::data::{HardPair, McncInstance, TransitivePair};
use crate::error::{Error, Result};
use crate::numerics::write_atomic;
use crate::trainer::Model;

/// Anything that maps events to (not necessarily normalized) vectors.
pub trait Embedder {
    fn embed_events(&self, events: &[Event]) -> Result<Vec<Vec<f64>>>;
}

/// Evaluation encodes the plain SPO rendering, never a templated one.
impl Embedder for Model {
    fn embed_events(&self, events: &[Event]) -> Result<Vec<Vec<f64>>> {
        let texts: Vec<String> = events.iter().map(|e| render(e, WordOrder::Spo)).collect();
        self.encoder.pooled_vectors(&texts, &self.vocab)
    }
}

/// Adapts a closure to [`Embedder`], mainly for oracle embedders in tests.
pub struct FnEmbedder<F>(pub F);

impl<F: Fn(&Event) -> Vec<f64>> Embedder for FnEmbedder<F> {
    fn embed_events(&self, events: &[Event]) -> Result<Vec<Vec<f64>>> {
        Ok(events.iter().map(&self.0).collect())
    }
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize embedding with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit embedding of a single event.
pub fn embed(e: &Event, embedder: &dyn Embedder) -> Result<Vec<f64>> {
    let v = embedder.embed_events(std::slice::from_ref(e))?;
    normalize(&v[0])
}

/// Unit embeddings of distinct events, computed in one pass.
struct Table {
    index: HashMap<Event, usize>,
    vectors: Vec<Vec<f64>>,
}

impl Table {
    fn build<'a>(events: impl IntoIterator<Item = &'a Event>, embedder: &dyn Embedder) -> Result<Self> {
        let mut index = HashMap::new();
        let mut unique = Vec::new();
        for e in events {
            if !index.contains_key(e) {
                index.insert(e.clone(), unique.len());
                unique.push(e.clone());
            }
        }
        let raw = if unique.is_empty() {
            Vec::new()
        } else {
            embedder.embed_events(&unique)?
        };
        if raw.len() != unique.len() {
            return Err(Error::Dimension(format!(
                "embedder returned {} vectors for {} events",
                raw.len(),
                unique.len()
            )));
        }
        let vectors = raw.iter().map(|v| normalize(v)).collect::<Result<_>>()?;
        Ok(Self { index, vectors })
    }

    fn get(&self, e: &Event) -> &[f64] {
        &self.vectors[self.index[e]]
    }

    fn cos(&self, a: &Event, b: &Event) -> f64 {
        dot(self.get(a), self.get(b))
    }
}

/// Percentage of pairs whose similar cosine strictly exceeds the dissimilar one.
pub fn hard_similarity_accuracy(pairs: &[HardPair], embedder: &dyn Embedder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("hard similarity needs at least one pair".into()));
    }
    let t = Table::build(
        pairs
            .iter()
            .flat_map(|p| [&p.similar.0, &p.similar.1, &p.dissimilar.0, &p.dissimilar.1]),
        embedder,
    )?;
    let correct = pairs
        .iter()
        .filter(|p| t.cos(&p.similar.0, &p.similar.1) > t.cos(&p.dissimilar.0, &p.dissimilar.1))
        .count();
    Ok(100.0 * correct as f64 / pairs.len() as f64)
}

/// 1-based ranks with ties sharing the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("spearman: {} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Input("spearman needs at least 2 pairs".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Input("spearman is undefined when one side is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn transitive_spearman(pairs: &[TransitivePair], embedder: &dyn Embedder) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Input("transitive similarity needs at least 2 pairs".into()));
    }
    let t = Table::build(pairs.iter().flat_map(|p| [&p.event_a, &p.event_b]), embedder)?;
    let predicted: Vec<f64> = pairs.iter().map(|p| t.cos(&p.event_a, &p.event_b)).collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold_score).collect();
    spearman(&predicted, &gold)
}

/// Index of the candidate closest to the re-normalized mean context vector.
/// The lowest index wins ties.
fn mcnc_choice(t: &Table, m: &McncInstance) -> Result<usize> {
    if m.context.is_empty() {
        return Err(Error::Input("MCNC instance has an empty context".into()));
    }
    let d = t.get(&m.context[0]).len();
    let mut mean = vec![0.0; d];
    for e in &m.context {
        for (acc, v) in mean.iter_mut().zip(t.get(e)) {
            *acc += v;
        }
    }
    let ctx = normalize(&mean)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in m.candidates.iter().enumerate() {
        let s = dot(&ctx, t.get(c));
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

pub fn mcnc_accuracy(instances: &[McncInstance], embedder: &dyn Embedder) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Input("MCNC needs at least one instance".into()));
    }
    let t = Table::build(
        instances.iter().flat_map(|m| m.context.iter().chain(&m.candidates)),
        embedder,
    )?;
    let mut correct = 0;
    for m in instances {
        if mcnc_choice(&t, m)? == m.gold_index {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / instances.len() as f64)
}

/// `(align, uniform)` on unit embeddings, with `t = 2` in the Gaussian potential.
///
/// Uniformity averages over unordered pairs of distinct events.
pub fn alignment_uniformity(
    positive_pairs: &[(Event, Event)],
    all_events: &[Event],
    embedder: &dyn Embedder,
) -> Result<(f64, f64)> {
    if positive_pairs.is_empty() {
        return Err(Error::Input("alignment needs at least one positive pair".into()));
    }
    let t = Table::build(
        positive_pairs.iter().flat_map(|(a, b)| [a, b]).chain(all_events),
        embedder,
    )?;
    let mut distinct: Vec<&Event> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for e in all_events {
        if seen.insert(e) {
            distinct.push(e);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::Input("uniformity needs at least 2 distinct events".into()));
    }
    let align = positive_pairs
        .iter()
        .map(|(a, b)| sq_dist(t.get(a), t.get(b)))
        .sum::<f64>()
        / positive_pairs.len() as f64;
    let (mut acc, mut n) = (0.0, 0usize);
    for i in 0..distinct.len() {
        for j in i + 1..distinct.len() {
            acc += (-2.0 * sq_dist(t.get(distinct[i]), t.get(distinct[j]))).exp();
            n += 1;
        }
    }
    Ok((align, (acc / n as f64).ln()))
}

/// One row of the case-study table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub event_a: Event,
    pub event_b: Event,
    pub cosine: f64,
    pub label: f64,
}

pub fn case_study_dump(triples: &[(Event, Event, f64)], embedder: &dyn Embedder) -> Result<Vec<CaseRow>> {
    let t = Table::build(triples.iter().flat_map(|(a, b, _)| [a, b]), embedder)?;
    Ok(triples
        .iter()
        .map(|(a, b, label)| CaseRow {
            event_a: a.clone(),
            event_b: b.clone(),
            cosine: t.cos(a, b),
            label: *label,
        })
        .collect())
}

/// Tab-separated rendering of the case-study rows, with a header line.
pub fn case_table_tsv(rows: &[CaseRow]) -> String {
    let mut s = String::from("event_a\tevent_b\tcosine\tlabel\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{:.6}\t{}\n", r.event_a, r.event_b, r.cosine, r.label));
    }
    s
}

/// Similar pairs labeled 1 and dissimilar pairs labeled 0.
pub fn hard_pair_cases(pairs: &[HardPair]) -> Vec<(Event, Event, f64)> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                (p.similar.0.clone(), p.similar.1.clone(), 1.0),
                (p.dissimilar.0.clone(), p.dissimilar.1.clone(), 0.0),
            ]
        })
        .collect()
}

/// The evaluation datasets a report is computed from.
#[derive(Clone, Debug, Default)]
pub struct EvalSets {
    pub hard_original: Vec<HardPair>,
    pub hard_extended: Vec<HardPair>,
    pub transitive: Vec<TransitivePair>,
    pub mcnc: Vec<McncInstance>,
}

impl EvalSets {
    /// Positive pairs for alignment: every similar pair across both hard sets.
    pub fn positive_pairs(&self) -> Vec<(Event, Event)> {
        let mut seen = std::collections::HashSet::new();
        self.hard_original
            .iter()
            .chain(&self.hard_extended)
            .map(|p| p.similar.clone())
            .filter(|p| seen.insert(p.clone()))
            .collect()
    }

    /// Every distinct event mentioned by any set, in first-seen order.
    pub fn all_events(&self) -> Vec<Event> {
        let mut seen = std::collections::HashSet::new();
        let hard = self
            .hard_original
            .iter()
            .chain(&self.hard_extended)
            .flat_map(|p| [&p.similar.0, &p.similar.1, &p.dissimilar.0, &p.dissimilar.1]);
        let trans = self.transitive.iter().flat_map(|p| [&p.event_a, &p.event_b]);
        let mcnc = self.mcnc.iter().flat_map(|m| m.context.iter().chain(&m.candidates));
        hard.chain(trans)
            .chain(mcnc)
            .filter(|e| seen.insert(*e))
            .cloned()
            .collect()
    }
}

/// The six-number metric report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub original_acc: f64,
    pub extended_acc: f64,
    pub transitive_rho: f64,
    pub mcnc_acc: f64,
    pub align: f64,
    pub uniform: f64,
}

/// Serves vectors embedded once up front.
struct Precomputed(Table);

impl Embedder for Precomputed {
    fn embed_events(&self, events: &[Event]) -> Result<Vec<Vec<f64>>> {
        events
            .iter()
            .map(|e| {
                self.0
                    .index
                    .get(e)
                    .map(|&i| self.0.vectors[i].clone())
                    .ok_or_else(|| Error::Index(format!("event {e} was not pre-embedded")))
            })
            .collect()
    }
}

pub fn evaluate(sets: &EvalSets, embedder: &dyn Embedder) -> Result<EvalReport> {
    let all = sets.all_events();
    let cache = Precomputed(Table::build(&all, embedder)?);
    let embedder: &dyn Embedder = &cache;
    let (align, uniform) = alignment_uniformity(&sets.positive_pairs(), &all, embedder)?;
    Ok(EvalReport {
        original_acc: hard_similarity_accuracy(&sets.hard_original, embedder)?,
        extended_acc: hard_similarity_accuracy(&sets.hard_extended, embedder)?,
        transitive_rho: transitive_spearman(&sets.transitive, embedder)?,
        mcnc_acc: mcnc_accuracy(&sets.mcnc, embedder)?,
        align,
        uniform,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}

#[cfg(test)]
mod tests;
