//! Event triples, prompt-template insertion, and component masking.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, TokenSequence, Vocabulary, MASK};

/// A `(subject, predicate, object)` event description.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

fn normalize(part: &str) -> String {
    text::words(part).collect::<Vec<_>>().join(" ")
}

impl Event {
    /// Lowercases and collapses whitespace; every component must stay non-empty.
    pub fn new(subject: &str, predicate: &str, object: &str) -> Result<Self> {
        let e = Self {
            subject: normalize(subject),
            predicate: normalize(predicate),
            object: normalize(object),
        };
        for (name, part) in [
            ("subject", &e.subject),
            ("predicate", &e.predicate),
            ("object", &e.object),
        ] {
            if part.is_empty() {
                return Err(Error::Input(format!("event {name} is empty")));
            }
        }
        Ok(e)
    }

    pub fn component(&self, c: Component) -> &str {
        match c {
            Component::Subject => &self.subject,
            Component::Predicate => &self.predicate,
            Component::Object => &self.object,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self, WordOrder::Spo))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Subject,
    Predicate,
    Object,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Subject, Component::Predicate, Component::Object];

    pub fn label(self) -> &'static str {
        match self {
            Component::Subject => "subject",
            Component::Predicate => "predicate",
            Component::Object => "object",
        }
    }

    /// Uniform draw over the three components.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..3)]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordOrder {
    #[default]
    Spo,
    Pso,
}

impl WordOrder {
    pub fn components(self) -> [Component; 3] {
        match self {
            WordOrder::Spo => [Component::Subject, Component::Predicate, Component::Object],
            WordOrder::Pso => [Component::Predicate, Component::Subject, Component::Object],
        }
    }
}

impl FromStr for WordOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spo" => Ok(Self::Spo),
            "pso" => Ok(Self::Pso),
            other => Err(Error::Config(format!("unknown word order {other:?} (spo|pso)"))),
        }
    }
}

impl fmt::Display for WordOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordOrder::Spo => "spo",
            WordOrder::Pso => "pso",
        })
    }
}

/// The prompt-template catalogue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// `x_s x_p x_o`
    None,
    /// `subject x_s predicate x_p object x_o`
    BareLabels,
    /// `subject : x_s predicate : x_p object : x_o`
    ColonLabels,
    /// `subject is x_s predicate is x_p object is x_o`
    #[default]
    IsLabels,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::None,
        Template::BareLabels,
        Template::ColonLabels,
        Template::IsLabels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::None => "none",
            Template::BareLabels => "bare_labels",
            Template::ColonLabels => "colon_labels",
            Template::IsLabels => "is_labels",
        }
    }

    fn connective(self) -> Option<&'static str> {
        match self {
            Template::None => None,
            Template::BareLabels => Some(""),
            Template::ColonLabels => Some(":"),
            Template::IsLabels => Some("is"),
        }
    }

    /// Every token a template may add, for vocabulary construction.
    pub fn scaffold_tokens() -> &'static [&'static str] {
        &["subject", "predicate", "object", "is", ":"]
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown template {s:?} (none|bare_labels|colon_labels|is_labels)"
                ))
            })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptConfig {
    pub insertion_probability: f64,
    pub template: Template,
    pub word_order: WordOrder,
    pub rng_seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            insertion_probability: 0.2,
            template: Template::IsLabels,
            word_order: WordOrder::Spo,
            rng_seed: 0,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.insertion_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "prompt insertion probability must be in [0,1], got {p}"
            )));
        }
        Ok(())
    }
}

/// Plain surface form in the given word order.
pub fn render(e: &Event, order: WordOrder) -> String {
    order.components().map(|c| e.component(c)).join(" ")
}

fn render_templated(e: &Event, order: WordOrder, template: Template) -> String {
    let Some(conn) = template.connective() else {
        return render(e, order);
    };
    let mut parts: Vec<&str> = Vec::with_capacity(9);
    for c in order.components() {
        parts.push(c.label());
        if !conn.is_empty() {
            parts.push(conn);
        }
        parts.push(e.component(c));
    }
    parts.join(" ")
}

/// Templated rendering when `insert` is true, plain rendering otherwise.
pub fn apply_prompt(e: &Event, cfg: &PromptConfig, insert: bool) -> String {
    if insert {
        render_templated(e, cfg.word_order, cfg.template)
    } else {
        render(e, cfg.word_order)
    }
}

/// One Bernoulli(π) draw for the whole event, then [`apply_prompt`].
pub fn sample_prompt<R: Rng + ?Sized>(e: &Event, cfg: &PromptConfig, rng: &mut R) -> (String, bool) {
    let insert = draw_insert(cfg.insertion_probability, rng);
    (apply_prompt(e, cfg, insert), insert)
}

fn draw_insert<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    // Always consumes one draw so streams stay aligned across values of π.
    // The draw is in [0, 1), so π = 0 never inserts and π = 1 always does.
    rng.gen::<f64>() < p
}

/// Two positives drawn independently from the same event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualPositives {
    pub first: String,
    pub second: String,
    pub first_templated: bool,
    pub second_templated: bool,
}

pub fn make_dual_positives<R: Rng + ?Sized>(e: &Event, cfg: &PromptConfig, rng: &mut R) -> DualPositives {
    let (first, first_templated) = sample_prompt(e, cfg, rng);
    let (second, second_templated) = sample_prompt(e, cfg, rng);
    DualPositives {
        first,
        second,
        first_templated,
        second_templated,
    }
}

/// An encoded event with one whole component replaced by `[MASK]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedEvent {
    pub ids: TokenSequence,
    /// `(position, original id)` for every masked token.
    pub targets: Vec<(usize, usize)>,
    pub component: Component,
}

/// Encodes the plain rendering and masks every token of `pick`.
pub fn event_mask(e: &Event, pick: Component, vocab: &Vocabulary, order: WordOrder) -> MaskedEvent {
    let mut ids = vec![text::CLS];
    let mut targets = Vec::new();
    for c in order.components() {
        for w in text::words(e.component(c)) {
            let id = vocab.id(&w);
            if c == pick {
                targets.push((ids.len(), id));
                ids.push(MASK);
            } else {
                ids.push(id);
            }
        }
    }
    ids.push(text::SEP);
    MaskedEvent {
        ids: TokenSequence { ids },
        targets,
        component: pick,
    }
}

/// [`event_mask`] with a uniformly drawn component.
pub fn sample_event_mask<R: Rng + ?Sized>(
    e: &Event,
    vocab: &Vocabulary,
    order: WordOrder,
    rng: &mut R,
) -> MaskedEvent {
    event_mask(e, Component::sample(rng), vocab, order)
}
