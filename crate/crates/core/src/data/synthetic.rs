use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_jsonl, HardPair, McncInstance, TransitivePair, MCNC_CANDIDATES};
use crate::augment::{Component, Event};
use crate::error::{Error, Result};

/// Interchangeable single-word fillers for each role of one event type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynonymCluster {
    pub name: String,
    pub subjects: Vec<String>,
    pub predicates: Vec<String>,
    pub objects: Vec<String>,
}

impl SynonymCluster {
    fn new(name: &str, s: [&str; 4], p: [&str; 4], o: [&str; 4]) -> Self {
        let own = |ws: [&str; 4]| ws.iter().map(|w| w.to_string()).collect();
        Self {
            name: name.into(),
            subjects: own(s),
            predicates: own(p),
            objects: own(o),
        }
    }

    pub fn words(&self, role: Component) -> &[String] {
        match role {
            Component::Subject => &self.subjects,
            Component::Predicate => &self.predicates,
            Component::Object => &self.objects,
        }
    }
}

/// Forty hand-written clusters with four synonyms per role.
pub fn default_clusters() -> Vec<SynonymCluster> {
    vec![
        SynonymCluster::new(
            "initiative",
            ["army", "military", "troops", "forces"],
            ["start", "launch", "begin", "initiate"],
            ["initiative", "program", "campaign", "operation"],
        ),
        SynonymCluster::new(
            "weapons",
            ["navy", "fleet", "warship", "submarine"],
            ["fire", "shoot", "deploy", "discharge"],
            ["missile", "rocket", "torpedo", "weapon"],
        ),
        SynonymCluster::new(
            "escape",
            ["fugitive", "refugee", "prisoner", "suspect"],
            ["flee", "escape", "leave", "abandon"],
            ["city", "town", "village", "capital"],
        ),
        SynonymCluster::new(
            "acquisition",
            ["company", "firm", "corporation", "business"],
            ["acquire", "buy", "purchase", "obtain"],
            ["startup", "rival", "competitor", "subsidiary"],
        ),
        SynonymCluster::new(
            "legislation",
            ["parliament", "congress", "senate", "legislature"],
            ["pass", "approve", "enact", "adopt"],
            ["law", "bill", "act", "statute"],
        ),
        SynonymCluster::new(
            "baking",
            ["chef", "baker", "caterer", "confectioner"],
            ["prepare", "bake", "roast", "cook"],
            ["bread", "cake", "pie", "pastry"],
        ),
        SynonymCluster::new(
            "sports",
            ["team", "squad", "club", "side"],
            ["win", "clinch", "capture", "secure"],
            ["championship", "title", "trophy", "cup"],
        ),
        SynonymCluster::new(
            "medicine",
            ["doctor", "physician", "surgeon", "nurse"],
            ["treat", "heal", "cure", "examine"],
            ["patient", "victim", "child", "invalid"],
        ),
        SynonymCluster::new(
            "arrest",
            ["police", "officers", "detectives", "cops"],
            ["arrest", "detain", "apprehend", "seize"],
            ["thief", "robber", "burglar", "criminal"],
        ),
        SynonymCluster::new(
            "study",
            ["student", "pupil", "scholar", "learner"],
            ["study", "read", "review", "learn"],
            ["book", "textbook", "lesson", "chapter"],
        ),
        SynonymCluster::new(
            "music",
            ["band", "orchestra", "singer", "musician"],
            ["perform", "play", "sing", "record"],
            ["song", "concert", "melody", "tune"],
        ),
        SynonymCluster::new(
            "disaster",
            ["storm", "hurricane", "flood", "tornado"],
            ["destroy", "damage", "wreck", "devastate"],
            ["house", "home", "building", "bridge"],
        ),
        SynonymCluster::new(
            "lending",
            ["bank", "lender", "investor", "creditor"],
            ["lend", "loan", "provide", "grant"],
            ["money", "funds", "cash", "credit"],
        ),
        SynonymCluster::new(
            "farming",
            ["farmer", "grower", "peasant", "rancher"],
            ["plant", "sow", "harvest", "grow"],
            ["wheat", "corn", "rice", "barley"],
        ),
        SynonymCluster::new(
            "negotiation",
            ["diplomat", "envoy", "ambassador", "negotiator"],
            ["negotiate", "mediate", "arrange", "sign"],
            ["treaty", "accord", "truce", "ceasefire"],
        ),
        SynonymCluster::new(
            "construction",
            ["builder", "contractor", "mason", "carpenter"],
            ["construct", "erect", "build", "assemble"],
            ["tower", "skyscraper", "warehouse", "factory"],
        ),
        SynonymCluster::new(
            "journalism",
            ["reporter", "journalist", "correspondent", "columnist"],
            ["write", "publish", "print", "draft"],
            ["article", "story", "report", "editorial"],
        ),
        SynonymCluster::new(
            "election",
            ["voters", "electorate", "citizens", "constituents"],
            ["elect", "choose", "pick", "select"],
            ["president", "mayor", "governor", "senator"],
        ),
        SynonymCluster::new(
            "fishing",
            ["fisherman", "angler", "trawler", "fisher"],
            ["catch", "hook", "net", "land"],
            ["salmon", "trout", "tuna", "cod"],
        ),
        SynonymCluster::new(
            "hiring",
            ["employer", "manager", "recruiter", "boss"],
            ["hire", "recruit", "employ", "appoint"],
            ["worker", "employee", "staff", "clerk"],
        ),
        SynonymCluster::new(
            "protest",
            ["protesters", "demonstrators", "activists", "marchers"],
            ["block", "occupy", "barricade", "picket"],
            ["street", "road", "highway", "avenue"],
        ),
        SynonymCluster::new(
            "intrusion",
            ["hacker", "intruder", "attacker", "spammer"],
            ["breach", "infiltrate", "penetrate", "compromise"],
            ["network", "server", "database", "system"],
        ),
        SynonymCluster::new(
            "tourism",
            ["tourist", "traveler", "visitor", "sightseer"],
            ["visit", "tour", "explore", "see"],
            ["museum", "gallery", "cathedral", "palace"],
        ),
        SynonymCluster::new(
            "research",
            ["scientist", "researcher", "chemist", "biologist"],
            ["discover", "find", "identify", "detect"],
            ["virus", "bacterium", "gene", "protein"],
        ),
        SynonymCluster::new(
            "driving",
            ["driver", "motorist", "chauffeur", "trucker"],
            ["drive", "steer", "park", "crash"],
            ["car", "truck", "van", "vehicle"],
        ),
        SynonymCluster::new(
            "aviation",
            ["pilot", "aviator", "captain", "copilot"],
            ["fly", "navigate", "taxi", "ground"],
            ["plane", "jet", "aircraft", "airliner"],
        ),
        SynonymCluster::new(
            "gardening",
            ["gardener", "florist", "landscaper", "horticulturist"],
            ["water", "prune", "trim", "weed"],
            ["roses", "tulips", "flowers", "shrubs"],
        ),
        SynonymCluster::new(
            "painting",
            ["artist", "painter", "sculptor", "illustrator"],
            ["paint", "draw", "sketch", "depict"],
            ["portrait", "landscape", "mural", "picture"],
        ),
        SynonymCluster::new(
            "verdict",
            ["judge", "jury", "court", "tribunal"],
            ["convict", "sentence", "condemn", "punish"],
            ["defendant", "accused", "offender", "culprit"],
        ),
        SynonymCluster::new(
            "firefighting",
            ["firefighters", "firemen", "crews", "rescuers"],
            ["extinguish", "douse", "contain", "battle"],
            ["blaze", "inferno", "wildfire", "flames"],
        ),
        SynonymCluster::new(
            "teaching",
            ["teacher", "professor", "tutor", "instructor"],
            ["teach", "instruct", "educate", "train"],
            ["class", "course", "seminar", "workshop"],
        ),
        SynonymCluster::new(
            "shopping",
            ["shopper", "customer", "consumer", "buyer"],
            ["browse", "order", "return", "exchange"],
            ["shoes", "clothes", "dress", "jacket"],
        ),
        SynonymCluster::new(
            "cleaning",
            ["janitor", "cleaner", "maid", "housekeeper"],
            ["clean", "sweep", "mop", "scrub"],
            ["floor", "kitchen", "bathroom", "hallway"],
        ),
        SynonymCluster::new(
            "wedding",
            ["bride", "groom", "fiance", "fiancee"],
            ["marry", "wed", "engage", "elope"],
            ["partner", "spouse", "sweetheart", "lover"],
        ),
        SynonymCluster::new(
            "mining",
            ["miner", "prospector", "digger", "excavator"],
            ["dig", "mine", "extract", "excavate"],
            ["gold", "coal", "ore", "silver"],
        ),
        SynonymCluster::new(
            "broadcast",
            ["broadcaster", "station", "channel", "studio"],
            ["air", "broadcast", "televise", "stream"],
            ["documentary", "show", "series", "episode"],
        ),
        SynonymCluster::new(
            "rescue",
            ["lifeguard", "coastguard", "paramedic", "medic"],
            ["rescue", "save", "retrieve", "evacuate"],
            ["swimmer", "sailor", "hiker", "climber"],
        ),
        SynonymCluster::new(
            "hunting",
            ["hunter", "poacher", "trapper", "stalker"],
            ["hunt", "kill", "trap", "track"],
            ["deer", "bear", "wolf", "fox"],
        ),
        SynonymCluster::new(
            "trading",
            ["trader", "broker", "speculator", "dealer"],
            ["sell", "trade", "dump", "short"],
            ["shares", "stocks", "bonds", "securities"],
        ),
        SynonymCluster::new(
            "epidemic",
            ["disease", "epidemic", "pandemic", "outbreak"],
            ["infect", "sicken", "strike", "afflict"],
            ["population", "residents", "villagers", "inhabitants"],
        ),
    ]
}

/// Recipe for a desk-scale analogue of the training corpus and the three
/// evaluation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// How many clusters of `cluster_vocab` to use (taken from the front).
    pub num_synonym_clusters: usize,
    pub cluster_vocab: Vec<SynonymCluster>,
    pub events_per_cluster: usize,
    /// Fraction of corpus events with one role drawn from another cluster.
    pub mixed_fraction: f64,
    pub hard_original: usize,
    pub hard_extended: usize,
    pub transitive_pairs: usize,
    pub mcnc_instances: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let clusters = default_clusters();
        Self {
            num_synonym_clusters: clusters.len(),
            cluster_vocab: clusters,
            events_per_cluster: 55,
            mixed_fraction: 0.1,
            hard_original: 230,
            hard_extended: 1000,
            transitive_pairs: 108,
            mcnc_instances: 1000,
            context_len: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_synonym_clusters;
        if k < 2 {
            return Err(Error::Input(format!("need at least 2 synonym clusters, got {k}")));
        }
        if k > self.cluster_vocab.len() {
            return Err(Error::Input(format!(
                "{k} clusters requested but only {} defined",
                self.cluster_vocab.len()
            )));
        }
        if self.mcnc_instances > 0 && k < MCNC_CANDIDATES {
            return Err(Error::Input(format!(
                "MCNC distractors need at least {MCNC_CANDIDATES} clusters, got {k}"
            )));
        }
        if self.hard_original > self.hard_extended {
            return Err(Error::Input("hard_original cannot exceed hard_extended".into()));
        }
        if !(0.0..=1.0).contains(&self.mixed_fraction) || self.context_len == 0 || self.events_per_cluster == 0 {
            return Err(Error::Input(
                "mixed_fraction in [0,1], context_len >= 1 and events_per_cluster >= 1 required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.cluster_vocab[..k] {
            for role in Component::ALL {
                let words = c.words(role);
                if words.len() < 2 {
                    return Err(Error::Input(format!(
                        "cluster {:?} needs at least 2 {} words",
                        c.name,
                        role.label()
                    )));
                }
                for w in words {
                    if w.is_empty() || w.split_whitespace().count() != 1 || *w != w.to_lowercase() {
                        return Err(Error::Input(format!("cluster word {w:?} must be one lowercase token")));
                    }
                    if !seen.insert(w.as_str()) {
                        return Err(Error::Input(format!("word {w:?} appears in more than one slot")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything [`generate_synthetic`] produces.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<Event>,
    /// The first `hard_original` pairs of `hard_extended`.
    pub hard_original: Vec<HardPair>,
    pub hard_extended: Vec<HardPair>,
    pub transitive: Vec<TransitivePair>,
    pub mcnc: Vec<McncInstance>,
}

impl SyntheticData {
    pub const CORPUS_FILE: &'static str = "corpus.jsonl";
    pub const HARD_ORIGINAL_FILE: &'static str = "hard_original.jsonl";
    pub const HARD_EXTENDED_FILE: &'static str = "hard_extended.jsonl";
    pub const TRANSITIVE_FILE: &'static str = "transitive.jsonl";
    pub const MCNC_FILE: &'static str = "mcnc.jsonl";

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(Self::CORPUS_FILE), &self.corpus)?;
        write_jsonl(&dir.join(Self::HARD_ORIGINAL_FILE), &self.hard_original)?;
        write_jsonl(&dir.join(Self::HARD_EXTENDED_FILE), &self.hard_extended)?;
        write_jsonl(&dir.join(Self::TRANSITIVE_FILE), &self.transitive)?;
        write_jsonl(&dir.join(Self::MCNC_FILE), &self.mcnc)
    }
}

struct Generator<'a> {
    clusters: &'a [SynonymCluster],
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn pick<'w>(&mut self, words: &'w [String]) -> &'w str {
        words.choose(&mut self.rng).expect("validated non-empty")
    }

    fn other_cluster(&mut self, c: usize) -> usize {
        let o = self.rng.gen_range(0..self.clusters.len() - 1);
        if o >= c {
            o + 1
        } else {
            o
        }
    }

    fn event_from(&mut self, words: [&[String]; 3]) -> Event {
        let (s, p, o) = (self.pick(words[0]), self.pick(words[1]), self.pick(words[2]));
        Event::new(s, p, o).expect("cluster words are non-empty")
    }

    fn pure_event(&mut self, c: usize) -> Event {
        let cl = &self.clusters[c];
        self.event_from(Component::ALL.map(|r| cl.words(r)))
    }

    fn with_role(e: &Event, role: Component, word: &str) -> Event {
        let mut parts = Component::ALL.map(|r| e.component(r).to_string());
        parts[role as usize] = word.to_string();
        Event::new(&parts[0], &parts[1], &parts[2]).expect("non-empty parts")
    }

    /// A same-role word of cluster `c` different from `avoid`.
    fn synonym(&mut self, c: usize, role: Component, avoid: &str) -> String {
        let options: Vec<&String> = self.clusters[c].words(role).iter().filter(|w| *w != avoid).collect();
        options.choose(&mut self.rng).expect("at least two words per role").to_string()
    }

    fn corpus(&mut self, per_cluster: usize, mixed: f64) -> Vec<Event> {
        let mut out = Vec::with_capacity(per_cluster * self.clusters.len());
        for c in 0..self.clusters.len() {
            for _ in 0..per_cluster {
                let mut e = self.pure_event(c);
                if self.rng.gen::<f64>() < mixed {
                    let role = Component::sample(&mut self.rng);
                    let o = self.other_cluster(c);
                    let w = self.pick(self.clusters[o].words(role)).to_string();
                    e = Self::with_role(&e, role, &w);
                }
                out.push(e);
            }
        }
        out.shuffle(&mut self.rng);
        out
    }

    fn hard_pair(&mut self) -> HardPair {
        let c = self.rng.gen_range(0..self.clusters.len());
        let a = self.pure_event(c);
        let mut syn = a.clone();
        for role in Component::ALL {
            let w = self.synonym(c, role, a.component(role));
            syn = Self::with_role(&syn, role, &w);
        }
        let role = Component::sample(&mut self.rng);
        let o = self.other_cluster(c);
        let w = self.pick(self.clusters[o].words(role)).to_string();
        let dis = Self::with_role(&a, role, &w);
        debug_assert_eq!(shared_slots(&a, &syn), 0);
        debug_assert_eq!(shared_slots(&a, &dis), 2);
        HardPair {
            similar: (a.clone(), syn),
            dissimilar: (a, dis),
        }
    }

    fn transitive_pair(&mut self) -> TransitivePair {
        let c = self.rng.gen_range(0..self.clusters.len());
        let a = self.pure_event(c);
        let differing = self.rng.gen_range(0..=3usize);
        let mut roles = Component::ALL;
        roles.shuffle(&mut self.rng);
        let mut b = a.clone();
        for (i, role) in roles.into_iter().enumerate() {
            let w = if i < differing {
                let o = self.other_cluster(c);
                self.pick(self.clusters[o].words(role)).to_string()
            } else {
                self.synonym(c, role, a.component(role))
            };
            b = Self::with_role(&b, role, &w);
        }
        TransitivePair {
            event_a: a,
            event_b: b,
            gold_score: 7.0 - 2.0 * differing as f64,
        }
    }

    fn mcnc(&mut self, context_len: usize) -> McncInstance {
        let c = self.rng.gen_range(0..self.clusters.len());
        // context and gold draw from disjoint halves of each role's synonyms
        let mut context_words: Vec<Vec<String>> = Vec::new();
        let mut gold_words: Vec<Vec<String>> = Vec::new();
        for role in Component::ALL {
            let mut ws = self.clusters[c].words(role).to_vec();
            ws.shuffle(&mut self.rng);
            let half = (ws.len() / 2).max(1);
            gold_words.push(ws.split_off(half));
            context_words.push(ws);
        }
        let context = (0..context_len)
            .map(|_| self.event_from([&context_words[0], &context_words[1], &context_words[2]]))
            .collect();
        let gold = self.event_from([&gold_words[0], &gold_words[1], &gold_words[2]]);
        let others: Vec<usize> = (0..self.clusters.len()).filter(|&o| o != c).collect();
        let picks: Vec<usize> = others
            .choose_multiple(&mut self.rng, MCNC_CANDIDATES - 1)
            .copied()
            .collect();
        let mut candidates: Vec<Event> = picks.into_iter().map(|o| self.pure_event(o)).collect();
        let gold_index = self.rng.gen_range(0..MCNC_CANDIDATES);
        candidates.insert(gold_index, gold);
        McncInstance {
            context,
            candidates,
            gold_index,
        }
    }
}

/// Number of roles on which two events use the same word.
pub(crate) fn shared_slots(a: &Event, b: &Event) -> usize {
    Component::ALL
        .iter()
        .filter(|&&r| a.component(r) == b.component(r))
        .count()
}

/// Builds the synthetic corpus and evaluation sets; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut g = Generator {
        clusters: &spec.cluster_vocab[..spec.num_synonym_clusters],
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let corpus = g.corpus(spec.events_per_cluster, spec.mixed_fraction);
    let hard_extended: Vec<HardPair> = (0..spec.hard_extended).map(|_| g.hard_pair()).collect();
    let transitive = (0..spec.transitive_pairs).map(|_| g.transitive_pair()).collect();
    let mcnc = (0..spec.mcnc_instances).map(|_| g.mcnc(spec.context_len)).collect();
    Ok(SyntheticData {
        corpus,
        hard_original: hard_extended[..spec.hard_original].to_vec(),
        hard_extended,
        transitive,
        mcnc,
    })
}
