//! Synthetic inquiries with a planted tabular x text interaction.
//!
//! Every class has a text template group (a keyword pool dropped into shared
//! sentence frames) and a signal profile (a numerical mean vector plus
//! preferred categories). Five classes share one template group and differ
//! only in their signals; five other classes share one signal profile and
//! differ only in their text. The remaining three are unique in both. So a
//! text-only model cannot separate the first five, a tabular-only model
//! cannot separate the second five, and the pair of sources identifies every
//! class.
//!
//! With probability `noise`, an example's template group (and, independently,
//! its signal profile) is replaced by that of a uniformly drawn class.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Example, CLASS_NAMES, NUM_CLASSES};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor2D};
use crate::textprep;

pub const MANIFEST_VERSION: u32 = 1;

/// Classes sharing one template group; only signals tell them apart.
pub const SHARED_TEXT_CLASSES: [usize; 5] = [1, 8, 9, 6, 11];
/// Classes sharing one signal profile; only text tells them apart.
pub const SHARED_SIGNAL_CLASSES: [usize; 5] = [5, 10, 3, 0, 7];

const SHARED_KEYWORDS: [&str; 4] = ["account", "offer", "status", "update"];

/// Keywords for classes with their own template group, by class index.
fn own_keywords(class: usize) -> [&'static str; 4] {
    match class {
        0 => ["cost", "fee", "repayment", "percentage"],
        2 => ["payoff", "early", "balance", "remaining"],
        3 => ["edit", "change", "submitted", "application"],
        4 => ["funds", "deposit", "arrive", "bank"],
        5 => ["enroll", "apply", "signup", "start"],
        7 => ["minimum", "payment", "period", "schedule"],
        10 => ["credit", "report", "score", "check"],
        12 => ["password", "login", "hardware", "receipt"],
        _ => SHARED_KEYWORDS,
    }
}

const FRAMES: [&str; 8] = [
    "Hi, I have a question about my {a} and the {b}.",
    "Hello, can you tell me about the {a} {b}? Thanks",
    "I'd like to know more about {a}. I don't understand the {b}!",
    "My {a} changed on {date}, what about the {b}?",
    "Regarding the {a} of {amount}, can I get help with {b}?",
    "Please contact me at {email} about {a} and {b}.",
    "Call me at {phone} about the {b} and {a}",
    "{a} {b} question",
];

const CATEGORICAL: [(&str, [&str; 4]); 3] = [
    ("account_tier", ["bronze", "silver", "gold", "platinum"]),
    ("region", ["north", "south", "east", "west"]),
    ("product", ["pos", "online", "invoices", "payroll"]),
];

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub num_features: usize,
    pub embed_dim: usize,
    /// Probability that a categorical feature takes its profile's preferred value.
    pub categorical_purity: f64,
    /// Spread of profile means; per-example noise has unit std.
    pub profile_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1300,
            noise: 0.05,
            seed: 5,
            num_features: 20,
            embed_dim: 16,
            categorical_purity: 0.7,
            profile_scale: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateGroup {
    pub id: usize,
    pub classes: Vec<String>,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalProfile {
    pub id: usize,
    pub classes: Vec<String>,
    pub numerical_mean: Vec<f64>,
    pub preferred_categories: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ceiling {
    pub top1: f64,
    pub top3: f64,
}

/// Bayes-optimal accuracy of a classifier that observes only the template
/// group (`text`), only the signal profile (`signal`), or both (`joint`),
/// assuming groups and profiles themselves are perfectly recognizable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ceilings {
    pub text: Ceiling,
    pub signal: Ceiling,
    pub joint: Ceiling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: SyntheticConfig,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub text_group_of_class: Vec<usize>,
    pub signal_profile_of_class: Vec<usize>,
    pub frames: Vec<String>,
    pub template_groups: Vec<TemplateGroup>,
    pub signal_profiles: Vec<SignalProfile>,
    /// Classes that only signals can separate (shared text).
    pub signal_disambiguated: Vec<String>,
    /// Classes that only text can separate (shared signals).
    pub text_disambiguated: Vec<String>,
    pub shared_text_pairs: Vec<(String, String)>,
    pub shared_signal_pairs: Vec<(String, String)>,
    pub ceilings: Ceilings,
}

pub struct SyntheticDataset {
    pub examples: Vec<Example>,
    pub manifest: Manifest,
    /// Random word vectors covering every token the generator can emit.
    pub embeddings: EmbeddingTable,
}

impl SyntheticDataset {
    pub fn write(&self, data: &Path, manifest: &Path, vectors: Option<&Path>) -> Result<()> {
        super::write_jsonl(data, &self.examples)?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(manifest, json + "\n").map_err(|e| Error::io(manifest, e))?;
        if let Some(v) = vectors {
            self.embeddings.write_vec_file(v)?;
        }
        Ok(())
    }
}

/// Group id per class: the shared classes get group 0, every other class its
/// own id in class order.
fn group_map(shared: &[usize]) -> Vec<usize> {
    let mut next = 1;
    (0..NUM_CLASSES)
        .map(|c| {
            if shared.contains(&c) {
                0
            } else {
                next += 1;
                next - 1
            }
        })
        .collect()
}

fn pairs(classes: &[usize]) -> Vec<(String, String)> {
    classes
        .windows(2)
        .map(|w| (CLASS_NAMES[w[0]].to_string(), CLASS_NAMES[w[1]].to_string()))
        .collect()
}

/// Probability of observing group `g` for class `c` under flip noise.
fn obs_prob(groups: &[usize], c: usize, g: usize, noise: f64) -> f64 {
    let share = groups.iter().filter(|x| **x == g).count() as f64 / NUM_CLASSES as f64;
    let own = if groups[c] == g { 1.0 } else { 0.0 };
    (1.0 - noise) * own + noise * share
}

fn top_k_mass(scores: &mut [f64], k: usize) -> f64 {
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.iter().take(k).sum()
}

/// Enumerates every observable outcome and sums the `k` best posterior
/// masses.
pub fn bayes_ceilings(text: &[usize], signal: &[usize], priors: &[f64], noise: f64) -> Ceilings {
    let n_text = text.iter().max().unwrap() + 1;
    let n_sig = signal.iter().max().unwrap() + 1;
    let single = |groups: &[usize], n_groups: usize, k: usize| -> f64 {
        (0..n_groups)
            .map(|g| {
                let mut s: Vec<f64> = (0..NUM_CLASSES)
                    .map(|c| priors[c] * obs_prob(groups, c, g, noise))
                    .collect();
                top_k_mass(&mut s, k)
            })
            .sum()
    };
    let joint = |k: usize| -> f64 {
        let mut total = 0.0;
        for gt in 0..n_text {
            for gs in 0..n_sig {
                let mut s: Vec<f64> = (0..NUM_CLASSES)
                    .map(|c| priors[c] * obs_prob(text, c, gt, noise) * obs_prob(signal, c, gs, noise))
                    .collect();
                total += top_k_mass(&mut s, k);
            }
        }
        total
    };
    Ceilings {
        text: Ceiling {
            top1: single(text, n_text, 1),
            top3: single(text, n_text, 3),
        },
        signal: Ceiling {
            top1: single(signal, n_sig, 1),
            top3: single(signal, n_sig, 3),
        },
        joint: Ceiling {
            top1: joint(1),
            top3: joint(3),
        },
    }
}

fn fill_frame(frame: &str, a: &str, b: &str, rng: &mut Rng) -> String {
    let mut s = frame.replace("{a}", a).replace("{b}", b);
    if s.contains("{date}") {
        let date = if rng.bernoulli(0.5) {
            format!("{} {}, {}", rng.choose(&MONTHS), 1 + rng.below(28), 2015 + rng.below(5))
        } else {
            format!("{:02}/{:02}/{}", 1 + rng.below(12), 1 + rng.below(28), 2015 + rng.below(5))
        };
        s = s.replace("{date}", &date);
    }
    if s.contains("{amount}") {
        let amount = format!("${},{:03}.{:02}", 1 + rng.below(99), rng.below(1000), rng.below(100));
        s = s.replace("{amount}", &amount);
    }
    if s.contains("{email}") {
        let email = format!("seller{}@example.com", rng.below(10_000));
        s = s.replace("{email}", &email);
    }
    if s.contains("{phone}") {
        let phone = format!("({}) 555-{:04}", 200 + rng.below(800), rng.below(10_000));
        s = s.replace("{phone}", &phone);
    }
    s
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    if !(0.0..1.0).contains(&cfg.noise) {
        return Err(Error::Argument(format!("noise must be in [0, 1), got {}", cfg.noise)));
    }
    if cfg.n < NUM_CLASSES * 10 {
        return Err(Error::Argument(format!(
            "n must be at least {} (10 per class), got {}",
            NUM_CLASSES * 10,
            cfg.n
        )));
    }
    if cfg.num_features == 0 || cfg.embed_dim == 0 {
        return Err(Error::Argument("num_features and embed_dim must be >= 1".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let text_groups = group_map(&SHARED_TEXT_CLASSES);
    let signal_groups = group_map(&SHARED_SIGNAL_CLASSES);

    let n_text = text_groups.iter().max().unwrap() + 1;
    let template_groups: Vec<TemplateGroup> = (0..n_text)
        .map(|g| {
            let classes: Vec<usize> = (0..NUM_CLASSES).filter(|c| text_groups[*c] == g).collect();
            TemplateGroup {
                id: g,
                classes: classes.iter().map(|c| CLASS_NAMES[*c].to_string()).collect(),
                keywords: own_keywords(classes[0]).iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect();

    let n_sig = signal_groups.iter().max().unwrap() + 1;
    let signal_profiles: Vec<SignalProfile> = (0..n_sig)
        .map(|g| {
            let classes = (0..NUM_CLASSES)
                .filter(|c| signal_groups[*c] == g)
                .map(|c| CLASS_NAMES[c].to_string())
                .collect();
            let numerical_mean = (0..cfg.num_features)
                .map(|_| rng.normal(0.0, cfg.profile_scale))
                .collect();
            let preferred_categories = CATEGORICAL
                .iter()
                .map(|(name, values)| (name.to_string(), rng.choose(values).to_string()))
                .collect();
            SignalProfile {
                id: g,
                classes,
                numerical_mean,
                preferred_categories,
            }
        })
        .collect();

    let mut class_counts = vec![cfg.n / NUM_CLASSES; NUM_CLASSES];
    for c in class_counts.iter_mut().take(cfg.n % NUM_CLASSES) {
        *c += 1;
    }
    let mut labels: Vec<usize> = class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    rng.shuffle(&mut labels);

    let mut examples = Vec::with_capacity(cfg.n);
    for (i, &label) in labels.iter().enumerate() {
        let t_group = if rng.bernoulli(cfg.noise) {
            text_groups[rng.below(NUM_CLASSES)]
        } else {
            text_groups[label]
        };
        let s_group = if rng.bernoulli(cfg.noise) {
            signal_groups[rng.below(NUM_CLASSES)]
        } else {
            signal_groups[label]
        };

        let keywords = &template_groups[t_group].keywords;
        let a = rng.below(keywords.len());
        let mut b = rng.below(keywords.len() - 1);
        if b >= a {
            b += 1;
        }
        let frame = rng.choose(&FRAMES);
        let text = fill_frame(frame, &keywords[a], &keywords[b], &mut rng);

        let profile = &signal_profiles[s_group];
        let numerical = profile
            .numerical_mean
            .iter()
            .map(|m| m + rng.normal(0.0, 1.0))
            .collect();
        let categorical = CATEGORICAL
            .iter()
            .zip(&profile.preferred_categories)
            .map(|((name, values), (_, pref))| {
                let v = if rng.bernoulli(cfg.categorical_purity) {
                    pref.clone()
                } else {
                    rng.choose(values).to_string()
                };
                (name.to_string(), v)
            })
            .collect();

        examples.push(Example {
            id: format!("syn-{i:06}"),
            text,
            numerical,
            categorical,
            label: CLASS_NAMES[label].to_string(),
        });
    }

    let priors: Vec<f64> = class_counts.iter().map(|&k| k as f64 / cfg.n as f64).collect();
    let ceilings = bayes_ceilings(&text_groups, &signal_groups, &priors, cfg.noise);

    let embeddings = synthetic_embeddings(&examples, cfg)?;

    let names = |idx: &[usize]| idx.iter().map(|c| CLASS_NAMES[*c].to_string()).collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        class_counts,
        text_group_of_class: text_groups,
        signal_profile_of_class: signal_groups,
        frames: FRAMES.iter().map(|s| s.to_string()).collect(),
        template_groups,
        signal_profiles,
        signal_disambiguated: names(&SHARED_TEXT_CLASSES),
        text_disambiguated: names(&SHARED_SIGNAL_CLASSES),
        shared_text_pairs: pairs(&SHARED_TEXT_CLASSES),
        shared_signal_pairs: pairs(&SHARED_SIGNAL_CLASSES),
        ceilings,
    };
    Ok(SyntheticDataset {
        examples,
        manifest,
        embeddings,
    })
}

/// Random unit-scale vectors for every token the normalized corpus contains,
/// in sorted word order.
fn synthetic_embeddings(examples: &[Example], cfg: &SyntheticConfig) -> Result<EmbeddingTable> {
    let mut vocab = BTreeSet::new();
    for ex in examples {
        let seq = textprep::preprocess(&ex.text, usize::MAX)?;
        vocab.extend(seq.tokens);
    }
    let words: Vec<String> = vocab.into_iter().collect();
    let mut rng = Rng::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / (cfg.embed_dim as f64).sqrt();
    let matrix = Tensor2D::from_fn(words.len(), cfg.embed_dim, |_, _| rng.normal(0.0, scale));
    EmbeddingTable::new(words, matrix)
}
