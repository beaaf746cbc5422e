//! Generated corpora with known geometry, used by the examples, the test
//! suites and the CLI fixtures.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed::{text_key, Embedder, EmbedderSpec, LabeledQuery, PrecomputedEmbedder};
use crate::error::Result;
use crate::store::{Corpus, EmbeddingTable, QueryRecord, ToolRecord};
use crate::vector;

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        if vector::normalize64(&mut v).is_some() {
            return v;
        }
    }
}

/// `n` orthonormal directions (Gram-Schmidt over Gaussian draws).
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(n <= dim, "cannot build {n} orthonormal vectors in dim {dim}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let p = vector::dot64(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        if vector::normalize64(&mut v).is_some() {
            basis.push(v);
        }
    }
    basis
}

/// `normalize(base + sigma · g)` with `g ~ N(0, I/dim)`, so `sigma` is the
/// expected norm of the perturbation.
fn jitter(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    let s = sigma / (base.len() as f64).sqrt();
    let mut v: Vec<f64> = base
        .iter()
        .map(|x| x + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    vector::normalize64(&mut v);
    v
}

fn add_scaled(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * y).collect()
}

/// Parameters of the opaque-description scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpaqueConfig {
    pub seed: u64,
    pub dim: usize,
    /// Topics whose correct tool has an uninformative description.
    pub opaque_topics: usize,
    /// Lexical decoys per opaque topic.
    pub decoys_per_topic: usize,
    /// Topics whose correct tool is described plainly.
    pub clear_topics: usize,
    /// Unrelated tools.
    pub fillers: usize,
    pub queries_per_topic: usize,
    /// Angle between an opaque tool and its topic direction.
    pub opaque_angle_deg: f64,
    /// Range of each decoy direction's weight inside an opaque-topic query.
    pub lure_weight: (f64, f64),
    pub query_noise: f64,
    pub tool_noise: f64,
}

impl Default for OpaqueConfig {
    fn default() -> Self {
        OpaqueConfig {
            seed: 0,
            dim: 64,
            opaque_topics: 4,
            decoys_per_topic: 5,
            clear_topics: 4,
            fillers: 8,
            queries_per_topic: 20,
            opaque_angle_deg: 70.0,
            lure_weight: (0.3, 0.6),
            query_noise: 0.25,
            tool_noise: 0.1,
        }
    }
}

/// A corpus where some correct tools sit far from their queries and
/// lexically similar decoys sit closer.
#[derive(Debug, Clone)]
pub struct OpaqueScenario {
    pub corpus: Corpus,
    /// Precomputed embedder covering every tool description and query text.
    pub embedder: Embedder,
    /// `(opaque tool, its decoys)` per opaque topic.
    pub pairs: Vec<(String, Vec<String>)>,
}

const OPAQUE_TOPICS: [(&str, &str, &str); 6] = [
    (
        "find the action items from my meeting transcripts",
        "sales call",
        "Chat with the knowledge of all your calls in Brightline",
    ),
    (
        "summarize this quarter's customer interviews",
        "survey",
        "Your research companion, Quorra",
    ),
    (
        "turn my voice memos into a task list",
        "audio recording",
        "Meet Tallyho, the assistant that remembers",
    ),
    (
        "draft release notes from merged pull requests",
        "git commit",
        "Shipwright keeps your team in flow",
    ),
    (
        "reconcile invoices against bank statements",
        "tax filing",
        "Ledgerly: money, sorted",
    ),
    (
        "plan a weekend trip on a budget",
        "hotel review",
        "Wanderwise makes it easy",
    ),
];

const DECOY_KINDS: [&str; 6] = ["analytics", "coaching", "scoring", "dashboards", "insights", "exports"];

const CLEAR_TOPICS: [&str; 6] = [
    "current weather forecast for a city",
    "translate a paragraph into spanish",
    "look up the latest stock price",
    "find a recipe with chicken and rice",
    "convert currency amounts",
    "search recent news headlines",
];

/// Builds the scenario. Topic, decoy, residual and filler directions are
/// mutually orthogonal, so the geometry holds exactly up to the noise. An
/// opaque tool is `opaque_angle_deg` away from its topic direction; each
/// of its queries adds every decoy direction with a random weight, so the
/// decoys outrank the opaque tool and crowd it out of the top few for a
/// good share of its queries. Each decoy has queries of its own.
pub fn opaque_scenario(cfg: &OpaqueConfig) -> Result<OpaqueScenario> {
    assert!(cfg.opaque_topics <= OPAQUE_TOPICS.len() && cfg.clear_topics <= CLEAR_TOPICS.len());
    assert!(cfg.decoys_per_topic >= 1 && cfg.decoys_per_topic <= DECOY_KINDS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_dirs = (2 + cfg.decoys_per_topic) * cfg.opaque_topics + cfg.clear_topics + cfg.fillers;
    let mut dirs = orthonormal(&mut rng, n_dirs, cfg.dim).into_iter();
    let mut next = || dirs.next().expect("enough directions");

    let mut texts: Vec<(String, Vec<f64>)> = Vec::new();
    let mut tools = Vec::new();
    let mut queries = Vec::new();
    let mut pairs = Vec::new();
    let theta = cfg.opaque_angle_deg.to_radians();
    let (w_lo, w_hi) = cfg.lure_weight;

    for (i, (topic, lure, blurb)) in OPAQUE_TOPICS.iter().take(cfg.opaque_topics).enumerate() {
        let (c, r) = (next(), next());
        let opaque_id = format!("opaque_{i}");
        let opaque_vec: Vec<f64> = c
            .iter()
            .zip(&r)
            .map(|(x, y)| theta.cos() * x + theta.sin() * y)
            .collect();
        let desc = format!("{blurb}.");
        texts.push((desc.clone(), opaque_vec));
        tools.push(tool(&opaque_id, &format!("{blurb} app"), &desc, "productivity"));

        let mut decoys = Vec::new();
        let mut lure_dirs = Vec::new();
        for (m, kind) in DECOY_KINDS.iter().take(cfg.decoys_per_topic).enumerate() {
            let l = next();
            let id = format!("decoy_{i}_{m}");
            let desc = format!("{lure} {kind}: every {lure} in one place.");
            texts.push((desc.clone(), jitter(&mut rng, &l, cfg.tool_noise)));
            tools.push(tool(&id, &format!("{lure} {kind}"), &desc, "analytics"));
            let per_decoy = cfg.queries_per_topic.div_ceil(cfg.decoys_per_topic);
            for j in 0..per_decoy {
                let text = format!("show {lure} {kind} for the team ({j})");
                texts.push((text.clone(), jitter(&mut rng, &l, cfg.query_noise)));
                queries.push(QueryRecord {
                    id: format!("q_decoy_{i}_{m}_{j}"),
                    text,
                    relevant: vec![id.clone()],
                });
            }
            decoys.push(id);
            lure_dirs.push(l);
        }
        for j in 0..cfg.queries_per_topic {
            let mut q = c.clone();
            for l in &lure_dirs {
                q = add_scaled(&q, l, rng.gen_range(w_lo..w_hi));
            }
            let text = format!("{topic} from the {lure} ({j})");
            texts.push((text.clone(), jitter(&mut rng, &q, cfg.query_noise)));
            queries.push(QueryRecord {
                id: format!("q_opaque_{i}_{j}"),
                text,
                relevant: vec![opaque_id.clone()],
            });
        }
        pairs.push((opaque_id, decoys));
    }
    for (i, topic) in CLEAR_TOPICS.iter().take(cfg.clear_topics).enumerate() {
        let c = next();
        let id = format!("clear_{i}");
        let desc = format!("Tool to {topic}.");
        texts.push((desc.clone(), jitter(&mut rng, &c, cfg.tool_noise)));
        tools.push(tool(&id, topic, &desc, "utilities"));
        for j in 0..cfg.queries_per_topic {
            let text = format!("please {topic} ({j})");
            texts.push((text.clone(), jitter(&mut rng, &c, cfg.query_noise)));
            queries.push(QueryRecord {
                id: format!("q_clear_{i}_{j}"),
                text,
                relevant: vec![id.clone()],
            });
        }
    }
    for i in 0..cfg.fillers {
        let desc = format!("Miscellaneous helper number {i}.");
        texts.push((desc.clone(), jitter(&mut rng, &next(), cfg.tool_noise)));
        tools.push(tool(&format!("filler_{i}"), &format!("helper {i}"), &desc, "misc"));
    }
    Ok(OpaqueScenario {
        corpus: Corpus::new(tools, queries, Vec::new())?,
        embedder: precomputed(cfg.dim, texts)?,
        pairs,
    })
}

fn tool(id: &str, name: &str, description: &str, category: &str) -> ToolRecord {
    ToolRecord {
        id: id.into(),
        name: name.into(),
        description: description.into(),
        category: category.into(),
        tags: Vec::new(),
        freq: 0,
    }
}

/// In-memory precomputed embedder over exact texts.
pub fn precomputed(dim: usize, texts: Vec<(String, Vec<f64>)>) -> Result<Embedder> {
    let mut ids = Vec::with_capacity(texts.len());
    let mut data = Vec::with_capacity(texts.len() * dim);
    let mut keys = HashMap::new();
    for (i, (text, v)) in texts.into_iter().enumerate() {
        let id = format!("r{i}");
        keys.insert(text_key(&text), id.clone());
        ids.push(id);
        data.extend(vector::to_f32(&v));
    }
    let table = EmbeddingTable::from_unnormalized(dim, ids, data)?;
    Ok(Embedder::Precomputed(PrecomputedEmbedder::from_parts(table, keys)))
}

/// Keyword clusters of the synthetic tool catalog: `(label, keywords,
/// tools as (id, name, description), query templates)`.
type Cluster = (
    &'static str,
    &'static str,
    &'static [(&'static str, &'static str, &'static str)],
    &'static [&'static str],
);

const CATALOG: &[Cluster] = &[
    (
        "fx",
        "convert currency currencies usd eur gbp jpy exchange",
        &[
            ("ExchangeTool", "ExchangeTool", "Seamlessly convert currencies with our integrated currency conversion tool."),
            ("RateWatch", "RateWatch", "Track exchange rate history between two currencies."),
        ],
        &["convert {n} usd to eur", "how much is {n} gbp in jpy", "exchange {n} eur into usd"],
    ),
    (
        "weather",
        "weather forecast rain temperature snow sunny",
        &[
            ("WeatherNow", "WeatherNow", "Current weather and seven day forecast for any city."),
            ("StormAlert", "StormAlert", "Severe weather alerts, rain and snow warnings."),
        ],
        &["will it rain in city {n} tomorrow", "weather forecast for day {n}", "temperature in zone {n} this weekend"],
    ),
    (
        "flights",
        "flight flights airline airport booking fly",
        &[
            ("FlightFinder", "FlightFinder", "Search and compare airline flight prices."),
            ("GateCheck", "GateCheck", "Airport gate and flight status lookups."),
        ],
        &["find a cheap flight for {n} travelers", "book a flight to airport {n}", "which airline flies route {n}"],
    ),
    (
        "recipes",
        "recipe recipes cook cooking ingredients dinner",
        &[
            ("RecipeBox", "RecipeBox", "Find recipes from the ingredients you already have."),
            ("MealPlanner", "MealPlanner", "Plan a week of dinner cooking with shopping lists."),
        ],
        &["recipe with {n} ingredients", "what can i cook for dinner with {n} eggs", "cooking ideas for {n} people"],
    ),
    (
        "stocks",
        "stock stocks shares ticker market nasdaq",
        &[
            ("StockTicker", "StockTicker", "Real-time stock quotes and market data by ticker."),
            ("PortfolioPal", "PortfolioPal", "Track the value of your shares portfolio."),
        ],
        &["stock price for ticker {n}", "how is the market doing today {n}", "value of {n} shares of nasdaq index"],
    ),
    (
        "translate",
        "translate translation language spanish french german",
        &[
            ("Translator", "Translator", "Translate text between more than fifty languages."),
            ("PhraseBook", "PhraseBook", "Common phrases in spanish, french and german."),
        ],
        &["translate {n} sentences into spanish", "french translation of paragraph {n}", "what language is text {n}"],
    ),
    (
        "news",
        "news headlines article articles breaking",
        &[
            ("NewsDigest", "NewsDigest", "Daily digest of breaking news headlines."),
            ("ArticleSummarizer", "ArticleSummarizer", "Summarize long news articles."),
        ],
        &["latest news headlines {n}", "summarize article {n}", "breaking news about topic {n}"],
    ),
    (
        "docs",
        "pdf document documents summarize file",
        &[
            ("PDFReader", "PDFReader", "Ask questions about any pdf document."),
            ("DocDrafter", "DocDrafter", "Draft documents from a short outline."),
        ],
        &["read the pdf file number {n}", "questions about document {n}", "open document {n} and find the total"],
    ),
];

/// Returns the catalog corpus (tools, labeled queries) and a cluster-mode
/// synthetic embedder spec whose keyword clusters separate the topics.
/// `queries_per_template` queries are generated per template; the first
/// tool of each cluster is the relevant one.
pub fn catalog_corpus(dim: usize, seed: u64, queries_per_template: usize) -> Result<(Corpus, EmbedderSpec)> {
    let mut spec = EmbedderSpec::synthetic(dim, seed);
    let mut tools = Vec::new();
    let mut queries = Vec::new();
    for (label, keywords, cluster_tools, templates) in CATALOG {
        spec = spec.with_cluster(keywords, label);
        for (id, name, desc) in cluster_tools.iter() {
            tools.push(ToolRecord {
                id: id.to_string(),
                name: name.to_string(),
                description: desc.to_string(),
                category: label.to_string(),
                tags: vec![label.to_string()],
                freq: 0,
            });
        }
        for (t, template) in templates.iter().enumerate() {
            for n in 0..queries_per_template {
                queries.push(QueryRecord {
                    id: format!("{label}_{t}_{n}"),
                    text: template.replace("{n}", &(n + 2).to_string()),
                    relevant: vec![cluster_tools[0].0.to_string()],
                });
            }
        }
    }
    Ok((Corpus::new(tools, queries, Vec::new())?, spec))
}

/// A random refinement instance: unit tool and query vectors and, per
/// query, `relevant` ground-truth tools drawn uniformly.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub table: EmbeddingTable,
    pub queries: Vec<LabeledQuery>,
}

pub fn random_instance(seed: u64, tools: usize, queries: usize, dim: usize, relevant: usize) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..tools).map(|i| format!("t{i}")).collect();
    let mut data = Vec::with_capacity(tools * dim);
    for _ in 0..tools {
        data.extend(vector::to_f32(&unit(&mut rng, dim)));
    }
    let table = EmbeddingTable::from_unnormalized(dim, ids.clone(), data)?;
    let queries = (0..queries)
        .map(|j| {
            let rel: Vec<&str> = sample(&mut rng, tools, relevant.min(tools))
                .into_iter()
                .map(|i| ids[i].as_str())
                .collect();
            // Bias each query toward its first relevant tool so retrievals
            // produce both successes and failures.
            let anchor: Vec<f64> = table.get(rel[0]).expect("row").iter().map(|&x| x as f64).collect();
            let mut q = add_scaled(&unit(&mut rng, dim), &anchor, rng.gen_range(0.0..1.5));
            if vector::normalize64(&mut q).is_none() {
                q = anchor;
            }
            let mut lq = LabeledQuery::new(format!("q{j}"), vector::to_f32(&q), &rel);
            lq.text = format!("query {j}");
            lq
        })
        .collect();
    Ok(RandomInstance { table, queries })
}

/// A catalog of `n` tools with random word descriptions over a small
/// vocabulary, plus `queries` query texts over the same vocabulary.
pub fn bulk_catalog(n: usize, queries: usize, seed: u64) -> (Vec<ToolRecord>, Vec<String>) {
    const WORDS: [&str; 40] = [
        "search", "convert", "weather", "flight", "hotel", "recipe", "stock", "news", "pdf",
        "email", "calendar", "translate", "image", "video", "music", "map", "route", "price",
        "compare", "summarize", "chat", "code", "review", "booking", "invoice", "tax", "health",
        "fitness", "game", "quiz", "shopping", "coupon", "job", "resume", "legal", "contract",
        "crypto", "wallet", "sports", "score",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phrase = |rng: &mut ChaCha8Rng, len: usize| -> String {
        (0..len)
            .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let categories: BTreeMap<usize, &str> = WORDS.iter().take(8).copied().enumerate().collect();
    let tools = (0..n)
        .map(|i| ToolRecord {
            id: format!("tool_{i:05}"),
            name: format!("Tool {i}"),
            description: format!("{} tool {i}", phrase(&mut rng, 8)),
            category: categories[&(i % categories.len())].to_string(),
            tags: Vec::new(),
            freq: (i % 17) as u64,
        })
        .collect();
    let qs = (0..queries).map(|_| phrase(&mut rng, 6)).collect();
    (tools, qs)
}
