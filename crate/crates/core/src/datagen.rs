//! Synthetic world with caption-only semantic signal.
//!
//! Every item has a fine topic and a contextual attribute. The visual
//! embedding only sees the coarse group of the topic (`visual_coarseness`
//! topics per group) plus Gaussian noise, while the caption names the fine
//! topic through words no other topic uses. Users like and dislike a few fine
//! topics; engagement labels depend on that affinity, so the label signal
//! beyond the coarse group is reachable only through caption tokens (or by
//! memorizing item ids).
//!
//! Generation is single-threaded. Independent ChaCha streams are used for
//! items, users, the visual projection and interactions, so every byte is a
//! function of the config and seed.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::content::MediaItem;
use crate::profile::EngagementEvent;
use crate::task::{Task, NUM_TASKS};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unknown item {0}")]
    UnknownItem(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_topics: usize,
    pub n_attributes: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_impressions: usize,
    /// Fine topics per visual group.
    pub visual_coarseness: usize,
    /// Weight of the user-topic affinity in the label logit.
    pub caption_signal_strength: f64,
    pub noise_sigma: f64,
    pub visual_dim: usize,
    pub liked_topics_per_user: usize,
    pub disliked_topics_per_user: usize,
    /// Std-dev of the population-wide topic popularity added to every user's
    /// preference row. Zero leaves purely personal tastes.
    pub topic_popularity_sigma: f64,
    /// Std-dev of a per-user offset added to the user's whole preference row
    /// (how engaged the user is overall).
    pub user_activity_sigma: f64,
    /// Per-task logit offsets, in `Task::ALL` order.
    pub task_biases: [f64; NUM_TASKS],
    /// Probability that an item carries media.
    pub media_rate: f64,
    pub start_ts: i64,
    pub impression_interval_s: i64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_topics: 32,
            n_attributes: 4,
            n_users: 2_000,
            n_items: 10_000,
            n_impressions: 240_000,
            visual_coarseness: 4,
            caption_signal_strength: 1.5,
            noise_sigma: 0.5,
            visual_dim: 16,
            liked_topics_per_user: 3,
            disliked_topics_per_user: 2,
            topic_popularity_sigma: 0.7,
            user_activity_sigma: 0.4,
            task_biases: DEFAULT_TASK_BIASES,
            media_rate: 1.0,
            start_ts: 1_700_000_000,
            impression_interval_s: 10,
            seed: 0,
        }
    }
}

/// Calibrated by simulation so the default world's positive rates sit
/// inside [0.02, 0.25] for every task.
pub const DEFAULT_TASK_BIASES: [f64; NUM_TASKS] = [-3.0, -1.9, -3.2, -1.7, -1.5];

fn finite_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidConfig(m.to_string()));
        if self.n_topics == 0
            || self.n_attributes == 0
            || self.n_users == 0
            || self.n_items == 0
            || self.n_impressions == 0
            || self.visual_dim == 0
        {
            return bad("all counts must be positive");
        }
        if self.visual_coarseness == 0 || !self.n_topics.is_multiple_of(self.visual_coarseness) {
            return bad("n_topics must be divisible by visual_coarseness");
        }
        if self.liked_topics_per_user + self.disliked_topics_per_user > self.n_topics {
            return bad("more liked/disliked topics than topics");
        }
        if !finite_non_negative(self.caption_signal_strength) {
            return bad("caption_signal_strength must be finite and non-negative");
        }
        if !finite_non_negative(self.topic_popularity_sigma) {
            return bad("topic_popularity_sigma must be finite and non-negative");
        }
        if !finite_non_negative(self.user_activity_sigma) {
            return bad("user_activity_sigma must be finite and non-negative");
        }
        if !finite_non_negative(self.noise_sigma) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.media_rate) {
            return bad("media_rate must lie in [0, 1]");
        }
        if self.impression_interval_s <= 0 || self.start_ts < 0 {
            return bad("timestamps must be non-negative and strictly increasing");
        }
        if self.task_biases.iter().any(|b| b.is_nan()) {
            return bad("task biases must not be NaN");
        }
        Ok(())
    }

    pub fn n_visual_groups(&self) -> usize {
        self.n_topics / self.visual_coarseness
    }
}

/// Hand-authored topic phrases: (key, subject, verb, object). No word is
/// shared between two topics, nor with the attribute words or the template.
pub const TOPICS: [(&str, &str, &str, &str); 32] = [
    ("dog_play", "man", "playing with", "his dog"),
    ("cat_nap", "tabby cat", "napping on", "velvet cushion"),
    ("street_food", "vendor", "grilling", "spicy skewers"),
    ("baking", "baker", "kneading", "sourdough loaf"),
    ("surfing", "surfer", "riding", "huge wave"),
    ("guitar", "musician", "strumming", "acoustic guitar"),
    ("sketching", "artist", "sketching", "charcoal portrait"),
    ("yoga", "woman", "stretching into", "yoga pose"),
    ("soccer", "kids", "kicking", "soccer ball"),
    ("wedding", "bride", "tossing", "flower bouquet"),
    ("hiking", "hiker", "climbing", "rocky trail"),
    ("coffee", "barista", "pouring", "latte art"),
    ("gaming", "teenager", "gripping", "game controller"),
    ("gardening", "gardener", "planting", "tomato seedlings"),
    ("car_repair", "mechanic", "fixing", "rusty engine"),
    ("dance", "dancers", "twirling across", "wooden stage"),
    ("fishing", "fisherman", "casting", "long rod"),
    ("birthday", "toddler", "blowing out", "birthday candles"),
    ("skateboarding", "skater", "grinding down", "metal rail"),
    ("studying", "student", "reading", "thick textbook"),
    ("cycling", "cyclist", "pedaling up", "steep hill"),
    ("sushi", "chef", "slicing", "fresh tuna"),
    ("horse_care", "rider", "grooming", "brown horse"),
    ("snowman", "family", "building", "tall snowman"),
    ("makeup", "influencer", "applying", "bold lipstick"),
    ("camping", "campers", "lighting", "crackling campfire"),
    ("basketball", "player", "dunking", "orange basketball"),
    ("knitting", "grandmother", "knitting", "wool scarf"),
    ("parrot", "parrot", "perched atop", "bamboo branch"),
    ("running", "runner", "sprinting toward", "finish line"),
    ("pottery", "potter", "shaping", "clay vase"),
    ("concert", "crowd", "cheering for", "rock band"),
];

pub const ATTRIBUTES: [&str; 16] = [
    "park", "beach", "kitchen", "studio", "garden", "city", "forest", "backyard", "gym",
    "library", "market", "mountain", "stadium", "cafe", "village", "harbor",
];

/// Topic phrase parts for any topic index; indices past the authored table
/// get generated single-word parts that are still unique per topic.
pub fn topic_phrases(topic: usize) -> (String, String, String) {
    match TOPICS.get(topic) {
        Some(&(_, s, v, o)) => (s.to_string(), v.to_string(), o.to_string()),
        None => (
            format!("subject{topic}"),
            format!("action{topic}"),
            format!("object{topic}"),
        ),
    }
}

pub fn topic_key(topic: usize) -> String {
    TOPICS
        .get(topic)
        .map(|t| t.0.to_string())
        .unwrap_or_else(|| format!("topic_{topic}"))
}

pub fn attribute_word(attribute: usize) -> String {
    ATTRIBUTES
        .get(attribute)
        .map(|a| a.to_string())
        .unwrap_or_else(|| format!("place{attribute}"))
}

/// `a <subject> <verb> <object> in a <attribute>`.
pub fn caption_template(topic: usize, attribute: usize) -> String {
    let (s, v, o) = topic_phrases(topic);
    format!("a {s} {v} {o} in a {}", attribute_word(attribute))
}

/// Latent facts of the world. Never exposed to models directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_topics: usize,
    pub item_topic: Vec<u32>,
    pub item_attribute: Vec<u32>,
    /// Row-major `n_users × n_topics` affinities.
    pub user_prefs: Vec<f64>,
    pub task_biases: [f64; NUM_TASKS],
}

impl GroundTruth {
    pub fn n_items(&self) -> usize {
        self.item_topic.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_prefs.len() / self.n_topics.max(1)
    }

    pub fn user_pref(&self, user: usize) -> &[f64] {
        &self.user_prefs[user * self.n_topics..(user + 1) * self.n_topics]
    }

    pub fn affinity(&self, user: usize, item: usize) -> f64 {
        self.user_prefs[user * self.n_topics + self.item_topic[item] as usize]
    }

    pub fn caption_text(&self, item: usize) -> Result<String, DatagenError> {
        if item >= self.n_items() {
            return Err(DatagenError::UnknownItem(item));
        }
        Ok(caption_template(
            self.item_topic[item] as usize,
            self.item_attribute[item] as usize,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub items: Vec<MediaItem>,
    pub truth: Arc<GroundTruth>,
}

/// Logged impression with one binary label per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: u64,
    pub user_id: u64,
    pub item_id: u64,
    pub ts: i64,
    pub labels: [u8; NUM_TASKS],
}

#[derive(Debug, Clone, Default)]
pub struct Interactions {
    pub impressions: Vec<Impression>,
    /// Sorted by timestamp, then task order.
    pub events: Vec<EngagementEvent>,
}

/// Provenance record for a generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub generator: String,
    pub config: WorldConfig,
    pub n_visual_groups: usize,
    pub positive_rates: Option<[f64; NUM_TASKS]>,
}

impl WorldManifest {
    pub fn new(config: &WorldConfig, interactions: Option<&Interactions>) -> Self {
        Self {
            generator: "planted-caption-signal-v1".into(),
            config: config.clone(),
            n_visual_groups: config.n_visual_groups(),
            positive_rates: interactions.map(|i| positive_rates(&i.impressions)),
        }
    }
}

const STREAM_ITEMS: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_PROJECTION: u64 = 3;
const STREAM_INTERACTIONS: u64 = 4;
const STREAM_POPULARITY: u64 = 5;
const STREAM_ACTIVITY: u64 = 6;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Base (noise-free) visual vector of each coarse group: a one-hot padded to
/// `visual_dim`, or a fixed Gaussian projection of the one-hot when there are
/// more groups than dimensions.
fn group_prototypes(config: &WorldConfig) -> Vec<Vec<f64>> {
    let groups = config.n_visual_groups();
    let dim = config.visual_dim;
    if groups <= dim {
        return (0..groups)
            .map(|g| {
                let mut v = vec![0.0; dim];
                v[g] = 1.0;
                v
            })
            .collect();
    }
    let mut rng = rng_for(config.seed, STREAM_PROJECTION);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
    (0..groups)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

pub fn gen_world(config: &WorldConfig) -> Result<World, DatagenError> {
    config.validate()?;
    let prototypes = group_prototypes(config);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");

    let mut rng = rng_for(config.seed, STREAM_ITEMS);
    let mut item_topic = Vec::with_capacity(config.n_items);
    let mut item_attribute = Vec::with_capacity(config.n_items);
    let mut items = Vec::with_capacity(config.n_items);
    for idx in 0..config.n_items {
        let topic = rng.random_range(0..config.n_topics);
        let attribute = rng.random_range(0..config.n_attributes);
        let group = topic / config.visual_coarseness;
        let visual_embedding = prototypes[group]
            .iter()
            .map(|&b| b + noise.sample(&mut rng))
            .collect();
        let has_media = rng.random::<f64>() < config.media_rate;
        let value_score = rng.random::<f64>();
        item_topic.push(topic as u32);
        item_attribute.push(attribute as u32);
        items.push(MediaItem {
            item_id: idx as u64,
            visual_embedding,
            has_media,
            value_score,
            ground_truth_ref: Some(idx),
        });
    }

    let mut rng = rng_for(config.seed, STREAM_POPULARITY);
    let pop_dist = Normal::new(0.0, config.topic_popularity_sigma).expect("validated sigma");
    let topic_popularity: Vec<f64> = (0..config.n_topics).map(|_| pop_dist.sample(&mut rng)).collect();

    let mut rng = rng_for(config.seed, STREAM_ACTIVITY);
    let act_dist = Normal::new(0.0, config.user_activity_sigma).expect("validated sigma");
    let mut user_prefs = Vec::with_capacity(config.n_users * config.n_topics);
    for _ in 0..config.n_users {
        let offset = act_dist.sample(&mut rng);
        user_prefs.extend(topic_popularity.iter().map(|p| p + offset));
    }

    let mut rng = rng_for(config.seed, STREAM_USERS);
    let picks = config.liked_topics_per_user + config.disliked_topics_per_user;
    for user in 0..config.n_users {
        let chosen = rand::seq::index::sample(&mut rng, config.n_topics, picks);
        let row = &mut user_prefs[user * config.n_topics..(user + 1) * config.n_topics];
        for (k, topic) in chosen.iter().enumerate() {
            row[topic] += if k < config.liked_topics_per_user { 1.0 } else { -1.0 };
        }
    }

    Ok(World {
        config: config.clone(),
        items,
        truth: Arc::new(GroundTruth {
            n_topics: config.n_topics,
            item_topic,
            item_attribute,
            user_prefs,
            task_biases: config.task_biases,
        }),
    })
}

/// Caption text for an item of the world.
pub fn gen_caption_text(item: &MediaItem, truth: &GroundTruth) -> Result<String, DatagenError> {
    let idx = item
        .ground_truth_ref
        .ok_or(DatagenError::UnknownItem(item.item_id as usize))?;
    truth.caption_text(idx)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Samples impressions uniformly over users and items. Each positive label
/// emits one engagement event of the matching type at the impression time.
pub fn gen_interactions(world: &World) -> Interactions {
    let config = &world.config;
    let truth = &world.truth;
    let mut rng = rng_for(config.seed, STREAM_INTERACTIONS);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let beta = config.caption_signal_strength;

    let mut impressions = Vec::with_capacity(config.n_impressions);
    let mut events = Vec::new();
    for i in 0..config.n_impressions {
        let user = rng.random_range(0..config.n_users);
        let item = rng.random_range(0..config.n_items);
        let ts = config.start_ts + i as i64 * config.impression_interval_s;
        let affinity = truth.affinity(user, item);
        let mut labels = [0u8; NUM_TASKS];
        for task in Task::ALL {
            let z = beta * affinity + truth.task_biases[task.index()] + noise.sample(&mut rng);
            let positive = rng.random::<f64>() < sigmoid(z);
            labels[task.index()] = u8::from(positive);
            if positive {
                events.push(EngagementEvent {
                    user_id: user as u64,
                    item_id: item as u64,
                    event_type: task,
                    ts,
                });
            }
        }
        impressions.push(Impression {
            impression_id: i as u64,
            user_id: user as u64,
            item_id: item as u64,
            ts,
            labels,
        });
    }
    Interactions {
        impressions,
        events,
    }
}

pub fn positive_rates(impressions: &[Impression]) -> [f64; NUM_TASKS] {
    let mut counts = [0u64; NUM_TASKS];
    for imp in impressions {
        for (c, &l) in counts.iter_mut().zip(&imp.labels) {
            *c += u64::from(l);
        }
    }
    let n = impressions.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}
