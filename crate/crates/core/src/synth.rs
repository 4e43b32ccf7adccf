//! Seeded synthetic interaction logs.
//!
//! Every user lives in exactly one community. A user draws a lifetime class
//! from the mixture, a log-uniform lifetime inside that class, and a
//! registration time that keeps the whole life inside the observation
//! period. Posts, replies, votes and flags then arrive as Poisson processes
//! over the alive interval at the class's daily rates, and a final post
//! lands exactly at the end of the life. `signal_strength` pulls every
//! class profile toward the average profile (0) or leaves it as configured
//! (1).

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{
    class_bounds, log_from_events, EventKind, EventLog, InteractionEvent, ParseOptions, MINUTES_PER_DAY, NUM_CLASSES,
};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunitySpec {
    pub id: String,
    pub users: usize,
}

/// Daily event rates and content parameters of one lifetime class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityProfile {
    pub posts_per_day: f64,
    pub replies_per_day: f64,
    pub votes_per_day: f64,
    /// Share of votes that are upvotes.
    pub upvote_ratio: f64,
    pub flags_per_day: f64,
    pub picture_prob: f64,
    /// Log-normal reply latency in minutes: `ln` location and scale.
    pub reply_latency_mu: f64,
    pub reply_latency_sigma: f64,
}

impl ActivityProfile {
    fn lerp(&self, toward: &ActivityProfile, s: f64) -> ActivityProfile {
        let f = |a: f64, b: f64| a * s + b * (1.0 - s);
        ActivityProfile {
            posts_per_day: f(self.posts_per_day, toward.posts_per_day),
            replies_per_day: f(self.replies_per_day, toward.replies_per_day),
            votes_per_day: f(self.votes_per_day, toward.votes_per_day),
            upvote_ratio: f(self.upvote_ratio, toward.upvote_ratio),
            flags_per_day: f(self.flags_per_day, toward.flags_per_day),
            picture_prob: f(self.picture_prob, toward.picture_prob),
            reply_latency_mu: f(self.reply_latency_mu, toward.reply_latency_mu),
            reply_latency_sigma: f(self.reply_latency_sigma, toward.reply_latency_sigma),
        }
    }

    fn mean(profiles: &[ActivityProfile]) -> ActivityProfile {
        let n = profiles.len() as f64;
        let avg = |g: fn(&ActivityProfile) -> f64| profiles.iter().map(g).sum::<f64>() / n;
        ActivityProfile {
            posts_per_day: avg(|p| p.posts_per_day),
            replies_per_day: avg(|p| p.replies_per_day),
            votes_per_day: avg(|p| p.votes_per_day),
            upvote_ratio: avg(|p| p.upvote_ratio),
            flags_per_day: avg(|p| p.flags_per_day),
            picture_prob: avg(|p| p.picture_prob),
            reply_latency_mu: avg(|p| p.reply_latency_mu),
            reply_latency_sigma: avg(|p| p.reply_latency_sigma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub communities: Vec<CommunitySpec>,
    /// Probability of each lifetime class 1..=6.
    #[serde(default = "default_mixture")]
    pub class_mixture: Vec<f64>,
    #[serde(default = "default_observation_days")]
    pub observation_days: i64,
    /// One profile per lifetime class.
    #[serde(default = "default_profiles")]
    pub profiles: Vec<ActivityProfile>,
    #[serde(default = "default_signal")]
    pub signal_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Lifetime class shares of the reference population.
pub const DEFAULT_MIXTURE: [f64; 6] = [0.133, 0.121, 0.074, 0.123, 0.264, 0.284];

fn default_mixture() -> Vec<f64> {
    // the published shares sum to 0.999; the remainder goes to the largest class
    let mut m = DEFAULT_MIXTURE.to_vec();
    m[5] += 1.0 - DEFAULT_MIXTURE.iter().sum::<f64>();
    m
}

fn default_observation_days() -> i64 {
    365
}

fn default_signal() -> f64 {
    1.0
}

/// Made-up per-class rates: longer-lived classes are more active and reply faster.
pub fn default_profiles() -> Vec<ActivityProfile> {
    let posts = [0.05, 0.10, 0.15, 0.22, 0.28, 0.35];
    let replies = [0.08, 0.15, 0.22, 0.30, 0.40, 0.50];
    let votes = [0.15, 0.30, 0.45, 0.60, 0.75, 0.90];
    let upvote = [0.55, 0.60, 0.65, 0.70, 0.75, 0.80];
    let pictures = [0.05, 0.08, 0.10, 0.12, 0.15, 0.18];
    let latency_min = [240.0f64, 180.0, 120.0, 90.0, 60.0, 45.0];
    (0..6)
        .map(|c| ActivityProfile {
            posts_per_day: posts[c],
            replies_per_day: replies[c],
            votes_per_day: votes[c],
            upvote_ratio: upvote[c],
            flags_per_day: 0.01,
            picture_prob: pictures[c],
            reply_latency_mu: latency_min[c].ln(),
            reply_latency_sigma: 0.8,
        })
        .collect()
}

impl GeneratorConfig {
    pub fn new(communities: Vec<CommunitySpec>, seed: u64) -> Self {
        GeneratorConfig {
            communities,
            class_mixture: default_mixture(),
            observation_days: default_observation_days(),
            profiles: default_profiles(),
            signal_strength: default_signal(),
            seed,
        }
    }

    pub fn total_users(&self) -> usize {
        self.communities.iter().map(|c| c.users).sum()
    }

    pub fn observation_end(&self) -> i64 {
        self.observation_days * MINUTES_PER_DAY
    }

    /// Every violated constraint, or `Ok`.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.communities.is_empty() {
            v.push("at least one community is required".to_string());
        }
        let mut ids: Vec<&str> = self.communities.iter().map(|c| c.id.as_str()).collect();
        for c in &self.communities {
            if c.id.is_empty() {
                v.push("community id must not be empty".into());
            }
            if c.users == 0 {
                v.push(format!("community `{}` needs at least one user", c.id));
            }
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            v.push("community ids must be unique".into());
        }
        if self.class_mixture.len() != NUM_CLASSES as usize {
            v.push(format!(
                "class_mixture needs {NUM_CLASSES} entries, got {}",
                self.class_mixture.len()
            ));
        } else {
            if self.class_mixture.iter().any(|p| p.is_nan() || *p < 0.0) {
                v.push("class_mixture entries must be >= 0".into());
            }
            let sum: f64 = self.class_mixture.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                v.push(format!("class_mixture sums to {sum}, expected 1"));
            }
        }
        if self.profiles.len() != NUM_CLASSES as usize {
            v.push(format!(
                "profiles needs {NUM_CLASSES} entries, got {}",
                self.profiles.len()
            ));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            let rates = [
                p.posts_per_day,
                p.replies_per_day,
                p.votes_per_day,
                p.flags_per_day,
                p.reply_latency_sigma,
            ];
            if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
                v.push(format!("profile {}: rates must be finite and >= 0", i + 1));
            }
            if !(0.0..=1.0).contains(&p.upvote_ratio) || !(0.0..=1.0).contains(&p.picture_prob) {
                v.push(format!("profile {}: probabilities must lie in [0, 1]", i + 1));
            }
            if !p.reply_latency_mu.is_finite() {
                v.push(format!("profile {}: reply_latency_mu must be finite", i + 1));
            }
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            v.push(format!("signal_strength {} outside [0, 1]", self.signal_strength));
        }
        let (lo6, _) = class_bounds(NUM_CLASSES).expect("valid class");
        if self.observation_end() <= lo6 {
            v.push(format!(
                "observation_days {} too short for the longest lifetime class",
                self.observation_days
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Class profiles after applying `signal_strength`.
    pub fn effective_profiles(&self) -> Vec<ActivityProfile> {
        let mean = ActivityProfile::mean(&self.profiles);
        self.profiles
            .iter()
            .map(|p| p.lerp(&mean, self.signal_strength))
            .collect()
    }
}

pub const PRESETS: [&str; 3] = ["five-cities", "country-mini", "tiny"];

const FIVE_CITIES: [(&str, usize); 5] = [
    ("city-a", 8000),
    ("city-b", 3000),
    ("city-c", 1300),
    ("city-d", 320),
    ("city-e", 174),
];

pub fn preset(name: &str) -> Result<GeneratorConfig> {
    let communities = match name {
        "five-cities" => FIVE_CITIES
            .iter()
            .map(|(id, n)| CommunitySpec {
                id: id.to_string(),
                users: *n,
            })
            .collect(),
        "country-mini" => vec![CommunitySpec {
            id: "country".into(),
            users: FIVE_CITIES.iter().map(|c| c.1).sum(),
        }],
        "tiny" => vec![
            CommunitySpec {
                id: "town-a".into(),
                users: 80,
            },
            CommunitySpec {
                id: "town-b".into(),
                users: 60,
            },
        ],
        other => {
            return Err(Error::Config(vec![format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )]))
        }
    };
    Ok(GeneratorConfig::new(communities, 0))
}

/// Provenance written next to a generated log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub config: GeneratorConfig,
    pub observation_end: i64,
    pub users: usize,
    pub events: usize,
    /// Activity profiles are invented defaults, not measured statistics.
    pub fabricated_profiles: bool,
}

struct UserPlan {
    user_id: String,
    community: usize,
    class_idx: usize,
    registered: i64,
    lifetime: i64,
}

/// Posts of one community sorted by time: `(ts, content id, author)`.
type PostIndex = Vec<(i64, String, usize)>;

fn sample_lifetime(rng: &mut seed::Rng, class_id: u32, observation_end: i64) -> i64 {
    let (lo, hi) = class_bounds(class_id).expect("valid class");
    let lo = lo + 1;
    let hi = hi.unwrap_or(observation_end).min(observation_end);
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let l = rng.random_range(a..=b).exp().round() as i64;
    l.clamp(lo, hi)
}

fn poisson(rng: &mut seed::Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

fn arrivals(rng: &mut seed::Rng, rate_per_day: f64, start: i64, end: i64) -> Vec<i64> {
    let n = poisson(rng, rate_per_day * (end - start) as f64 / MINUTES_PER_DAY as f64);
    let mut t: Vec<i64> = (0..n).map(|_| rng.random_range(start..=end)).collect();
    t.sort_unstable();
    t
}

fn event(user: &str, kind: EventKind, ts: i64, community: &str, content: Option<String>) -> InteractionEvent {
    InteractionEvent {
        user_id: user.to_string(),
        kind,
        timestamp: ts,
        community_id: community.to_string(),
        content_id: content,
        is_picture: None,
    }
}

/// Generates a log. Fails with every violation when the config is invalid.
pub fn generate(config: &GeneratorConfig) -> Result<EventLog> {
    config.validate()?;
    let end = config.observation_end();
    let profiles = config.effective_profiles();
    let mut cumulative = Vec::with_capacity(6);
    let mut acc = 0.0;
    for p in &config.class_mixture {
        acc += p;
        cumulative.push(acc);
    }

    let coords: Vec<(usize, usize)> = config
        .communities
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.users).map(move |ui| (ci, ui)))
        .collect();
    let width = coords.iter().map(|c| c.1).max().unwrap_or(0).to_string().len().max(5);

    // pass 1: who, when, and the posts everyone else can react to
    let planned: Vec<(UserPlan, Vec<InteractionEvent>)> = coords
        .par_iter()
        .map(|&(ci, ui)| {
            let mut rng = seed::rng_at(config.seed, &[ci as u64, ui as u64, 0]);
            let u: f64 = rng.random_range(0.0..1.0);
            let class_idx = cumulative.iter().position(|&c| u < c).unwrap_or(5);
            // skip classes with zero weight that rounding could land on
            let class_idx = (class_idx..6)
                .chain((0..class_idx).rev())
                .find(|&k| config.class_mixture[k] > 0.0)
                .unwrap_or(class_idx);
            let lifetime = sample_lifetime(&mut rng, class_idx as u32 + 1, end);
            let registered = rng.random_range(0..=end - lifetime);
            let community = &config.communities[ci].id;
            let user_id = format!("{community}-u{ui:0width$}");
            let p = &profiles[class_idx];
            let mut times = arrivals(&mut rng, p.posts_per_day, registered, registered + lifetime);
            times.push(registered + lifetime);
            let posts = times
                .into_iter()
                .enumerate()
                .map(|(k, t)| {
                    let mut e = event(&user_id, EventKind::Post, t, community, Some(format!("{user_id}-p{k}")));
                    e.is_picture = Some(rng.random_bool(p.picture_prob));
                    e
                })
                .collect();
            (
                UserPlan {
                    user_id,
                    community: ci,
                    class_idx,
                    registered,
                    lifetime,
                },
                posts,
            )
        })
        .collect();

    let mut index: Vec<PostIndex> = vec![Vec::new(); config.communities.len()];
    for (ui, (plan, posts)) in planned.iter().enumerate() {
        for e in posts {
            index[plan.community].push((e.timestamp, e.content_id.clone().expect("post id"), ui));
        }
    }
    for idx in &mut index {
        idx.sort();
    }

    // pass 2: replies, votes and flags against the community's posts
    let reactions: Vec<Vec<InteractionEvent>> = planned
        .par_iter()
        .enumerate()
        .map(|(ui, (plan, _))| {
            let (ci, _) = coords[ui];
            let mut rng = seed::rng_at(config.seed, &[ci as u64, coords[ui].1 as u64, 1]);
            let p = &profiles[plan.class_idx];
            let community = &config.communities[ci].id;
            let posts = &index[ci];
            let (start, stop) = (plan.registered, plan.registered + plan.lifetime);
            let mut out = vec![event(&plan.user_id, EventKind::Registered, start, community, None)];

            let latency = LogNormal::new(p.reply_latency_mu, p.reply_latency_sigma).ok();
            for (k, t) in arrivals(&mut rng, p.replies_per_day, start, stop)
                .into_iter()
                .enumerate()
            {
                let lag = latency.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                let cutoff = t - lag.round() as i64;
                // latest post at or before the cutoff, skipping the user's own
                let mut i = posts.partition_point(|x| x.0 <= cutoff);
                while i > 0 && posts[i - 1].2 == ui {
                    i -= 1;
                }
                if i == 0 {
                    continue;
                }
                let thread = &posts[i - 1].1;
                out.push(event(
                    &plan.user_id,
                    EventKind::Reply,
                    t,
                    community,
                    Some(format!("{thread}/{}-r{k}", plan.user_id)),
                ));
            }

            // votes and flags are stamped with their target's creation time
            let mut react = |kind_of: &mut dyn FnMut(&mut seed::Rng) -> EventKind, rate: f64, rng: &mut seed::Rng| {
                for t in arrivals(rng, rate, start, stop) {
                    let lo = posts.partition_point(|x| x.0 < (t - MINUTES_PER_DAY).max(start));
                    let hi = posts.partition_point(|x| x.0 <= t);
                    if lo >= hi {
                        continue;
                    }
                    let (ts, id, author) = &posts[rng.random_range(lo..hi)];
                    if *author == ui {
                        continue;
                    }
                    let kind = kind_of(rng);
                    out.push(event(&plan.user_id, kind, *ts, community, Some(id.clone())));
                }
            };
            let up = p.upvote_ratio;
            react(
                &mut |r: &mut seed::Rng| {
                    if r.random_bool(up) {
                        EventKind::Upvote
                    } else {
                        EventKind::Downvote
                    }
                },
                p.votes_per_day,
                &mut rng,
            );
            react(&mut |_: &mut seed::Rng| EventKind::Flag, p.flags_per_day, &mut rng);
            out
        })
        .collect();

    let mut all = Vec::new();
    for ((_, posts), reacts) in planned.into_iter().zip(reactions) {
        all.extend(reacts);
        all.extend(posts);
    }
    let log = log_from_events(
        all,
        &ParseOptions {
            observation_end: Some(end),
        },
    )?;
    debug_assert!(
        log.warnings.is_empty(),
        "{:?}",
        &log.warnings[..log.warnings.len().min(3)]
    );
    Ok(log)
}

pub fn metadata(config: &GeneratorConfig, log: &EventLog) -> GeneratorMeta {
    GeneratorMeta {
        config: config.clone(),
        observation_end: log.observation_end,
        users: log.users.len(),
        events: log.event_count(),
        fabricated_profiles: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{class_counts, label_users, parse_events, Format, DEFAULT_CHURN_DAYS};

    fn tiny(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            ..preset("tiny").unwrap()
        }
    }

    #[test]
    fn presets() {
        let five = preset("five-cities").unwrap();
        assert_eq!(five.communities.len(), 5);
        assert_eq!(preset("country-mini").unwrap().total_users(), 12_794);
        assert_eq!(five.total_users(), 12_794);
        assert!(preset("tiny").unwrap().total_users() <= 200);
        assert!(matches!(preset("mars"), Err(Error::Config(_))));
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn invalid_config_lists_every_violation() {
        let mut c = tiny(1);
        c.class_mixture = vec![0.5, 0.5, 0.5, 0.0, 0.0, 0.0];
        c.signal_strength = 2.0;
        c.communities[0].users = 0;
        let Err(Error::Config(v)) = c.validate() else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn forced_class_round_trips() {
        let mut c = GeneratorConfig::new(
            vec![CommunitySpec {
                id: "solo".into(),
                users: 1,
            }],
            3,
        );
        c.class_mixture = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let log = generate(&c).unwrap();
        assert_eq!(label_users(&log, DEFAULT_CHURN_DAYS)[0].class_id, 1);
        for k in 1..6 {
            let mut m = vec![0.0; 6];
            m[k] = 1.0;
            c.class_mixture = m;
            let log = generate(&c).unwrap();
            assert_eq!(label_users(&log, DEFAULT_CHURN_DAYS)[0].class_id, k as u32 + 1);
        }
    }

    #[test]
    fn output_is_deterministic_and_reparses_cleanly() {
        let write = |log: &EventLog| {
            let mut buf = Vec::new();
            log.write_jsonl(&mut buf).unwrap();
            buf
        };
        let a = generate(&tiny(7)).unwrap();
        let b = generate(&tiny(7)).unwrap();
        assert_eq!(write(&a), write(&b));
        assert_ne!(write(&a), write(&generate(&tiny(8)).unwrap()));
        let opts = ParseOptions {
            observation_end: Some(a.observation_end),
        };
        let again = parse_events(&write(&a)[..], Format::JsonLines, &opts).unwrap();
        assert!(again.warnings.is_empty(), "{:?}", again.warnings);
        assert_eq!(again, a);
        assert_eq!(a.communities.len(), 2);
        // communities are disjoint: each user acts in one community only
        for u in &a.users {
            assert!(u.events.iter().all(|e| e.community_id == u.events[0].community_id));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(write(&pool.install(|| generate(&tiny(7)).unwrap())), write(&a));
    }

    #[test]
    fn mixture_is_followed_roughly() {
        let c = GeneratorConfig::new(
            vec![CommunitySpec {
                id: "c".into(),
                users: 3000,
            }],
            5,
        );
        let log = generate(&c).unwrap();
        let counts = class_counts(&label_users(&log, DEFAULT_CHURN_DAYS));
        for (k, n) in counts.iter().enumerate() {
            let share = *n as f64 / 3000.0;
            assert!(
                (share - c.class_mixture[k]).abs() < 0.03,
                "class {} share {share}",
                k + 1
            );
        }
    }

    #[test]
    fn zero_signal_makes_profiles_identical() {
        let c = GeneratorConfig {
            signal_strength: 0.0,
            ..tiny(1)
        };
        let p = c.effective_profiles();
        assert!(p
            .windows(2)
            .all(|w| (w[0].posts_per_day - w[1].posts_per_day).abs() < 1e-12));
        let c = GeneratorConfig {
            signal_strength: 1.0,
            ..tiny(1)
        };
        assert_eq!(c.effective_profiles(), c.profiles);
    }
}
