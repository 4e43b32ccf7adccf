//! Feature catalog, windowed extraction and train-fold mean imputation.
//!
//! User metrics are computed once over the whole observed life (`@all`) and
//! once per cumulative window anchored at the user's registration
//! (`@d1` … `@m3`). The `>3 months` window coincides with `@all` for every
//! metric and is therefore not emitted as separate columns. Community metrics
//! describe the user's home community and carry no window.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{
    self, BinaryWindow, EventKind, EventLog, InteractionEvent, LifetimeLabel, UserRecord, MINUTES_PER_DAY,
    MINUTES_PER_MONTH,
};

pub const CATALOG_VERSION: &str = "lifespan-features/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWindow {
    D1,
    D2,
    D3,
    W1,
    W2,
    M1,
    M3,
    GtM3,
    All,
}

impl TimeWindow {
    /// Bounded windows in increasing order.
    pub const BOUNDED: [TimeWindow; 7] = [
        TimeWindow::D1,
        TimeWindow::D2,
        TimeWindow::D3,
        TimeWindow::W1,
        TimeWindow::W2,
        TimeWindow::M1,
        TimeWindow::M3,
    ];

    pub fn upper_bound_minutes(self) -> Option<i64> {
        Some(match self {
            TimeWindow::D1 => MINUTES_PER_DAY,
            TimeWindow::D2 => 2 * MINUTES_PER_DAY,
            TimeWindow::D3 => 3 * MINUTES_PER_DAY,
            TimeWindow::W1 => 7 * MINUTES_PER_DAY,
            TimeWindow::W2 => 14 * MINUTES_PER_DAY,
            TimeWindow::M1 => MINUTES_PER_MONTH,
            TimeWindow::M3 => 3 * MINUTES_PER_MONTH,
            TimeWindow::GtM3 | TimeWindow::All => return None,
        })
    }

    pub fn id(self) -> &'static str {
        match self {
            TimeWindow::D1 => "d1",
            TimeWindow::D2 => "d2",
            TimeWindow::D3 => "d3",
            TimeWindow::W1 => "w1",
            TimeWindow::W2 => "w2",
            TimeWindow::M1 => "m1",
            TimeWindow::M3 => "m3",
            TimeWindow::GtM3 => "gt_m3",
            TimeWindow::All => "all",
        }
    }

    fn contains_offset(self, offset: i64) -> bool {
        self.upper_bound_minutes().is_none_or(|b| offset <= b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    User,
    Community,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    PostCreated,
    ReplyCreated,
    Upvotes,
    Downvotes,
    Flags,
    PicturePosts,
    Interactions,
    PostCreatedDay,
    ReplyCreatedDay,
    RepliesDay,
    PicturePostsDay,
    MinBtwnPosts,
    MinBtwnIntrctns,
    RegPostGapH,
    Karma,
    RegWeekday,
    RegHour,
    CommunityPosts,
    CommunityReplies,
    CommunityUpvotes,
    CommunityDownvotes,
    CommunityActiveUsers,
    CommunityAvgResponseTime,
}

impl BaseMetric {
    pub const WINDOWED: [BaseMetric; 14] = [
        BaseMetric::PostCreated,
        BaseMetric::ReplyCreated,
        BaseMetric::Upvotes,
        BaseMetric::Downvotes,
        BaseMetric::Flags,
        BaseMetric::PicturePosts,
        BaseMetric::Interactions,
        BaseMetric::PostCreatedDay,
        BaseMetric::ReplyCreatedDay,
        BaseMetric::RepliesDay,
        BaseMetric::PicturePostsDay,
        BaseMetric::MinBtwnPosts,
        BaseMetric::MinBtwnIntrctns,
        BaseMetric::RegPostGapH,
    ];

    pub const STATIC: [BaseMetric; 3] = [BaseMetric::Karma, BaseMetric::RegWeekday, BaseMetric::RegHour];

    pub const COMMUNITY: [BaseMetric; 6] = [
        BaseMetric::CommunityPosts,
        BaseMetric::CommunityReplies,
        BaseMetric::CommunityUpvotes,
        BaseMetric::CommunityDownvotes,
        BaseMetric::CommunityActiveUsers,
        BaseMetric::CommunityAvgResponseTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseMetric::PostCreated => "postcreated",
            BaseMetric::ReplyCreated => "replycreated",
            BaseMetric::Upvotes => "upvotes",
            BaseMetric::Downvotes => "downvotes",
            BaseMetric::Flags => "flags",
            BaseMetric::PicturePosts => "picture_posts",
            BaseMetric::Interactions => "interactions",
            BaseMetric::PostCreatedDay => "postcreated_day",
            BaseMetric::ReplyCreatedDay => "replycreated_day",
            BaseMetric::RepliesDay => "replies_day",
            BaseMetric::PicturePostsDay => "picture_posts_day",
            BaseMetric::MinBtwnPosts => "min_btwn_posts",
            BaseMetric::MinBtwnIntrctns => "min_btwn_intrctns",
            BaseMetric::RegPostGapH => "RegPostGap_h",
            BaseMetric::Karma => "karma",
            BaseMetric::RegWeekday => "reg_weekday",
            BaseMetric::RegHour => "reg_hour",
            BaseMetric::CommunityPosts => "community_posts",
            BaseMetric::CommunityReplies => "community_replies",
            BaseMetric::CommunityUpvotes => "community_upvotes",
            BaseMetric::CommunityDownvotes => "community_downvotes",
            BaseMetric::CommunityActiveUsers => "community_active_users",
            BaseMetric::CommunityAvgResponseTime => "community_avg_response_time",
        }
    }

    /// Plain event counts, which can only grow with the window.
    pub fn is_count(self) -> bool {
        matches!(
            self,
            BaseMetric::PostCreated
                | BaseMetric::ReplyCreated
                | BaseMetric::Upvotes
                | BaseMetric::Downvotes
                | BaseMetric::Flags
                | BaseMetric::PicturePosts
                | BaseMetric::Interactions
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub scope: Scope,
    pub base_metric: BaseMetric,
    /// `None` for window-free features (static user attributes, community metrics).
    pub window: Option<TimeWindow>,
}

impl FeatureDef {
    fn windowed(metric: BaseMetric, window: TimeWindow) -> Self {
        FeatureDef {
            name: format!("{}@{}", metric.name(), window.id()),
            scope: Scope::User,
            base_metric: metric,
            window: Some(window),
        }
    }

    fn plain(metric: BaseMetric, scope: Scope) -> Self {
        FeatureDef {
            name: metric.name().to_string(),
            scope,
            base_metric: metric,
            window: None,
        }
    }

    /// Bounded-window feature (as opposed to whole-life or window-free).
    pub fn is_time_dependent(&self) -> bool {
        self.window.and_then(TimeWindow::upper_bound_minutes).is_some()
    }

    /// Known at registration time, hence shared by every windowed subset.
    pub fn is_registration_static(&self) -> bool {
        matches!(self.base_metric, BaseMetric::RegWeekday | BaseMetric::RegHour)
    }
}

pub fn default_catalog() -> Vec<FeatureDef> {
    let mut catalog = Vec::new();
    for metric in BaseMetric::WINDOWED {
        catalog.push(FeatureDef::windowed(metric, TimeWindow::All));
        for w in TimeWindow::BOUNDED {
            catalog.push(FeatureDef::windowed(metric, w));
        }
    }
    catalog.extend(BaseMetric::STATIC.map(|m| FeatureDef::plain(m, Scope::User)));
    catalog.extend(BaseMetric::COMMUNITY.map(|m| FeatureDef::plain(m, Scope::Community)));
    catalog
}

/// `(time-dependent, time-independent)` column counts.
pub fn catalog_counts(catalog: &[FeatureDef]) -> (usize, usize) {
    let dependent = catalog.iter().filter(|d| d.is_time_dependent()).count();
    (dependent, catalog.len() - dependent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "community_only")]
    CommunityOnly,
    #[serde(rename = "firstDay")]
    FirstDay,
    #[serde(rename = "first3Days")]
    First3Days,
    #[serde(rename = "firstWeek")]
    FirstWeek,
    #[serde(rename = "first2Weeks")]
    First2Weeks,
    #[serde(rename = "firstMonth")]
    FirstMonth,
    #[serde(rename = "first3Months")]
    First3Months,
    #[serde(rename = "user_only")]
    UserOnly,
    #[serde(rename = "all")]
    All,
}

impl Subset {
    pub const ALL: [Subset; 9] = [
        Subset::CommunityOnly,
        Subset::FirstDay,
        Subset::First3Days,
        Subset::FirstWeek,
        Subset::First2Weeks,
        Subset::FirstMonth,
        Subset::First3Months,
        Subset::UserOnly,
        Subset::All,
    ];

    pub const CUMULATIVE: [Subset; 6] = [
        Subset::FirstDay,
        Subset::First3Days,
        Subset::FirstWeek,
        Subset::First2Weeks,
        Subset::FirstMonth,
        Subset::First3Months,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Subset::CommunityOnly => "community_only",
            Subset::FirstDay => "firstDay",
            Subset::First3Days => "first3Days",
            Subset::FirstWeek => "firstWeek",
            Subset::First2Weeks => "first2Weeks",
            Subset::FirstMonth => "firstMonth",
            Subset::First3Months => "first3Months",
            Subset::UserOnly => "user_only",
            Subset::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature subset `{s}`")))
    }

    /// Largest bounded window a cumulative subset admits.
    pub fn window_bound(self) -> Option<TimeWindow> {
        Some(match self {
            Subset::FirstDay => TimeWindow::D1,
            Subset::First3Days => TimeWindow::D3,
            Subset::FirstWeek => TimeWindow::W1,
            Subset::First2Weeks => TimeWindow::W2,
            Subset::FirstMonth => TimeWindow::M1,
            Subset::First3Months => TimeWindow::M3,
            _ => return None,
        })
    }

    /// Cumulative subset whose horizon matches a binary lifetime window.
    pub fn for_binary_window(w: BinaryWindow) -> Self {
        match w {
            BinaryWindow::D1 => Subset::FirstDay,
            BinaryWindow::D7 => Subset::FirstWeek,
            BinaryWindow::D14 => Subset::First2Weeks,
            BinaryWindow::M1 => Subset::FirstMonth,
            BinaryWindow::M3 => Subset::First3Months,
        }
    }

    fn keeps(self, def: &FeatureDef) -> bool {
        match self {
            Subset::All => true,
            Subset::CommunityOnly => def.scope == Scope::Community,
            Subset::UserOnly => def.scope == Scope::User,
            windowed => {
                let bound = windowed.window_bound().expect("cumulative subset");
                def.scope == Scope::Community
                    || def.is_registration_static()
                    || (def.is_time_dependent() && def.window.is_some_and(|w| w <= bound))
            }
        }
    }
}

/// Filters a catalog down to a named subset, preserving catalog order.
pub fn subset_filter(catalog: &[FeatureDef], subset: Subset) -> Vec<FeatureDef> {
    catalog.iter().filter(|d| subset.keeps(d)).cloned().collect()
}

/// Per-user metrics over one window. `None` marks an undefined value.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowMetrics {
    values: HashMap<BaseMetric, Option<f64>>,
}

impl WindowMetrics {
    pub fn get(&self, metric: BaseMetric) -> Option<f64> {
        self.values.get(&metric).copied().flatten()
    }

    pub fn into_named(self, window: TimeWindow) -> Vec<(String, Option<f64>)> {
        BaseMetric::WINDOWED
            .iter()
            .map(|m| (format!("{}@{}", m.name(), window.id()), self.get(*m)))
            .collect()
    }
}

fn mean_gap(times: &[i64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let span = times[times.len() - 1] - times[0];
    Some(span as f64 / (times.len() - 1) as f64)
}

/// User metrics over a window anchored at registration.
///
/// `received_replies` are timestamps of replies other users posted to this
/// user's threads.
pub fn extract_user_features(user: &UserRecord, received_replies: &[i64], window: TimeWindow) -> WindowMetrics {
    let reg = user.registered_at;
    let lifetime = events::compute_lifetime(user);
    let in_window: Vec<&InteractionEvent> = user
        .events
        .iter()
        .filter(|e| window.contains_offset(e.timestamp - reg))
        .collect();
    let count = |pred: &dyn Fn(&InteractionEvent) -> bool| in_window.iter().filter(|e| pred(e)).count() as f64;

    let posts = count(&|e| e.kind == EventKind::Post);
    let replies = count(&|e| e.kind == EventKind::Reply);
    let pictures = count(&|e| e.kind == EventKind::Post && e.is_picture == Some(true));
    let received = received_replies
        .iter()
        .filter(|&&t| window.contains_offset(t - reg))
        .count() as f64;

    let lifetime_days = lifetime as f64 / MINUTES_PER_DAY as f64;
    let window_days = window
        .upper_bound_minutes()
        .map_or(f64::INFINITY, |b| b as f64 / MINUTES_PER_DAY as f64);
    let days = lifetime_days.min(window_days).max(1.0);

    let post_times: Vec<i64> = in_window
        .iter()
        .filter(|e| e.kind == EventKind::Post)
        .map(|e| e.timestamp)
        .collect();
    let all_times: Vec<i64> = in_window.iter().map(|e| e.timestamp).collect();

    let values = HashMap::from([
        (BaseMetric::PostCreated, Some(posts)),
        (BaseMetric::ReplyCreated, Some(replies)),
        (BaseMetric::Upvotes, Some(count(&|e| e.kind == EventKind::Upvote))),
        (BaseMetric::Downvotes, Some(count(&|e| e.kind == EventKind::Downvote))),
        (BaseMetric::Flags, Some(count(&|e| e.kind == EventKind::Flag))),
        (BaseMetric::PicturePosts, Some(pictures)),
        (
            BaseMetric::Interactions,
            Some(count(&|e| e.kind != EventKind::Registered)),
        ),
        (BaseMetric::PostCreatedDay, Some(posts / days)),
        (BaseMetric::ReplyCreatedDay, Some(replies / days)),
        (BaseMetric::RepliesDay, Some(received / days)),
        (BaseMetric::PicturePostsDay, Some(pictures / days)),
        (BaseMetric::MinBtwnPosts, mean_gap(&post_times)),
        (BaseMetric::MinBtwnIntrctns, mean_gap(&all_times)),
        (
            BaseMetric::RegPostGapH,
            post_times.first().map(|&t| (t - reg) as f64 / 60.0),
        ),
    ]);
    WindowMetrics { values }
}

/// Whole-community aggregates over events up to `observation_end`.
pub fn extract_community_features<'a, I>(events: I, observation_end: i64) -> Vec<(String, Option<f64>)>
where
    I: IntoIterator<Item = &'a InteractionEvent>,
{
    let mut counts: HashMap<EventKind, usize> = HashMap::new();
    let mut users: HashSet<&str> = HashSet::new();
    let mut threads: HashMap<&str, i64> = HashMap::new();
    let mut first_reply: HashMap<&str, i64> = HashMap::new();
    for e in events.into_iter().filter(|e| e.timestamp <= observation_end) {
        *counts.entry(e.kind).or_default() += 1;
        users.insert(&e.user_id);
        match e.kind {
            EventKind::Post => {
                if let Some(id) = e.content_id.as_deref() {
                    threads.insert(id, e.timestamp);
                }
            }
            EventKind::Reply => {
                if let Some(thread) = e.thread_id() {
                    let slot = first_reply.entry(thread).or_insert(e.timestamp);
                    *slot = (*slot).min(e.timestamp);
                }
            }
            _ => {}
        }
    }
    let latencies: Vec<f64> = first_reply
        .iter()
        .filter_map(|(thread, &reply)| threads.get(thread).map(|&post| (reply - post) as f64))
        .collect();
    let response = (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
    let n = |k| counts.get(&k).copied().unwrap_or(0) as f64;
    vec![
        (BaseMetric::CommunityPosts.name().into(), Some(n(EventKind::Post))),
        (BaseMetric::CommunityReplies.name().into(), Some(n(EventKind::Reply))),
        (BaseMetric::CommunityUpvotes.name().into(), Some(n(EventKind::Upvote))),
        (
            BaseMetric::CommunityDownvotes.name().into(),
            Some(n(EventKind::Downvote)),
        ),
        (BaseMetric::CommunityActiveUsers.name().into(), Some(users.len() as f64)),
        (BaseMetric::CommunityAvgResponseTime.name().into(), response),
    ]
}

/// Extracted features plus labels, one row per user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub catalog_version: String,
    pub columns: Vec<String>,
    pub user_ids: Vec<String>,
    /// Home community of each row.
    pub communities: Vec<String>,
    /// Row-major, `None` = missing.
    pub values: Vec<Option<f64>>,
    pub labels: Vec<LifetimeLabel>,
}

impl FeatureMatrix {
    pub fn empty(columns: Vec<String>) -> Self {
        FeatureMatrix {
            catalog_version: CATALOG_VERSION.to_string(),
            columns,
            user_ids: Vec::new(),
            communities: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.n_cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        let n = self.n_cols();
        self.values[row * n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let n = self.n_cols();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Keeps the given columns in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown feature column `{n}`")))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(FeatureMatrix {
            catalog_version: self.catalog_version.clone(),
            columns: names.to_vec(),
            user_ids: self.user_ids.clone(),
            communities: self.communities.clone(),
            values,
            labels: self.labels.clone(),
        })
    }

    pub fn select_subset(&self, subset: Subset) -> Result<FeatureMatrix> {
        let names: Vec<String> = subset_filter(&default_catalog(), subset)
            .into_iter()
            .map(|d| d.name)
            .filter(|n| self.column_index(n).is_some())
            .collect();
        self.select_columns(&names)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            catalog_version: self.catalog_version.clone(),
            columns: self.columns.clone(),
            user_ids: rows.iter().map(|&r| self.user_ids[r].clone()).collect(),
            communities: rows.iter().map(|&r| self.communities[r].clone()).collect(),
            values,
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
        }
    }

    /// Distinct home communities, sorted.
    pub fn community_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.communities.clone();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn rows_in_community(&self, community: &str) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.communities[r] == community)
            .collect()
    }

    pub fn community(&self, community: &str) -> FeatureMatrix {
        self.select_rows(&self.rows_in_community(community))
    }

    pub fn ensure_same_catalog(&self, other: &FeatureMatrix) -> Result<()> {
        if self.catalog_version != other.catalog_version {
            return Err(Error::CatalogMismatch {
                expected: self.catalog_version.clone(),
                found: other.catalog_version.clone(),
            });
        }
        if self.columns != other.columns {
            return Err(Error::Incompatible("feature columns differ".into()));
        }
        Ok(())
    }
}

/// Extracts `catalog` for every user of the log.
pub fn extract(log: &EventLog, catalog: &[FeatureDef], churn_days: i64) -> FeatureMatrix {
    let columns: Vec<String> = catalog.iter().map(|d| d.name.clone()).collect();

    let mut by_community: BTreeMap<&str, Vec<&InteractionEvent>> = BTreeMap::new();
    let mut thread_author: HashMap<&str, &str> = HashMap::new();
    for u in &log.users {
        for e in &u.events {
            by_community.entry(e.community_id.as_str()).or_default().push(e);
            if e.kind == EventKind::Post {
                if let Some(id) = e.content_id.as_deref() {
                    thread_author.insert(id, u.user_id.as_str());
                }
            }
        }
    }
    let community_features: HashMap<&str, HashMap<String, Option<f64>>> = by_community
        .par_iter()
        .map(|(c, evs)| {
            (
                *c,
                extract_community_features(evs.iter().copied(), log.observation_end)
                    .into_iter()
                    .collect(),
            )
        })
        .collect();

    let mut received: HashMap<&str, Vec<i64>> = HashMap::new();
    for u in &log.users {
        for e in u.events.iter().filter(|e| e.kind == EventKind::Reply) {
            if let Some(author) = e.thread_id().and_then(|t| thread_author.get(t)) {
                if *author != u.user_id {
                    received.entry(author).or_default().push(e.timestamp);
                }
            }
        }
    }

    let windows: Vec<TimeWindow> = {
        let mut ws: Vec<TimeWindow> = catalog.iter().filter_map(|d| d.window).collect();
        ws.sort();
        ws.dedup();
        ws
    };

    let rows: Vec<(String, Vec<Option<f64>>, LifetimeLabel)> = log
        .users
        .par_iter()
        .map(|u| {
            let home = events::home_community(u).to_string();
            let replies = received.get(u.user_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let per_window: HashMap<TimeWindow, WindowMetrics> = windows
                .iter()
                .map(|&w| (w, extract_user_features(u, replies, w)))
                .collect();
            let community = community_features.get(home.as_str());
            let values = catalog
                .iter()
                .map(|d| match (d.scope, d.window) {
                    (Scope::User, Some(w)) => per_window[&w].get(d.base_metric),
                    (Scope::User, None) => static_feature(u, d.base_metric),
                    (Scope::Community, _) => community.and_then(|m| m.get(&d.name).copied().flatten()),
                })
                .collect();
            (home, values, events::label_user(u, log.observation_end, churn_days))
        })
        .collect();

    let mut matrix = FeatureMatrix::empty(columns);
    for (u, (home, values, label)) in log.users.iter().zip(rows) {
        matrix.user_ids.push(u.user_id.clone());
        matrix.communities.push(home);
        matrix.values.extend(values);
        matrix.labels.push(label);
    }
    matrix
}

fn static_feature(user: &UserRecord, metric: BaseMetric) -> Option<f64> {
    let reg = user.registered_at;
    match metric {
        BaseMetric::Karma => Some(user.karma as f64),
        // Minute 0 is a Thursday; Monday = 0.
        BaseMetric::RegWeekday => Some(((reg.div_euclid(MINUTES_PER_DAY) + 3) % 7) as f64),
        BaseMetric::RegHour => Some((reg.rem_euclid(MINUTES_PER_DAY) / 60) as f64),
        _ => None,
    }
}

/// Column means fitted on a training partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Imputer {
    /// Fits column means on `train_rows`. A column with no observed value on
    /// the training rows imputes to 0.
    pub fn fit(matrix: &FeatureMatrix, train_rows: &[usize]) -> Result<Imputer> {
        if train_rows.is_empty() {
            return Err(Error::invalid("cannot fit imputer on an empty training partition"));
        }
        let n = matrix.n_cols();
        let mut sums = vec![0.0f64; n];
        let mut counts = vec![0usize; n];
        for &r in train_rows {
            for (c, v) in matrix.row(r).iter().enumerate() {
                if let Some(v) = v {
                    sums[c] += v;
                    counts[c] += 1;
                }
            }
        }
        let mut warnings = Vec::new();
        let means = (0..n)
            .map(|c| {
                if counts[c] == 0 {
                    warnings.push(format!(
                        "column `{}` has no observed training value; imputing 0",
                        matrix.columns[c]
                    ));
                    0.0
                } else {
                    sums[c] / counts[c] as f64
                }
            })
            .collect();
        for w in &warnings {
            log::debug!("{w}");
        }
        Ok(Imputer {
            columns: matrix.columns.clone(),
            means,
            warnings,
        })
    }

    pub fn check_columns(&self, matrix: &FeatureMatrix) -> Result<()> {
        if self.columns != matrix.columns {
            return Err(Error::Incompatible(
                "imputer columns do not match feature matrix".into(),
            ));
        }
        Ok(())
    }

    /// Fills every missing cell with its column mean.
    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_columns(matrix)?;
        let mut out = matrix.clone();
        let n = out.n_cols();
        out.values.par_chunks_mut(n.max(1)).for_each(|row| {
            for (c, v) in row.iter_mut().enumerate() {
                if v.is_none() {
                    *v = Some(self.means[c]);
                }
            }
        });
        Ok(out)
    }

    /// Imputed value of one cell.
    #[inline]
    pub fn value(&self, matrix: &FeatureMatrix, row: usize, col: usize) -> f64 {
        matrix.get(row, col).unwrap_or(self.means[col])
    }
}

// --- persistence -----------------------------------------------------------

const LABEL_COLUMNS: [&str; 10] = [
    "user",
    "community",
    "lifetime_min",
    "class",
    "churn7",
    "gt_1d",
    "gt_7d",
    "gt_14d",
    "gt_1m",
    "gt_3m",
];

/// JSON sidecar written next to a feature matrix CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub catalog_version: String,
    pub subset: String,
    pub columns: Vec<String>,
    pub window_bounds: BTreeMap<String, Option<i64>>,
    pub time_dependent: usize,
    pub time_independent: usize,
    /// Column means over all rows; cross-validation refits them per fold.
    pub imputation_means: Vec<f64>,
    pub rows: usize,
}

impl MatrixSidecar {
    pub fn describe(matrix: &FeatureMatrix, subset: Subset) -> Result<Self> {
        let all_rows: Vec<usize> = (0..matrix.n_rows()).collect();
        let means = if all_rows.is_empty() {
            vec![0.0; matrix.n_cols()]
        } else {
            Imputer::fit(matrix, &all_rows)?.means
        };
        let catalog: Vec<FeatureDef> = default_catalog()
            .into_iter()
            .filter(|d| matrix.column_index(&d.name).is_some())
            .collect();
        let (dep, indep) = catalog_counts(&catalog);
        let mut window_bounds = BTreeMap::new();
        for w in TimeWindow::BOUNDED
            .iter()
            .chain([TimeWindow::GtM3, TimeWindow::All].iter())
        {
            window_bounds.insert(w.id().to_string(), w.upper_bound_minutes());
        }
        Ok(MatrixSidecar {
            catalog_version: matrix.catalog_version.clone(),
            subset: subset.id().to_string(),
            columns: matrix.columns.clone(),
            window_bounds,
            time_dependent: dep,
            time_independent: indep,
            imputation_means: means,
            rows: matrix.n_rows(),
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_matrix_csv<W: Write>(matrix: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = LABEL_COLUMNS.to_vec();
    header.extend(matrix.columns.iter().map(String::as_str));
    w.write_record(&header)?;
    let b = |v: bool| if v { "1" } else { "0" };
    for r in 0..matrix.n_rows() {
        let l = &matrix.labels[r];
        let mut rec = vec![
            matrix.user_ids[r].clone(),
            matrix.communities[r].clone(),
            l.lifetime_minutes.to_string(),
            l.class_id.to_string(),
            b(l.churned_at_observation_end).to_string(),
        ];
        rec.extend(BinaryWindow::ALL.iter().map(|&win| b(l.flag(win)).to_string()));
        rec.extend(matrix.row(r).iter().map(|&v| fmt_opt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R, catalog_version: &str) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let fixed = LABEL_COLUMNS.len();
    if headers.len() < fixed || headers.iter().take(fixed).ne(LABEL_COLUMNS.iter().copied()) {
        return Err(Error::parse(1, "unexpected feature matrix header"));
    }
    let columns: Vec<String> = headers.iter().skip(fixed).map(String::from).collect();
    let mut matrix = FeatureMatrix::empty(columns);
    matrix.catalog_version = catalog_version.to_string();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k)
                .parse::<i64>()
                .map_err(|e| Error::parse(line, format!("column {}: {e}", headers.get(k).unwrap_or("?"))))
        };
        let lifetime = int(2)?;
        let class_id = int(3)? as u32;
        let churned = int(4)? != 0;
        let mut flags = BTreeMap::new();
        for (j, w) in BinaryWindow::ALL.iter().enumerate() {
            flags.insert(*w, int(5 + j)? != 0);
        }
        let user = field(0).to_string();
        matrix.labels.push(LifetimeLabel {
            user_id: user.clone(),
            lifetime_minutes: lifetime,
            class_id,
            churned_at_observation_end: churned,
            binary_flags: flags,
        });
        matrix.user_ids.push(user);
        matrix.communities.push(field(1).to_string());
        for k in fixed..headers.len() {
            let s = field(k);
            let v = if s.is_empty() {
                None
            } else {
                Some(
                    s.parse::<f64>()
                        .map_err(|e| Error::parse(line, format!("`{s}`: {e}")))?,
                )
            };
            matrix.values.push(v);
        }
    }
    Ok(matrix)
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn save_matrix(matrix: &FeatureMatrix, subset: Subset, csv_path: &Path) -> Result<MatrixSidecar> {
    write_matrix_csv(matrix, std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
    let sidecar = MatrixSidecar::describe(matrix, subset)?;
    let mut f = std::fs::File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(sidecar)
}

/// Loads a matrix CSV and validates it against its sidecar.
pub fn load_matrix(csv_path: &Path) -> Result<(FeatureMatrix, MatrixSidecar)> {
    let sidecar_file = std::fs::File::open(sidecar_path(csv_path))
        .map_err(|e| Error::Incompatible(format!("missing sidecar for {}: {e}", csv_path.display())))?;
    let sidecar: MatrixSidecar = serde_json::from_reader(std::io::BufReader::new(sidecar_file))?;
    let matrix = read_matrix_csv(
        std::io::BufReader::new(std::fs::File::open(csv_path)?),
        &sidecar.catalog_version,
    )?;
    if matrix.columns != sidecar.columns {
        return Err(Error::Incompatible(format!(
            "{}: columns disagree with sidecar",
            csv_path.display()
        )));
    }
    Ok((matrix, sidecar))
}
