//! Interaction-event logs and per-user lifetime labels.
//!
//! A log is a flat stream of timestamped interactions (`registered`, `post`,
//! `reply`, `upvote`, `downvote`, `flag`). Parsing groups them per user,
//! enforces the log invariants and snaps every vote or flag onto the time and
//! community of the content it targets, which is the only vote timing the
//! source data ever carries.
//!
//! Reply content ids follow the `<thread post id>/<suffix>` convention so the
//! thread a reply belongs to can be recovered without an extra column.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: i64 = 1440;
/// Calendar-average month of 30.44 days.
pub const MINUTES_PER_MONTH: i64 = 43_830;
pub const DEFAULT_CHURN_DAYS: i64 = 7;

/// Upper class bounds (inclusive) in minutes for classes 1..=5; class 6 is unbounded.
pub const CLASS_UPPER_BOUNDS: [i64; 5] = [
    MINUTES_PER_DAY,
    7 * MINUTES_PER_DAY,
    14 * MINUTES_PER_DAY,
    MINUTES_PER_MONTH,
    3 * MINUTES_PER_MONTH,
];

pub const NUM_CLASSES: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Registered,
    Post,
    Reply,
    Upvote,
    Downvote,
    Flag,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Registered => "registered",
            EventKind::Post => "post",
            EventKind::Reply => "reply",
            EventKind::Upvote => "upvote",
            EventKind::Downvote => "downvote",
            EventKind::Flag => "flag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "registered" => EventKind::Registered,
            "post" => EventKind::Post,
            "reply" => EventKind::Reply,
            "upvote" => EventKind::Upvote,
            "downvote" => EventKind::Downvote,
            "flag" => EventKind::Flag,
            _ => return None,
        })
    }

    /// Post or reply: the event creates a new piece of content.
    pub fn creates_content(self) -> bool {
        matches!(self, EventKind::Post | EventKind::Reply)
    }

    /// Upvote, downvote or flag: the event targets existing content.
    pub fn targets_content(self) -> bool {
        matches!(self, EventKind::Upvote | EventKind::Downvote | EventKind::Flag)
    }
}

/// One timestamped user action. Field names on the wire are
/// `user`, `kind`, `ts_min`, `community`, `content`, `picture`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    #[serde(rename = "user")]
    pub user_id: String,
    pub kind: EventKind,
    #[serde(rename = "ts_min")]
    pub timestamp: i64,
    #[serde(rename = "community")]
    pub community_id: String,
    #[serde(rename = "content", default, skip_serializing_if = "Option::is_none")]
    pub content_id: Option<String>,
    #[serde(rename = "picture", default, skip_serializing_if = "Option::is_none")]
    pub is_picture: Option<bool>,
}

impl InteractionEvent {
    /// Thread post id of a reply (`<thread>/<suffix>` convention).
    pub fn thread_id(&self) -> Option<&str> {
        if self.kind != EventKind::Reply {
            return None;
        }
        self.content_id
            .as_deref()
            .and_then(|c| c.split_once('/').map(|(thread, _)| thread))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Upvotes minus downvotes received on the user's content.
    pub karma: i64,
    pub blocked: bool,
    pub registered_at: i64,
    /// Sorted by timestamp; the first event is always `registered`.
    pub events: Vec<InteractionEvent>,
}

impl UserRecord {
    pub fn last_timestamp(&self) -> i64 {
        self.events.last().map(|e| e.timestamp).unwrap_or(self.registered_at)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    /// Ordered by user id.
    pub users: Vec<UserRecord>,
    pub communities: BTreeSet<String>,
    pub observation_end: i64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EventLog {
    pub fn event_count(&self) -> usize {
        self.users.iter().map(|u| u.events.len()).sum()
    }

    /// All events in canonical order: by timestamp, then user, then per-user order.
    pub fn canonical_events(&self) -> Vec<&InteractionEvent> {
        let mut all: Vec<(usize, usize, &InteractionEvent)> = self
            .users
            .iter()
            .enumerate()
            .flat_map(|(ui, u)| u.events.iter().enumerate().map(move |(ei, e)| (ui, ei, e)))
            .collect();
        all.sort_by_key(|&(ui, ei, e)| (e.timestamp, ui, ei));
        all.into_iter().map(|(_, _, e)| e).collect()
    }

    pub fn mark_blocked(&mut self, ids: &HashSet<String>) {
        for u in &mut self.users {
            if ids.contains(&u.user_id) {
                u.blocked = true;
            }
        }
    }

    /// Drops blocked users. Communities and observation end are kept.
    pub fn without_blocked(mut self) -> Self {
        self.users.retain(|u| !u.blocked);
        self
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in self.canonical_events() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    JsonLines,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::JsonLines,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// End of the observation period. Defaults to the latest event timestamp.
    pub observation_end: Option<i64>,
}

#[derive(Deserialize)]
struct CsvRow {
    user: String,
    kind: String,
    ts_min: String,
    community: String,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    picture: Option<String>,
}

fn row_to_event(line: usize, row: CsvRow) -> Result<InteractionEvent> {
    let kind = EventKind::parse(row.kind.trim())
        .ok_or_else(|| Error::parse(line, format!("unknown event kind `{}`", row.kind)))?;
    let timestamp = row
        .ts_min
        .trim()
        .parse::<i64>()
        .map_err(|e| Error::parse(line, format!("bad ts_min `{}`: {e}", row.ts_min)))?;
    let content_id = row.content.filter(|c| !c.is_empty());
    let is_picture = match row.picture.as_deref().map(str::trim) {
        None | Some("") => None,
        Some("true") | Some("1") => Some(true),
        Some("false") | Some("0") => Some(false),
        Some(other) => return Err(Error::parse(line, format!("bad picture flag `{other}`"))),
    };
    Ok(InteractionEvent {
        user_id: row.user,
        kind,
        timestamp,
        community_id: row.community,
        content_id,
        is_picture,
    })
}

fn read_raw<R: Read>(reader: R, format: Format) -> Result<Vec<(usize, InteractionEvent)>> {
    let mut raw = Vec::new();
    match format {
        Format::JsonLines => {
            let reader = std::io::BufReader::new(reader);
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: InteractionEvent =
                    serde_json::from_str(&line).map_err(|e| Error::parse(line_no, e.to_string()))?;
                raw.push((line_no, event));
            }
        }
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
            let headers = rdr.headers()?.clone();
            let mut record = csv::StringRecord::new();
            loop {
                match rdr.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {}
                    Err(e) => {
                        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                        return Err(Error::parse(line, e.to_string()));
                    }
                }
                let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
                let row: CsvRow = record
                    .deserialize(Some(&headers))
                    .map_err(|e| Error::parse(line, e.to_string()))?;
                raw.push((line, row_to_event(line, row)?));
            }
        }
    }
    Ok(raw)
}

fn validate_row(line: usize, e: &InteractionEvent) -> Result<()> {
    if e.user_id.is_empty() {
        return Err(Error::parse(line, "empty user id"));
    }
    if e.community_id.is_empty() {
        return Err(Error::parse(line, "empty community id"));
    }
    if e.timestamp < 0 {
        return Err(Error::parse(line, format!("negative timestamp {}", e.timestamp)));
    }
    if e.kind != EventKind::Registered && e.content_id.is_none() {
        return Err(Error::parse(
            line,
            format!("`{}` event without content id", e.kind.as_str()),
        ));
    }
    if e.is_picture.is_some() && !e.kind.creates_content() {
        return Err(Error::parse(
            line,
            format!("picture flag on `{}` event", e.kind.as_str()),
        ));
    }
    Ok(())
}

/// Parses an event stream into a validated [`EventLog`].
pub fn parse_events<R: Read>(reader: R, format: Format, options: &ParseOptions) -> Result<EventLog> {
    assemble(read_raw(reader, format)?, options)
}

/// Builds a log from in-memory events, applying the same validation,
/// snapping and registration rules as parsing. Errors cite the 1-based
/// position of the offending event.
pub fn log_from_events(events: Vec<InteractionEvent>, options: &ParseOptions) -> Result<EventLog> {
    assemble(
        events.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect(),
        options,
    )
}

fn assemble(raw: Vec<(usize, InteractionEvent)>, options: &ParseOptions) -> Result<EventLog> {
    let mut warnings = Vec::new();

    // content id -> (timestamp, community, author)
    let mut content: HashMap<String, (i64, String, String)> = HashMap::new();
    for (line, e) in &raw {
        validate_row(*line, e)?;
        if e.kind.creates_content() {
            let id = e.content_id.clone().expect("validated");
            if content.contains_key(&id) {
                return Err(Error::parse(*line, format!("duplicate content id `{id}`")));
            }
            content.insert(id, (e.timestamp, e.community_id.clone(), e.user_id.clone()));
        }
    }

    let mut per_user: BTreeMap<String, Vec<(usize, InteractionEvent)>> = BTreeMap::new();
    for (line, mut e) in raw {
        if e.kind.targets_content() {
            let target = e.content_id.as_deref().expect("validated");
            match content.get(target) {
                Some((ts, community, _)) => {
                    if e.timestamp != *ts || &e.community_id != community {
                        warnings.push(format!(
                            "line {line}: {} on `{target}` snapped from t={} to content creation t={ts}",
                            e.kind.as_str(),
                            e.timestamp
                        ));
                        e.timestamp = *ts;
                        e.community_id = community.clone();
                    }
                }
                None => warnings.push(format!(
                    "line {line}: {} targets unknown content `{target}`",
                    e.kind.as_str()
                )),
            }
        }
        per_user.entry(e.user_id.clone()).or_default().push((line, e));
    }

    let mut karma: HashMap<&str, i64> = HashMap::new();
    for events in per_user.values() {
        for (_, e) in events {
            let delta = match e.kind {
                EventKind::Upvote => 1,
                EventKind::Downvote => -1,
                _ => continue,
            };
            if let Some((_, _, author)) = e.content_id.as_deref().and_then(|c| content.get(c)) {
                *karma.entry(author.as_str()).or_default() += delta;
            }
        }
    }

    let mut users = Vec::with_capacity(per_user.len());
    let mut communities = BTreeSet::new();
    let mut max_ts = 0i64;
    for (user_id, mut events) in per_user {
        let mut registered: Option<(usize, i64)> = None;
        for (line, e) in &events {
            if e.kind == EventKind::Registered {
                if let Some((first, _)) = registered {
                    return Err(Error::parse(
                        *line,
                        format!("duplicate `registered` event for user `{user_id}` (first on line {first})"),
                    ));
                }
                registered = Some((*line, e.timestamp));
            }
        }
        let registered_at = match registered {
            Some((_, ts)) => ts,
            None => {
                let (_, first) = events
                    .iter()
                    .min_by_key(|(line, e)| (e.timestamp, *line))
                    .expect("user has at least one event");
                let synth = InteractionEvent {
                    user_id: user_id.clone(),
                    kind: EventKind::Registered,
                    timestamp: first.timestamp,
                    community_id: first.community_id.clone(),
                    content_id: None,
                    is_picture: None,
                };
                warnings.push(format!(
                    "user `{user_id}` has no `registered` event; synthesized at t={}",
                    synth.timestamp
                ));
                let ts = synth.timestamp;
                events.push((0, synth));
                ts
            }
        };
        for (line, e) in events.iter_mut() {
            if e.timestamp < registered_at {
                if e.kind.targets_content() {
                    warnings.push(format!(
                        "line {line}: {} snapped before registration of `{user_id}`; clamped to t={registered_at}",
                        e.kind.as_str()
                    ));
                    e.timestamp = registered_at;
                } else {
                    return Err(Error::parse(
                        *line,
                        format!("`{}` precedes registration of user `{user_id}`", e.kind.as_str()),
                    ));
                }
            }
        }
        events.sort_by_key(|(line, e)| (e.timestamp, e.kind != EventKind::Registered, *line));
        let events: Vec<InteractionEvent> = events.into_iter().map(|(_, e)| e).collect();
        for e in &events {
            communities.insert(e.community_id.clone());
            max_ts = max_ts.max(e.timestamp);
        }
        users.push(UserRecord {
            karma: karma.get(user_id.as_str()).copied().unwrap_or(0),
            user_id,
            blocked: false,
            registered_at,
            events,
        });
    }

    let observation_end = match options.observation_end {
        Some(end) if end < max_ts => {
            return Err(Error::invalid(format!(
                "observation end {end} precedes latest event at {max_ts}"
            )))
        }
        Some(end) => end,
        None => max_ts,
    };

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(EventLog {
        users,
        communities,
        observation_end,
        warnings,
    })
}

pub fn read_events(path: &Path, options: &ParseOptions) -> Result<EventLog> {
    let file = std::fs::File::open(path)?;
    parse_events(file, Format::from_path(path), options)
}

/// Minutes between registration and the last interaction.
pub fn compute_lifetime(user: &UserRecord) -> i64 {
    (user.last_timestamp() - user.registered_at).max(0)
}

/// Maps a lifetime to its class 1..=6. Boundaries belong to the lower class.
pub fn lifetime_class(lifetime_minutes: i64) -> Result<u32> {
    if lifetime_minutes < 0 {
        return Err(Error::invalid(format!("negative lifetime {lifetime_minutes}")));
    }
    let idx = CLASS_UPPER_BOUNDS
        .iter()
        .position(|&upper| lifetime_minutes <= upper)
        .unwrap_or(CLASS_UPPER_BOUNDS.len());
    Ok(idx as u32 + 1)
}

/// Lifetime range `(lower, upper]` of a class in minutes; `upper` is `None` for class 6.
pub fn class_bounds(class_id: u32) -> Result<(i64, Option<i64>)> {
    match class_id {
        1 => Ok((0, Some(CLASS_UPPER_BOUNDS[0]))),
        2..=5 => {
            let i = class_id as usize - 1;
            Ok((CLASS_UPPER_BOUNDS[i - 1], Some(CLASS_UPPER_BOUNDS[i])))
        }
        6 => Ok((CLASS_UPPER_BOUNDS[4], None)),
        other => Err(Error::invalid(format!("class id {other} outside 1..=6"))),
    }
}

/// True iff the user's last activity falls before the final `threshold_days` margin.
pub fn churn_label(user: &UserRecord, observation_end: i64, threshold_days: i64) -> bool {
    user.last_timestamp() < observation_end - threshold_days * MINUTES_PER_DAY
}

/// Community with the most interactions; ties go to the community entered first.
pub fn home_community(user: &UserRecord) -> &str {
    let mut stats: HashMap<&str, (usize, i64)> = HashMap::new();
    for e in &user.events {
        let entry = stats.entry(e.community_id.as_str()).or_insert((0, e.timestamp));
        entry.0 += 1;
        entry.1 = entry.1.min(e.timestamp);
    }
    stats
        .into_iter()
        .max_by(|(ca, (na, fa)), (cb, (nb, fb))| na.cmp(nb).then(fb.cmp(fa)).then(cb.cmp(ca)))
        .map(|(c, _)| c)
        .unwrap_or("")
}

/// "Will the lifetime exceed this window?" targets, aligned with the class bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryWindow {
    #[serde(rename = "1d")]
    D1,
    #[serde(rename = "7d")]
    D7,
    #[serde(rename = "14d")]
    D14,
    #[serde(rename = "1m")]
    M1,
    #[serde(rename = "3m")]
    M3,
}

impl BinaryWindow {
    pub const ALL: [BinaryWindow; 5] = [
        BinaryWindow::D1,
        BinaryWindow::D7,
        BinaryWindow::D14,
        BinaryWindow::M1,
        BinaryWindow::M3,
    ];

    pub fn minutes(self) -> i64 {
        CLASS_UPPER_BOUNDS[self.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn id(self) -> &'static str {
        match self {
            BinaryWindow::D1 => "1d",
            BinaryWindow::D7 => "7d",
            BinaryWindow::D14 => "14d",
            BinaryWindow::M1 => "1m",
            BinaryWindow::M3 => "3m",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BinaryWindow::ALL.into_iter().find(|w| w.id() == s)
    }

    /// The flag implied by a lifetime class: window `i` is the upper bound of class `i + 1`.
    pub fn flag_from_class(self, class_id: u32) -> bool {
        class_id as usize > self.index() + 1
    }
}

pub fn binary_flags(lifetime_minutes: i64) -> BTreeMap<BinaryWindow, bool> {
    BinaryWindow::ALL
        .into_iter()
        .map(|w| (w, lifetime_minutes > w.minutes()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeLabel {
    pub user_id: String,
    pub lifetime_minutes: i64,
    pub class_id: u32,
    pub churned_at_observation_end: bool,
    pub binary_flags: BTreeMap<BinaryWindow, bool>,
}

impl LifetimeLabel {
    pub fn flag(&self, window: BinaryWindow) -> bool {
        self.binary_flags.get(&window).copied().unwrap_or(false)
    }
}

pub fn label_user(user: &UserRecord, observation_end: i64, churn_days: i64) -> LifetimeLabel {
    let lifetime = compute_lifetime(user);
    LifetimeLabel {
        user_id: user.user_id.clone(),
        lifetime_minutes: lifetime,
        class_id: lifetime_class(lifetime).expect("lifetime is non-negative"),
        churned_at_observation_end: churn_label(user, observation_end, churn_days),
        binary_flags: binary_flags(lifetime),
    }
}

pub fn label_users(log: &EventLog, churn_days: i64) -> Vec<LifetimeLabel> {
    log.users
        .iter()
        .map(|u| label_user(u, log.observation_end, churn_days))
        .collect()
}

/// Users per lifetime class, index 0 = class 1.
pub fn class_counts(labels: &[LifetimeLabel]) -> [usize; 6] {
    let mut counts = [0usize; 6];
    for l in labels {
        counts[l.class_id as usize - 1] += 1;
    }
    counts
}

pub const LABELS_HEADER: [&str; 9] = [
    "user",
    "lifetime_min",
    "class",
    "churn7",
    "gt_1d",
    "gt_7d",
    "gt_14d",
    "gt_1m",
    "gt_3m",
];

pub fn write_labels_csv<W: Write>(labels: &[LifetimeLabel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELS_HEADER)?;
    let b = |v: bool| if v { "1" } else { "0" };
    for l in labels {
        let mut rec = vec![
            l.user_id.clone(),
            l.lifetime_minutes.to_string(),
            l.class_id.to_string(),
            b(l.churned_at_observation_end).to_string(),
        ];
        rec.extend(BinaryWindow::ALL.iter().map(|&win| b(l.flag(win)).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
