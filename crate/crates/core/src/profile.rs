//! User interest profiles: exponentially decayed counts of caption tokens
//! from engaged items, kept separately per engagement type.
//!
//! Profiles are never persisted. They are rebuilt by replaying the event log,
//! and [`profile_snapshots`] replays it causally so that an impression only
//! sees events strictly older than itself.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Impression;
use crate::task::{Task, NUM_TASKS};
use crate::tokenize::TokenIdList;

pub const DEFAULT_HALF_LIFE_S: f64 = 7.0 * 24.0 * 3600.0;
pub const DEFAULT_TOP_K: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("stale event at {event_ts} for user {user_id}; profile already at {last_update}")]
    StaleEvent {
        user_id: u64,
        event_ts: i64,
        last_update: i64,
    },
    #[error("half-life must be positive and finite")]
    InvalidHalfLife,
    #[error("event log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementEvent {
    pub user_id: u64,
    pub item_id: u64,
    pub event_type: Task,
    pub ts: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct TypeMap {
    weights: HashMap<u32, f64>,
    // Time at which `weights` are expressed; decay is applied lazily.
    as_of: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserInterestProfile {
    pub user_id: u64,
    maps: [TypeMap; NUM_TASKS],
    last_update: i64,
}

impl UserInterestProfile {
    pub fn new(user_id: u64) -> Self {
        Self {
            user_id,
            maps: Default::default(),
            last_update: 0,
        }
    }

    pub fn last_update(&self) -> i64 {
        self.last_update
    }

    /// Weight of a token in one type-map, as of the last update of that map.
    pub fn weight(&self, event_type: Task, token: u32) -> Option<f64> {
        self.maps[event_type.index()].weights.get(&token).copied()
    }

    pub fn weights(&self, event_type: Task) -> &HashMap<u32, f64> {
        &self.maps[event_type.index()].weights
    }

    /// Decays the event type's map by `2^(-Δt / half_life)` and adds one to
    /// each distinct token of the engaged item.
    pub fn update(
        &mut self,
        event: &EngagementEvent,
        item_tokens: &TokenIdList,
        half_life_s: f64,
    ) -> Result<(), ProfileError> {
        if !(half_life_s > 0.0 && half_life_s.is_finite()) {
            return Err(ProfileError::InvalidHalfLife);
        }
        if event.ts < self.last_update {
            return Err(ProfileError::StaleEvent {
                user_id: self.user_id,
                event_ts: event.ts,
                last_update: self.last_update,
            });
        }
        let map = &mut self.maps[event.event_type.index()];
        let dt = event.ts - map.as_of;
        if dt > 0 && !map.weights.is_empty() {
            let factor = (-(dt as f64) / half_life_s).exp2();
            for w in map.weights.values_mut() {
                *w *= factor;
            }
        }
        map.as_of = event.ts;
        let mut ids: Vec<u32> = item_tokens.ids().to_vec();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            *map.weights.entry(id).or_insert(0.0) += 1.0;
        }
        self.last_update = event.ts;
        Ok(())
    }

    /// The `k` heaviest tokens of one type-map, heaviest first, ties broken
    /// by ascending token id.
    pub fn snapshot_topk(&self, event_type: Task, k: usize) -> TokenIdList {
        let mut entries: Vec<(u32, f64)> = self.maps[event_type.index()]
            .weights
            .iter()
            .map(|(&id, &w)| (id, w))
            .collect();
        entries.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(k);
        TokenIdList(entries.into_iter().map(|(id, _)| id).collect())
    }

    pub fn snapshot_all(&self, k: usize) -> [TokenIdList; NUM_TASKS] {
        Task::ALL.map(|t| self.snapshot_topk(t, k))
    }
}

/// Free-function form of [`UserInterestProfile::update`].
pub fn update_profile(
    profile: &mut UserInterestProfile,
    event: &EngagementEvent,
    item_tokens: &TokenIdList,
    half_life_s: f64,
) -> Result<(), ProfileError> {
    profile.update(event, item_tokens, half_life_s)
}

pub fn snapshot_topk(profile: &UserInterestProfile, event_type: Task, k: usize) -> TokenIdList {
    profile.snapshot_topk(event_type, k)
}

/// Profiles for many users, built by replaying an event log.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    half_life_s: f64,
    profiles: HashMap<u64, UserInterestProfile>,
}

impl ProfileStore {
    pub fn new(half_life_s: f64) -> Result<Self, ProfileError> {
        if !(half_life_s > 0.0 && half_life_s.is_finite()) {
            return Err(ProfileError::InvalidHalfLife);
        }
        Ok(Self {
            half_life_s,
            profiles: HashMap::new(),
        })
    }

    pub fn apply(&mut self, event: &EngagementEvent, item_tokens: &TokenIdList) -> Result<(), ProfileError> {
        self.profiles
            .entry(event.user_id)
            .or_insert_with(|| UserInterestProfile::new(event.user_id))
            .update(event, item_tokens, self.half_life_s)
    }

    pub fn get(&self, user_id: u64) -> Option<&UserInterestProfile> {
        self.profiles.get(&user_id)
    }

    pub fn snapshot(&self, user_id: u64, k: usize) -> [TokenIdList; NUM_TASKS] {
        match self.profiles.get(&user_id) {
            Some(p) => p.snapshot_all(k),
            None => Default::default(),
        }
    }
}

/// Per-impression profile snapshots using only events strictly earlier than
/// the impression. `events` must be sorted by timestamp; impressions may be
/// in any order and results come back in input order.
pub fn profile_snapshots<'a, F>(
    impressions: &[Impression],
    events: &[EngagementEvent],
    item_tokens: F,
    half_life_s: f64,
    k: usize,
) -> Result<Vec<[TokenIdList; NUM_TASKS]>, ProfileError>
where
    F: Fn(u64) -> &'a TokenIdList,
{
    let mut store = ProfileStore::new(half_life_s)?;
    let mut order: Vec<usize> = (0..impressions.len()).collect();
    order.sort_by_key(|&i| (impressions[i].ts, i));
    let mut out: Vec<[TokenIdList; NUM_TASKS]> = vec![Default::default(); impressions.len()];
    let mut cursor = 0;
    for i in order {
        let imp = &impressions[i];
        while cursor < events.len() && events[cursor].ts < imp.ts {
            let e = &events[cursor];
            store.apply(e, item_tokens(e.item_id))?;
            cursor += 1;
        }
        out[i] = store.snapshot(imp.user_id, k);
    }
    Ok(out)
}

pub fn write_event_log<W: Write>(events: &[EngagementEvent], mut out: W) -> Result<(), ProfileError> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(|source| ProfileError::Parse { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log<R: BufRead>(input: R) -> Result<Vec<EngagementEvent>, ProfileError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| ProfileError::Parse { line: i + 1, source })?;
        events.push(e);
    }
    Ok(events)
}

pub fn save_event_log(events: &[EngagementEvent], path: impl AsRef<Path>) -> Result<(), ProfileError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_event_log(events, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_event_log(path: impl AsRef<Path>) -> Result<Vec<EngagementEvent>, ProfileError> {
    read_event_log(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DAY: f64 = 86_400.0;

    fn ev(task: Task, ts: i64) -> EngagementEvent {
        EngagementEvent {
            user_id: 1,
            item_id: 9,
            event_type: task,
            ts,
        }
    }

    #[test]
    fn distinct_tokens_counted_once() {
        let mut p = UserInterestProfile::new(1);
        p.update(&ev(Task::Like, 10), &vec![3, 7, 7].into(), DAY).unwrap();
        assert_eq!(p.weight(Task::Like, 3), Some(1.0));
        assert_eq!(p.weight(Task::Like, 7), Some(1.0));
        assert_eq!(p.weights(Task::Like).len(), 2);
        assert!(p.weights(Task::Comment).is_empty());
    }

    #[test]
    fn one_half_life_halves_weight() {
        let mut p = UserInterestProfile::new(1);
        p.update(&ev(Task::Like, 0), &vec![4].into(), DAY).unwrap();
        p.update(&ev(Task::Like, DAY as i64), &TokenIdList::default(), DAY)
            .unwrap();
        assert_eq!(p.weight(Task::Like, 4), Some(0.5));
    }

    #[test]
    fn decay_of_a_type_map_spans_other_event_types() {
        // The like-map must decay over the full interval even when a comment
        // event advanced the profile clock in between.
        let mut p = UserInterestProfile::new(1);
        p.update(&ev(Task::Like, 0), &vec![4].into(), DAY).unwrap();
        p.update(&ev(Task::Comment, DAY as i64), &vec![5].into(), DAY).unwrap();
        p.update(&ev(Task::Like, 2 * DAY as i64), &TokenIdList::default(), DAY)
            .unwrap();
        assert_eq!(p.weight(Task::Like, 4), Some(0.25));
    }

    #[test]
    fn stale_event_rejected() {
        let mut p = UserInterestProfile::new(1);
        p.update(&ev(Task::Like, 100), &vec![1].into(), DAY).unwrap();
        assert!(matches!(
            p.update(&ev(Task::Share, 99), &vec![1].into(), DAY),
            Err(ProfileError::StaleEvent { .. })
        ));
    }

    fn profile_with(weights: &[(u32, f64)]) -> UserInterestProfile {
        let mut p = UserInterestProfile::new(1);
        p.maps[Task::Like.index()].weights = weights.iter().copied().collect();
        p
    }

    #[test]
    fn snapshot_examples() {
        let p = profile_with(&[(7, 2.0), (3, 1.0), (9, 1.0)]);
        assert_eq!(p.snapshot_topk(Task::Like, 3).0, vec![7, 3, 9]);
        assert_eq!(p.snapshot_topk(Task::Like, 10).0, vec![7, 3, 9]);
        assert!(p.snapshot_topk(Task::Share, 3).is_empty());
        let p = profile_with(&[(5, 0.4), (2, 0.4)]);
        assert_eq!(p.snapshot_topk(Task::Like, 1).0, vec![2]);
    }

    #[test]
    fn snapshots_are_causal() {
        let imp = |id: u64, ts: i64| Impression {
            impression_id: id,
            user_id: 1,
            item_id: 9,
            ts,
            labels: [0; NUM_TASKS],
        };
        let tokens: TokenIdList = vec![4, 6].into();
        let events = vec![ev(Task::Like, 20)];
        let snaps = profile_snapshots(&[imp(1, 30), imp(0, 20)], &events, |_| &tokens, DAY, 32).unwrap();
        // The impression that produced the event does not see it.
        assert!(snaps[1][Task::Like.index()].is_empty());
        assert_eq!(snaps[0][Task::Like.index()].0, vec![4, 6]);
    }

    #[test]
    fn event_log_round_trip() {
        let events = vec![ev(Task::Like, 1), ev(Task::Dwell, 2)];
        let mut buf = Vec::new();
        write_event_log(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"user_id":1,"item_id":9,"event_type":"like","ts":1}"#
        );
        assert_eq!(read_event_log(&buf[..]).unwrap(), events);
    }

    proptest! {
        #[test]
        fn same_timestamp_events_commute(
            lists in proptest::collection::vec(proptest::collection::vec(0u32..20, 0..6), 1..6),
            seed in any::<u64>(),
        ) {
            let mut forward = UserInterestProfile::new(1);
            forward.update(&ev(Task::Like, 0), &vec![1, 2].into(), DAY).unwrap();
            let mut shuffled = forward.clone();
            for l in &lists {
                forward.update(&ev(Task::Like, 5000), &l.clone().into(), DAY).unwrap();
            }
            let mut order: Vec<usize> = (0..lists.len()).collect();
            order.rotate_left((seed as usize) % lists.len());
            order.reverse();
            for &i in &order {
                shuffled.update(&ev(Task::Like, 5000), &lists[i].clone().into(), DAY).unwrap();
            }
            prop_assert_eq!(forward.weights(Task::Like), shuffled.weights(Task::Like));
        }

        #[test]
        fn decay_keeps_weights_positive_and_order_stable(
            lists in proptest::collection::vec(proptest::collection::vec(0u32..30, 1..6), 1..10),
            gap in 1i64..10_000_000,
        ) {
            let mut p = UserInterestProfile::new(1);
            for (i, l) in lists.iter().enumerate() {
                p.update(&ev(Task::Share, i as i64 * 100), &l.clone().into(), DAY).unwrap();
            }
            let before = p.snapshot_topk(Task::Share, 32);
            let last = p.last_update();
            p.update(&ev(Task::Share, last + gap), &TokenIdList::default(), DAY).unwrap();
            prop_assert!(p.weights(Task::Share).values().all(|&w| w >= 0.0));
            prop_assert_eq!(p.snapshot_topk(Task::Share, 32), before);
        }
    }
}
