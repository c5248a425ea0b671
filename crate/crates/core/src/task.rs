//! The five engagement tasks. Each task is both a ranker head and an
//! engagement-event type feeding the interest profiles.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const NUM_TASKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Comment,
    Like,
    Share,
    Dwell,
    Consume,
}

impl Task {
    /// Head order used by labels, probabilities and reports.
    pub const ALL: [Task; NUM_TASKS] = [
        Task::Comment,
        Task::Like,
        Task::Share,
        Task::Dwell,
        Task::Consume,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Comment => "comment",
            Task::Like => "like",
            Task::Share => "share",
            Task::Dwell => "dwell",
            Task::Consume => "consume",
        }
    }

    /// Row label used in the per-task deep-dive table.
    pub fn display_name(self) -> &'static str {
        match self {
            Task::Comment => "Comment Related",
            Task::Like => "Like Related",
            Task::Share => "Share Related",
            Task::Dwell => "Time spent Related",
            Task::Consume => "Consumption Related",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown event type `{0}`")]
pub struct UnknownTask(pub String);

impl FromStr for Task {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}
