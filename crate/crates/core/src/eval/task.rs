use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnyLabel, EventLabel, RecordLabel};

/// The four challenge tasks. Index 0 is the Normal class in every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "1-1")]
    Task1_1,
    #[serde(rename = "1-2")]
    Task1_2,
    #[serde(rename = "2-1")]
    Task2_1,
    #[serde(rename = "2-2")]
    Task2_2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Event,
    Record,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Task1_1, TaskId::Task1_2, TaskId::Task2_1, TaskId::Task2_2];

    pub fn level(self) -> Level {
        match self {
            TaskId::Task1_1 | TaskId::Task1_2 => Level::Event,
            TaskId::Task2_1 | TaskId::Task2_2 => Level::Record,
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            TaskId::Task1_1 => &["Normal", "Adventitious"],
            TaskId::Task1_2 => &["Normal", "Rhonchi", "Wheeze", "Stridor", "Coarse Crackle", "Fine Crackle", "Wheeze & Crackle"],
            TaskId::Task2_1 => &["Normal", "Adventitious", "Poor Quality"],
            TaskId::Task2_2 => &["Normal", "CAS", "DAS", "CAS & DAS", "Poor Quality"],
        }
    }

    /// Index of the poor-quality class, if the task has one.
    pub fn pq_index(self) -> Option<usize> {
        match self {
            TaskId::Task2_1 => Some(2),
            TaskId::Task2_2 => Some(4),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Task1_1 => "1-1",
            TaskId::Task1_2 => "1-2",
            TaskId::Task2_1 => "2-1",
            TaskId::Task2_2 => "2-2",
        }
    }

    /// The coarser task whose classes this task's classes collapse onto.
    pub fn coarse(self) -> Option<TaskId> {
        match self {
            TaskId::Task1_2 => Some(TaskId::Task1_1),
            TaskId::Task2_2 => Some(TaskId::Task2_1),
            _ => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().replace(['_', '.'], "-");
        let key = key.strip_prefix("task").unwrap_or(&key).trim_start_matches('-');
        match key {
            "1-1" => Ok(TaskId::Task1_1),
            "1-2" => Ok(TaskId::Task1_2),
            "2-1" => Ok(TaskId::Task2_1),
            "2-2" => Ok(TaskId::Task2_2),
            _ => Err(Error::Config(format!("unknown task {s:?} (expected 1-1, 1-2, 2-1 or 2-2)"))),
        }
    }
}

/// Task class index of a label at the task's level.
pub fn map_labels(task: TaskId, label: AnyLabel) -> Result<usize> {
    match (task.level(), label) {
        (Level::Event, AnyLabel::Event(e)) => Ok(map_event(task, e)),
        (Level::Record, AnyLabel::Record(r)) => Ok(map_record(task, r)),
        (Level::Event, AnyLabel::Record(_)) => Err(Error::LevelMismatch("record", "event")),
        (Level::Record, AnyLabel::Event(_)) => Err(Error::LevelMismatch("event", "record")),
    }
}

fn map_event(task: TaskId, e: EventLabel) -> usize {
    match task {
        TaskId::Task1_1 => usize::from(e != EventLabel::Normal),
        _ => e.code(),
    }
}

fn map_record(task: TaskId, r: RecordLabel) -> usize {
    match task {
        TaskId::Task2_1 => match r {
            RecordLabel::Normal => 0,
            RecordLabel::PoorQuality => 2,
            _ => 1,
        },
        _ => r.code(),
    }
}

/// Map a fine-task class index onto its coarse task (1-2 to 1-1, 2-2 to 2-1).
pub fn collapse_index(fine: TaskId, index: usize) -> Result<usize> {
    let label = match fine {
        TaskId::Task1_2 => AnyLabel::Event(EventLabel::from_code(index).ok_or(Error::IndexOutOfRange { index, classes: 7 })?),
        TaskId::Task2_2 => AnyLabel::Record(RecordLabel::from_code(index).ok_or(Error::IndexOutOfRange { index, classes: 5 })?),
        _ => return Ok(index),
    };
    map_labels(fine.coarse().unwrap(), label)
}
