use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::CoreId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Runnable,
    Running,
    Finished,
}

/// Scheduling view of a simulated process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Task {
    pub tid: TaskId,
    pub prefetch_disable: bool,
    pub state: TaskState,
    /// Core whose run queue holds the task, or that currently runs it.
    pub assigned_core: Option<CoreId>,
    pub parent: Option<TaskId>,
    /// Kernel or enclave context. Only used to label scopes.
    pub privileged: bool,
}

impl Task {
    pub fn is_running(&self) -> bool {
        self.state == TaskState::Running
    }
}
