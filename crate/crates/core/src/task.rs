use std::fmt;
use std::str::FromStr;

/// The four prediction tasks, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    When,
    How,
    Where,
    Via,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::When, Task::How, Task::Where, Task::Via];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::When => "when",
            Task::How => "how",
            Task::Where => "where",
            Task::Via => "via",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task `{s}` (expected when, how, where or via)"))
    }
}
