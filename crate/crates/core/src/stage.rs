//! Vocabulary of the five attack stages.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageLabel {
    #[serde(rename = "S1_prepare")]
    S1Prepare,
    #[serde(rename = "S2_reset")]
    S2Reset,
    #[serde(rename = "S3_train")]
    S3Train,
    #[serde(rename = "S4_trigger")]
    S4Trigger,
    #[serde(rename = "S5_extract")]
    S5Extract,
    #[serde(rename = "NOP")]
    Nop,
}

impl StageLabel {
    pub const ALL: [StageLabel; 6] = [
        StageLabel::S1Prepare,
        StageLabel::S2Reset,
        StageLabel::S3Train,
        StageLabel::S4Trigger,
        StageLabel::S5Extract,
        StageLabel::Nop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::S1Prepare => "S1_prepare",
            StageLabel::S2Reset => "S2_reset",
            StageLabel::S3Train => "S3_train",
            StageLabel::S4Trigger => "S4_trigger",
            StageLabel::S5Extract => "S5_extract",
            StageLabel::Nop => "NOP",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecContext {
    Attacker,
    Victim,
}

impl ExecContext {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecContext::Attacker => "attacker",
            ExecContext::Victim => "victim",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stage {
    pub label: StageLabel,
    pub context: ExecContext,
}

impl Stage {
    pub const fn new(label: StageLabel, context: ExecContext) -> Self {
        Self { label, context }
    }

    pub const fn attacker(label: StageLabel) -> Self {
        Self::new(label, ExecContext::Attacker)
    }

    pub const fn victim(label: StageLabel) -> Self {
        Self::new(label, ExecContext::Victim)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.label, self.context.as_str())
    }
}
