use std::fmt;
use std::str::FromStr;

use crate::Task;

/// The full model and its eleven ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoJpre,
    NoJres,
    NoJpreJres,
    NoTip,
    NoHiddenStates,
    NoTaskGating,
    NoTsf,
    NoWhen,
    NoHow,
    NoWhere,
    NoVia,
}

/// Structural switches derived from a [`Variant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub tip: bool,
    pub gate_pre: bool,
    pub gate_res: bool,
    pub hidden_states: bool,
    pub task_gating: bool,
    pub tsf: bool,
    pub dropped_task: Option<Task>,
    pub drop_time_feature: bool,
    pub drop_mode_feature: bool,
    pub drop_item_tokens: bool,
}

impl Variant {
    pub const ABLATIONS: [Variant; 11] = [
        Variant::NoJpre,
        Variant::NoJres,
        Variant::NoJpreJres,
        Variant::NoTip,
        Variant::NoHiddenStates,
        Variant::NoTaskGating,
        Variant::NoTsf,
        Variant::NoWhen,
        Variant::NoHow,
        Variant::NoWhere,
        Variant::NoVia,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoJpre => "no_Jpre",
            Variant::NoJres => "no_Jres",
            Variant::NoJpreJres => "no_Jpre_Jres",
            Variant::NoTip => "no_TIP",
            Variant::NoHiddenStates => "no_hidden_states",
            Variant::NoTaskGating => "no_task_gating",
            Variant::NoTsf => "no_TSF",
            Variant::NoWhen => "no_When",
            Variant::NoHow => "no_How",
            Variant::NoWhere => "no_Where",
            Variant::NoVia => "no_Via",
        }
    }

    pub fn ablation(self) -> Ablation {
        let dropped_task = match self {
            Variant::NoWhen => Some(Task::When),
            Variant::NoHow => Some(Task::How),
            Variant::NoWhere => Some(Task::Where),
            Variant::NoVia => Some(Task::Via),
            _ => None,
        };
        Ablation {
            tip: self != Variant::NoTip,
            gate_pre: !matches!(self, Variant::NoJpre | Variant::NoJpreJres),
            gate_res: !matches!(self, Variant::NoJres | Variant::NoJpreJres),
            hidden_states: self != Variant::NoHiddenStates,
            task_gating: self != Variant::NoTaskGating,
            tsf: self != Variant::NoTsf,
            dropped_task,
            drop_time_feature: self == Variant::NoWhen,
            drop_mode_feature: self == Variant::NoHow,
            drop_item_tokens: self == Variant::NoWhere,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(Variant::Full)
            .chain(Variant::ABLATIONS)
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Variant::ABLATIONS.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}`; valid: full, {}", valid.join(", "))
            })
    }
}
