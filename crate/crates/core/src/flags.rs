use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Architectural components that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    MultiAgent,
    PostValidation,
    SequentialExec,
    HybridPerception,
    Metacog,
    Scratchpad,
    DataFidelityPrompt,
    Video,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::MultiAgent,
        Component::PostValidation,
        Component::SequentialExec,
        Component::HybridPerception,
        Component::Metacog,
        Component::Scratchpad,
        Component::DataFidelityPrompt,
        Component::Video,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::MultiAgent => "multi_agent",
            Component::PostValidation => "post_validation",
            Component::SequentialExec => "sequential_exec",
            Component::HybridPerception => "hybrid_perception",
            Component::Metacog => "metacog",
            Component::Scratchpad => "scratchpad",
            Component::DataFidelityPrompt => "data_fidelity_prompt",
            Component::Video => "video",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown component {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub multi_agent: bool,
    pub post_validation: bool,
    pub sequential_exec: bool,
    pub hybrid_perception: bool,
    pub metacog: bool,
    pub scratchpad: bool,
    pub data_fidelity_prompt: bool,
    pub video: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::all_on()
    }
}

impl AblationFlags {
    pub fn all_on() -> Self {
        AblationFlags {
            multi_agent: true,
            post_validation: true,
            sequential_exec: true,
            hybrid_perception: true,
            metacog: true,
            scratchpad: true,
            data_fidelity_prompt: true,
            video: true,
        }
    }

    fn slot(&mut self, c: Component) -> &mut bool {
        match c {
            Component::MultiAgent => &mut self.multi_agent,
            Component::PostValidation => &mut self.post_validation,
            Component::SequentialExec => &mut self.sequential_exec,
            Component::HybridPerception => &mut self.hybrid_perception,
            Component::Metacog => &mut self.metacog,
            Component::Scratchpad => &mut self.scratchpad,
            Component::DataFidelityPrompt => &mut self.data_fidelity_prompt,
            Component::Video => &mut self.video,
        }
    }

    pub fn enabled(&self, c: Component) -> bool {
        let mut copy = *self;
        *copy.slot(c)
    }

    pub fn without(mut self, c: Component) -> Self {
        *self.slot(c) = false;
        self
    }

    pub fn disabled(&self) -> Vec<Component> {
        Component::ALL.into_iter().filter(|c| !self.enabled(*c)).collect()
    }

    /// Compact label such as `full` or `-post_validation,-metacog`.
    pub fn label(&self) -> String {
        let off = self.disabled();
        if off.is_empty() {
            "full".into()
        } else {
            off.iter().map(|c| format!("-{c}")).collect::<Vec<_>>().join(",")
        }
    }
}
