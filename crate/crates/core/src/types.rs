//! Small shared vocabulary: passes, properties, verdicts and modes.

use core::fmt;
use core::str::FromStr;

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// One bottom-up traversal producing a specific summary kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassTag {
    Alloc,
    Free,
    Init,
    Memsafe,
    Leak,
    Int,
    External,
    Verify,
}

impl PassTag {
    pub const ALL: [PassTag; 8] = [
        PassTag::Alloc,
        PassTag::Free,
        PassTag::Init,
        PassTag::Memsafe,
        PassTag::Leak,
        PassTag::Int,
        PassTag::External,
        PassTag::Verify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PassTag::Alloc => "alloc",
            PassTag::Free => "free",
            PassTag::Init => "init",
            PassTag::Memsafe => "memsafe",
            PassTag::Leak => "leak",
            PassTag::Int => "int",
            PassTag::External => "external",
            PassTag::Verify => "verify",
        }
    }

    /// Passes that have a block-level prompt for oversized functions.
    pub fn has_block_prompt(self) -> bool {
        matches!(
            self,
            PassTag::Alloc | PassTag::Free | PassTag::Init | PassTag::Memsafe | PassTag::Verify
        )
    }
}

impl fmt::Display for PassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownTag(pub String);

impl fmt::Display for UnknownTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown tag `{}`", self.0)
    }
}

impl core::error::Error for UnknownTag {}

impl FromStr for PassTag {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PassTag::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownTag(s.into()))
    }
}

/// Benchmark property being checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "valid-memsafety")]
    ValidMemsafety,
    #[serde(rename = "valid-memcleanup")]
    ValidMemcleanup,
    #[serde(rename = "no-overflow")]
    NoOverflow,
}

impl Property {
    pub const ALL: [Property; 3] = [
        Property::ValidMemsafety,
        Property::ValidMemcleanup,
        Property::NoOverflow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Property::ValidMemsafety => "valid-memsafety",
            Property::ValidMemcleanup => "valid-memcleanup",
            Property::NoOverflow => "no-overflow",
        }
    }

    /// The ordered pass plan required by this property.
    pub fn passes(self) -> Vec<PassTag> {
        match self {
            Property::ValidMemsafety => alloc::vec![
                PassTag::Alloc,
                PassTag::Free,
                PassTag::Init,
                PassTag::Memsafe,
                PassTag::Verify
            ],
            Property::ValidMemcleanup => {
                alloc::vec![PassTag::Alloc, PassTag::Free, PassTag::Leak]
            }
            Property::NoOverflow => alloc::vec![PassTag::Int],
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Property {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownTag(s.into()))
    }
}

/// Program-level outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::True => "TRUE",
            Verdict::False => "FALSE",
            Verdict::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRUE" => Ok(Verdict::True),
            "FALSE" => Ok(Verdict::False),
            "UNKNOWN" | "UNK" => Ok(Verdict::Unknown),
            _ => Err(UnknownTag(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Compositional,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Compositional => "compositional",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compositional" => Ok(Mode::Compositional),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(UnknownTag(s.into())),
        }
    }
}

/// How a summarizer prompt is split between system and user messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Everything in one user message.
    #[default]
    None,
    /// Static task text in the system message.
    Instructions,
    /// Function source in the system message.
    Source,
}

impl CacheMode {
    pub const ALL: [CacheMode; 3] = [CacheMode::None, CacheMode::Instructions, CacheMode::Source];

    pub fn as_str(self) -> &'static str {
        match self {
            CacheMode::None => "none",
            CacheMode::Instructions => "instructions",
            CacheMode::Source => "source",
        }
    }
}

impl FromStr for CacheMode {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CacheMode::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownTag(s.into()))
    }
}
