use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{Decision, PredictorTable};
use crate::trace::{AccessKind, MemAccess};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    /// Loads and stores bypass every cache.
    Uncached,
    /// Loads cached at L1 and L2; stores bypass both.
    CacheR,
    /// Loads cached at L1 and L2; stores bypass L1 and coalesce at L2.
    CacheRW,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Uncached => "uncached",
            Policy::CacheR => "cacher",
            Policy::CacheRW => "cacherw",
        }
    }

    pub const STATIC: [Policy; 3] = [Policy::Uncached, Policy::CacheR, Policy::CacheRW];
}

impl FromStr for Policy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uncached" => Ok(Policy::Uncached),
            "cacher" => Ok(Policy::CacheR),
            "cacherw" => Ok(Policy::CacheRW),
            _ => Err(PolicyError::UnknownName(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown policy or preset `{0}`")]
    UnknownName(String),
    #[error("allocation bypass needs a caching policy")]
    AllocationBypassUncached,
    #[error("{0} requires policy cacherw")]
    NeedsCacheRW(&'static str),
}

/// A static policy plus the optional optimizations. Ordered so that sweep
/// tables list cells in a stable order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub allocation_bypass: bool,
    pub cache_rinse: bool,
    pub pc_bypass: bool,
}

impl PolicyConfig {
    pub const fn of(policy: Policy) -> Self {
        PolicyConfig { policy, allocation_bypass: false, cache_rinse: false, pc_bypass: false }
    }

    pub const UNCACHED: Self = Self::of(Policy::Uncached);
    pub const CACHE_R: Self = Self::of(Policy::CacheR);
    pub const CACHE_RW: Self = Self::of(Policy::CacheRW);
    pub const CACHE_RW_AB: Self = PolicyConfig { allocation_bypass: true, ..Self::CACHE_RW };
    pub const CACHE_RW_CR: Self = PolicyConfig { cache_rinse: true, ..Self::CACHE_RW_AB };
    pub const CACHE_RW_PCBY: Self = PolicyConfig { pc_bypass: true, ..Self::CACHE_RW_CR };

    /// The six cells of a standard sweep: three static policies and the
    /// cumulative optimization stack on CacheRW.
    pub const SWEEP: [PolicyConfig; 6] = [
        Self::UNCACHED,
        Self::CACHE_R,
        Self::CACHE_RW,
        Self::CACHE_RW_AB,
        Self::CACHE_RW_CR,
        Self::CACHE_RW_PCBY,
    ];

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.allocation_bypass && self.policy == Policy::Uncached {
            return Err(PolicyError::AllocationBypassUncached);
        }
        if self.cache_rinse && self.policy != Policy::CacheRW {
            return Err(PolicyError::NeedsCacheRW("cache rinsing"));
        }
        if self.pc_bypass && self.policy != Policy::CacheRW {
            return Err(PolicyError::NeedsCacheRW("PC-based bypass"));
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        !(self.allocation_bypass || self.cache_rinse || self.pc_bypass)
    }

    /// Short label such as `CacheRW-AB`; non-preset combinations list their flags.
    pub fn label(&self) -> String {
        let base = match self.policy {
            Policy::Uncached => "Uncached",
            Policy::CacheR => "CacheR",
            Policy::CacheRW => "CacheRW",
        };
        match (self.allocation_bypass, self.cache_rinse, self.pc_bypass) {
            (false, false, false) => base.to_string(),
            (true, false, false) => format!("{base}-AB"),
            (true, true, false) if self.policy == Policy::CacheRW => format!("{base}-CR"),
            (true, true, true) if self.policy == Policy::CacheRW => format!("{base}-PCby"),
            (ab, cr, pc) => {
                let mut s = base.to_string();
                for (on, tag) in [(ab, "+ab"), (cr, "+cr"), (pc, "+pcby")] {
                    if on {
                        s.push_str(tag);
                    }
                }
                s
            }
        }
    }

    /// `ab|cr|pcby` flag string used in CSV output, `-` when none are set.
    pub fn flags(&self) -> String {
        let v: Vec<&str> = [(self.allocation_bypass, "ab"), (self.cache_rinse, "cr"), (self.pc_bypass, "pcby")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        if v.is_empty() {
            "-".into()
        } else {
            v.join("|")
        }
    }

    /// Parses a preset name: a static policy or `cacherw-ab`, `cacherw-cr`, `cacherw-pcby`.
    pub fn preset(name: &str) -> Result<Self, PolicyError> {
        match name.to_ascii_lowercase().as_str() {
            "cacherw-ab" => Ok(Self::CACHE_RW_AB),
            "cacherw-cr" => Ok(Self::CACHE_RW_CR),
            "cacherw-pcby" => Ok(Self::CACHE_RW_PCBY),
            other => other.parse().map(Self::of),
        }
    }
}

impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BypassReason {
    Policy,
    Predictor,
}

/// Per-request routing decision.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct RequestPath {
    pub l1_cacheable: bool,
    pub l2_cacheable: bool,
    pub bypass_reason: Option<BypassReason>,
}

pub fn route(policy: &PolicyConfig, req: &MemAccess, predictor: Option<&PredictorTable>) -> RequestPath {
    let (l1, l2) = match (policy.policy, req.kind) {
        (Policy::Uncached, _) => (false, false),
        (Policy::CacheR, AccessKind::Load) => (true, true),
        (Policy::CacheR, AccessKind::Store) => (false, false),
        (Policy::CacheRW, AccessKind::Load) => (true, true),
        (Policy::CacheRW, AccessKind::Store) => (false, true),
    };
    let mut path = RequestPath {
        l1_cacheable: l1,
        l2_cacheable: l2,
        bypass_reason: (!l2).then_some(BypassReason::Policy),
    };
    if policy.pc_bypass && l2 {
        if let Some(p) = predictor {
            if p.decide(req.pc) == Decision::Bypass {
                path.l2_cacheable = false;
                path.bypass_reason = Some(BypassReason::Predictor);
            }
        }
    }
    path
}
