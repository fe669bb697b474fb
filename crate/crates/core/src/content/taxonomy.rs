//! Manipulation tactics, victim vulnerabilities and scam schemes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ContentError;

/// One of the six manipulation tactics the game teaches players to spot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tactic {
    SocialProof,
    Authority,
    FootInTheDoor,
    UrgencyScarcity,
    EmotionalAppeal,
    NormActivation,
}

impl Tactic {
    pub const ALL: [Tactic; 6] = [
        Tactic::SocialProof,
        Tactic::Authority,
        Tactic::FootInTheDoor,
        Tactic::UrgencyScarcity,
        Tactic::EmotionalAppeal,
        Tactic::NormActivation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tactic::SocialProof => "SocialProof",
            Tactic::Authority => "Authority",
            Tactic::FootInTheDoor => "FootInTheDoor",
            Tactic::UrgencyScarcity => "UrgencyScarcity",
            Tactic::EmotionalAppeal => "EmotionalAppeal",
            Tactic::NormActivation => "NormActivation",
        }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Psychological vulnerability a scam leans on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vulnerability {
    TrustInAuthority,
    QuickRewards,
    LackOfAwareness,
    EmotionalReasoning,
}

impl Vulnerability {
    pub const ALL: [Vulnerability; 4] = [
        Vulnerability::TrustInAuthority,
        Vulnerability::QuickRewards,
        Vulnerability::LackOfAwareness,
        Vulnerability::EmotionalReasoning,
    ];
}

/// Scam scheme family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScamType {
    Courier,
    CustomerCare,
    Jobs,
    FriendFamilyImpersonation,
    MarketplaceShopping,
    CryptoInvestment,
    Loan,
    OtherUpi,
}

impl ScamType {
    pub const ALL: [ScamType; 8] = [
        ScamType::Courier,
        ScamType::CustomerCare,
        ScamType::Jobs,
        ScamType::FriendFamilyImpersonation,
        ScamType::MarketplaceShopping,
        ScamType::CryptoInvestment,
        ScamType::Loan,
        ScamType::OtherUpi,
    ];
}

/// Taxonomy entry: the forewarning shown before play and the refutation
/// shown once the tactic has been encountered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacticInfo {
    pub id: Tactic,
    pub display_name: String,
    pub forewarning: String,
    pub refutation: String,
}

/// The shared tactic taxonomy, one entry per [`Tactic`] in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Taxonomy {
    entries: Vec<TacticInfo>,
}

const BUILTIN_TAXONOMY: &str = include_str!("../../corpus/taxonomy.json");

impl Taxonomy {
    /// Parses a taxonomy file (a JSON array of six entries).
    pub fn parse(doc: &str) -> Result<Self, ContentError> {
        let value: serde_json::Value = serde_json::from_str(doc).map_err(ContentError::from_syntax)?;
        let mut entries: Vec<TacticInfo> = serde_path_to_error::deserialize(value)
            .map_err(|e| ContentError::Schema { field: e.path().to_string(), message: e.inner().to_string() })?;

        if entries.len() != Tactic::ALL.len() {
            return Err(ContentError::schema("taxonomy", format!("expected 6 tactics, found {}", entries.len())));
        }
        let distinct: BTreeSet<Tactic> = entries.iter().map(|e| e.id).collect();
        if distinct.len() != Tactic::ALL.len() {
            return Err(ContentError::schema("taxonomy.id", "duplicate tactic id"));
        }
        for (i, e) in entries.iter().enumerate() {
            for (name, text) in
                [("display_name", &e.display_name), ("forewarning", &e.forewarning), ("refutation", &e.refutation)]
            {
                if text.trim().is_empty() {
                    return Err(ContentError::schema(format!("[{i}].{name}"), "must not be empty"));
                }
            }
        }
        entries.sort_by_key(|e| e.id);
        Ok(Self { entries })
    }

    /// The taxonomy bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn get(&self, tactic: Tactic) -> &TacticInfo {
        // sorted and complete, so the discriminant is the index
        &self.entries[tactic as usize]
    }

    pub fn entries(&self) -> &[TacticInfo] {
        &self.entries
    }
}
