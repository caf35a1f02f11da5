//! Token cost accounting with exact decimal arithmetic.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TokenUsage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no price for model {0:?}")]
    UnpricedModel(String),
    #[error("pricing: {0}")]
    Invalid(String),
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub input: Decimal,
    pub output: Decimal,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingTable {
    pub models: BTreeMap<String, Rate>,
}

/// Rates may be written as TOML numbers or strings. Numbers are read back
/// through their shortest decimal form, so `0.08` means exactly 0.08.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawNum {
    Num(f64),
    Text(String),
}

impl RawNum {
    fn decimal(&self) -> Result<Decimal, CostError> {
        let text = match self {
            RawNum::Num(f) => format!("{f}"),
            RawNum::Text(s) => s.trim().to_string(),
        };
        Decimal::from_str(&text).map_err(|e| CostError::Invalid(format!("{text}: {e}")))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRate {
    input: RawNum,
    output: RawNum,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    models: BTreeMap<String, RawRate>,
}

impl PricingTable {
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let raw: RawTable = toml::from_str(text).map_err(|e| CostError::Invalid(e.to_string()))?;
        let mut models = BTreeMap::new();
        for (name, r) in raw.models {
            let rate = Rate {
                input: r.input.decimal()?,
                output: r.output.decimal()?,
            };
            if rate.input.is_sign_negative() || rate.output.is_sign_negative() {
                return Err(CostError::Invalid(format!("negative rate for {name}")));
            }
            models.insert(name, rate);
        }
        Ok(PricingTable { models })
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn rate(&self, model: &str) -> Result<&Rate, CostError> {
        self.models
            .get(model)
            .ok_or_else(|| CostError::UnpricedModel(model.to_string()))
    }
}

fn million() -> Decimal {
    Decimal::from(1_000_000u32)
}

pub fn usage_cost(u: &TokenUsage, pricing: &PricingTable) -> Result<Decimal, CostError> {
    let r = pricing.rate(&u.model_name)?;
    Ok((Decimal::from(u.input_tokens) * r.input + Decimal::from(u.output_tokens) * r.output) / million())
}

pub fn compute_cost<'a>(
    usages: impl IntoIterator<Item = &'a TokenUsage>,
    pricing: &PricingTable,
) -> Result<Decimal, CostError> {
    usages
        .into_iter()
        .try_fold(Decimal::ZERO, |acc, u| Ok(acc + usage_cost(u, pricing)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PricingTable {
        PricingTable::from_toml(
            r#"
[models."Gemini 3 Pro"]
input = 2.00
output = 12.00

[models."Qwen3-VL-8B"]
input = "0.08"
output = 0.5
"#,
        )
        .unwrap()
    }

    fn u(model: &str, i: u64, o: u64) -> TokenUsage {
        TokenUsage {
            input_tokens: i,
            output_tokens: o,
            model_name: model.into(),
        }
    }

    #[test]
    fn reference_cases() {
        let t = table();
        assert_eq!(compute_cost([&u("Gemini 3 Pro", 1_000_000, 0)], &t).unwrap(), Decimal::new(2, 0));
        assert_eq!(compute_cost([&u("Qwen3-VL-8B", 500_000, 100_000)], &t).unwrap(), Decimal::new(9, 2));
        assert_eq!(compute_cost(std::iter::empty(), &t).unwrap(), Decimal::ZERO);
        assert_eq!(
            compute_cost([&u("GPT-9", 1, 1)], &t),
            Err(CostError::UnpricedModel("GPT-9".into()))
        );
    }

    #[test]
    fn rejects_negative_rates() {
        let bad = "[models.x]\ninput = -1\noutput = 0";
        assert!(PricingTable::from_toml(bad).is_err());
    }
}
