//! Cost/performance dominance analysis over configuration points.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub name: String,
    /// Fraction in [0, 1].
    pub success_rate: f64,
    /// USD per task.
    pub cost: f64,
}

impl ConfigPoint {
    pub fn new(name: &str, success_rate: f64, cost: f64) -> Self {
        ConfigPoint {
            name: name.to_string(),
            success_rate,
            cost,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.success_rate) {
            return Err(format!("{}: success rate {} outside [0, 1]", self.name, self.success_rate));
        }
        if self.cost.is_nan() || self.cost < 0.0 {
            return Err(format!("{}: negative cost", self.name));
        }
        Ok(())
    }

    /// `self` dominates `other`: no worse on both axes, better on one.
    pub fn dominates(&self, other: &ConfigPoint) -> bool {
        self.success_rate >= other.success_rate
            && self.cost <= other.cost
            && (self.success_rate > other.success_rate || self.cost < other.cost)
    }
}

/// Points not dominated by any input point, in input order. Exact ties
/// are all kept.
pub fn pareto_frontier(points: &[ConfigPoint]) -> Vec<ConfigPoint> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsFile {
    pub points: Vec<ConfigPoint>,
}

pub fn load_points(path: &Path) -> Result<Vec<ConfigPoint>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let f: PointsFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for p in &f.points {
        p.validate()?;
    }
    Ok(f.points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_and_singletons() {
        let a = ConfigPoint::new("a", 0.5, 1.0);
        assert_eq!(pareto_frontier(std::slice::from_ref(&a)), vec![a.clone()]);
        let b = ConfigPoint::new("b", 0.5, 1.0);
        assert_eq!(pareto_frontier(&[a.clone(), b.clone()]).len(), 2);
        let c = ConfigPoint::new("c", 0.6, 1.0);
        assert_eq!(pareto_frontier(&[a, b, c.clone()]), vec![c]);
        assert!(pareto_frontier(&[]).is_empty());
    }
}
