use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Outcome;

/// Prompt style crossed with chunk augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorialCell {
    Basic,
    Complex,
    AugmentedBasic,
    AugmentedComplex,
}

impl FactorialCell {
    pub const ALL: [FactorialCell; 4] = [
        FactorialCell::Basic,
        FactorialCell::Complex,
        FactorialCell::AugmentedBasic,
        FactorialCell::AugmentedComplex,
    ];

    pub fn from_flags(augmented: bool, complex: bool) -> Self {
        match (augmented, complex) {
            (false, false) => FactorialCell::Basic,
            (false, true) => FactorialCell::Complex,
            (true, false) => FactorialCell::AugmentedBasic,
            (true, true) => FactorialCell::AugmentedComplex,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FactorialCell::Basic => "Basic",
            FactorialCell::Complex => "Complex",
            FactorialCell::AugmentedBasic => "Augmented Basic",
            FactorialCell::AugmentedComplex => "Augmented Complex",
        }
    }

    fn key(self) -> &'static str {
        match self {
            FactorialCell::Basic => "basic",
            FactorialCell::Complex => "complex",
            FactorialCell::AugmentedBasic => "augmented-basic",
            FactorialCell::AugmentedComplex => "augmented-complex",
        }
    }
}

impl fmt::Display for FactorialCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FactorialCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FactorialCell::ALL
            .into_iter()
            .find(|c| c.key() == s)
            .ok_or_else(|| {
                format!("unknown cell `{s}` (basic, complex, augmented-basic, augmented-complex)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: FactorialCell,
    /// `None` when no outcomes were supplied for the cell.
    pub absolute: Option<usize>,
    pub total: usize,
    pub percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialReport {
    pub cells: Vec<CellResult>,
}

pub fn factorial_report(runs: &BTreeMap<FactorialCell, Vec<Outcome>>) -> FactorialReport {
    let cells = FactorialCell::ALL
        .into_iter()
        .map(|cell| match runs.get(&cell).filter(|o| !o.is_empty()) {
            None => CellResult {
                cell,
                absolute: None,
                total: 0,
                percentage: None,
            },
            Some(outcomes) => {
                let correct = outcomes.iter().filter(|o| o.is_correct()).count();
                CellResult {
                    cell,
                    absolute: Some(correct),
                    total: outcomes.len(),
                    percentage: Some(correct as f64 / outcomes.len() as f64),
                }
            }
        })
        .collect();
    FactorialReport { cells }
}

impl FactorialReport {
    pub fn cell(&self, cell: FactorialCell) -> &CellResult {
        self.cells
            .iter()
            .find(|c| c.cell == cell)
            .expect("all four cells present")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let header = ("Types \\ Measures", "Absolute", "Percentage");
        let rows: Vec<(String, String, String)> = self
            .cells
            .iter()
            .map(|c| {
                (
                    c.cell.label().to_string(),
                    c.absolute.map_or("—".to_string(), |a| a.to_string()),
                    c.percentage.map_or("—".to_string(), |p| format!("{p:.3}")),
                )
            })
            .collect();
        let w0 = rows
            .iter()
            .map(|r| r.0.chars().count())
            .chain([header.0.len()])
            .max()
            .unwrap();
        let w1 = rows
            .iter()
            .map(|r| r.1.chars().count())
            .chain([header.1.len()])
            .max()
            .unwrap();
        let w2 = rows
            .iter()
            .map(|r| r.2.chars().count())
            .chain([header.2.len()])
            .max()
            .unwrap();
        let pad = |s: &str, w: usize, left: bool| {
            let fill = " ".repeat(w - s.chars().count());
            if left {
                format!("{s}{fill}")
            } else {
                format!("{fill}{s}")
            }
        };
        let mut out = format!(
            "{} | {} | {}\n{}-+-{}-+-{}\n",
            pad(header.0, w0, true),
            pad(header.1, w1, false),
            pad(header.2, w2, false),
            "-".repeat(w0),
            "-".repeat(w1),
            "-".repeat(w2)
        );
        for (a, b, c) in rows {
            out.push_str(&format!(
                "{} | {} | {}\n",
                pad(&a, w0, true),
                pad(&b, w1, false),
                pad(&c, w2, false)
            ));
        }
        out
    }
}
