use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Sentinel period for catalog rows whose label is not in the taxonomy.
pub const UNKNOWN_PERIOD: &str = "Unknown";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Era {
    /// 3rd millennium BCE (Early Bronze Age).
    Millennium3,
    /// 2nd millennium BCE (Middle and Late Bronze Age).
    Millennium2,
    /// 1st millennium BCE (Iron Age).
    Millennium1,
}

impl Era {
    pub const ALL: [Era; 3] = [Era::Millennium3, Era::Millennium2, Era::Millennium1];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub period: String,
    pub era: Era,
    pub start_bce: i32,
    pub end_bce: i32,
}

/// Ordered table of period labels with their era and BCE date range.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodTaxonomy {
    entries: Vec<PeriodEntry>,
}

const BUILTIN: &[(&str, Era, i32, i32)] = &[
    ("Uruk IV", Era::Millennium3, 3500, 3200),
    ("Uruk III", Era::Millennium3, 3200, 2900),
    ("Proto-Elamite", Era::Millennium3, 3100, 2900),
    ("ED I-II", Era::Millennium3, 2900, 2340),
    ("ED IIIa", Era::Millennium3, 2900, 2340),
    ("ED IIIb", Era::Millennium3, 2900, 2340),
    ("Ebla", Era::Millennium3, 3000, 2300),
    ("Old Akkadian", Era::Millennium3, 2324, 2141),
    ("Lagash II", Era::Millennium3, 2130, 2110),
    ("Ur III", Era::Millennium3, 2110, 2003),
    ("Early Old Babylonian", Era::Millennium2, 2019, 1794),
    ("Old Babylonian", Era::Millennium2, 1794, 1595),
    ("Old Assyrian", Era::Millennium2, 1972, 1720),
    ("Middle Assyrian", Era::Millennium2, 1500, 1000),
    ("Middle Babylonian", Era::Millennium2, 1550, 1155),
    ("Middle Elamite", Era::Millennium2, 1450, 1050),
    ("Hittite", Era::Millennium2, 1500, 1180),
    ("Neo-Assyrian", Era::Millennium1, 934, 509),
    ("Neo-Babylonian", Era::Millennium1, 625, 539),
    ("Achaemenid", Era::Millennium1, 550, 331),
    ("Hellenistic", Era::Millennium1, 330, 64),
];

impl Default for PeriodTaxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PeriodTaxonomy {
    /// The 21 Mesopotamian periods, dated on the Middle Chronology.
    pub fn builtin() -> Self {
        let entries = BUILTIN
            .iter()
            .map(|&(p, era, start_bce, end_bce)| PeriodEntry {
                period: p.to_string(),
                era,
                start_bce,
                end_bce,
            })
            .collect();
        Self { entries }
    }

    pub fn new(entries: Vec<PeriodEntry>) -> Result<Self, IngestError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.period.is_empty() || e.period == UNKNOWN_PERIOD {
                return Err(IngestError::Taxonomy(format!("reserved or empty period label {:?}", e.period)));
            }
            if !seen.insert(e.period.as_str()) {
                return Err(IngestError::Taxonomy(format!("duplicate period {:?}", e.period)));
            }
            if e.start_bce < e.end_bce {
                return Err(IngestError::Taxonomy(format!(
                    "{}: start {} BCE is later than end {} BCE",
                    e.period, e.start_bce, e.end_bce
                )));
            }
        }
        for era in Era::ALL {
            if !entries.iter().any(|e| e.era == era) {
                return Err(IngestError::Taxonomy(format!("era {era:?} has no periods")));
            }
        }
        Ok(Self { entries })
    }

    /// Parses `[{"period", "era", "start_bce", "end_bce"}, ...]`.
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let entries: Vec<PeriodEntry> =
            serde_json::from_str(text).map_err(|e| IngestError::Taxonomy(format!("invalid JSON: {e}")))?;
        Self::new(entries)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn entries(&self) -> &[PeriodEntry] {
        &self.entries
    }

    pub fn get(&self, period: &str) -> Option<&PeriodEntry> {
        self.entries.iter().find(|e| e.period == period)
    }

    pub fn contains(&self, period: &str) -> bool {
        self.get(period).is_some()
    }

    /// `None` for [`UNKNOWN_PERIOD`] and any label not in the table.
    pub fn era_of(&self, period: &str) -> Option<Era> {
        self.get(period).map(|e| e.era)
    }

    /// Position in table order; unknown labels sort last.
    pub fn order_of(&self, period: &str) -> usize {
        self.entries
            .iter()
            .position(|e| e.period == period)
            .unwrap_or(self.entries.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_21_periods_over_three_eras() {
        let t = PeriodTaxonomy::builtin();
        assert_eq!(t.entries().len(), 21);
        // the builtin table satisfies the same checks as user tables
        PeriodTaxonomy::new(t.entries().to_vec()).unwrap();
        let count = |era| t.entries().iter().filter(|e| e.era == era).count();
        assert_eq!((count(Era::Millennium3), count(Era::Millennium2), count(Era::Millennium1)), (10, 7, 4));
    }

    #[test]
    fn era_lookup() {
        let t = PeriodTaxonomy::builtin();
        assert_eq!(t.era_of("Ur III"), Some(Era::Millennium3));
        assert_eq!(t.era_of("Hittite"), Some(Era::Millennium2));
        assert_eq!(t.era_of("Hellenistic"), Some(Era::Millennium1));
        assert_eq!(t.era_of(UNKNOWN_PERIOD), None);
        let ur3 = t.get("Ur III").unwrap();
        assert_eq!((ur3.start_bce, ur3.end_bce), (2110, 2003));
    }

    #[test]
    fn json_override() {
        let t = PeriodTaxonomy::from_json(
            r#"[{"period":"A","era":"Millennium3","start_bce":3000,"end_bce":2500},
                {"period":"B","era":"Millennium2","start_bce":1800,"end_bce":1700},
                {"period":"C","era":"Millennium1","start_bce":700,"end_bce":600}]"#,
        )
        .unwrap();
        assert_eq!(t.era_of("B"), Some(Era::Millennium2));
        assert_eq!(t.order_of("C"), 2);
        assert_eq!(t.order_of("zzz"), 3);
    }

    #[test]
    fn invalid_tables_rejected() {
        let e = |p: &str, era, s, end| PeriodEntry {
            period: p.into(),
            era,
            start_bce: s,
            end_bce: end,
        };
        let base = vec![
            e("A", Era::Millennium3, 3000, 2500),
            e("B", Era::Millennium2, 1800, 1700),
            e("C", Era::Millennium1, 700, 600),
        ];
        assert!(PeriodTaxonomy::new(base.clone()).is_ok());
        let mut dup = base.clone();
        dup.push(e("A", Era::Millennium1, 10, 5));
        assert!(PeriodTaxonomy::new(dup).is_err());
        let mut backwards = base.clone();
        backwards[0].end_bce = 3100;
        assert!(PeriodTaxonomy::new(backwards).is_err());
        assert!(PeriodTaxonomy::new(base[..2].to_vec()).is_err());
    }
}
