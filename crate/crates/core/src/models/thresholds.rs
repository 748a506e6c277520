//! Demographic threshold table used to turn an Hb value into a severity class.
//!
//! The shipped defaults follow the WHO haemoglobin cut-offs for anaemia
//! (severe cut-off and the non-anaemic floor per group). They are
//! configuration, not part of the model, and must be reviewed before any
//! clinical use.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ModelError, Severity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl std::str::FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(format!("unknown sex '{other}' (expected female or male)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicGroup {
    ChildU5,
    Child5_11,
    Child12_14,
    WomanNonpregnant,
    WomanPregnant,
    Man,
}

impl DemographicGroup {
    pub const ALL: [DemographicGroup; 6] = [
        Self::ChildU5,
        Self::Child5_11,
        Self::Child12_14,
        Self::WomanNonpregnant,
        Self::WomanPregnant,
        Self::Man,
    ];
}

impl fmt::Display for DemographicGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ChildU5 => "child_u5",
            Self::Child5_11 => "child_5_11",
            Self::Child12_14 => "child_12_14",
            Self::WomanNonpregnant => "woman_nonpregnant",
            Self::WomanPregnant => "woman_pregnant",
            Self::Man => "man",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: f64,
    pub sex: Sex,
    #[serde(default)]
    pub pregnant: bool,
}

impl Demographics {
    pub fn group(&self) -> DemographicGroup {
        if self.age_years < 5.0 {
            DemographicGroup::ChildU5
        } else if self.age_years < 12.0 {
            DemographicGroup::Child5_11
        } else if self.age_years < 15.0 {
            DemographicGroup::Child12_14
        } else {
            match (self.sex, self.pregnant) {
                (Sex::Female, true) => DemographicGroup::WomanPregnant,
                (Sex::Female, false) => DemographicGroup::WomanNonpregnant,
                (Sex::Male, _) => DemographicGroup::Man,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRow {
    pub group: DemographicGroup,
    /// Hb (g/dL) strictly below this is severe.
    pub severe_below: f64,
    /// Hb (g/dL) strictly below this (and not severe) is mild.
    pub mild_below: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTable {
    pub rows: Vec<ThresholdRow>,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        use DemographicGroup::*;
        let row = |group, severe_below, mild_below| ThresholdRow { group, severe_below, mild_below };
        Self {
            rows: vec![
                row(ChildU5, 7.0, 11.0),
                row(Child5_11, 8.0, 11.5),
                row(Child12_14, 8.0, 12.0),
                row(WomanNonpregnant, 8.0, 12.0),
                row(WomanPregnant, 7.0, 11.0),
                row(Man, 8.0, 13.0),
            ],
        }
    }
}

impl ThresholdTable {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.severe_below.is_finite() && r.mild_below.is_finite() && r.severe_below > 0.0) {
                return Err(ModelError::InvalidTable(format!("row {i} has non-positive or non-finite cut-offs")));
            }
            if r.severe_below >= r.mild_below {
                return Err(ModelError::InvalidTable(format!(
                    "row {i} ({}): severe_below {} must be below mild_below {}",
                    r.group, r.severe_below, r.mild_below
                )));
            }
            if self.rows[..i].iter().any(|o| o.group == r.group) {
                return Err(ModelError::InvalidTable(format!("group {} listed twice", r.group)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let t: ThresholdTable = toml::from_str(text).map_err(|e| ModelError::InvalidTable(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("threshold table serialises")
    }

    pub fn row_for(&self, who: &Demographics) -> Result<&ThresholdRow, ModelError> {
        let g = who.group();
        self.rows.iter().find(|r| r.group == g).ok_or(ModelError::NoMatchingRow(g))
    }
}

/// Boundary values belong to the less severe class.
pub fn diagnose(hb: f64, who: &Demographics, table: &ThresholdTable) -> Result<Severity, ModelError> {
    let row = table.row_for(who)?;
    Ok(if hb < row.severe_below {
        Severity::Severe
    } else if hb < row.mild_below {
        Severity::Mild
    } else {
        Severity::NonAnaemic
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn woman() -> Demographics {
        Demographics { age_years: 30.0, sex: Sex::Female, pregnant: false }
    }

    #[test]
    fn boundaries_go_to_less_severe() {
        let t = ThresholdTable::default();
        assert_eq!(diagnose(13.0, &woman(), &t).unwrap(), Severity::NonAnaemic);
        assert_eq!(diagnose(12.0, &woman(), &t).unwrap(), Severity::NonAnaemic);
        assert_eq!(diagnose(8.0, &woman(), &t).unwrap(), Severity::Mild);
        assert_eq!(diagnose(7.9, &woman(), &t).unwrap(), Severity::Severe);
    }

    #[test]
    fn groups_by_age_sex_pregnancy() {
        let d = |age, sex, pregnant| Demographics { age_years: age, sex, pregnant }.group();
        assert_eq!(d(3.0, Sex::Male, false), DemographicGroup::ChildU5);
        assert_eq!(d(11.9, Sex::Female, false), DemographicGroup::Child5_11);
        assert_eq!(d(14.0, Sex::Male, false), DemographicGroup::Child12_14);
        assert_eq!(d(25.0, Sex::Female, true), DemographicGroup::WomanPregnant);
        assert_eq!(d(25.0, Sex::Male, false), DemographicGroup::Man);
    }

    #[test]
    fn missing_row_is_an_error() {
        let t = ThresholdTable { rows: vec![] };
        assert_eq!(diagnose(10.0, &woman(), &t), Err(ModelError::NoMatchingRow(DemographicGroup::WomanNonpregnant)));
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let t = ThresholdTable::default();
        assert_eq!(ThresholdTable::from_toml(&t.to_toml()).unwrap(), t);
        let bad = "[[rows]]\ngroup = \"man\"\nsevere_below = 13.0\nmild_below = 8.0\n";
        assert!(ThresholdTable::from_toml(bad).is_err());
        let dup = "[[rows]]\ngroup = \"man\"\nsevere_below = 8.0\nmild_below = 13.0\n[[rows]]\ngroup = \"man\"\nsevere_below = 8.0\nmild_below = 13.0\n";
        assert!(ThresholdTable::from_toml(dup).is_err());
        let unknown = "[[rows]]\ngroup = \"man\"\nsevere_below = 8.0\nmild_below = 13.0\nextra = 1\n";
        assert!(ThresholdTable::from_toml(unknown).is_err());
    }

    #[test]
    fn diagnosis_is_monotone_in_hb() {
        let t = ThresholdTable::default();
        let mut prev = Severity::Severe;
        for i in 0..400 {
            let s = diagnose(i as f64 * 0.05, &woman(), &t).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }
}
