//! Built-in case-study fixtures.

use crate::attention::ScoreTable;
use crate::gaze::GazeDynamics;

pub const GAZE_CASE_STUDY_TOML: &str = include_str!("../fixtures/gaze_case_study.toml");
pub const SCORES_TABLE1_TOML: &str = include_str!("../fixtures/scores_table1.toml");
pub const EXPERIMENT_TOML: &str = include_str!("../fixtures/experiment.toml");

/// 13-AoI dynamics with the no-aid library entry `aN` and the highlight aid
/// `aY`.
pub fn case_study_dynamics() -> GazeDynamics {
    GazeDynamics::from_toml_str(GAZE_CASE_STUDY_TOML).expect("built-in gaze fixture is valid")
}

/// Concentration scores and decay rates of the 13 case-study AoIs.
pub fn table_one() -> ScoreTable {
    ScoreTable::from_toml_str(SCORES_TABLE1_TOML).expect("built-in score fixture is valid")
}
