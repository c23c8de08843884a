//! Bundled example models.

use crate::modelfile::parse_model;
use crate::shs::ShsModel;

pub const TCP_ONOFF: &str = include_str!("../models/tcp_onoff.shs");
pub const OU: &str = include_str!("../models/ou.shs");
pub const BIRTH_DEATH: &str = include_str!("../models/birth_death.shs");
pub const CELL_DIVISION: &str = include_str!("../models/cell_division.shs");
pub const ELEMENTARY_DEMO: &str = include_str!("../models/elementary_demo.shs");
pub const PURE_DEATH: &str = include_str!("../models/pure_death.shs");

/// `(name, source)` for every bundled model.
pub const SOURCES: [(&str, &str); 6] = [
    ("tcp_onoff", TCP_ONOFF),
    ("ou", OU),
    ("birth_death", BIRTH_DEATH),
    ("cell_division", CELL_DIVISION),
    ("elementary_demo", ELEMENTARY_DEMO),
    ("pure_death", PURE_DEATH),
];

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn load(text: &str) -> ShsModel {
    parse_model(text).expect("bundled model parses")
}

pub fn tcp_onoff() -> ShsModel {
    load(TCP_ONOFF)
}

pub fn ou() -> ShsModel {
    load(OU)
}

pub fn birth_death() -> ShsModel {
    load(BIRTH_DEATH)
}

pub fn cell_division() -> ShsModel {
    load(CELL_DIVISION)
}

pub fn elementary_demo() -> ShsModel {
    load(ELEMENTARY_DEMO)
}

pub fn pure_death() -> ShsModel {
    load(PURE_DEATH)
}

pub fn all() -> Vec<(&'static str, ShsModel)> {
    SOURCES.iter().map(|(n, s)| (*n, load(s))).collect()
}
