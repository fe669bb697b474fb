//! The bundled illustrative corpus, compiled into the crate.

use crate::content::{parse_scenario, Corpus, ScenarioGraph, Taxonomy};
use crate::sdat::{assemble_form, Form, SdatForm, SdatItem};

const SCENARIOS: &[&str] = &[
    include_str!("../corpus/scenarios/courier-l1-genuine-delivery.json"),
    include_str!("../corpus/scenarios/courier-l3-customs-call.json"),
    include_str!("../corpus/scenarios/crypto-l1-tips-group.json"),
    include_str!("../corpus/scenarios/crypto-l2-celebrity-app.json"),
    include_str!("../corpus/scenarios/crypto-l3-online-friend.json"),
    include_str!("../corpus/scenarios/jobs-l1-like-videos.json"),
    include_str!("../corpus/scenarios/jobs-l2-hr-registration.json"),
    include_str!("../corpus/scenarios/jobs-l3-task-team.json"),
    include_str!("../corpus/scenarios/shopping-l2-genuine-cashback.json"),
];

const SDAT_ITEMS: &str = include_str!("../corpus/sdat/items.json");

/// Path of the corpus directory in the source tree.
pub const CORPUS_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");

pub fn scenarios() -> Vec<ScenarioGraph> {
    SCENARIOS.iter().map(|doc| parse_scenario(doc).expect("bundled scenario is valid")).collect()
}

pub fn corpus() -> Corpus {
    Corpus::new(Taxonomy::builtin(), scenarios())
}

pub fn sdat_items() -> Vec<SdatItem> {
    crate::sdat::parse_item_bank(SDAT_ITEMS).expect("bundled SDAT bank is valid")
}

/// Forms A and B assembled from the bundled item bank.
pub fn sdat_forms() -> (SdatForm, SdatForm) {
    let items = sdat_items();
    (assemble_form(&items, Form::A).expect("bundled form A"), assemble_form(&items, Form::B).expect("bundled form B"))
}
