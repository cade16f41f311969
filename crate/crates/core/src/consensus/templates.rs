//! Fixed mediator message catalog with `{slot}` placeholders.

use std::collections::BTreeMap;
use std::sync::OnceLock;

pub const CATALOG_JSON: &str = include_str!("../../templates/mediator.json");

pub fn catalog() -> &'static BTreeMap<String, String> {
    static CATALOG: OnceLock<BTreeMap<String, String>> = OnceLock::new();
    CATALOG
        .get_or_init(|| serde_json::from_str(CATALOG_JSON).expect("mediator catalog is valid JSON"))
}

/// Slot names referenced by a skeleton, in order of first appearance.
pub fn slots(skeleton: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = skeleton;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        let name = &rest[open + 1..open + close];
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &rest[open + close + 1..];
    }
    out
}

/// Fills a template. Panics on an unknown id or a missing slot, both of
/// which are programming errors inside this crate.
pub fn render(template_id: &str, payload: &BTreeMap<String, String>) -> String {
    let skeleton = catalog()
        .get(template_id)
        .unwrap_or_else(|| panic!("unknown mediator template '{template_id}'"));
    let mut text = skeleton.clone();
    for slot in slots(skeleton) {
        let value = payload
            .get(slot)
            .unwrap_or_else(|| panic!("template '{template_id}' needs slot '{slot}'"));
        text = text.replace(&format!("{{{slot}}}"), value);
    }
    text
}
