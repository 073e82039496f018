//! Listing of the catalog ids accepted in configs.

use std::fmt::Write as _;

use orthres::models::ModelKind;

use crate::config::Experiment;

pub fn listing() -> String {
    let mut out = String::new();
    let mut section = |title: &str, items: Vec<(&str, &str)>| {
        writeln!(out, "{title}:").expect("writing to a string");
        let width = items.iter().map(|(id, _)| id.len()).max().unwrap_or(0);
        for (id, description) in items {
            writeln!(out, "  {id:<width$}  {description}").expect("writing to a string");
        }
        out.push('\n');
    };
    section("experiments", Experiment::ALL.iter().map(|e| (e.id(), e.description())).collect());
    section("models", ModelKind::ALL.iter().map(|k| (k.id(), k.description())).collect());
    section("terminal maps", orthres::mollify::catalog());
    section("drivers", orthres::bsde::catalog());
    section("coefficients", orthres::forward::catalog());
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn lists_every_section() {
        let text = super::listing();
        for id in ["vanishing_N", "product_noise", "indicator_halfspace", "quadratic_mixed", "identity"] {
            assert!(text.contains(id), "{id}");
        }
    }
}
