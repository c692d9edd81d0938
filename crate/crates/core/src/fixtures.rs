//! Bundled example frameworks.

use crate::error::SnapError;
use crate::framework::Framework;

/// Names and JSON sources of the bundled frameworks.
pub const FRAMEWORKS: &[(&str, &str)] = &[
    ("quad", include_str!("../fixtures/quad.json")),
    ("loop4r_bar", include_str!("../fixtures/loop4r_bar.json")),
    ("loop4r_panel", include_str!("../fixtures/loop4r_panel.json")),
    ("loop4r_tetra", include_str!("../fixtures/loop4r_tetra.json")),
    ("sd_bar", include_str!("../fixtures/sd_bar.json")),
    ("sd_panel", include_str!("../fixtures/sd_panel.json")),
    ("fh1_bar", include_str!("../fixtures/fh1_bar.json")),
    ("fh1_panel", include_str!("../fixtures/fh1_panel.json")),
    ("fh2_bar", include_str!("../fixtures/fh2_bar.json")),
    ("fh2_panel", include_str!("../fixtures/fh2_panel.json")),
    ("fh3_bar", include_str!("../fixtures/fh3_bar.json")),
    ("fh3_panel", include_str!("../fixtures/fh3_panel.json")),
];

/// The bundled Stewart-Gough platform.
pub const STEWART_GOUGH: &str = include_str!("../fixtures/sg.json");

pub fn source(name: &str) -> Option<&'static str> {
    FRAMEWORKS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a bundled framework by name.
pub fn load(name: &str) -> Result<Framework, SnapError> {
    let src = source(name).ok_or_else(|| SnapError::Numerical(format!("no bundled framework '{name}'")))?;
    Framework::from_json(src)
}
