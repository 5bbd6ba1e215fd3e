//! Native case format: a JSON document mirroring [`GridCase`].
//!
//! ```json
//! {
//!   "format": "ccpa-grid/1",
//!   "base_mva": 100.0,
//!   "buses":    [{"id": 1, "is_slack": true, "load_p": 0.0}, ...],
//!   "branches": [{"index": 1, "from_bus": 1, "to_bus": 2,
//!                 "reactance": 0.05917, "in_service": true}, ...],
//!   "gens":     [{"bus": 1, "gen_p": 2.324}, ...]
//! }
//! ```
//!
//! Power quantities are p.u. on `base_mva`; branch indices are 1-based and
//! must be consecutive.

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, Generator, GridCase};
use crate::error::{Error, Result};

pub const NATIVE_FORMAT: &str = "ccpa-grid/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeCase {
    format: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    gens: Vec<Generator>,
}

pub(super) fn to_native(grid: &GridCase) -> String {
    let doc = NativeCase {
        format: NATIVE_FORMAT.to_string(),
        base_mva: grid.base_mva,
        buses: grid.buses.clone(),
        branches: grid.branches.clone(),
        gens: grid.gens.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("grid serializes")
}

pub(super) fn from_native(text: &str) -> Result<GridCase> {
    let doc: NativeCase =
        serde_json::from_str(text).map_err(|e| Error::MalformedCase(e.to_string()))?;
    if doc.format != NATIVE_FORMAT {
        return Err(Error::MalformedCase(format!(
            "unsupported native format {:?}",
            doc.format
        )));
    }
    Ok(GridCase {
        base_mva: doc.base_mva,
        buses: doc.buses,
        branches: doc.branches,
        gens: doc.gens,
    })
}

#[cfg(test)]
mod tests {
    use crate::case_model::{ieee14, parse_case};
    use crate::error::Error;

    #[test]
    fn ieee14_round_trips_through_native() {
        let grid = ieee14();
        let text = grid.to_native();
        assert_eq!(parse_case(&text).unwrap(), grid);
    }

    #[test]
    fn rejects_unknown_format_and_fields() {
        let text = ieee14().to_native().replace("ccpa-grid/1", "other/2");
        assert!(matches!(parse_case(&text), Err(Error::MalformedCase(_))));
        let text = ieee14()
            .to_native()
            .replacen("\"base_mva\"", "\"extra\": 1, \"base_mva\"", 1);
        assert!(matches!(parse_case(&text), Err(Error::MalformedCase(_))));
    }
}
