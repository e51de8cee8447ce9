//! Small text helpers shared by the CSV readers and writers.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Formats `v` rounded to 12 significant digits, in plain decimal notation.
pub fn fmt_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

pub(crate) fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        msg: format!("cannot parse `{field}`"),
    })
}
