//! Full-precision decimal output for the text file formats.
//!
//! Every float written by the toolkit uses scientific notation with 17
//! significant digits (`{:.16e}`), which is enough to reproduce any `f64`
//! bit for bit. Parsing goes through serde_json with `float_roundtrip`.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes an `f64` as [`sci`] text. Only meaningful with serde_json.
#[derive(Debug, Clone, Copy)]
pub struct Sci(pub f64);

impl Serialize for Sci {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite value {}", self.0)));
        }
        let raw = RawValue::from_string(sci(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub fn sci_vec(values: &[f64]) -> Vec<Sci> {
    values.iter().copied().map(Sci).collect()
}
