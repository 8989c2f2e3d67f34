use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::reachtube::ReachTube;

/// Pretty-printed JSON. Floats use the shortest representation that parses back to the
/// same bits, so a round trip is exact.
pub fn serialize_tube(tube: &ReachTube) -> Result<String> {
    serde_json::to_string_pretty(tube).map_err(|e| Error::Validation(e.to_string()))
}

/// Parses and validates a tube document.
pub fn deserialize_tube(text: &str) -> Result<ReachTube> {
    let tube: ReachTube = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
    tube.validate()?;
    Ok(tube)
}

pub fn write_tube(tube: &ReachTube, path: &Path) -> Result<()> {
    let mut text = serialize_tube(tube)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_tube(path: &Path) -> Result<ReachTube> {
    deserialize_tube(&fs::read_to_string(path)?)
}
