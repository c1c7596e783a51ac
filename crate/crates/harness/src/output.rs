//! CSV output: a `# config-hash:` comment line, a header row, then records.

use crate::HarnessError;
use serde::Serialize;
use std::io::Write;

pub fn write_csv<W: Write, R: Serialize>(
    mut out: W,
    config_hash: &str,
    rows: &[R],
) -> Result<(), HarnessError> {
    writeln!(out, "# config-hash: {config_hash}")?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
