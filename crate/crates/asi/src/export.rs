use std::io::Write;

use crate::store::Series;

/// Writes a series as CSV with a header row.
pub fn write_csv<W: Write>(series: &Series, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match series {
        Series::Raw(obs) => {
            w.write_record(["timestamp_ms", "urn", "phenomenon", "value", "unit", "lat", "lon"])?;
            for o in obs {
                w.write_record([
                    o.timestamp.0.to_string(),
                    o.source.to_string(),
                    o.phenomenon.clone(),
                    o.value.to_string(),
                    o.unit.clone(),
                    o.position.lat.to_string(),
                    o.position.lon.to_string(),
                ])?;
            }
        }
        Series::Aggregated(windows) => {
            w.write_record(["start_ms", "end_ms", "count", "value"])?;
            for v in windows {
                w.write_record([
                    v.start.0.to_string(),
                    v.end.0.to_string(),
                    v.count.to_string(),
                    v.value.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
