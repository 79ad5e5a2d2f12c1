use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::radar::{PointCloud, RadarPoint};

/// Required CSV header columns, in the order they are written.
pub const CSV_COLUMNS: [&str; 7] = ["x", "y", "z", "rcs", "vx", "vy", "sweep_offset"];

/// Seven little-endian `f32` values per point.
pub const BINARY_POINT_BYTES: usize = 28;

/// Load a cloud, choosing the binary reader for `.bin` files and CSV otherwise.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "bin") {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let default_frame = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("radar")
        .to_string();
    parse_csv(&text, &default_frame)
}

pub(crate) fn parse_csv(text: &str, default_frame: &str) -> Result<PointCloud> {
    let mut frame_id = default_frame.to_string();
    let mut compensated = true;
    let mut body = text;
    if let Some(rest) = text.strip_prefix('#') {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        for token in line.split_whitespace() {
            match token.split_once('=') {
                Some(("frame", v)) => frame_id = v.to_string(),
                Some(("compensated", v)) => {
                    compensated = v.parse().map_err(|_| {
                        Error::format(format!("header flag compensated={v} is not a bool"))
                    })?
                }
                _ => {}
            }
        }
        body = tail;
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::format(format!("radar CSV header: {e}")))?
        .clone();
    let mut index = [0usize; 7];
    for (slot, col) in index.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::format(format!("radar CSV is missing column `{col}`")))?;
    }

    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("radar CSV row {}: {e}", row + 1)))?;
        let mut v = [0.0f64; 7];
        for (k, (&i, col)) in index.iter().zip(CSV_COLUMNS).enumerate() {
            let raw = record.get(i).ok_or_else(|| {
                Error::format(format!("radar CSV row {} has no `{col}` field", row + 1))
            })?;
            v[k] = raw.parse().map_err(|_| {
                Error::format(format!("radar CSV row {}: `{col}` = {raw:?} is not a number", row + 1))
            })?;
            if !v[k].is_finite() {
                return Err(Error::data(format!(
                    "radar CSV row {}: `{col}` is not finite",
                    row + 1
                )));
            }
        }
        points.push(RadarPoint::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6]));
    }
    Ok(PointCloud::new(points, frame_id)?.with_compensated(compensated))
}

pub fn write_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_csv(cloud)?).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_csv(cloud: &PointCloud) -> Result<String> {
    let mut out = format!(
        "# frame={} compensated={}\n",
        cloud.frame_id(),
        cloud.compensated()
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::format(format!("radar CSV encode: {e}"));
    w.write_record(CSV_COLUMNS).map_err(enc)?;
    for p in cloud.points() {
        w.write_record(
            [p.x, p.y, p.z, p.rcs, p.vx, p.vy, p.sweep_offset].map(|v| v.to_string()),
        )
        .map_err(enc)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(format!("radar CSV encode: {e}")))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv writer emits utf-8"));
    Ok(out)
}

/// `u32` LE point count followed by 28-byte rows in CSV column order.
pub fn write_binary(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(cloud)).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_binary(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + BINARY_POINT_BYTES * cloud.len());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.rcs, p.vx, p.vy, p.sweep_offset] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("radar")
        .to_string();
    decode_binary(&bytes, &frame)
}

pub(crate) fn decode_binary(bytes: &[u8], frame_id: &str) -> Result<PointCloud> {
    if bytes.len() < 4 {
        return Err(Error::format("radar binary file shorter than its count prefix"));
    }
    let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() != count * BINARY_POINT_BYTES {
        return Err(Error::format(format!(
            "radar binary declares {count} points ({} bytes) but holds {} bytes",
            count * BINARY_POINT_BYTES,
            body.len()
        )));
    }
    let points = body
        .chunks_exact(BINARY_POINT_BYTES)
        .map(|row| {
            let v: Vec<f64> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            RadarPoint::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
        })
        .collect();
    PointCloud::new(points, frame_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "# frame=scene-7 compensated=true\n\
        x,y,z,rcs,vx,vy,sweep_offset\n\
        3.0,1.0,0.5,12.5,0.125,0.25,0.0\n\
        -1.0,2.0,0.375,-3.0,0.0,0.0,-0.0625\n\
        1.0,1.0,0.5,0.0,1.0,1.0,0.0\n";

    #[test]
    fn parses_well_formed_file() {
        let c = parse_csv(GOOD, "x").unwrap();
        assert_eq!(c.frame_id(), "scene-7");
        assert!(c.compensated());
        assert_eq!(c.len(), 3);
        let xs: Vec<f64> = c.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![-1.0, 1.0, 3.0]);
    }

    #[test]
    fn empty_data_section() {
        let c = parse_csv("x,y,z,rcs,vx,vy,sweep_offset\n", "f").unwrap();
        assert!(c.is_empty());
        assert_eq!(c.frame_id(), "f");
    }

    #[test]
    fn column_order_is_by_name() {
        let c = parse_csv("rcs,x,y,z,vx,vy,sweep_offset\n7,1,2,3,4,5,0\n", "f").unwrap();
        assert_eq!(c.points()[0].rcs, 7.0);
        assert_eq!(c.points()[0].x, 1.0);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_csv("x,y,z,vx,vy,sweep_offset\n1,2,3,4,5,0\n", "f").unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("`rcs`"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_data_error() {
        let err = parse_csv("x,y,z,rcs,vx,vy,sweep_offset\nNaN,2,3,4,5,6,0\n", "f").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let err = parse_csv("x,y,z,rcs,vx,vy,sweep_offset\ninf,2,3,4,5,6,0\n", "f").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let c = parse_csv(GOOD, "x").unwrap();
        let again = parse_csv(&format_csv(&c).unwrap(), "x").unwrap();
        assert_eq!(again, c);

        let bin = encode_binary(&c);
        assert_eq!(bin.len(), 4 + 3 * BINARY_POINT_BYTES);
        let back = decode_binary(&bin, "scene-7").unwrap();
        // values above are exact in f32
        assert_eq!(back, c);
        assert!(decode_binary(&bin[..bin.len() - 1], "f").is_err());
    }
}
