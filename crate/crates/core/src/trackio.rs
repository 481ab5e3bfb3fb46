//! MRtrix-style `.tck` container: a text header terminated by `END`, then a
//! body of little-endian `f32` triplets. A NaN triplet closes each streamline
//! and an infinity triplet closes the body.
//!
//! Grid metadata travels in two extra header keys, `voxel_size` and `dim`.
//! Files without them get a 1 mm grid just large enough to hold every point.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tractogram::{Grid, Point, Streamline, Tractogram};

const MAGIC: &str = "mrtrix tracks";

pub fn save_track_file(tractogram: &Tractogram, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(tractogram);
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn load_track_file(path: impl AsRef<Path>) -> Result<Tractogram> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn header_text(tractogram: &Tractogram, offset: usize) -> String {
    let grid = tractogram.grid();
    format!(
        "{MAGIC}\ndatatype: Float32LE\ncount: {}\ndim: {},{},{}\nvoxel_size: {}\nfile: . {}\nEND\n",
        tractogram.len(),
        grid.dims[0],
        grid.dims[1],
        grid.dims[2],
        grid.voxel_size,
        offset
    )
}

pub fn encode(tractogram: &Tractogram) -> Vec<u8> {
    // The offset is part of the header it points past, so iterate until the
    // digit count settles.
    let mut offset = header_text(tractogram, 0).len();
    loop {
        let len = header_text(tractogram, offset).len();
        if len == offset {
            break;
        }
        offset = len;
    }
    let mut out = header_text(tractogram, offset).into_bytes();
    let n_points: usize = tractogram.streamlines().iter().map(Streamline::len).sum();
    out.reserve((n_points + tractogram.len() + 1) * 12);
    let push = |out: &mut Vec<u8>, v: [f32; 3]| {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    };
    for s in tractogram.streamlines() {
        for p in s.points() {
            push(&mut out, [p.x as f32, p.y as f32, p.z as f32]);
        }
        push(&mut out, [f32::NAN; 3]);
    }
    push(&mut out, [f32::INFINITY; 3]);
    out
}

struct Header {
    offset: usize,
    count: Option<usize>,
    grid: Option<Grid>,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut lines = Vec::new();
    let mut start = 0;
    let mut end_found = false;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            let line = std::str::from_utf8(&bytes[start..i])
                .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?
                .trim_end_matches('\r');
            start = i + 1;
            if line == "END" {
                end_found = true;
                break;
            }
            lines.push(line.to_string());
        }
    }
    if !end_found {
        return Err(Error::MalformedHeader("missing END line".into()));
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::MalformedHeader(format!("expected magic line {MAGIC:?}")));
    }

    let mut datatype = None;
    let mut offset = None;
    let mut count = None;
    let mut dims = None;
    let mut voxel_size = None;
    for line in &lines[1..] {
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::MalformedHeader(format!("not a key/value line: {line:?}")));
        };
        let value = value.trim();
        match key.trim() {
            "datatype" => datatype = Some(value.to_string()),
            "file" => {
                let mut parts = value.split_whitespace();
                if parts.next() != Some(".") {
                    return Err(Error::MalformedHeader("only inline data ('file: . N') is supported".into()));
                }
                let off = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::MalformedHeader(format!("bad file offset: {value:?}")))?;
                offset = Some(off);
            }
            "count" => {
                count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::MalformedHeader(format!("bad count: {value:?}")))?,
                )
            }
            "dim" => {
                let d: Vec<usize> = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::MalformedHeader(format!("bad dim: {value:?}")))?;
                if d.len() != 3 {
                    return Err(Error::MalformedHeader(format!("bad dim: {value:?}")));
                }
                dims = Some([d[0], d[1], d[2]]);
            }
            "voxel_size" => {
                voxel_size = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| Error::MalformedHeader(format!("bad voxel_size: {value:?}")))?,
                )
            }
            _ => {}
        }
    }
    match datatype.as_deref() {
        Some("Float32LE") => {}
        Some(other) => return Err(Error::MalformedHeader(format!("unsupported datatype {other}"))),
        None => return Err(Error::MalformedHeader("missing datatype".into())),
    }
    let offset = offset.ok_or_else(|| Error::MalformedHeader("missing file offset".into()))?;
    if offset < start || offset > bytes.len() {
        return Err(Error::MalformedHeader(format!("file offset {offset} out of range")));
    }
    let grid = match (dims, voxel_size) {
        (Some(d), Some(v)) => Some(Grid::new(d, v).map_err(|e| Error::MalformedHeader(e.to_string()))?),
        (None, None) => None,
        _ => return Err(Error::MalformedHeader("dim and voxel_size must appear together".into())),
    };
    Ok(Header { offset, count, grid })
}

pub fn decode(bytes: &[u8]) -> Result<Tractogram> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.offset..];
    let mut streamlines = Vec::new();
    let mut current: Vec<Point> = Vec::new();
    let mut terminated = false;
    for chunk in body.chunks(12) {
        if chunk.len() < 12 {
            return Err(Error::Truncated);
        }
        let v = [
            f32::from_le_bytes(chunk[0..4].try_into().unwrap()),
            f32::from_le_bytes(chunk[4..8].try_into().unwrap()),
            f32::from_le_bytes(chunk[8..12].try_into().unwrap()),
        ];
        if v.iter().all(|c| c.is_nan()) {
            let points = std::mem::take(&mut current);
            let s = Streamline::new(points).map_err(|e| {
                Error::Format(format!("streamline {}: {e}", streamlines.len()))
            })?;
            streamlines.push(s);
        } else if v.iter().all(|c| c.is_infinite() && c.is_sign_positive()) {
            terminated = true;
            break;
        } else if v.iter().all(|c| c.is_finite()) {
            current.push(Point::new(v[0] as f64, v[1] as f64, v[2] as f64));
        } else {
            return Err(Error::NonFiniteCoordinate { streamline: streamlines.len() });
        }
    }
    if !terminated {
        return Err(Error::Truncated);
    }
    if !current.is_empty() {
        return Err(Error::Format("points after the last streamline separator".into()));
    }
    if let Some(count) = header.count {
        if count != streamlines.len() {
            return Err(Error::Format(format!(
                "header count {count} but body holds {} streamlines",
                streamlines.len()
            )));
        }
    }
    let grid = match header.grid {
        Some(g) => g,
        None => infer_grid(&streamlines)?,
    };
    Tractogram::new(streamlines, grid)
}

fn infer_grid(streamlines: &[Streamline]) -> Result<Grid> {
    let mut max = [0.0f64; 3];
    for p in streamlines.iter().flat_map(|s| s.points()) {
        for a in 0..3 {
            if p[a] < 0.0 {
                return Err(Error::OutsideGrid { x: p.x, y: p.y, z: p.z });
            }
            max[a] = max[a].max(p[a]);
        }
    }
    let dims = [
        max[0].floor() as usize + 1,
        max[1].floor() as usize + 1,
        max[2].floor() as usize + 1,
    ];
    Grid::new(dims, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new([8, 8, 8], 1.0).unwrap()
    }

    #[test]
    fn minimal_file() {
        let s = Streamline::from_coords(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let t = Tractogram::new(vec![s], grid()).unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.streamlines()[0].arc_length(), 1.0);
        assert_eq!(back.grid(), grid());
    }

    #[test]
    fn empty_tractogram_is_header_plus_terminator() {
        let t = Tractogram::empty(grid());
        let bytes = encode(&t);
        let header = parse_header(&bytes).unwrap();
        assert_eq!(bytes.len() - header.offset, 12);
        assert_eq!(&bytes[header.offset..header.offset + 4], &f32::INFINITY.to_le_bytes());
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn separators_per_streamline() {
        let a = Streamline::from_coords(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let b = Streamline::from_coords(&[[2.0, 2.0, 2.0], [3.0, 1.0, 2.0], [4.0, 1.0, 2.0]]).unwrap();
        let t = Tractogram::new(vec![a, b], grid()).unwrap();
        let bytes = encode(&t);
        let header = parse_header(&bytes).unwrap();
        let nan_triplets = bytes[header.offset..]
            .chunks(12)
            .filter(|c| c.chunks(4).all(|f| f32::from_le_bytes(f.try_into().unwrap()).is_nan()))
            .count();
        assert_eq!(nan_triplets, 2);
        assert_eq!(bytes.len() - header.offset, 12 * (5 + 2 + 1));
    }

    #[test]
    fn missing_terminator_is_truncated() {
        let s = Streamline::from_coords(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let t = Tractogram::new(vec![s], grid()).unwrap();
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 12);
        assert!(matches!(decode(&bytes), Err(Error::Truncated)));
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(decode(&bytes), Err(Error::Truncated)));
    }

    #[test]
    fn non_finite_inside_body() {
        let s = Streamline::from_coords(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let t = Tractogram::new(vec![s], grid()).unwrap();
        let mut bytes = encode(&t);
        let off = parse_header(&bytes).unwrap().offset;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFiniteCoordinate { streamline: 0 })));
    }

    #[test]
    fn bad_headers() {
        assert!(matches!(decode(b"nope\nEND\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            decode(b"mrtrix tracks\ndatatype: Float64BE\nfile: . 47\nEND\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(decode(b"mrtrix tracks\ndatatype: Float32LE\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn header_without_grid_infers_one() {
        let mut bytes = b"mrtrix tracks\ndatatype: Float32LE\nfile: . 49\nEND\n".to_vec();
        assert_eq!(bytes.len(), 49);
        for v in [[0.0f32, 0.0, 0.0], [2.5, 1.0, 0.0], [f32::NAN; 3], [f32::INFINITY; 3]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        let t = decode(&bytes).unwrap();
        assert_eq!(t.grid().dims, [3, 2, 1]);
    }
}
