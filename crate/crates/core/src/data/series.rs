//! Scalar function samples `(x, y)` stored as CSV, one row per point, for
//! regression tasks such as the sine family.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

use super::episode::{build_episodes, Episode, DT};
use super::records::read_csv;

pub const SERIES_HEADER: [&str; 4] = ["episode_id", "step", "x", "y"];

/// Writes single-input, single-output episodes; `x` is the last window entry.
pub fn write_series_csv<W: Write>(writer: W, episodes: &[Episode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(SERIES_HEADER).map_err(io)?;
    for ep in episodes {
        if ep.input_dim() != 1 || ep.output_dim() != 1 {
            return Err(contract(format!(
                "episode {} has {} inputs and {} outputs; series files hold one of each",
                ep.episode_id,
                ep.input_dim(),
                ep.output_dim()
            )));
        }
        for t in 0..ep.len() {
            let x = *ep.window(t).last().expect("windows are nonempty");
            let y = ep.targets.row(t)[0];
            w.write_record([ep.episode_id.to_string(), t.to_string(), x.to_string(), y.to_string()])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a series file into episodes with one-step windows, ordered by
/// `episode_id`. Steps must run 0, 1, 2, … without gaps; episodes with a
/// single point are skipped with a warning.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<Episode>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_error(&e))?.clone();
    if header.iter().map(str::trim).ne(SERIES_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`", SERIES_HEADER.join(",")),
        });
    }
    let mut rows: Vec<(usize, u64, u64, f64, f64)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_error(&e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |col: &str| Error::Parse {
            line,
            msg: format!("`{col}` is missing or malformed"),
        };
        let int = |i: usize| row.get(i).and_then(|s| s.trim().parse::<u64>().ok()).ok_or_else(|| bad(SERIES_HEADER[i]));
        let num = |i: usize| {
            row.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(SERIES_HEADER[i]))
        };
        rows.push((line, int(0)?, int(1)?, num(2)?, num(3)?));
    }
    rows.sort_by_key(|r| (r.1, r.2));
    let mut episodes = Vec::new();
    for group in rows.chunk_by(|a, b| a.1 == b.1) {
        for (expected, &(line, id, step, _, _)) in group.iter().enumerate() {
            if step != expected as u64 {
                return Err(Error::Parse {
                    line,
                    msg: format!("episode {id}: expected step {expected}, found {step}"),
                });
            }
        }
        let id = group[0].1;
        if group.len() < 2 {
            log::warn!("skipping episode {id}: a single point");
            continue;
        }
        let n = group.len();
        episodes.push(Episode::new(
            Tensor::new(&[n, 1, 1], group.iter().map(|r| r.3).collect())?,
            Tensor::new(&[n, 1], group.iter().map(|r| r.4).collect())?,
            DT,
            id,
            Vec::new(),
        )?);
    }
    Ok(episodes)
}

fn parse_error(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

/// Loads episodes from either file format, chosen by the header: series
/// files become one-step windows, trajectory files are windowed with
/// length `window`.
pub fn load_episodes(path: impl AsRef<Path>, window: usize) -> Result<Vec<Episode>> {
    let bytes = std::fs::read(path)?;
    let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let is_series = String::from_utf8_lossy(first_line)
        .trim()
        .split(',')
        .map(str::trim)
        .eq(SERIES_HEADER);
    if is_series {
        read_series_csv(bytes.as_slice())
    } else {
        Ok(build_episodes(&read_csv(bytes.as_slice())?, window)?.episodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_sine_family;

    #[test]
    fn series_round_trip() {
        let eps = synth_sine_family(3, 7, 1).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &eps).unwrap();
        assert!(buf.starts_with(b"episode_id,step,x,y\n"));
        assert_eq!(read_series_csv(buf.as_slice()).unwrap(), eps);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(load_episodes(&path, 20).unwrap(), eps);
    }

    #[test]
    fn header_only_series_is_empty() {
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[]).unwrap();
        assert!(read_series_csv(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn series_errors_name_the_line() {
        let text = "episode_id,step,x,y\n0,0,1.0,2.0\n0,2,1.0,2.0\n";
        match read_series_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "episode_id,step,x,y\n0,0,abc,2.0\n";
        match read_series_csv(text.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("`x`"));
            }
            other => panic!("{other:?}"),
        }
        assert!(read_series_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn single_point_episodes_are_skipped() {
        let text = "episode_id,step,x,y\n0,0,1,2\n1,0,1,2\n1,1,2,3\n";
        let eps = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].episode_id, 1);
    }

    #[test]
    fn multi_output_episodes_are_rejected() {
        let ep = crate::data::synth::synth_lane_change(1, 0, &Default::default()).unwrap();
        assert!(write_series_csv(Vec::new(), &ep).is_err());
    }
}
