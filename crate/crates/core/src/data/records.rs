use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Surrounding-vehicle roles, in feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Front,
    Following,
    ImmediateLeft,
    FrontLeft,
    FollowingLeft,
}

pub const ROLES: [Role; 5] = [
    Role::Front,
    Role::Following,
    Role::ImmediateLeft,
    Role::FrontLeft,
    Role::FollowingLeft,
];

impl Role {
    /// Column prefix in the trajectory CSV.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Front => "front",
            Role::Following => "following",
            Role::ImmediateLeft => "imml",
            Role::FrontLeft => "frontl",
            Role::FollowingLeft => "foll",
        }
    }

    /// Whether the role drives in the lane the ego vehicle moves into.
    pub fn on_target_lane(self) -> bool {
        matches!(self, Role::ImmediateLeft | Role::FrontLeft | Role::FollowingLeft)
    }
}

pub const CSV_HEADER: [&str; 19] = [
    "episode_id",
    "step",
    "ego_lat",
    "ego_lon",
    "front_lat",
    "front_lon",
    "front_present",
    "following_lat",
    "following_lon",
    "following_present",
    "imml_lat",
    "imml_lon",
    "imml_present",
    "frontl_lat",
    "frontl_lon",
    "frontl_present",
    "foll_lat",
    "foll_lon",
    "foll_present",
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VehicleObs {
    pub lat: f64,
    pub lon: f64,
    pub present: bool,
}

/// One 10 Hz tick of a lane-change scene, positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub episode_id: u64,
    pub step: u64,
    pub ego_lat: f64,
    pub ego_lon: f64,
    /// Indexed like [`ROLES`]; absent vehicles have zeroed positions.
    pub others: [VehicleObs; 5],
}

/// Reads a trajectory CSV. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    read_csv(File::open(path)?)
}

/// Parses records, groups them by `episode_id` (ascending) and sorts each
/// episode by step. Steps must run 0, 1, 2, … without gaps.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(h) if h.trim() == *expected => {}
            Some(h) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("column {} is `{h}`, expected `{expected}`", i + 1),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("missing column `{expected}`"),
                })
            }
        }
    }
    if header.len() > CSV_HEADER.len() {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected extra column `{}`", &header[CSV_HEADER.len()]),
        });
    }

    let mut rows: Vec<(usize, TrajectoryRecord)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        rows.push((line, parse_row(&row, line)?));
    }
    rows.sort_by_key(|(_, r)| (r.episode_id, r.step));

    let mut expected_step = 0;
    for i in 0..rows.len() {
        let (line, rec) = &rows[i];
        if i > 0 && rows[i - 1].1.episode_id != rec.episode_id {
            expected_step = 0;
        }
        if rec.step != expected_step {
            let what = if i > 0 && rows[i - 1].1.episode_id == rec.episode_id && rows[i - 1].1.step == rec.step {
                format!("duplicate step {}", rec.step)
            } else {
                format!("gap in steps: expected {expected_step}, found {}", rec.step)
            };
            return Err(Error::Parse {
                line: *line,
                msg: format!("episode {}: {what}", rec.episode_id),
            });
        }
        expected_step += 1;
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn parse_row(row: &csv::StringRecord, line: usize) -> Result<TrajectoryRecord> {
    let field = |i: usize| -> Result<&str> {
        row.get(i).map(str::trim).ok_or_else(|| Error::Parse {
            line,
            msg: format!("missing value for `{}`", CSV_HEADER[i]),
        })
    };
    let number = |i: usize| -> Result<f64> {
        let s = field(i)?;
        let v: f64 = s.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` is not a number: `{s}`", CSV_HEADER[i]),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("`{}` is not finite: `{s}`", CSV_HEADER[i]),
            });
        }
        Ok(v)
    };
    let integer = |i: usize| -> Result<u64> {
        let s = field(i)?;
        s.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` is not a nonnegative integer: `{s}`", CSV_HEADER[i]),
        })
    };

    let mut others = [VehicleObs::default(); 5];
    for (r, obs) in others.iter_mut().enumerate() {
        let base = 4 + 3 * r;
        let present = match field(base + 2)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{}` must be 0 or 1, got `{other}`", CSV_HEADER[base + 2]),
                })
            }
        };
        *obs = VehicleObs {
            lat: number(base)?,
            lon: number(base + 1)?,
            present,
        };
    }
    Ok(TrajectoryRecord {
        episode_id: integer(0)?,
        step: integer(1)?,
        ego_lat: number(2)?,
        ego_lon: number(3)?,
        others,
    })
}

/// Writes records with the exact [`CSV_HEADER`]; floats use their shortest
/// round-trip representation.
pub fn write_csv<W: Write>(writer: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let mut fields = vec![
            r.episode_id.to_string(),
            r.step.to_string(),
            r.ego_lat.to_string(),
            r.ego_lon.to_string(),
        ];
        for o in &r.others {
            fields.push(o.lat.to_string());
            fields.push(o.lon.to_string());
            fields.push(u8::from(o.present).to_string());
        }
        w.write_record(&fields).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        CSV_HEADER.join(",")
    }

    fn row(ep: u64, step: u64) -> String {
        format!("{ep},{step},0.5,{},1,2,1,0,0,0,3.7,5,1,0,0,0,3.7,-20,1", step as f64 * 1.2)
    }

    #[test]
    fn two_rows_parse() {
        let text = format!("{}\n{}\n{}\n", header(), row(7, 0), row(7, 1));
        let recs = read_csv(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].step, 1);
        assert_eq!(recs[1].ego_lon, 1.2);
        assert!(recs[0].others[0].present && !recs[0].others[1].present);
        assert_eq!(recs[0].others[2].lat, 3.7);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_csv(format!("{}\n", header()).as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn step_gap_is_reported() {
        let text = format!("{}\n{}\n{}\n{}\n", header(), row(1, 0), row(1, 1), row(1, 3));
        let err = read_csv(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("expected 2, found 3"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn episodes_are_grouped_and_sorted() {
        let text = format!("{}\n{}\n{}\n{}\n{}\n", header(), row(9, 1), row(2, 0), row(9, 0), row(2, 1));
        let recs = read_csv(text.as_bytes()).unwrap();
        let keys: Vec<_> = recs.iter().map(|r| (r.episode_id, r.step)).collect();
        assert_eq!(keys, vec![(2, 0), (2, 1), (9, 0), (9, 1)]);
    }

    #[test]
    fn bad_cells_and_columns() {
        let missing = CSV_HEADER[..18].join(",");
        let err = read_csv(format!("{missing}\n").as_bytes()).unwrap_err().to_string();
        assert!(err.contains("foll_present"), "{err}");

        let bad = row(1, 0).replacen("0.5", "abc", 1);
        let err = read_csv(format!("{}\n{}\n", header(), bad).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");

        let bad_flag = row(1, 0).replacen(",1,2,1,", ",1,2,7,", 1);
        assert!(read_csv(format!("{}\n{}\n", header(), bad_flag).as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = format!("{}\n{}\n{}\n", header(), row(3, 0), row(3, 1));
        let recs = read_csv(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &recs).unwrap();
        assert_eq!(read_csv(out.as_slice()).unwrap(), recs);
    }
}
