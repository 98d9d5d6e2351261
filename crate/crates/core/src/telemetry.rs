//! String telemetry: `(t, i_total, v_terminal)` samples, CSV I/O and the
//! sampling-contract checks shared by the estimator and diagnosis paths.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TELEMETRY_HEADER: [&str; 3] = ["t_s", "i_total_a", "v_terminal_v"];

/// Allowed deviation of a timestamp from the uniform grid (s).
pub const TIME_JITTER_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t_s: f64,
    /// Discharge positive.
    pub i_total_a: f64,
    pub v_terminal_v: f64,
}

/// Checks strict monotonicity and uniform spacing. Returns the sample period,
/// or `None` for fewer than two samples.
pub fn sample_period(samples: &[TelemetrySample]) -> Result<Option<f64>> {
    if samples.len() < 2 {
        return Ok(None);
    }
    let t0 = samples[0].t_s;
    let dt = samples[1].t_s - t0;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Stream {
            index: 1,
            reason: format!("timestamps not strictly increasing ({} -> {})", t0, samples[1].t_s),
        });
    }
    for (k, s) in samples.iter().enumerate() {
        if !(s.t_s.is_finite() && s.i_total_a.is_finite() && s.v_terminal_v.is_finite()) {
            return Err(Error::Stream {
                index: k,
                reason: "non-finite value".into(),
            });
        }
        let expected = t0 + k as f64 * dt;
        if (s.t_s - expected).abs() > TIME_JITTER_S {
            return Err(Error::Stream {
                index: k,
                reason: format!("t = {} but uniform grid expects {expected}", s.t_s),
            });
        }
    }
    Ok(Some(dt))
}

pub fn write_telemetry<W: Write>(out: W, samples: &[TelemetrySample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TELEMETRY_HEADER)?;
    for s in samples {
        // shortest round-trip formatting, at most 17 significant digits
        w.write_record([s.t_s.to_string(), s.i_total_a.to_string(), s.v_terminal_v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<telemetry>", e))?;
    Ok(())
}

pub fn read_telemetry<R: Read>(input: R, origin: &Path) -> Result<Vec<TelemetrySample>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };

    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let header: Vec<&str> = headers.iter().collect();
    if header != TELEMETRY_HEADER {
        return Err(parse_err(
            1,
            format!(
                "expected header {}, got {}",
                TELEMETRY_HEADER.join(","),
                header.join(",")
            ),
        ));
    }

    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let mut vals = [0.0; 3];
        for (slot, field) in vals.iter_mut().zip(rec.iter()) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{field:?}: {e}")))?;
        }
        samples.push(TelemetrySample {
            t_s: vals[0],
            i_total_a: vals[1],
            v_terminal_v: vals[2],
        });
    }
    Ok(samples)
}

pub fn read_telemetry_file(path: &Path) -> Result<Vec<TelemetrySample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_telemetry(std::io::BufReader::new(f), path)
}

pub fn write_telemetry_file(path: &Path, samples: &[TelemetrySample]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_telemetry(std::io::BufWriter::new(f), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, dt: f64) -> Vec<TelemetrySample> {
        (0..n)
            .map(|k| TelemetrySample {
                t_s: k as f64 * dt,
                i_total_a: 1.0,
                v_terminal_v: 4.0,
            })
            .collect()
    }

    #[test]
    fn uniform_grid_period() {
        assert_eq!(sample_period(&grid(1, 0.1)).unwrap(), None);
        let dt = sample_period(&grid(100, 0.1)).unwrap().unwrap();
        assert!((dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gap_reports_position() {
        let mut s = grid(50, 0.1);
        s.remove(20);
        match sample_period(&s) {
            Err(Error::Stream { index, .. }) => assert_eq!(index, 20),
            other => panic!("expected stream error, got {other:?}"),
        }
    }

    #[test]
    fn non_increasing_time_rejected() {
        let mut s = grid(3, 0.1);
        s[1].t_s = 0.0;
        assert!(matches!(sample_period(&s), Err(Error::Stream { index: 1, .. })));
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "t_s,i_total_a,v_terminal_v\n0,1,4\n0.1,abc,4\n";
        match read_telemetry(text.as_bytes(), Path::new("x.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "time,i,v\n0,1,4\n";
        assert!(matches!(
            read_telemetry(text.as_bytes(), Path::new("x.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_body_has_header() {
        let mut buf = Vec::new();
        write_telemetry(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_s,i_total_a,v_terminal_v\n");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(rows in proptest::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 0..50)) {
            let samples: Vec<TelemetrySample> = rows
                .into_iter()
                .filter(|(a, b, c)| a.is_finite() && b.is_finite() && c.is_finite())
                .map(|(t_s, i_total_a, v_terminal_v)| TelemetrySample { t_s, i_total_a, v_terminal_v })
                .collect();
            let mut buf = Vec::new();
            write_telemetry(&mut buf, &samples).unwrap();
            let back = read_telemetry(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, samples);
        }
    }
}
