use std::io::{BufRead, BufReader, Read, Write};

/// One optimizer step. Target statistics are raw cosines of the `D⁺ × D⁻`
/// similarity matrix, before rescaling to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub target_mean: f64,
    pub target_min: f64,
    pub target_max: f64,
    pub eval_metric: Option<f64>,
}

pub const TELEMETRY_HEADER: &str = "step,loss,lr,target_mean,target_min,target_max,eval_metric";

pub fn write_telemetry_csv<W: Write>(records: &[TelemetryRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TELEMETRY_HEADER}")?;
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{},",
            r.step, r.loss, r.lr, r.target_mean, r.target_min, r.target_max
        )?;
        if let Some(m) = r.eval_metric {
            write!(w, "{m}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_telemetry_csv<R: Read>(r: R) -> std::io::Result<Vec<TelemetryRecord>> {
    let invalid = |line: usize, msg: &str| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("telemetry line {line}: {msg}"),
        )
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != TELEMETRY_HEADER {
                return Err(invalid(1, "unexpected header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(invalid(n + 1, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| invalid(n + 1, "bad number"));
        out.push(TelemetryRecord {
            step: f[0].parse().map_err(|_| invalid(n + 1, "bad step"))?,
            loss: num(f[1])?,
            lr: num(f[2])?,
            target_mean: num(f[3])?,
            target_min: num(f[4])?,
            target_max: num(f[5])?,
            eval_metric: if f[6].is_empty() {
                None
            } else {
                Some(num(f[6])?)
            },
        });
    }
    Ok(out)
}
