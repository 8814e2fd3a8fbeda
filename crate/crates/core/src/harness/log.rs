//! Line-oriented training log.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

pub const LOG_HEADER: &str =
    "# epoch step l_pix l_perc l_adv l_total d_loss lambda_pix lambda_perc lambda_adv";

/// One generator step. Loss terms that were not evaluated are recorded as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: u64,
    pub step: u64,
    pub l_pix: f64,
    pub l_perc: f64,
    pub l_adv: f64,
    pub l_total: f64,
    pub d_loss: f64,
    pub lambda_pix: f64,
    pub lambda_perc: f64,
    pub lambda_adv: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>5} {:>8}", self.epoch, self.step)?;
        for v in [
            self.l_pix,
            self.l_perc,
            self.l_adv,
            self.l_total,
            self.d_loss,
            self.lambda_pix,
            self.lambda_perc,
            self.lambda_adv,
        ] {
            write!(f, " {v:>13.6e}")?;
        }
        Ok(())
    }
}

impl FromStr for LogRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::Data(format!("log line has {} fields, expected 10: {line:?}", fields.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Data(format!("bad integer {s:?} in log")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number {s:?} in log")));
        Ok(Self {
            epoch: int(fields[0])?,
            step: int(fields[1])?,
            l_pix: real(fields[2])?,
            l_perc: real(fields[3])?,
            l_adv: real(fields[4])?,
            l_total: real(fields[5])?,
            d_loss: real(fields[6])?,
            lambda_pix: real(fields[7])?,
            lambda_perc: real(fields[8])?,
            lambda_adv: real(fields[9])?,
        })
    }
}

/// Parses every non-comment line of a log.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let r = LogRecord {
            epoch: 20,
            step: 1234,
            l_pix: 0.0123,
            l_perc: 4.5,
            l_adv: 0.0,
            l_total: 0.01275,
            d_loss: 0.0,
            lambda_pix: 1.0,
            lambda_perc: 1e-4,
            lambda_adv: 1e-3,
        };
        let line = r.to_string();
        assert_eq!(line.parse::<LogRecord>().unwrap(), r);
        assert_eq!(parse_log(&format!("{LOG_HEADER}\n{line}\n")).unwrap(), vec![r]);
    }
}
