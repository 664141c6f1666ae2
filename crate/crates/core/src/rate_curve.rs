//! Transition-rate tables `R(λ, T)` shared by the analysis, model and
//! fitting stages, plus their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{TemperatureK, WavelengthNm};

pub const RATES_SCHEMA: &str = "rates/v1";
pub const RATES_HEADER: [&str; 5] = ["wavelength_nm", "temperature_K", "rate_Hz", "stderr_Hz", "n_dwells"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub wavelength_nm: WavelengthNm,
    #[serde(rename = "temperature_K")]
    pub temperature_k: TemperatureK,
    #[serde(rename = "rate_Hz")]
    pub rate_hz: f64,
    /// Zero when no uncertainty is available (model curves, single dwells).
    #[serde(rename = "stderr_Hz")]
    pub stderr_hz: f64,
    pub n_dwells: usize,
}

impl RatePoint {
    pub fn new(
        wavelength_nm: WavelengthNm,
        temperature_k: TemperatureK,
        rate_hz: f64,
        stderr_hz: f64,
        n_dwells: usize,
    ) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz >= 0.0) {
            return Err(Error::Validation(format!("rate must be finite and >= 0, got {rate_hz}")));
        }
        if !(stderr_hz.is_finite() && stderr_hz >= 0.0) {
            return Err(Error::Validation(format!("stderr must be finite and >= 0, got {stderr_hz}")));
        }
        Ok(RatePoint {
            wavelength_nm,
            temperature_k,
            rate_hz,
            stderr_hz,
            n_dwells,
        })
    }

    fn key(&self) -> (u64, u64) {
        (self.wavelength_nm.value().to_bits(), self.temperature_k.value().to_bits())
    }
}

/// Rate points with unique `(λ, T)` keys, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RatePoint>", into = "Vec<RatePoint>")]
pub struct RateCurve {
    points: Vec<RatePoint>,
}

impl TryFrom<Vec<RatePoint>> for RateCurve {
    type Error = Error;
    fn try_from(points: Vec<RatePoint>) -> Result<Self> {
        RateCurve::new(points)
    }
}

impl From<RateCurve> for Vec<RatePoint> {
    fn from(c: RateCurve) -> Self {
        c.points
    }
}

impl RateCurve {
    pub fn new(points: Vec<RatePoint>) -> Result<Self> {
        let mut curve = RateCurve::default();
        for p in points {
            curve.push(p)?;
        }
        Ok(curve)
    }

    pub fn push(&mut self, p: RatePoint) -> Result<()> {
        if self.points.iter().any(|q| q.key() == p.key()) {
            return Err(Error::Validation(format!(
                "duplicate rate point at {} nm, {} K",
                p.wavelength_nm.value(),
                p.temperature_k.value()
            )));
        }
        self.points.push(p);
        Ok(())
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct temperatures in ascending order.
    pub fn temperatures(&self) -> Vec<TemperatureK> {
        let mut ts: Vec<TemperatureK> = Vec::new();
        for p in &self.points {
            if !ts.contains(&p.temperature_k) {
                ts.push(p.temperature_k);
            }
        }
        ts.sort_by(|a, b| a.value().total_cmp(&b.value()));
        ts
    }

    /// Same curve with every rate and uncertainty multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        RateCurve::new(
            self.points
                .iter()
                .map(|p| RatePoint::new(p.wavelength_nm, p.temperature_k, p.rate_hz * factor, p.stderr_hz * factor, p.n_dwells))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# schema={RATES_SCHEMA}").map_err(|e| Error::io("<rates>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RATES_HEADER).map_err(Error::from_csv)?;
        for p in &self.points {
            w.write_record(&[
                p.wavelength_nm.value().to_string(),
                p.temperature_k.value().to_string(),
                p.rate_hz.to_string(),
                p.stderr_hz.to_string(),
                p.n_dwells.to_string(),
            ])
            .map_err(Error::from_csv)?;
        }
        w.flush().map_err(|e| Error::io("<rates>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers().map_err(Error::from_csv)?.clone();
        if headers.iter().collect::<Vec<_>>() != RATES_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header '{}', found '{}'", RATES_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut curve = RateCurve::default();
        for rec in rdr.records() {
            let rec = rec.map_err(Error::from_csv)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column '{}': {e}", RATES_HEADER[i]),
                })
            };
            let n = rec[4].parse::<usize>().map_err(|e| Error::Parse {
                line,
                message: format!("column 'n_dwells': {e}"),
            })?;
            let at_line = |e: Error| Error::Parse {
                line,
                message: e.to_string(),
            };
            let p = RatePoint::new(
                WavelengthNm::new(field(0)?).map_err(at_line)?,
                TemperatureK::new(field(1)?).map_err(at_line)?,
                field(2)?,
                field(3)?,
                n,
            )
            .map_err(at_line)?;
            curve.push(p).map_err(at_line)?;
        }
        Ok(curve)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        RateCurve::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(l: f64, t: f64, r: f64) -> RatePoint {
        RatePoint::new(WavelengthNm::new(l).unwrap(), TemperatureK::new(t).unwrap(), r, 0.1 * r, 40).unwrap()
    }

    #[test]
    fn rejects_duplicate_keys() {
        assert!(RateCurve::new(vec![point(580.0, 300.0, 1.0), point(580.0, 300.0, 2.0)]).is_err());
        assert!(RateCurve::new(vec![point(580.0, 300.0, 1.0), point(580.0, 200.0, 2.0)]).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let c = RateCurve::new(vec![point(580.0, 300.0, 1.25), point(590.5, 100.0, 0.003)]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema=rates/v1\nwavelength_nm,temperature_K,rate_Hz,stderr_Hz,n_dwells\n"));
        assert_eq!(RateCurve::read_csv(&buf[..]).unwrap(), c);
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "# schema=rates/v1\nwavelength_nm,temperature_K,rate_Hz,stderr_Hz,n_dwells\n580,300,1,0.1,3\n585,300,abc,0.1,3\n";
        match RateCurve::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_header = "lambda,T,R\n580,300,1\n";
        assert!(matches!(RateCurve::read_csv(bad_header.as_bytes()), Err(Error::Parse { .. })));
    }
}
