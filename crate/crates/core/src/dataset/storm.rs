use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Codes recognised as maximum sustained wind and minimum sea-level pressure.
pub const VMAX_CODE: &str = "VMAX";
pub const MSLP_CODES: [&str; 2] = ["PMIN", "MSLP"];

/// One storm's predictor time series at 6-hourly resolution.
///
/// Missing entries are stored as NaN. Column order follows the source header.
#[derive(Debug, Clone, PartialEq)]
pub struct StormSeries {
    pub storm_id: String,
    time: Vec<i64>,
    codes: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl StormSeries {
    pub fn new(
        storm_id: impl Into<String>,
        time: Vec<i64>,
        codes: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let storm_id = storm_id.into();
        if codes.len() != columns.len() {
            return Err(Error::Validation(format!(
                "storm {storm_id}: {} codes but {} columns",
                codes.len(),
                columns.len()
            )));
        }
        for (i, code) in codes.iter().enumerate() {
            if code.is_empty() {
                return Err(Error::Validation(format!("storm {storm_id}: empty predictor code")));
            }
            if code == "time" || codes[..i].contains(code) {
                return Err(Error::Validation(format!(
                    "storm {storm_id}: duplicate predictor code {code}"
                )));
            }
        }
        for (code, col) in codes.iter().zip(&columns) {
            if col.len() != time.len() {
                return Err(Error::Validation(format!(
                    "storm {storm_id}: column {code} has {} values for {} time steps",
                    col.len(),
                    time.len()
                )));
            }
            if let Some(v) = col.iter().find(|v| v.is_infinite()) {
                return Err(Error::Validation(format!(
                    "storm {storm_id}: non-finite value {v} in column {code}"
                )));
            }
        }
        if let Some(i) = (1..time.len()).find(|&i| time[i] != time[i - 1] + 1) {
            return Err(Error::Validation(format!(
                "storm {storm_id}: non-contiguous time at row {}",
                i + 1
            )));
        }
        Ok(StormSeries {
            storm_id,
            time,
            codes,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn time(&self) -> &[i64] {
        &self.time
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, code: &str) -> Option<&[f64]> {
        self.codes
            .iter()
            .position(|c| c == code)
            .map(|i| self.columns[i].as_slice())
    }

    /// Observed-entry mask for one column.
    pub fn mask(&self, code: &str) -> Option<Vec<bool>> {
        self.column(code)
            .map(|c| c.iter().map(|v| !v.is_nan()).collect())
    }

    pub fn vmax(&self) -> Option<&[f64]> {
        self.column(VMAX_CODE)
    }

    pub fn mslp(&self) -> Option<&[f64]> {
        MSLP_CODES.iter().find_map(|c| self.column(c))
    }

    /// Appends (or replaces) a derived column.
    pub fn set_column(&mut self, code: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Validation(format!(
                "storm {}: derived column {code} has wrong length",
                self.storm_id
            )));
        }
        match self.codes.iter().position(|c| c == code) {
            Some(i) => self.columns[i] = values,
            None => {
                self.codes.push(code.to_string());
                self.columns.push(values);
            }
        }
        Ok(())
    }

    /// Writes the storm in the `time,<code>,...` CSV layout. Missing values
    /// become empty cells; floats use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = String::from("time");
        for c in &self.codes {
            line.push(',');
            line.push_str(c);
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for (t, &time) in self.time.iter().enumerate() {
            line.clear();
            line.push_str(&time.to_string());
            for col in &self.columns {
                line.push(',');
                if !col[t].is_nan() {
                    line.push_str(&col[t].to_string());
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Loads a storm CSV; the storm id is the file stem.
pub fn load_storm_csv(path: impl AsRef<Path>) -> Result<StormSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_storm_csv(&id, file, &path.display().to_string())
}

pub fn parse_storm_csv<R: Read>(storm_id: &str, reader: R, context: &str) -> Result<StormSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let parse_err = |row: usize, message: String| Error::Parse {
        context: context.to_string(),
        row,
        message,
    };

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(0, e.to_string()))?,
        None => return Err(parse_err(0, "missing header".into())),
    };
    if header.get(0) != Some("time") {
        return Err(parse_err(0, "first header column must be `time`".into()));
    }
    let codes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut time = Vec::new();
    let mut columns = vec![Vec::new(); codes.len()];

    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                row,
                format!("expected {} cells, found {}", header.len(), rec.len()),
            ));
        }
        let t = rec[0]
            .parse::<i64>()
            .map_err(|_| parse_err(row, format!("invalid time `{}`", &rec[0])))?;
        time.push(t);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|_| parse_err(row, format!("invalid number `{cell}` in {}", codes[j])))?
            };
            columns[j].push(v);
        }
    }
    StormSeries::new(storm_id, time, codes, columns)
}

/// Target code for an intensity-change lead, e.g. `DELV24`.
pub fn target_code(lead_hours: u32) -> String {
    format!("DELV{lead_hours}")
}

/// `out[t] = vmax[t + lead_steps] - vmax[t]`, NaN where either end is
/// missing or past the series end.
pub fn intensity_change(vmax: &[f64], lead_steps: usize) -> Vec<f64> {
    (0..vmax.len())
        .map(|t| match vmax.get(t + lead_steps) {
            Some(&ahead) => ahead - vmax[t],
            None => f64::NAN,
        })
        .collect()
}

/// Intensity change over `lead_hours` (a positive multiple of 6).
pub fn build_target(series: &StormSeries, lead_hours: u32) -> Result<Vec<f64>> {
    if lead_hours == 0 || !lead_hours.is_multiple_of(6) {
        return Err(Error::Validation(format!(
            "lead time {lead_hours} h is not a positive multiple of 6"
        )));
    }
    let vmax = series.vmax().ok_or_else(|| {
        Error::Validation(format!("storm {} has no {VMAX_CODE} column", series.storm_id))
    })?;
    Ok(intensity_change(vmax, (lead_hours / 6) as usize))
}
