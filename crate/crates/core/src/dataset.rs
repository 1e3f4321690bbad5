//! ADDT data: readings grouped into (temperature, time) cells, plus the
//! Arrhenius stress transform.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kelvin offset used by the definitional Arrhenius transform.
pub const DEFAULT_KELVIN_OFFSET: f64 = 273.16;

/// Reciprocal of Boltzmann's constant in eV.
pub const BOLTZMANN_RECIPROCAL: f64 = 11605.0;

const CSV_HEADER: [&str; 3] = ["temperature", "time", "response"];

/// Readings taken at one time point of one acceleration level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub time: f64,
    pub readings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub temp_c: f64,
    pub cells: Vec<Cell>,
}

/// A validated ADDT dataset.
///
/// Levels are sorted by ascending temperature and cells by ascending time
/// within a level. Flattened readings follow (level, time, replicate) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddtDataset {
    levels: Vec<Level>,
    time_unit: String,
}

/// Borrowed view of a cell together with its level.
#[derive(Debug, Clone, Copy)]
pub struct CellRef<'a> {
    pub level: usize,
    pub temp_c: f64,
    pub time: f64,
    pub readings: &'a [f64],
}

impl AddtDataset {
    /// Validates and normalizes the ordering of `levels`.
    pub fn new(mut levels: Vec<Level>, time_unit: impl Into<String>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput);
        }
        levels.sort_by(|a, b| a.temp_c.total_cmp(&b.temp_c));
        for level in &mut levels {
            level.cells.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        let data = AddtDataset {
            levels,
            time_unit: time_unit.into(),
        };
        data.validate()?;
        Ok(data)
    }

    /// Groups `(temperature, time, response)` triples into cells by exact
    /// equality of temperature and time.
    pub fn from_readings<I>(readings: I, time_unit: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64, f64)>,
    {
        let mut levels: Vec<Level> = Vec::new();
        for (temp, time, y) in readings {
            // -0.0 and 0.0 are the same planned value.
            let (temp, time) = (temp + 0.0, time + 0.0);
            let level = match levels.iter().position(|l| l.temp_c == temp) {
                Some(i) => &mut levels[i],
                None => {
                    levels.push(Level {
                        temp_c: temp,
                        cells: Vec::new(),
                    });
                    levels.last_mut().unwrap()
                }
            };
            match level.cells.iter_mut().find(|c| c.time == time) {
                Some(cell) => cell.readings.push(y),
                None => level.cells.push(Cell {
                    time,
                    readings: vec![y],
                }),
            }
        }
        Self::new(levels, time_unit)
    }

    fn validate(&self) -> Result<()> {
        let mut times = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            if !level.temp_c.is_finite() || level.temp_c <= -273.16 {
                return Err(Error::InvalidDataset(format!(
                    "temperature {} is not a valid Celsius value",
                    level.temp_c
                )));
            }
            if i > 0 && self.levels[i - 1].temp_c == level.temp_c {
                return Err(Error::InvalidDataset(format!(
                    "temperature {} appears as two levels",
                    level.temp_c
                )));
            }
            if level.cells.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "level {} °C has no readings",
                    level.temp_c
                )));
            }
            for (j, cell) in level.cells.iter().enumerate() {
                if !cell.time.is_finite() || cell.time < 0.0 {
                    return Err(Error::InvalidDataset(format!(
                        "time {} must be finite and nonnegative",
                        cell.time
                    )));
                }
                if j > 0 && level.cells[j - 1].time >= cell.time {
                    return Err(Error::InvalidDataset(format!(
                        "times at {} °C are not strictly increasing",
                        level.temp_c
                    )));
                }
                if cell.readings.is_empty() {
                    return Err(Error::InvalidDataset(format!(
                        "cell ({} °C, t = {}) is empty",
                        level.temp_c, cell.time
                    )));
                }
                if let Some(bad) = cell.readings.iter().find(|y| !y.is_finite()) {
                    return Err(Error::InvalidDataset(format!(
                        "non-finite response {bad}"
                    )));
                }
                times.push(cell.time);
            }
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        if times.len() < 2 {
            return Err(Error::InvalidDataset(
                "at least two distinct time points are required".into(),
            ));
        }
        Ok(())
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn time_unit(&self) -> &str {
        &self.time_unit
    }

    /// Total number of readings.
    pub fn n(&self) -> usize {
        self.cells().map(|c| c.readings.len()).sum()
    }

    pub fn n_cells(&self) -> usize {
        self.levels.iter().map(|l| l.cells.len()).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = CellRef<'_>> + '_ {
        self.levels.iter().enumerate().flat_map(|(i, level)| {
            level.cells.iter().map(move |cell| CellRef {
                level: i,
                temp_c: level.temp_c,
                time: cell.time,
                readings: &cell.readings,
            })
        })
    }

    /// Cell sizes `n_ij` in dataset order.
    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells().map(|c| c.readings.len()).collect()
    }

    /// All readings flattened in (level, time, replicate) order.
    pub fn responses(&self) -> Vec<f64> {
        self.cells()
            .flat_map(|c| c.readings.iter().copied())
            .collect()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.temp_c).collect()
    }

    pub fn max_temperature(&self) -> f64 {
        self.levels.last().map(|l| l.temp_c).unwrap_or(f64::NAN)
    }

    /// Returns a copy with the readings replaced, keeping the cell layout.
    ///
    /// `responses` must be in flattened dataset order.
    pub fn with_responses(&self, responses: &[f64]) -> Result<Self> {
        if responses.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "expected {} responses, got {}",
                self.n(),
                responses.len()
            )));
        }
        let mut out = self.clone();
        let mut it = responses.iter();
        for level in &mut out.levels {
            for cell in &mut level.cells {
                for y in &mut cell.readings {
                    *y = *it.next().unwrap();
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Writes the long-format CSV accepted by [`load_addt_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(csv_io)?;
        for cell in self.cells() {
            for y in cell.readings {
                w.write_record([
                    cell.temp_c.to_string(),
                    cell.time.to_string(),
                    y.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads `temperature,time,response` CSV. Lines starting with `#` are ignored.
pub fn load_addt_csv<R: Read>(source: R, time_unit: &str) -> Result<AddtDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let mut saw_header = false;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedRow {
                row,
                message: e.to_string(),
            }
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let is_header = record.len() == 3
            && record
                .iter()
                .zip(CSV_HEADER)
                .all(|(field, name)| field.eq_ignore_ascii_case(name));
        if !saw_header {
            if !is_header {
                return Err(Error::MalformedRow {
                    row,
                    message: "expected header `temperature,time,response`".into(),
                });
            }
            saw_header = true;
            continue;
        }
        if is_header {
            return Err(Error::MalformedRow {
                row,
                message: "duplicate header".into(),
            });
        }
        if record.len() != 3 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let mut values = [0.0; 3];
        for (slot, (field, name)) in values.iter_mut().zip(record.iter().zip(CSV_HEADER)) {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                row,
                message: format!("{name} `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    message: format!("{name} `{field}` is not finite"),
                });
            }
            *slot = v;
        }
        rows.push((values[0], values[1], values[2]));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    AddtDataset::from_readings(rows, time_unit)
}

/// Arrhenius-transformed stress `-11605 / (temp_c + kelvin_offset)`.
pub fn arrhenius_x(temp_c: f64, kelvin_offset: f64) -> Result<f64> {
    let kelvin = temp_c + kelvin_offset;
    if !(kelvin > 0.0) || !kelvin.is_finite() {
        return Err(Error::NonPositiveTemperature { kelvin });
    }
    Ok(-BOLTZMANN_RECIPROCAL / kelvin)
}

/// Transformed stresses per level and their distance from the hottest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSet {
    pub x: Vec<f64>,
    pub x_max: f64,
    pub s: Vec<f64>,
    pub kelvin_offset: f64,
}

impl StressSet {
    pub fn new(data: &AddtDataset, kelvin_offset: f64) -> Result<Self> {
        let x = data
            .levels()
            .iter()
            .map(|l| arrhenius_x(l.temp_c, kelvin_offset))
            .collect::<Result<Vec<_>>>()?;
        let x_max = arrhenius_x(data.max_temperature(), kelvin_offset)?;
        let s = x.iter().map(|xi| x_max - xi).collect();
        Ok(StressSet {
            x,
            x_max,
            s,
            kelvin_offset,
        })
    }

    /// Stress distance of an arbitrary temperature from the hottest level.
    pub fn distance(&self, temp_c: f64) -> Result<f64> {
        Ok(self.x_max - arrhenius_x(temp_c, self.kelvin_offset)?)
    }
}

/// Convenience wrapper for [`StressSet::new`].
pub fn stress_set(data: &AddtDataset, kelvin_offset: f64) -> Result<StressSet> {
    StressSet::new(data, kelvin_offset)
}
