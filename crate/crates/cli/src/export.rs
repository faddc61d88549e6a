use std::io::Write;

use kinmix_core::{Dims, Error, Result};
use serde::Serialize;

/// Min-max window used to map values onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("map values must be finite and non-empty".into()));
        }
        Ok(Self {
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn gray(&self, v: f64) -> u8 {
        if self.max <= self.min {
            return 0;
        }
        (255.0 * (v - self.min) / (self.max - self.min)).round().clamp(0.0, 255.0) as u8
    }
}

/// Binary 8-bit PGM, one row per `y`.
pub fn write_pgm<W: Write>(mut w: W, dims: Dims, values: &[f64], window: Window) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::InvalidArgument(format!("{} values for a {}x{} map", values.len(), dims.nx, dims.ny)));
    }
    write!(w, "P5\n{} {}\n255\n", dims.nx, dims.ny)?;
    let pixels: Vec<u8> = values.iter().map(|&v| window.gray(v)).collect();
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

/// `x,y,value` rows in raster order.
pub fn write_value_csv<W: Write>(mut w: W, dims: Dims, values: &[f64]) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::InvalidArgument(format!("{} values for a {}x{} map", values.len(), dims.nx, dims.ny)));
    }
    writeln!(w, "x,y,value")?;
    for (i, v) in values.iter().enumerate() {
        let (x, y) = dims.coords(i);
        writeln!(w, "{x},{y},{v:?}")?;
    }
    w.flush()?;
    Ok(())
}
