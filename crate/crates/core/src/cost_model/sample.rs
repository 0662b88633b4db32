use std::io::{Read, Write};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::Dgp;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Observed matches `(x, w, y)` with `y = 1` marking the cost event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    w: f64,
    y: u8,
}

impl TrainingSample {
    pub fn new(x: Vec<f64>, w: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        if x.is_empty() || x.len() != w.len() || x.len() != y.len() {
            return Err(Error::invalid("training sample columns must be non-empty and of equal length"));
        }
        if x.iter().chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training covariates must be finite"));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::invalid("training outcomes must be 0 or 1"));
        }
        Ok(Self { x, w, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.len() as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "w", "y"])?;
        for ((&x, &w), &y) in self.x.iter().zip(&self.w).zip(&self.y) {
            wtr.write_record([format!("{x:.16e}"), format!("{w:.16e}"), y.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let (mut x, mut w, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            x.push(row.x);
            w.push(row.w);
            y.push(row.y);
        }
        Self::new(x, w, y)
    }
}

/// Uniform on the open interval `(0, 1)` from the top 53 bits of a draw.
#[inline]
pub(crate) fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws `n` independent matches. Each observation consumes three uniforms
/// from the seeded stream, in order: X quantile level, W quantile level, and
/// the Bernoulli draw `y = 1{u < c(x, w)}`.
pub fn generate_training_sample(dgp: &Dgp, n: usize, seed: u64) -> Result<TrainingSample> {
    if n == 0 {
        return Err(Error::invalid("training sample size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let uniforms: Vec<[f64; 3]> =
        (0..n).map(|_| [open_unit(&mut rng), open_unit(&mut rng), open_unit(&mut rng)]).collect();
    let rows: Vec<(f64, f64, u8)> = uniforms
        .par_iter()
        .map(|&[ux, uw, uy]| {
            let x = dgp.x_quantile(ux)?;
            let w = dgp.w_quantile(uw);
            Ok((x, w, u8::from(uy < dgp.cost(x, w))))
        })
        .collect::<Result<_>>()?;
    let mut sample = TrainingSample { x: Vec::with_capacity(n), w: Vec::with_capacity(n), y: Vec::with_capacity(n) };
    for (x, w, y) in rows {
        sample.x.push(x);
        sample.w.push(w);
        sample.y.push(y);
    }
    Ok(sample)
}
