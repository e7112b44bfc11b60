//! Piecewise-linear tabulated functions.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::Scalar;

/// Behaviour outside the tabulated range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Hold the end values.
    Constant,
    /// Hold the first value below, continue the last segment above.
    ConstantBelowLinearAbove,
    /// Continue the end segments.
    Linear,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("table '{name}' is empty")]
    Empty { name: String },
    #[error("table '{name}' has {x} abscissas but {y} ordinates")]
    LengthMismatch { name: String, x: usize, y: usize },
    #[error("table '{name}' abscissa is not strictly increasing at row {row}")]
    NotIncreasing { name: String, row: usize },
}

#[derive(Debug)]
pub struct Table1D {
    name: String,
    x: Vec<f64>,
    y: Vec<f64>,
    extrapolation: Extrapolation,
    warned: AtomicBool,
}

impl Clone for Table1D {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
            extrapolation: self.extrapolation,
            warned: AtomicBool::new(self.warned.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Table1D {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y && self.extrapolation == other.extrapolation
    }
}

impl Table1D {
    pub fn new(
        name: impl Into<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        extrapolation: Extrapolation,
    ) -> Result<Self, TableError> {
        let name = name.into();
        if x.is_empty() {
            return Err(TableError::Empty { name });
        }
        if x.len() != y.len() {
            return Err(TableError::LengthMismatch {
                name,
                x: x.len(),
                y: y.len(),
            });
        }
        if let Some(row) = (1..x.len()).find(|&i| x[i] <= x[i - 1]) {
            return Err(TableError::NotIncreasing { name, row });
        }
        Ok(Self {
            name,
            x,
            y,
            extrapolation,
            warned: AtomicBool::new(false),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn first_x(&self) -> f64 {
        self.x[0]
    }

    pub fn last_x(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Index `i` of the segment `[x_i, x_{i+1}]` used for `xv`.
    fn segment(&self, xv: f64) -> usize {
        let n = self.x.len();
        if n < 2 || xv <= self.x[0] {
            return 0;
        }
        if xv >= self.x[n - 1] {
            return n - 2;
        }
        // first index with x > xv, minus one
        self.x.partition_point(|&v| v <= xv) - 1
    }

    fn warn_once(&self, xv: f64) {
        if !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "table '{}' extrapolated to {xv:e} (range {:e}..{:e})",
                self.name,
                self.first_x(),
                self.last_x()
            );
        }
    }

    pub fn eval<S: Scalar>(&self, x: S) -> S {
        let xv = x.value();
        let n = self.x.len();
        if n == 1 {
            return S::from_f64(self.y[0]);
        }
        let below = xv < self.x[0];
        let above = xv > self.x[n - 1];
        match self.extrapolation {
            Extrapolation::Constant if below => return S::from_f64(self.y[0]),
            Extrapolation::Constant if above => return S::from_f64(self.y[n - 1]),
            Extrapolation::ConstantBelowLinearAbove if below => {
                return S::from_f64(self.y[0]);
            }
            _ => {}
        }
        if above && self.extrapolation != Extrapolation::Constant {
            self.warn_once(xv);
        }
        let i = self.segment(xv);
        let (x0, x1, y0, y1) = (self.x[i], self.x[i + 1], self.y[i], self.y[i + 1]);
        let slope = (y1 - y0) / (x1 - x0);
        // anchor at the nearest node at or beyond the last one so node values are exact
        if xv >= x1 {
            return (x - x1) * slope + y1;
        }
        (x - x0) * slope + y0
    }

    /// Slope of the segment that `eval` would use at `xv` (zero where
    /// extrapolation is constant).
    pub fn slope_at(&self, xv: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return 0.0;
        }
        let below = xv < self.x[0];
        let above = xv > self.x[n - 1];
        let flat = match self.extrapolation {
            Extrapolation::Constant => below || above,
            Extrapolation::ConstantBelowLinearAbove => below,
            Extrapolation::Linear => false,
        };
        if flat {
            return 0.0;
        }
        let i = self.segment(xv);
        (self.y[i + 1] - self.y[i]) / (self.x[i + 1] - self.x[i])
    }

    pub fn is_constant(&self) -> bool {
        self.y.iter().all(|&v| v == self.y[0])
    }
}
