use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::tape::PAD;
use crate::tensor::{Tape, Tensor, Var};

/// Tiling of an `H×W` map into `M×M` windows. The map is zero-padded on the
/// bottom and right up to multiples of `M`; windows are numbered row-major
/// and tokens within a window are row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub rows: usize,
    pub cols: usize,
}

impl WindowGrid {
    pub fn new(height: usize, width: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("window side must be positive"));
        }
        if height == 0 || width == 0 {
            return Err(Error::contract(format!("window grid over empty map {height}×{width}")));
        }
        Ok(Self {
            height,
            width,
            window,
            rows: height.div_ceil(window),
            cols: width.div_ceil(window),
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.rows * self.window, self.cols * self.window)
    }

    /// Map pixel `(y, x)` covered by token `t` of window `w`, if inside the
    /// unpadded map.
    fn pixel(&self, w: usize, t: usize) -> Option<(usize, usize)> {
        let y = (w / self.cols) * self.window + t / self.window;
        let x = (w % self.cols) * self.window + t % self.window;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Flat `H×W×C` source index of every element of window `w`'s `N×C`
    /// token matrix (padding marked).
    pub(crate) fn partition_index(&self, w: usize, channels: usize) -> Vec<usize> {
        let mut index = Vec::with_capacity(self.tokens() * channels);
        for t in 0..self.tokens() {
            match self.pixel(w, t) {
                Some((y, x)) => {
                    let base = (y * self.width + x) * channels;
                    index.extend(base..base + channels);
                }
                None => index.extend(std::iter::repeat_n(PAD, channels)),
            }
        }
        index
    }

    /// Source index into the stacked `(count·N)×C` window matrix for every
    /// element of the `H×W×C` map.
    pub(crate) fn reverse_index(&self, channels: usize) -> Vec<usize> {
        let n = self.tokens();
        let mut index = Vec::with_capacity(self.height * self.width * channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let w = (y / self.window) * self.cols + x / self.window;
                let t = (y % self.window) * self.window + x % self.window;
                let base = (w * n + t) * channels;
                index.extend(base..base + channels);
            }
        }
        index
    }

    /// Splits an `H×W×C` variable into `N×C` window variables.
    pub fn partition(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let channels = self.check_map(tape.shape(x))?;
        let shared: Vec<Arc<[usize]>> = (0..self.count())
            .map(|w| self.partition_index(w, channels).into())
            .collect();
        shared
            .into_iter()
            .map(|index| tape.gather(x, &[self.tokens(), channels], index))
            .collect()
    }

    /// Reassembles window variables into the `H×W×C` map, dropping padding.
    pub fn reverse(&self, tape: &mut Tape, windows: &[Var]) -> Result<Var> {
        let channels = self.check_windows(windows.iter().map(|&w| tape.shape(w)))?;
        let stacked = if windows.len() == 1 {
            windows[0]
        } else {
            tape.concat(windows, 0)?
        };
        let index = self.reverse_index(channels);
        tape.gather(stacked, &[self.height, self.width, channels], index.into())
    }

    fn check_map(&self, shape: &[usize]) -> Result<usize> {
        match shape {
            &[h, w, c] if h == self.height && w == self.width => Ok(c),
            _ => Err(Error::shape("window_partition", shape, &[self.height, self.width])),
        }
    }

    fn check_windows<'s>(&self, shapes: impl Iterator<Item = &'s [usize]>) -> Result<usize> {
        let mut channels = None;
        let mut count = 0;
        for s in shapes {
            count += 1;
            match (s, channels) {
                (&[n, c], None) if n == self.tokens() => channels = Some(c),
                (&[n, c], Some(c0)) if n == self.tokens() && c == c0 => {}
                _ => return Err(Error::shape("window_reverse", s, &[self.tokens()])),
            }
        }
        if count != self.count() {
            return Err(Error::contract(format!(
                "window_reverse: expected {} windows, got {count}",
                self.count()
            )));
        }
        channels.ok_or_else(|| Error::contract("window_reverse: no windows"))
    }
}

/// Value-level partition of an `H×W×C` tensor into `N×C` windows.
pub fn window_partition(x: &Tensor, window: usize) -> Result<(Vec<Tensor>, WindowGrid)> {
    let (h, w) = match x.shape() {
        &[h, w, _] => (h, w),
        s => return Err(Error::shape("window_partition", s, &[0, 0, 0])),
    };
    let grid = WindowGrid::new(h, w, window)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = grid.partition(&mut tape, xv)?;
    let windows = vars.iter().map(|&v| tape.value(v).clone()).collect();
    Ok((windows, grid))
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &[Tensor], grid: &WindowGrid) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = windows.iter().map(|w| tape.constant(w.clone())).collect();
    let out = grid.reverse(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}
