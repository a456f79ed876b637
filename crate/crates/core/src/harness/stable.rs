//! Stable-rate detection on a uniformly sampled rate trace.
//!
//! A window is stable when the standard deviation of the rates inside it is
//! below `rel_tol` of their mean. The first stable rate is the mean of the
//! earliest stable window starting at or after `from`; the final stable rate
//! is the mean of the latest stable window.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableParams {
    /// Samples per window.
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for StableParams {
    fn default() -> Self {
        // 100 samples at the default 1 us sampling interval.
        Self {
            window: 100,
            rel_tol: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableWindow {
    pub start: usize,
    pub mean: f64,
}

/// Sliding mean and standard deviation over every full window, via prefix
/// sums. Returns (mean, std) per window start.
fn windows(rates: &[f64], w: usize) -> Vec<(f64, f64)> {
    if w == 0 || rates.len() < w {
        return Vec::new();
    }
    let mut s = vec![0.0; rates.len() + 1];
    let mut s2 = vec![0.0; rates.len() + 1];
    for (i, r) in rates.iter().enumerate() {
        s[i + 1] = s[i] + r;
        s2[i + 1] = s2[i] + r * r;
    }
    (0..=rates.len() - w)
        .map(|i| {
            let n = w as f64;
            let m = (s[i + w] - s[i]) / n;
            let var = ((s2[i + w] - s2[i]) / n - m * m).max(0.0);
            (m, var.sqrt())
        })
        .collect()
}

fn stable(m: f64, sd: f64, tol: f64) -> bool {
    // Relative, with a small absolute slack for float noise on flat traces.
    m > 0.0 && sd <= tol * m + 1e-9 * m.abs()
}

pub fn first_stable(rates: &[f64], from: usize, p: StableParams) -> Option<StableWindow> {
    windows(rates, p.window)
        .into_iter()
        .enumerate()
        .skip(from)
        .find(|(_, (m, sd))| stable(*m, *sd, p.rel_tol))
        .map(|(start, (mean, _))| StableWindow { start, mean })
}

pub fn final_stable(rates: &[f64], p: StableParams) -> Option<StableWindow> {
    windows(rates, p.window)
        .into_iter()
        .enumerate()
        .rev()
        .find(|(_, (m, sd))| stable(*m, *sd, p.rel_tol))
        .map(|(start, (mean, _))| StableWindow { start, mean })
}
