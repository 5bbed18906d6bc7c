//! n-out-of-n resampling shared by the ratio calibration and the
//! goodness-of-fit test.
//!
//! Replicate `b` draws from its own ChaCha stream keyed by `(seed, b)`, so
//! results do not depend on the number of worker threads or on scheduling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Observation, TwoSampleData};
use crate::error::{Error, Result};

/// Redraws allowed per replicate slot before giving up.
pub const MAX_RETRIES: usize = 10;

pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn resample_one<R: Rng + ?Sized>(sample: &[Observation], rng: &mut R) -> Vec<Observation> {
    (0..sample.len())
        .map(|_| sample[rng.random_range(0..sample.len())])
        .collect()
}

/// Draw `n0` observations with replacement from the first sample and `n1`
/// from the second.
pub fn resample<R: Rng + ?Sized>(data: &TwoSampleData, rng: &mut R) -> TwoSampleData {
    let x = resample_one(data.sample_x(), rng);
    let y = resample_one(data.sample_y(), rng);
    TwoSampleData::new(x, data.scheme_x(), y, data.scheme_y())
        .expect("resampling preserves scheme conformity")
}

/// Whether a failed replicate should be redrawn rather than abort the run.
pub fn is_degenerate(err: &Error) -> bool {
    matches!(
        err,
        Error::EmptySample
            | Error::EmptyDistribution
            | Error::DegenerateDatum { .. }
            | Error::NoBracket
            | Error::SingularHessian
            | Error::Infeasible(_)
            | Error::Overflow(_)
            | Error::DegenerateResample(_)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicates<T> {
    pub values: Vec<T>,
    /// Redraws caused by degenerate resamples, summed over slots.
    pub degenerate: usize,
}

/// Evaluate `stat` on `b` resamples in parallel, in replicate order.
pub fn run<T, F>(data: &TwoSampleData, b: usize, seed: u64, stat: F) -> Result<Replicates<T>>
where
    T: Send,
    F: Fn(&TwoSampleData) -> Result<T> + Sync,
{
    let slots: Vec<Result<(T, usize)>> = (0..b)
        .into_par_iter()
        .map(|index| {
            let mut rng = replicate_rng(seed, index as u64);
            let mut redraws = 0;
            loop {
                let sample = resample(data, &mut rng);
                match stat(&sample) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(e) if is_degenerate(&e) => {
                        redraws += 1;
                        if redraws > MAX_RETRIES {
                            return Err(Error::DegenerateResample(format!(
                                "replicate {index}: {MAX_RETRIES} redraws exhausted, last error: {e}"
                            )));
                        }
                    }
                    Err(Error::NoConvergence { iterations, context }) => {
                        return Err(Error::NoConvergence {
                            iterations,
                            context: format!("replicate {index}: {context}"),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut values = Vec::with_capacity(b);
    let mut degenerate = 0;
    for slot in slots {
        let (v, r) = slot?;
        values.push(v);
        degenerate += r;
    }
    Ok(Replicates { values, degenerate })
}
