//! Independent per-strand work fanned out over a thread pool.

use crate::alm::{optimize, AlmOptions, AlmReport};
use crate::error::Result;
use crate::strand::{RestParams, StrandConfig, StrandState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Applies `f` to every item; results are in input order.
pub fn map_ordered<T, R, F>(items: &[T], mode: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

pub type StrandResult = Result<(RestParams, AlmReport)>;

/// Optimizes every strand from its naive rest parameters.
pub fn optimize_batch(
    strands: &[(StrandConfig, StrandState)],
    options: &AlmOptions,
    mode: Execution,
) -> Vec<StrandResult> {
    map_ordered(strands, mode, |_, (config, state)| {
        let rest0 = crate::strand::naive_rest_params(config, state)?;
        optimize(config, state, &rest0, options)
    })
}

/// `count` coils of slightly different radius, pitch and length.
pub fn synthetic_strands(count: usize, n: usize) -> Result<Vec<(StrandConfig, StrandState)>> {
    use crate::strand::{make_scene_with, SceneKind, SceneParams};
    (0..count)
        .map(|k| {
            let t = k as f64 / count.max(1) as f64;
            let params = SceneParams {
                coil_radius: 0.04 + 0.02 * t,
                coil_pitch: 0.04 + 0.03 * (1.0 - t),
                ..SceneParams::preset(SceneKind::Coil)
            };
            make_scene_with(SceneKind::Coil, n, 0.8 + 0.4 * t, &params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<usize> = (0..257).collect();
        for mode in [Execution::Sequential, Execution::Parallel] {
            let out = map_ordered(&items, mode, |i, v| (i, v * 2));
            assert!(out.iter().enumerate().all(|(i, &(j, v))| i == j && v == 2 * i));
        }
    }

    #[test]
    fn modes_agree_bitwise() {
        let strands = synthetic_strands(6, 20).unwrap();
        let opts = AlmOptions::default();
        let a = optimize_batch(&strands, &opts, Execution::Sequential);
        let b = optimize_batch(&strands, &opts, Execution::Parallel);
        for (a, b) in a.iter().zip(&b) {
            let (ra, ka) = a.as_ref().unwrap();
            let (rb, kb) = b.as_ref().unwrap();
            assert_eq!(ra, rb);
            assert_eq!(ka.iterations, kb.iterations);
            assert!(ka.converged());
        }
    }

    #[test]
    fn empty_batch() {
        assert!(optimize_batch(&[], &AlmOptions::default(), Execution::Parallel).is_empty());
    }
}
