//! Execution policy: data-parallel loops over agents and Monte-Carlo runs.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it, or
//! with [`ExecPolicy::Sequential`], they run the same splits on the calling
//! thread. Reductions use a fixed split tree, so results are bit-identical
//! regardless of policy or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Leaf size of the pairwise summation tree.
const SUM_LEAF: usize = 256;
/// Agents per work item in chunked agent sweeps.
pub const AGENT_CHUNK: usize = 8192;
/// Populations smaller than this are swept on the calling thread even under
/// [`ExecPolicy::Parallel`]; the per-step fork/join would dominate.
pub const PAR_MIN_AGENTS: usize = 4 * AGENT_CHUNK;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecPolicy {
    Sequential,
    Parallel,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecPolicy::Parallel
        } else {
            ExecPolicy::Sequential
        }
    }
}

impl ExecPolicy {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }
}

/// Pairwise (tree) summation with a fixed association order.
pub fn pairwise_sum(xs: &[f64], policy: ExecPolicy) -> f64 {
    if policy.is_parallel() && xs.len() >= PAR_MIN_AGENTS {
        par_pairwise(xs)
    } else {
        seq_pairwise(xs)
    }
}

fn seq_pairwise(xs: &[f64]) -> f64 {
    if xs.len() <= SUM_LEAF {
        return xs.iter().sum();
    }
    let mid = split_point(xs.len());
    seq_pairwise(&xs[..mid]) + seq_pairwise(&xs[mid..])
}

#[cfg(feature = "parallel")]
fn par_pairwise(xs: &[f64]) -> f64 {
    if xs.len() <= AGENT_CHUNK {
        return seq_pairwise(xs);
    }
    let mid = split_point(xs.len());
    let (a, b) = rayon::join(|| par_pairwise(&xs[..mid]), || par_pairwise(&xs[mid..]));
    a + b
}

#[cfg(not(feature = "parallel"))]
fn par_pairwise(xs: &[f64]) -> f64 {
    seq_pairwise(xs)
}

// Split on a leaf boundary so sequential and parallel trees coincide.
fn split_point(len: usize) -> usize {
    let leaves = len.div_ceil(SUM_LEAF);
    (leaves / 2) * SUM_LEAF
}

/// Applies `f` to consecutive chunks of `data` and returns the per-chunk
/// results in chunk order.
pub fn map_chunks_mut<T, R, F>(data: &mut [T], policy: ExecPolicy, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut [T]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() && data.len() >= PAR_MIN_AGENTS {
        return data.par_chunks_mut(AGENT_CHUNK).map(f).collect();
    }
    let _ = policy;
    data.chunks_mut(AGENT_CHUNK).map(f).collect()
}

/// Evaluates `f(i)` for `i in 0..n`, results in index order.
pub fn map_indices<R, F>(n: usize, policy: ExecPolicy, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = policy;
    (0..n).map(f).collect()
}
