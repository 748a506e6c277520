//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature every helper dispatches onto the current rayon
//! pool; without it the same closures run in order on the calling thread.
//! Each output element is computed by exactly one closure call, so results
//! are bit-identical across both builds and any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps a slice element-wise, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Calls `f(chunk_index, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Runs `f` on a pool with `jobs` workers (0 = rayon default). Without the
/// `parallel` feature this simply calls `f`.
pub fn with_jobs<R: Send, F: FnOnce() -> R + Send>(jobs: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunks_see_their_index() {
        let mut data = vec![0usize; 37];
        for_each_chunk_mut(&mut data, 5, |ci, c| c.iter_mut().for_each(|x| *x = ci));
        assert_eq!(data[0], 0);
        assert_eq!(data[36], 7);
    }

    #[test]
    fn single_worker_matches_default_pool() {
        let f = || map_range(4096, |i| ((i as f64).sqrt() * 1.1).sin());
        assert_eq!(with_jobs(1, f), with_jobs(0, f));
    }
}
