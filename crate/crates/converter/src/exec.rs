//! Batch fan-out over scoped threads.

use std::num::NonZeroUsize;
use std::thread;

use converter_core::train::BatchExecutor;

/// Splits jobs into contiguous index ranges, one per worker, and concatenates the results
/// in index order so the outcome does not depend on the worker count.
#[derive(Clone, Copy, Debug)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Threaded {
            workers: workers.max(1),
        }
    }

    pub fn available() -> Self {
        Self::new(thread::available_parallelism().map_or(1, NonZeroUsize::get))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl BatchExecutor for Threaded {
    fn run<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        if self.workers == 1 || n < 2 {
            return (0..n).map(job).collect();
        }
        let chunk = n.div_ceil(self.workers);
        thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    s.spawn(move || (start..(start + chunk).min(n)).map(job).collect::<Vec<T>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use converter_core::train::Sequential;

    #[test]
    fn order_matches_sequential() {
        let job = |i: usize| i * i + 1;
        let want = Sequential.run(37, &job);
        for w in [1, 2, 3, 8, 64] {
            assert_eq!(Threaded::new(w).run(37, &job), want);
        }
        assert!(Threaded::new(4).run(0, &job).is_empty());
    }
}
