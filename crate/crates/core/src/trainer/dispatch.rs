//! Dynamic work dispatch: idle workers claim the next unit from a shared
//! cursor, so units run in list order and heavy units placed first are
//! started first.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

/// Which units each worker claimed, in claim order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DispatchReport {
    pub claimed: Vec<Vec<usize>>,
}

impl DispatchReport {
    /// How many times each unit index was processed.
    pub fn histogram(&self, units: usize) -> Vec<usize> {
        let mut h = vec![0; units];
        for i in self.claimed.iter().flatten() {
            h[*i] += 1;
        }
        h
    }
}

/// Runs `work` on every unit exactly once across `workers` threads. Each
/// worker owns one state from `make_state`. Stops claiming new units after
/// the first error and returns it.
pub fn dispatch<T, S, E, M, W>(units: Vec<T>, workers: usize, make_state: M, work: W) -> Result<DispatchReport, E>
where
    T: Send,
    E: Send,
    M: Fn() -> S + Sync,
    W: Fn(&mut S, usize, T) -> Result<(), E> + Sync,
{
    let n = units.len();
    let slots: Vec<Mutex<Option<T>>> = units.into_iter().map(|u| Mutex::new(Some(u))).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);

    let run = || -> Result<Vec<usize>, E> {
        let mut state = make_state();
        let mut mine = Vec::new();
        while !failed.load(Ordering::Relaxed) {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= n {
                break;
            }
            let unit = slots[i].lock().expect("unit slot poisoned").take().expect("unit claimed twice");
            if let Err(e) = work(&mut state, i, unit) {
                failed.store(true, Ordering::Relaxed);
                return Err(e);
            }
            mine.push(i);
        }
        Ok(mine)
    };

    let workers = workers.max(1);
    if workers == 1 {
        return Ok(DispatchReport { claimed: vec![run()?] });
    }
    let results: Vec<Result<Vec<usize>, E>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|_| s.spawn(run)).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut claimed = Vec::with_capacity(workers);
    for r in results {
        claimed.push(r?);
    }
    Ok(DispatchReport { claimed })
}
