//! Order-preserving parallel map over indices with a fixed worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;

pub(crate) fn parallel_map<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, len.max(1));
    if workers == 1 {
        return (0..len).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..len).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= len {
                    break;
                }
                let v = f(i);
                slots.lock()[i] = Some(v);
            });
        }
    });
    slots
        .into_inner()
        .into_iter()
        .map(|v| v.expect("every slot filled"))
        .collect()
}
