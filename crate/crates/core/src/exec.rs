//! Pluggable data-parallel map. The core crate runs sequentially; a threaded
//! executor can be supplied by the caller. Results are always in input order.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync,
    {
        items.iter().map(f).collect()
    }
}
