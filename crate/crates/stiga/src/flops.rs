//! Process-global floating-point operation counters.
//!
//! Kernels account for their own work analytically (2 flops per fused
//! multiply-add, incremented once per kernel call with the true loop sizes),
//! so counting adds no per-operation overhead. Counters are atomic and may be
//! read or reset at any time.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

static FD_TRANSFORM: AtomicU64 = AtomicU64::new(0);
static OPERATOR_APPLY: AtomicU64 = AtomicU64::new(0);
static EIG_SETUP: AtomicU64 = AtomicU64::new(0);

/// Which counter a kernel charges its work to.
#[derive(Clone, Copy, Debug)]
pub enum Category {
    /// Forward/backward eigenvector transforms of the fast-diagonalization solve.
    FdTransform,
    /// Matrix-free operator application (sparse and small dense products).
    OperatorApply,
    /// Dense factorizations behind the preconditioner setup.
    EigSetup,
}

pub fn add(category: Category, flops: u64) {
    counter(category).fetch_add(flops, Ordering::Relaxed);
}

pub fn read(category: Category) -> u64 {
    counter(category).load(Ordering::Relaxed)
}

pub fn reset_all() {
    FD_TRANSFORM.store(0, Ordering::Relaxed);
    OPERATOR_APPLY.store(0, Ordering::Relaxed);
    EIG_SETUP.store(0, Ordering::Relaxed);
}

/// Snapshot of all counters, suitable for reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopSnapshot {
    pub fd_transform: u64,
    pub operator_apply: u64,
    pub eig_setup: u64,
}

pub fn snapshot() -> FlopSnapshot {
    FlopSnapshot {
        fd_transform: read(Category::FdTransform),
        operator_apply: read(Category::OperatorApply),
        eig_setup: read(Category::EigSetup),
    }
}

fn counter(category: Category) -> &'static AtomicU64 {
    match category {
        Category::FdTransform => &FD_TRANSFORM,
        Category::OperatorApply => &OPERATOR_APPLY,
        Category::EigSetup => &EIG_SETUP,
    }
}
