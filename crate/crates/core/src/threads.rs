//! Worker-count control. Reproducibility is guaranteed for a fixed thread
//! configuration; pinning both pools to one thread makes runs reproducible
//! regardless of scheduling.

extern "C" {
    fn openblas_set_num_threads(n: i32);
}

/// Sets the BLAS thread count for this process.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) };
}

/// Sets the global rayon pool size; silently keeps the existing pool if one
/// was already built.
pub fn set_rayon_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global();
}

/// Pins all math to `n` worker threads (BLAS and rayon together).
pub fn set_math_threads(n: usize) {
    set_blas_threads(n);
    set_rayon_threads(n);
}
