//! Diagnostics over solution paths and ensembles.

pub mod comparison;
pub mod convergence;
pub mod density;
pub mod energy;
pub mod seminorm;

pub use comparison::{compare_paths, comparison_check, comparison_tolerance, ordering_check, ComparisonReport};
pub use convergence::{
    convergence_study, observed_order, ConvergenceReport, Reference, Refinement, StudyScheme, StudySpec,
};
pub use density::{
    bandwidth_stability, dichotomy_experiment, kde_density, silverman_bandwidth, DensityEstimate, DichotomyReport,
    Observation,
};
pub use energy::{energy_constants, energy_inequality_check, EnergyConstants, EnergyReport};
pub use seminorm::fractional_seminorm;

/// Maps `f` over `items` on all available cores, keeping input order.
pub fn ensemble_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("ensemble worker panicked"))
            .collect()
    })
}
