//! Wall-clock properties of the forward engine. They depend on an idle
//! machine, so they only run on request: `cargo test --release -- --ignored`.

use bokeh_core::harness::bench_forward;
use bokeh_core::tinynet::random_weights;
use bokeh_core::NetSpec;

/// Runs on one worker so scheduling noise does not mask compute scaling.
fn serial<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[test]
#[ignore]
fn doubling_size_quadruples_median_runtime() {
    let spec = NetSpec::default();
    let w = random_weights(&spec, 0).unwrap();
    let small = serial(|| bench_forward(&spec, &w, 128, 3, 15, 0).unwrap());
    let large = serial(|| bench_forward(&spec, &w, 256, 3, 15, 0).unwrap());
    let ratio = large.median_ms / small.median_ms;
    println!(
        "median {:.3} ms -> {:.3} ms, ratio {ratio:.2}",
        small.median_ms, large.median_ms
    );
    assert!((ratio - 4.0).abs() <= 0.3 * 4.0, "ratio {ratio}");
}

#[test]
#[ignore]
fn repeated_runs_are_stable() {
    let spec = NetSpec::default();
    let w = random_weights(&spec, 0).unwrap();
    let a = serial(|| bench_forward(&spec, &w, 128, 3, 15, 0).unwrap());
    let b = serial(|| bench_forward(&spec, &w, 128, 3, 15, 0).unwrap());
    let gap = (a.median_ms - b.median_ms).abs() / a.median_ms.min(b.median_ms);
    println!("medians {:.3} / {:.3} ms", a.median_ms, b.median_ms);
    assert!(gap <= 0.2, "gap {gap}");
}
