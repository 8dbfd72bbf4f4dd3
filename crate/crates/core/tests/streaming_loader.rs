//! The loader's peak heap use stays proportional to the parsed output.

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rxml_core::data_io::load_xmc_file;

struct Tracking;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Tracking {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Tracking = Tracking;

#[test]
fn peak_memory_is_proportional_to_output() {
    let (n, d, l, per_row) = (100_000usize, 50_000usize, 4_000usize, 10usize);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("large.txt");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        writeln!(out, "{n} {d} {l}").unwrap();
        for i in 0..n {
            write!(out, "{},{}", i % l, (i * 7 + 1) % l).unwrap();
            for k in 0..per_row {
                write!(out, " {}:{}", (i * 31 + k * 997) % d, 0.5 + k as f64).unwrap();
            }
            writeln!(out).unwrap();
        }
    }

    let baseline = CURRENT.load(Ordering::Relaxed);
    PEAK.store(baseline, Ordering::Relaxed);
    let ds = load_xmc_file(&path).unwrap();
    let peak = PEAK.load(Ordering::Relaxed) - baseline;

    let nnz = ds.x.nnz() + ds.y.nnz();
    assert_eq!(nnz, n * (per_row + 2));
    let output = 16 * nnz + 16 * (n + 1);
    let dense = n * d * 8;
    assert!(peak <= 4 * output, "peak {peak} bytes for {output} bytes of output");
    assert!(peak * 100 < dense);
}
