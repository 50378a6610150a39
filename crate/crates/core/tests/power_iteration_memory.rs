use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use ldadam::linalg::block_power_iteration_step;
use ldadam::rng::{self, Stream};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
        PEAK.fetch_max(now, Ordering::SeqCst);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
        unsafe { System.dealloc(ptr, layout) }
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn tall_power_iteration_stays_far_below_a_square_intermediate() {
    let (n, m, r) = (4096, 8, 2);
    let mut g = rng::stream(1, Stream::Aux);
    let b = rng::gaussian_matrix(&mut g, n, m);
    let p = rng::random_orthonormal(&mut g, n, r);
    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let next = block_power_iteration_step(&b, &p).unwrap();
    let extra = PEAK.load(Ordering::SeqCst) - base;
    assert_eq!(next.dim(), n);
    let square = n * n * std::mem::size_of::<f64>();
    // a handful of n × r buffers is expected; an n × n one is 128 MiB
    assert!(extra < 16 * n * r * 8, "peak extra {extra} bytes");
    assert!(extra * 100 < square);
}
