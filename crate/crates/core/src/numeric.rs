//! Small numerical helpers shared by the distribution, fluid and invariant code.

/// Smallest `x` in `[lo, hi]` for which the monotone predicate holds, to
/// within `tol`. The predicate must be false-then-true on the bracket and
/// `pred(hi)` must hold; if `pred(lo)` already holds `lo` is returned.
pub fn bisect_first<F>(mut pred: F, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> bool,
{
    if pred(lo) {
        return lo;
    }
    // invariant: !pred(lo) && pred(hi)
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest `x` in `[lo, hi]` for which the monotone predicate holds
/// (true-then-false on the bracket, `pred(lo)` true).
pub fn bisect_last<F>(mut pred: F, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> bool,
{
    if pred(hi) {
        return hi;
    }
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson<F>(f: F, a: f64, b: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_first_finds_threshold() {
        let x = bisect_first(|x| x * x >= 2.0, 0.0, 2.0, 1e-14);
        assert!((x - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn bisect_last_on_plateau_returns_right_edge() {
        // f = clamp(x, 1, 2) <= 1 holds on [0, 1]
        let x = bisect_last(|x| x.clamp(1.0, 2.0) <= 1.0, 0.0, 3.0, 1e-12);
        assert!((x - 1.0).abs() < 1e-11);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 2);
        assert!((v - 2.0).abs() < 1e-14);
    }
}
