//! Piecewise-constant online schedules.

/// Time at which `e` units of unit-rate exposure have accumulated after `now`,
/// counting only the time spent inside `intervals` at `rate`.
pub fn next_arrival(intervals: &[(f64, f64)], rate: f64, now: f64, e: f64) -> Option<f64> {
    if !(rate > 0.0) {
        return None;
    }
    let mut need = e / rate;
    for &(a, b) in intervals {
        if b <= now {
            continue;
        }
        let start = a.max(now);
        let len = b - start;
        if need <= len {
            return Some(start + need);
        }
        need -= len;
    }
    None
}

pub fn online_at(intervals: &[(f64, f64)], t: f64) -> bool {
    intervals.iter().any(|&(a, b)| a <= t && t < b)
}

/// True iff `[from, to]` lies inside a single online interval.
pub fn online_throughout(intervals: &[(f64, f64)], from: f64, to: f64) -> bool {
    intervals.iter().any(|&(a, b)| a <= from && to < b)
}

/// Sorted times in `[0, horizon]` where the schedule changes, plus `0`.
pub fn breakpoints<'a>(schedules: impl Iterator<Item = &'a [(f64, f64)]>, horizon: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    for iv in schedules {
        for &(a, b) in iv {
            for x in [a, b] {
                if x > 0.0 && x < horizon {
                    pts.push(x);
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}
