/// Centered running median of `xs` over `window` samples.
///
/// Edge positions use the truncated window; even-sized truncated windows take
/// the mean of the two middle values.
pub fn running_median(xs: &[f64], window: usize) -> Vec<f64> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let half = window.max(1) / 2;
    let mut sorted: Vec<f64> = Vec::with_capacity(2 * half + 1);
    for &x in &xs[..(half + 1).min(n)] {
        insert(&mut sorted, x);
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        out.push(median_of_sorted(&sorted));
        if t + 1 == n {
            break;
        }
        let incoming = t + 1 + half;
        if incoming < n {
            insert(&mut sorted, xs[incoming]);
        }
        if t >= half {
            remove(&mut sorted, xs[t - half]);
        }
    }
    out
}

fn insert(sorted: &mut Vec<f64>, x: f64) {
    let pos = sorted.partition_point(|v| v.total_cmp(&x).is_lt());
    sorted.insert(pos, x);
}

fn remove(sorted: &mut Vec<f64>, x: f64) {
    let pos = sorted.partition_point(|v| v.total_cmp(&x).is_lt());
    debug_assert!(pos < sorted.len() && sorted[pos].total_cmp(&x).is_eq());
    sorted.remove(pos);
}

fn median_of_sorted(s: &[f64]) -> f64 {
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Median of an unsorted slice (copies).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    let m = v.len() / 2;
    let (_, hi, _) = v.select_nth_unstable_by(m, f64::total_cmp);
    let hi = *hi;
    if v.len() % 2 == 1 {
        hi
    } else {
        let lo = v[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}
