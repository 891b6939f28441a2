//! Internal helpers: integer lattice walks, a small dense linear solver,
//! and a deterministic worker pool for embarrassingly parallel loops.

/// Visits every nonzero k in the l-infinity box [-k_max, k_max]^n with a
/// positive leading nonzero component, i.e. one representative per mirror
/// pair {k, -k}. The callback returns false to stop early; the function
/// reports whether the walk ran to completion.
pub(crate) fn for_each_half_lattice(
    n: usize,
    k_max: u32,
    mut visit: impl FnMut(&[i32]) -> bool,
) -> bool {
    let km = k_max as i64;
    let mut k = vec![-km; n];
    // skip straight to the canonical half: leading component >= 0
    k[0] = 0;
    loop {
        if k.iter().any(|&x| x != 0) {
            let lead = k.iter().find(|&&x| x != 0).copied().unwrap();
            if lead > 0 {
                let ki: Vec<i32> = k.iter().map(|&x| x as i32).collect();
                if !visit(&ki) {
                    return false;
                }
            }
        }
        // odometer increment
        let mut j = n;
        loop {
            if j == 0 {
                return true;
            }
            j -= 1;
            if k[j] < km {
                k[j] += 1;
                for kk in k.iter_mut().skip(j + 1) {
                    *kk = -km;
                }
                break;
            }
        }
    }
}

/// Number of lattice points in Z^n with |k|_1 = l exactly, l >= 1:
/// sum over j of 2^j C(n, j) C(l-1, j-1) choices of j nonzero slots.
pub(crate) fn l1_sphere_count(n: usize, l: u64) -> u64 {
    if l == 0 {
        return 1;
    }
    let mut total = 0u64;
    for j in 1..=n.min(l as usize) {
        total += (1u64 << j) * binomial(n as u64, j as u64) * binomial(l - 1, j as u64 - 1);
    }
    total
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Gaussian elimination with partial pivoting on a copy. Returns None for a
/// numerically singular matrix.
#[allow(clippy::needless_range_loop)]
pub(crate) fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let (pivot, pval) =
            (col..n).map(|r| (r, m[r][col].abs())).max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pval < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[r][c] * x[c];
        }
        x[r] = acc / m[r][r];
    }
    Some(x)
}

/// Maps `f` over 0..total split into `workers` contiguous chunks on scoped
/// threads, then concatenates in index order, so the result is identical for
/// any worker count.
pub(crate) fn parallel_map_indexed<T: Send>(
    total: usize,
    workers: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let workers = workers.max(1).min(total.max(1));
    if workers == 1 {
        return (0..total).map(f).collect();
    }
    let chunk = total.div_ceil(workers);
    let mut out: Vec<Vec<T>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(total);
            let f = &f;
            handles.push(scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>()));
        }
        out = handles.into_iter().map(|h| h.join().unwrap()).collect();
    });
    out.into_iter().flatten().collect()
}
