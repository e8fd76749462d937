//! Single-channel same-padded 2D correlation on square `n x n` maps with an
//! odd `k x k` kernel, plus its two adjoints.
//!
//! `out[i][j] = sum_{a,b} w[a][b] * inp[i + a - p][j + b - p]` with `p = k / 2`,
//! reading zero outside the map.

#[inline]
fn ranges(n: usize, k: usize, a: usize) -> (isize, usize, usize) {
    let p = (k / 2) as isize;
    let d = a as isize - p;
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (d, lo, hi)
}

/// `out += w (*) inp`
pub(crate) fn forward(out: &mut [f64], inp: &[f64], w: &[f64], n: usize, k: usize) {
    for a in 0..k {
        let (di, ilo, ihi) = ranges(n, k, a);
        for b in 0..k {
            let weight = w[a * k + b];
            if weight == 0.0 {
                continue;
            }
            let (dj, jlo, jhi) = ranges(n, k, b);
            for i in ilo..ihi {
                let src = ((i as isize + di) as usize) * n;
                let out_row = &mut out[i * n + jlo..i * n + jhi];
                let in_row = &inp[(src as isize + jlo as isize + dj) as usize..(src as isize + jhi as isize + dj) as usize];
                for (o, x) in out_row.iter_mut().zip(in_row) {
                    *o += weight * x;
                }
            }
        }
    }
}

/// `gw[a][b] += sum_ij g[i][j] * inp[i + a - p][j + b - p]`
pub(crate) fn weight_grad(gw: &mut [f64], g: &[f64], inp: &[f64], n: usize, k: usize) {
    for a in 0..k {
        let (di, ilo, ihi) = ranges(n, k, a);
        for b in 0..k {
            let (dj, jlo, jhi) = ranges(n, k, b);
            let mut acc = 0.0;
            for i in ilo..ihi {
                let src = ((i as isize + di) as usize) * n;
                let g_row = &g[i * n + jlo..i * n + jhi];
                let in_row = &inp[(src as isize + jlo as isize + dj) as usize..(src as isize + jhi as isize + dj) as usize];
                acc += g_row.iter().zip(in_row).map(|(x, y)| x * y).sum::<f64>();
            }
            gw[a * k + b] += acc;
        }
    }
}

/// `gin[i + a - p][j + b - p] += w[a][b] * g[i][j]`
pub(crate) fn input_grad(gin: &mut [f64], g: &[f64], w: &[f64], n: usize, k: usize) {
    for a in 0..k {
        let (di, ilo, ihi) = ranges(n, k, a);
        for b in 0..k {
            let weight = w[a * k + b];
            if weight == 0.0 {
                continue;
            }
            let (dj, jlo, jhi) = ranges(n, k, b);
            for i in ilo..ihi {
                let dst = ((i as isize + di) as usize) * n;
                let g_row = &g[i * n + jlo..i * n + jhi];
                let gin_row =
                    &mut gin[(dst as isize + jlo as isize + dj) as usize..(dst as isize + jhi as isize + dj) as usize];
                for (o, x) in gin_row.iter_mut().zip(g_row) {
                    *o += weight * x;
                }
            }
        }
    }
}
