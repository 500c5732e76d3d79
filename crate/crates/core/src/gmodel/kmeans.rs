use rand::Rng;

use crate::error::{CovError, Result};
use crate::seed;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(point: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[[f64; 3]], k: usize, rng: &mut seed::Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every remaining point duplicates a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }
    centers
}

/// Lloyd's algorithm from a k-means++ start. Deterministic given `seed`.
///
/// Ties in assignment go to the lower centroid index. A cluster that loses
/// all its points is moved onto the point farthest from its own centroid.
pub fn kmeans(points: &[[f64; 3]], k: usize, seed: u64, max_iter: usize) -> Result<Vec<[f64; 3]>> {
    if k == 0 || k > points.len() {
        return Err(CovError::InvalidParameter(format!(
            "k-means needs 1 <= K <= {} points, got K = {k}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CovError::NonFinite("k-means input".into()));
    }
    let mut rng = seed::rng(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assign = vec![usize::MAX; points.len()];

    for _ in 0..max_iter {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for d in 0..3 {
                sums[c][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let m = counts[c] as f64;
                centers[c] = [sums[c][0] / m, sums[c][1] / m, sums[c][2] / m];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) =
                    dists
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                centers[c] = points[far];
                dists[far] = 0.0;
                // the point now sits on a centroid; force another pass
                assign[far] = usize::MAX;
            }
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn blobs(seed: u64) -> Vec<[f64; 3]> {
        let mut rng = seed::rng(seed);
        let mut pts = Vec::new();
        for i in 0..12 {
            let base = if i < 6 { 0.0 } else { 10.0 };
            pts.push([
                base + rng.random_range(-0.5..0.5),
                base + rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ]);
        }
        pts
    }

    fn sse(points: &[[f64; 3]], labels: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&[f64; 3]> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            let mean: Vec<f64> = (0..3).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / m).collect();
            total += members.iter().map(|p| (0..3).map(|d| (p[d] - mean[d]).powi(2)).sum::<f64>()).sum::<f64>();
        }
        total
    }

    #[test]
    fn k_equals_n_returns_points() {
        let pts = blobs(1);
        let mut c = kmeans(&pts, pts.len(), 3, 100).unwrap();
        let mut sorted = pts.clone();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, sorted);
    }

    #[test]
    fn k_one_is_mean() {
        let pts = blobs(2);
        let c = kmeans(&pts, 1, 0, 100).unwrap();
        for d in 0..3 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64;
            assert!((c[0][d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blobs_match_exhaustive_assignment() {
        let pts = blobs(3);
        // best 2-partition by brute force over all 2^12 labelings
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << 12) - 1 {
            let labels: Vec<usize> = (0..12).map(|i| ((mask >> i) & 1) as usize).collect();
            let v = sse(&pts, &labels, 2);
            if v < best.0 {
                best = (v, labels);
            }
        }
        let c = kmeans(&pts, 2, 11, 100).unwrap();
        let labels: Vec<usize> = pts.iter().map(|p| nearest(p, &c).0).collect();
        assert!((sse(&pts, &labels, 2) - best.0).abs() < 1e-12);
        for c in &c {
            let blob: Vec<&[f64; 3]> = pts.iter().filter(|p| (p[0] > 5.0) == (c[0] > 5.0)).collect();
            let mean0 = blob.iter().map(|p| p[0]).sum::<f64>() / blob.len() as f64;
            assert!((c[0] - mean0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_handles_duplicates() {
        let pts = blobs(4);
        assert_eq!(kmeans(&pts, 3, 5, 100).unwrap(), kmeans(&pts, 3, 5, 100).unwrap());
        let dup = vec![[1.0, 2.0, 0.5]; 5];
        let c = kmeans(&dup, 3, 0, 100).unwrap();
        assert!(c.iter().all(|x| *x == [1.0, 2.0, 0.5]));
        assert!(kmeans(&dup, 6, 0, 100).is_err());
        assert!(kmeans(&dup, 0, 0, 100).is_err());
    }
}
