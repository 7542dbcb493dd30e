use framemix::eval::ScoredFlag;
use framemix::BoundingBox;

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

/// Every non-degenerate box with corners on the 4×4 grid {0,1,2,3}².
pub fn grid_boxes() -> Vec<BoundingBox> {
    let mut out = Vec::new();
    for x1 in 0..4 {
        for x2 in x1 + 1..4 {
            for y1 in 0..4 {
                for y2 in y1 + 1..4 {
                    out.push(bx(x1 as f64, y1 as f64, x2 as f64, y2 as f64));
                }
            }
        }
    }
    out
}

/// Area of the intersection over the union, by counting unit cells.
pub fn iou_by_cells(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for y in 0..4 {
        for x in 0..4 {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let ina = cx > a.x_min && cx < a.x_max && cy > a.y_min && cy < a.y_max;
            let inb = cx > b.x_min && cx < b.x_max && cy > b.y_min && cy < b.y_max;
            inter += usize::from(ina && inb);
            union += usize::from(ina || inb);
        }
    }
    inter as f64 / union as f64
}

/// Among all one-to-one partial assignments with IoU ≥ threshold, the one that
/// is lexicographically best in score order, each detection preferring to be
/// matched, then higher IoU, then the earlier truth.
pub fn assignment_oracle(dets: &[BoundingBox], truths: &[BoundingBox], thr: f64) -> Vec<bool> {
    fn rec(
        k: usize,
        dets: &[BoundingBox],
        truths: &[BoundingBox],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(i64, f64, i64)>,
        best: &mut Option<Vec<(i64, f64, i64)>>,
    ) {
        if k == dets.len() {
            let better = match best {
                None => true,
                Some(b) => {
                    let mut ord = std::cmp::Ordering::Equal;
                    for (x, y) in cur.iter().zip(b.iter()) {
                        ord = x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2));
                        if ord != std::cmp::Ordering::Equal {
                            break;
                        }
                    }
                    ord == std::cmp::Ordering::Greater
                }
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push((0, 0.0, 0));
        rec(k + 1, dets, truths, thr, used, cur, best);
        cur.pop();
        for t in 0..truths.len() {
            let v = iou_by_cells(&dets[k], &truths[t]);
            if !used[t] && v >= thr {
                used[t] = true;
                cur.push((1, v, -(t as i64)));
                rec(k + 1, dets, truths, thr, used, cur, best);
                cur.pop();
                used[t] = false;
            }
        }
    }
    let mut best = None;
    rec(0, dets, truths, thr, &mut vec![false; truths.len()], &mut Vec::new(), &mut best);
    best.unwrap().iter().map(|e| e.0 == 1).collect()
}

/// Enumerate every threshold over the (score, input position) order, collect
/// (precision, recall) points, and integrate the interpolated staircase with a
/// midpoint rule whose cells never straddle a recall breakpoint.
pub fn threshold_oracle(flags: &[ScoredFlag], total: usize) -> f64 {
    let keyed: Vec<(f64, usize, bool)> = flags.iter().enumerate().map(|(i, f)| (f.score, i, f.true_positive)).collect();
    let above = |t: &(f64, usize, bool)| keyed.iter().filter(|k| k.0 > t.0 || (k.0 == t.0 && k.1 <= t.1)).collect::<Vec<_>>();
    let points: Vec<(f64, f64)> = keyed
        .iter()
        .map(|t| {
            let sel = above(t);
            let tp = sel.iter().filter(|k| k.2).count() as f64;
            (tp / sel.len() as f64, tp / total as f64)
        })
        .collect();
    let cells = 6000;
    (0..cells)
        .map(|i| {
            let r = (i as f64 + 0.5) / cells as f64;
            points.iter().filter(|p| p.1 >= r).map(|p| p.0).fold(0.0, f64::max) / cells as f64
        })
        .sum()
}

/// AP depends on an instance only through its ranked flags and truth count.
/// Every ranking of up to 5 detections against up to 3 truths, with scores
/// from a 4-level grid so ties occur.
pub fn flag_family() -> Vec<(Vec<ScoredFlag>, usize)> {
    let levels = [0.25, 0.5, 0.75, 1.0];
    let mut out = Vec::new();
    for n in 0..=5usize {
        for pattern in 0..(1u32 << n) {
            let tps = pattern.count_ones() as usize;
            for code in 0..4usize.pow(n as u32) {
                let flags: Vec<ScoredFlag> = (0..n)
                    .map(|i| ScoredFlag {
                        score: levels[(code / 4usize.pow(i as u32)) % 4],
                        true_positive: pattern >> i & 1 == 1,
                    })
                    .collect();
                for total in tps.max(1)..=3 {
                    out.push((flags.clone(), total));
                }
            }
        }
    }
    out
}
